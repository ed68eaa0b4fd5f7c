#include "campuswh/bench.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "campuswh/cube.hpp"
#include "campuswh/error.hpp"
#include "campuswh/olap.hpp"
#include "campuswh/segment_store.hpp"

namespace fs = std::filesystem;

namespace cwh::bench {

namespace {

std::string padded(char prefix, std::size_t value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, value);
  return buf;
}

std::string academic_year(std::size_t time_index) {
  const std::size_t start = 2014 + time_index / 2;
  char buf[48];
  std::snprintf(buf, sizeof buf, "%zu-%02zu", start, (start + 1) % 100);
  return buf;
}

// One decimal place, e.g. 73.4.
std::string tenths(std::mt19937_64& rng, int lo_tenths, int hi_tenths) {
  std::uniform_int_distribution<int> d(lo_tenths, hi_tenths);
  const int v = d(rng);
  return std::to_string(v / 10) + "." + std::to_string(v % 10);
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Holds an exclusive flock on <dir>/.bench.lock.
class BenchLock {
 public:
  explicit BenchLock(const fs::path& dir) {
    fs::create_directories(dir);
    const fs::path p = dir / ".bench.lock";
    fd_ = ::open(p.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0 || ::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      if (fd_ >= 0) ::close(fd_);
      throw Error(ErrorCode::kConflict, "another benchmark holds " + p.string());
    }
  }
  ~BenchLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  BenchLock(const BenchLock&) = delete;
  BenchLock& operator=(const BenchLock&) = delete;

 private:
  int fd_ = -1;
};

double to_ms(Nanos d) { return std::chrono::duration<double, std::milli>(d).count(); }

struct Summary {
  double mean = 0;
  std::size_t survivors = 0;
  bool skipped = false;
};

Summary summarize(const std::vector<double>& samples, const OutlierOptions& options) {
  Summary s;
  if (samples.size() < 4) {
    s.skipped = true;
    s.survivors = samples.size();
    s.mean = mean(samples);
    return s;
  }
  const auto r = remove_outliers(samples, options);
  s.survivors = r.survivors.size();
  s.mean = mean(r.survivors);
  return s;
}

}  // namespace

std::string Universe::student(std::size_t i) const { return padded('S', i + 1, 6); }
std::string Universe::course(std::size_t i) const { return padded('C', i + 1, 5); }
std::string Universe::regtype(std::size_t i) const { return padded('R', i + 1, 1); }
std::string Universe::department(std::size_t i) const { return padded('D', i + 1, 3); }
std::string Universe::program(std::size_t i) const { return padded('P', i + 1, 3); }
std::string Universe::teacher(std::size_t i) const { return padded('T', i + 1, 4); }
std::string Universe::time(std::size_t i) const {
  return academic_year(i) + (i % 2 == 0 ? "-AUT" : "-SPR");
}

std::uint64_t gen_dataset(const fs::path& out, std::uint64_t size_bytes, std::string_view table,
                          const TenantKey& /*tenant*/, std::uint64_t seed, const Universe& u) {
  const TableDef& def = builtin_schema().table(table);
  if (def.table_class != TableClass::kFact) {
    throw Error(ErrorCode::kValidation, "gen_dataset generates fact tables; use gen_dimensions");
  }
  const std::string header = def.upload_header() + "\n";
  if (size_bytes < header.size()) {
    throw Error(ErrorCode::kValidation, "size is smaller than the header");
  }
  static const char* const kGrades[] = {"A", "B", "C", "D", "E", "F"};
  std::mt19937_64 rng(seed);
  auto next_row = [&]() -> std::string {
    std::string row;
    if (table == "StudentPerformance") {
      row = u.student(pick(rng, u.students)) + "," + u.course(pick(rng, u.courses)) + "," +
            u.time(pick(rng, u.times)) + "," + u.regtype(pick(rng, u.regtypes)) + "," +
            kGrades[pick(rng, 6)] + "," + tenths(rng, 0, 1000) + "," + tenths(rng, 0, 1000);
    } else if (table == "TeachingQuality") {
      row = u.teacher(pick(rng, u.teachers)) + "," + u.course(pick(rng, u.courses)) + "," +
            u.time(pick(rng, u.times)) + "," + tenths(rng, 10, 50);
    } else {
      row = u.department(pick(rng, u.departments)) + "," + u.program(pick(rng, u.programs)) + "," +
            u.time(pick(rng, u.times)) + "," + std::to_string(20 + pick(rng, 200));
    }
    row.push_back('\n');
    return row;
  };

  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + out.string());
  f << header;
  std::uint64_t written = header.size();
  std::uint64_t rows = 0;
  std::string buffer;
  for (;;) {
    std::string row = next_row();
    if (written + row.size() > size_bytes) break;
    written += row.size();
    buffer += row;
    ++rows;
    if (buffer.size() > kMiB) {
      f << buffer;
      buffer.clear();
    }
  }
  f << buffer;
  if (!f) throw Error(ErrorCode::kIo, "short write to " + out.string());
  return rows;
}

void gen_dimensions(const fs::path& dir, const Universe& u, std::uint64_t seed) {
  fs::create_directories(dir);
  std::mt19937_64 rng(seed);
  auto write = [&](std::string_view table, std::size_t n, auto&& row) {
    std::ofstream f(dir / (std::string(table) + ".csv"), std::ios::binary | std::ios::trunc);
    f << builtin_schema().table(table).upload_header() << '\n';
    for (std::size_t i = 0; i < n; ++i) f << row(i) << '\n';
    if (!f) throw Error(ErrorCode::kIo, "cannot write dimension " + std::string(table));
  };
  write("Universities", 1, [](std::size_t) { return std::string("MAIN,Main Campus,IN"); });
  write("Departments", u.departments,
        [&](std::size_t i) { return u.department(i) + ",Department " + std::to_string(i + 1); });
  write("Programs", u.programs, [&](std::size_t i) {
    return u.program(i) + ",Program " + std::to_string(i + 1) + "," + std::to_string(2 + i % 4);
  });
  write("Courses", u.courses, [&](std::size_t i) {
    return u.course(i) + ",Course " + std::to_string(i + 1) + "," + std::to_string(2 + pick(rng, 4)) +
           "," + u.department(i % u.departments);
  });
  write("Students", u.students, [&](std::size_t i) {
    return u.student(i) + ",Student " + std::to_string(i + 1) + "," + std::to_string(2012 + pick(rng, 6));
  });
  write("Teachers", u.teachers, [&](std::size_t i) {
    return u.teacher(i) + ",Teacher " + std::to_string(i + 1) + (i % 3 == 0 ? ",Professor" : ",Lecturer");
  });
  write("Times", u.times, [&](std::size_t i) {
    return u.time(i) + "," + academic_year(i) + (i % 2 == 0 ? ",AUT" : ",SPR");
  });
  write("Regtypes", u.regtypes,
        [&](std::size_t i) { return u.regtype(i) + ",Registration type " + std::to_string(i + 1); });
}

std::uint64_t gen_dense_performance(const fs::path& out, const Universe& u, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + out.string());
  f << builtin_schema().table("StudentPerformance").upload_header() << '\n';
  std::uint64_t rows = 0;
  std::string buffer;
  for (std::size_t c = 0; c < u.courses; ++c) {
    for (std::size_t t = 0; t < u.times; ++t) {
      for (std::size_t r = 0; r < u.regtypes; ++r) {
        buffer += u.student(rows % u.students) + "," + u.course(c) + "," + u.time(t) + "," +
                  u.regtype(r) + ",B," + tenths(rng, 0, 1000) + "," + tenths(rng, 0, 1000) + "\n";
        ++rows;
        if (buffer.size() > kMiB) {
          f << buffer;
          buffer.clear();
        }
      }
    }
  }
  f << buffer;
  if (!f) throw Error(ErrorCode::kIo, "short write to " + out.string());
  return rows;
}

// ---------------------------------------------------------------------------
// Statistics

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw Error(ErrorCode::kValidation, "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = static_cast<double>(v.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

OutlierResult remove_outliers(const std::vector<double>& samples, const OutlierOptions& options) {
  if (samples.size() < 4) {
    throw Error(ErrorCode::kValidation, "outlier removal needs at least 4 samples");
  }
  const double q1 = quantile(samples, 0.25);
  const double q3 = quantile(samples, 0.75);
  double lo = q1, hi = q3;
  if (options.tukey_fences) {
    const double iqr = q3 - q1;
    lo = q1 - 1.5 * iqr;
    hi = q3 + 1.5 * iqr;
  }
  std::vector<double> stage1;
  for (double v : samples) {
    if (v >= lo && v <= hi) stage1.push_back(v);
  }

  OutlierResult result;
  result.stage1_survivors = stage1.size();
  const double mu = mean(stage1);
  double var = 0;
  for (double v : stage1) var += (v - mu) * (v - mu);
  const double sigma = std::sqrt(var / static_cast<double>(stage1.size()));
  for (double v : stage1) {
    if (v >= mu - 1.5 * sigma && v <= mu + 1.5 * sigma) result.survivors.push_back(v);
  }
  if (result.survivors.empty()) {
    result.survivors = stage1;
    result.fell_back_to_stage1 = true;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Series

std::string BenchSeries::to_csv() const {
  std::string out = "x,y,z\n";
  char buf[64];
  auto cell = [&](const std::optional<double>& v) {
    if (!v) return std::string();
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return std::string(buf);
  };
  for (const auto& r : rows) out += std::to_string(r.x) + "," + cell(r.y) + "," + cell(r.z) + "\n";
  return out;
}

std::string BenchSeries::gnuplot_script(const std::string& csv_path, const std::string& title,
                                        const std::string& y_label,
                                        const std::string& z_label) const {
  std::ostringstream out;
  out << "set datafile separator ','\n"
      << "set key top left autotitle columnhead\n"
      << "set title '" << title << "'\n"
      << "set ylabel 'time (ms)'\n"
      << "plot '" << csv_path << "' using 1:2 with linespoints title '" << y_label << "', \\\n"
      << "     '" << csv_path << "' using 1:3 with linespoints title '" << z_label << "'\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// ETL benchmark

void EtlBenchPlan::validate() const {
  if (reps < 3) throw Error(ErrorCode::kValidation, "reps must be at least 3");
  if (sizes.empty()) throw Error(ErrorCode::kValidation, "no sizes");
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] <= sizes[i - 1]) throw Error(ErrorCode::kValidation, "sizes must increase");
  }
  if (work_dir.empty()) throw Error(ErrorCode::kValidation, "work_dir is required");
  split.validate();
}

EtlBenchReport run_etl_bench(const EtlBenchPlan& plan) {
  plan.validate();
  BenchLock lock(plan.work_dir);
  SegmentStore store(plan.work_dir);
  const TenantKey tenant("BenchU");
  const fs::path data_dir = plan.work_dir / "_bench";
  fs::create_directories(data_dir);

  EtlBenchReport report;
  report.notes.push_back("first run of every size and mode discarded as warm-up");
  const std::size_t needed = mapper_count(plan.sizes.back(), split_size(plan.split));
  if (std::find(plan.modes.begin(), plan.modes.end(), SplitMode::kCase2) != plan.modes.end() &&
      plan.worker_pool_size < needed) {
    report.notes.push_back("insufficient mappers for case2: largest size needs " +
                           std::to_string(needed) + ", pool has " +
                           std::to_string(plan.worker_pool_size));
  }
  if (default_worker_count() < plan.worker_pool_size) {
    report.notes.push_back("worker pool (" + std::to_string(plan.worker_pool_size) +
                           ") exceeds hardware threads (" + std::to_string(default_worker_count()) + ")");
  }

  for (std::size_t si = 0; si < plan.sizes.size(); ++si) {
    const std::uint64_t size = plan.sizes[si];
    const fs::path file = data_dir / ("etl_" + std::to_string(size) + ".csv");
    gen_dataset(file, size, plan.table, tenant, plan.seed + si);
    const std::uint64_t actual = fs::file_size(file);
    SeriesRow row{actual, std::nullopt, std::nullopt};

    for (SplitMode mode : plan.modes) {
      std::vector<double> effective, cumulative;
      SizeStats st;
      st.size = actual;
      for (std::size_t rep = 0; rep <= plan.reps; ++rep) {
        const BatchResult r = run_etl(store, builtin_schema(), file, plan.table, tenant, mode,
                                      plan.split, EtlOptions{plan.worker_pool_size});
        if (!r.committed()) {
          throw Error(ErrorCode::kCorruption, "benchmark dataset rejected at line " +
                                                  std::to_string(r.report.entries.front().line_number));
        }
        store.drop_batch(plan.table, r.segment->batch_id);
        st.n_m = r.n_m;
        st.workers = r.workers;
        if (rep == 0) continue;
        effective.push_back(to_ms(r.effective_time));
        cumulative.push_back(to_ms(r.cumulative_time));
      }
      const Summary eff = summarize(effective, plan.outliers);
      const Summary cum = summarize(cumulative, plan.outliers);
      st.samples = effective.size();
      st.survivors = eff.survivors;
      st.mean_effective_ms = eff.mean;
      st.mean_cumulative_ms = cum.mean;
      st.outlier_removal_skipped = eff.skipped;
      if (mode == SplitMode::kCase1) {
        row.y = eff.mean;
        report.case1.push_back(st);
      } else {
        row.z = eff.mean;
        report.case2.push_back(st);
      }
    }
    std::error_code ec;
    fs::remove(file, ec);
    report.series.rows.push_back(row);
  }
  if (plan.reps + 1 < 5) report.notes.push_back("fewer than 4 measured runs: outlier removal skipped");
  return report;
}

// ---------------------------------------------------------------------------
// OLAP benchmark

void OlapBenchPlan::validate() const {
  if (reps < 3) throw Error(ErrorCode::kValidation, "reps must be at least 3");
  if (cube_rows.empty()) throw Error(ErrorCode::kValidation, "no cube sizes");
  for (std::size_t i = 1; i < cube_rows.size(); ++i) {
    if (cube_rows[i] <= cube_rows[i - 1]) throw Error(ErrorCode::kValidation, "sizes must increase");
  }
  if (work_dir.empty()) throw Error(ErrorCode::kValidation, "work_dir is required");
  if (rows_per_task == 0) throw Error(ErrorCode::kValidation, "rows_per_task must be positive");
}

OlapBenchReport run_olap_bench(const OlapBenchPlan& plan) {
  plan.validate();
  BenchLock lock(plan.work_dir);
  const TenantKey tenant("BenchU");
  const TenantContext ctx{tenant, "bench"};
  const ReportDef& query = report_catalog().front();  // avg_marks_by_regtype
  OlapBenchReport report;
  report.notes.push_back("first query of every size discarded as warm-up");

  for (std::size_t si = 0; si < plan.cube_rows.size(); ++si) {
    Universe u;
    const std::size_t per_course = (u.times + 1) * (u.regtypes + 1);
    u.courses = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(plan.cube_rows[si]) /
                                                 static_cast<double>(per_course))) - 1);
    const fs::path root = plan.work_dir / ("olap_" + std::to_string(plan.cube_rows[si]));
    fs::remove_all(root);
    SegmentStore store(root);
    const fs::path dims = root / "_upload";
    gen_dimensions(dims, u, plan.seed);
    for (const auto* dim : builtin_schema().dimensions()) {
      const auto r = run_etl(store, builtin_schema(), dims / (dim->name + ".csv"), dim->name, tenant,
                             SplitMode::kCase2, SplitConfig{}, EtlOptions{plan.max_workers});
      if (!r.committed()) throw Error(ErrorCode::kCorruption, "dimension upload rejected");
    }
    const fs::path facts = dims / "StudentPerformance.csv";
    gen_dense_performance(facts, u, plan.seed + si);
    const auto r = run_etl(store, builtin_schema(), facts, "StudentPerformance", tenant,
                           SplitMode::kCase2, SplitConfig{}, EtlOptions{plan.max_workers});
    if (!r.committed()) throw Error(ErrorCode::kCorruption, "fact upload rejected");

    const auto cube = build_cube(store, builtin_schema(), builtin_cube(query.cube),
                                 CubeBuildOptions{plan.max_workers});
    const std::size_t tasks = (cube->rows.size() + plan.rows_per_task - 1) / plan.rows_per_task;
    QueryOptions qopt;
    qopt.rows_per_task = plan.single_worker ? 0 : plan.rows_per_task;
    qopt.workers = plan.single_worker ? 1 : std::min(plan.max_workers, std::max<std::size_t>(1, tasks));
    if (!plan.single_worker && tasks > plan.max_workers) {
      report.notes.push_back("cube of " + std::to_string(cube->rows.size()) + " rows needs " +
                             std::to_string(tasks) + " scan workers, pool has " +
                             std::to_string(plan.max_workers));
    }

    const std::vector<Filter> filters{{"time_code", u.time(u.times - 1)}};
    std::vector<double> effective, cumulative;
    for (std::size_t rep = 0; rep <= plan.reps; ++rep) {
      const QueryResult q = query_cube(ctx, *cube, query.masks, filters, qopt);
      if (q.rows.size() != u.regtypes + 1) {
        throw Error(ErrorCode::kCorruption, "unexpected query result size " + std::to_string(q.rows.size()));
      }
      if (rep == 0) continue;
      effective.push_back(to_ms(q.timing.wall));
      cumulative.push_back(to_ms(q.timing.busy));
    }
    const Summary eff = summarize(effective, plan.outliers);
    const Summary cum = summarize(cumulative, plan.outliers);
    SizeStats st;
    st.size = cube->rows.size();
    st.samples = effective.size();
    st.survivors = eff.survivors;
    st.mean_effective_ms = eff.mean;
    st.mean_cumulative_ms = cum.mean;
    st.n_m = std::max<std::size_t>(1, plan.single_worker ? 1 : tasks);
    st.workers = qopt.workers;
    st.outlier_removal_skipped = eff.skipped;
    report.stats.push_back(st);
    report.series.rows.push_back({cube->rows.size(), cum.mean, eff.mean});
    fs::remove_all(root);
  }
  return report;
}

}  // namespace cwh::bench
