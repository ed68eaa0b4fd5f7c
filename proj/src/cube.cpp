#include "campuswh/cube.hpp"

#include <sys/stat.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "campuswh/error.hpp"
#include "campuswh/text.hpp"

namespace fs = std::filesystem;

namespace cwh {

// ---------------------------------------------------------------------------
// grouping_id and conv

std::uint64_t grouping_id(std::span<const bool> present) {
  if (present.size() > 62) throw Error(ErrorCode::kValidation, "at most 62 cube attributes");
  std::uint64_t id = 0;
  for (std::size_t j = 0; j < present.size(); ++j) {
    if (present[j]) id |= std::uint64_t{1} << j;
  }
  return id;
}

std::vector<bool> presence_of(std::uint64_t id, std::size_t k) {
  std::vector<bool> out(k);
  for (std::size_t j = 0; j < k; ++j) out[j] = ((id >> j) & 1U) != 0;
  return out;
}

std::string mask_string(std::uint64_t id, std::size_t k) {
  std::string out(k, '0');
  for (std::size_t j = 0; j < k; ++j) {
    if ((id >> j) & 1U) out[k - 1 - j] = '1';
  }
  return out;
}

std::string conv(std::string_view value, int from_base, int to_base) {
  if (from_base < 2 || from_base > 36 || to_base < 2 || to_base > 36) {
    throw Error(ErrorCode::kValidation, "bases must be within 2..36");
  }
  bool negative = false;
  if (!value.empty() && value.front() == '-') {
    negative = true;
    value.remove_prefix(1);
  }
  if (value.empty()) throw Error(ErrorCode::kValidation, "conv of an empty value");

  unsigned __int128 n = 0;
  for (char c : value) {
    int digit;
    if (c >= '0' && c <= '9') {
      digit = c - '0';
    } else if (c >= 'a' && c <= 'z') {
      digit = c - 'a' + 10;
    } else if (c >= 'A' && c <= 'Z') {
      digit = c - 'A' + 10;
    } else {
      digit = 99;
    }
    if (digit >= from_base) {
      throw Error(ErrorCode::kValidation, "invalid digit '" + std::string(1, c) + "' for base " +
                                              std::to_string(from_base));
    }
    n = n * static_cast<unsigned>(from_base) + static_cast<unsigned>(digit);
    if (n > UINT64_MAX) throw Error(ErrorCode::kValidation, "conv value exceeds 64 bits");
  }

  static constexpr char kDigits[] = "0123456789abcdefghijklmnopqrstuvwxyz";
  std::string out;
  auto v = static_cast<std::uint64_t>(n);
  do {
    out.push_back(kDigits[v % static_cast<std::uint64_t>(to_base)]);
    v /= static_cast<std::uint64_t>(to_base);
  } while (v != 0);
  if (negative && out != "0") out.push_back('-');
  std::reverse(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Specs

namespace {

const DimensionJoin* find_join(const CubeSpec& spec, std::string_view attr) {
  for (const auto& j : spec.joins) {
    if (j.output_attr == attr) return &j;
  }
  return nullptr;
}

}  // namespace

void CubeSpec::validate(const WarehouseSchema& schema) const {
  auto fail = [this](const std::string& msg) {
    throw Error(ErrorCode::kValidation, "cube " + name + ": " + msg);
  };
  if (!schema.contains(fact)) fail("unknown fact " + fact);
  const TableDef& f = schema.table(fact);
  if (f.table_class != TableClass::kFact) fail(fact + " is not a fact table");
  if (cube_attrs.empty() || cube_attrs.size() > 62) fail("needs 1..62 cube attributes");

  for (const auto& j : joins) {
    const auto idx = f.index_of(j.fact_attr);
    if (!idx || f.attributes[*idx].kind != AttributeKind::kReference) {
      fail(j.fact_attr + " is not a reference of " + fact);
    }
    if (f.attributes[*idx].referenced_table != j.dimension) {
      fail(j.fact_attr + " does not reference " + j.dimension);
    }
    if (!schema.contains(j.dimension)) fail("missing dimension " + j.dimension);
    if (!schema.table(j.dimension).index_of(j.output_attr)) {
      fail(j.dimension + " has no attribute " + j.output_attr);
    }
  }
  for (const auto& m : mandatory_keys) {
    if (!f.index_of(m)) fail("mandatory key " + m + " is not an attribute of " + fact);
    if (std::find(cube_attrs.begin(), cube_attrs.end(), m) != cube_attrs.end()) {
      fail(m + " is both mandatory and a cube attribute");
    }
  }
  for (const auto& a : cube_attrs) {
    if (!find_join(*this, a) && !f.index_of(a)) fail("cannot resolve cube attribute " + a);
  }
  for (const auto& agg : aggregates) {
    const auto idx = f.index_of(agg.measure);
    if (!idx || f.attributes[*idx].kind != AttributeKind::kMeasure) {
      fail(agg.measure + " is not a measure of " + fact);
    }
  }
}

const std::vector<CubeSpec>& builtin_cubes() {
  static const std::vector<CubeSpec> specs = [] {
    std::vector<CubeSpec> out;
    out.push_back(CubeSpec{
        "student_performance",
        "StudentPerformance",
        {"university_key"},
        {"course_code", "time_code", "regtype_code"},
        {{"marks", "avg_marks"}, {"percent_attended", "avg_per_att"}},
        {{"course_key", "Courses", "course_code"},
         {"time_key", "Times", "time_code"},
         {"regtype_key", "Regtypes", "regtype_code"}},
    });
    out.push_back(CubeSpec{
        "student_counts",
        "StudentCounts",
        {"university_key"},
        {"department_code", "academic_year"},
        {{"head_count", "avg_head_count"}},
        {{"department_key", "Departments", "department_code"},
         {"time_key", "Times", "academic_year"}},
    });
    for (const auto& s : out) s.validate(builtin_schema());
    return out;
  }();
  return specs;
}

const CubeSpec& builtin_cube(std::string_view name) {
  for (const auto& s : builtin_cubes()) {
    if (s.name == name || s.table_name() == name) return s;
  }
  throw Error(ErrorCode::kNotFound, "unknown cube " + std::string(name));
}

std::optional<std::size_t> Cube::attr_index(std::string_view attr) const {
  for (std::size_t i = 0; i < spec.cube_attrs.size(); ++i) {
    if (spec.cube_attrs[i] == attr) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> Cube::mandatory_index(std::string_view attr) const {
  for (std::size_t i = 0; i < spec.mandatory_keys.size(); ++i) {
    if (spec.mandatory_keys[i] == attr) return i;
  }
  return std::nullopt;
}

std::string CubeBuildSummary::to_text() const {
  std::ostringstream out;
  out << "rows_scanned=" << rows_scanned << "\nrows_excluded=" << rows_excluded
      << "\ncube_rows=" << cube_rows
      << "\nbuild_ms=" << std::chrono::duration<double, std::milli>(build_time).count()
      << "\ncumulative_ms="
      << std::chrono::duration<double, std::milli>(cumulative_worker_time).count() << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Build

namespace {

struct Group {
  std::vector<std::string> mandatory;
  std::vector<std::string> attrs;
  std::vector<Accumulator> acc;
  std::uint64_t support = 0;
};

// Groups keyed by the '\x1f'-joined grouped values, in insertion order.
struct GroupTable {
  std::unordered_map<std::string, std::size_t> index;
  std::vector<Group> groups;

  Group& find_or_add(const std::string& key, bool& added) {
    auto [it, inserted] = index.try_emplace(key, groups.size());
    added = inserted;
    if (inserted) groups.emplace_back();
    return groups[it->second];
  }
};

void append_key(std::string& key, std::string_view v) {
  key.append(v);
  key.push_back('\x1f');
}

struct Source {
  bool from_join = false;
  std::size_t index = 0;  // join index or fact column
};

std::vector<Record> deduped_scan(const SegmentStore& store, const TableDef& table) {
  const auto keys = table.natural_key_positions();
  return store.scan(table.name, Dedupe::kOn, keys);
}

}  // namespace

std::shared_ptr<Cube> build_cube(const SegmentStore& store, const WarehouseSchema& schema,
                                 const CubeSpec& spec, const CubeBuildOptions& options) {
  const auto start = Clock::now();
  spec.validate(schema);
  const TableDef& fact = schema.table(spec.fact);
  const std::size_t k = spec.k();

  std::vector<std::unordered_map<std::string, std::string>> lookups(spec.joins.size());
  std::vector<std::size_t> join_fact_col(spec.joins.size());
  for (std::size_t j = 0; j < spec.joins.size(); ++j) {
    const auto& join = spec.joins[j];
    const TableDef& dim = schema.table(join.dimension);
    std::size_t key_col = 0;
    for (std::size_t i = 0; i < dim.attributes.size(); ++i) {
      if (dim.attributes[i].kind == AttributeKind::kDimensionKey) key_col = i;
    }
    const std::size_t out_col = dim.require_index(join.output_attr);
    for (auto& rec : deduped_scan(store, dim)) {
      if (rec.fields.size() != dim.attributes.size()) {
        throw Error(ErrorCode::kCorruption, "malformed row in " + dim.name);
      }
      lookups[j][rec.fields[key_col]] = rec.fields[out_col];
    }
    join_fact_col[j] = fact.require_index(join.fact_attr);
  }

  std::vector<Source> attr_sources;
  for (const auto& a : spec.cube_attrs) {
    Source src;
    for (std::size_t j = 0; j < spec.joins.size(); ++j) {
      if (spec.joins[j].output_attr == a) {
        src = {true, j};
        break;
      }
    }
    if (!src.from_join) src = {false, fact.require_index(a)};
    attr_sources.push_back(src);
  }
  std::vector<std::size_t> mandatory_cols;
  for (const auto& m : spec.mandatory_keys) mandatory_cols.push_back(fact.require_index(m));
  std::vector<std::size_t> measure_cols;
  for (const auto& agg : spec.aggregates) measure_cols.push_back(fact.require_index(agg.measure));

  const std::vector<Record> facts = deduped_scan(store, fact);
  auto cube = std::make_shared<Cube>();
  cube->spec = spec;
  cube->summary.rows_scanned = facts.size();

  // Phase 1: finest-grain partial aggregation. Rows are bucketed by mandatory
  // key first and each bucket is chunked on its own, so one tenant's float
  // sums come out bit-identical whatever the other tenants hold.
  std::vector<std::vector<std::size_t>> buckets;
  {
    std::unordered_map<std::string, std::size_t> bucket_of;
    std::string key;
    for (std::size_t r = 0; r < facts.size(); ++r) {
      const auto& fields = facts[r].fields;
      if (fields.size() != fact.attributes.size()) {
        throw Error(ErrorCode::kCorruption, "malformed row in " + fact.name);
      }
      key.clear();
      for (std::size_t c : mandatory_cols) append_key(key, fields[c]);
      auto [it, added] = bucket_of.try_emplace(key, buckets.size());
      if (added) buckets.emplace_back();
      buckets[it->second].push_back(r);
    }
  }
  struct Task {
    const std::vector<std::size_t>* rows;
    std::size_t begin, end;
  };
  std::vector<Task> tasks;
  for (const auto& b : buckets) {
    const std::size_t chunks = std::min(std::max<std::size_t>(1, options.workers), b.size());
    for (std::size_t c = 0; c < chunks; ++c) tasks.push_back({&b, b.size() * c / chunks, b.size() * (c + 1) / chunks});
  }
  const std::size_t parts = std::max<std::size_t>(1, tasks.size());
  if (tasks.empty()) tasks.push_back({nullptr, 0, 0});
  std::vector<GroupTable> partials(parts);
  std::vector<std::uint64_t> excluded(parts, 0);
  const ParallelTiming phase1 = run_parallel(parts, options.workers, [&](std::size_t p) {
    const Task& task = tasks[p];
    GroupTable& table = partials[p];
    std::vector<const std::string*> joined(spec.joins.size());
    std::string key;
    for (std::size_t i = task.begin; i < task.end; ++i) {
      const auto& fields = facts[(*task.rows)[i]].fields;
      bool resolved = true;
      for (std::size_t j = 0; j < spec.joins.size() && resolved; ++j) {
        auto it = lookups[j].find(fields[join_fact_col[j]]);
        if (it == lookups[j].end()) {
          resolved = false;
        } else {
          joined[j] = &it->second;
        }
      }
      if (!resolved) {
        ++excluded[p];
        continue;
      }
      auto attr_value = [&](std::size_t a) -> const std::string& {
        const Source& s = attr_sources[a];
        return s.from_join ? *joined[s.index] : fields[s.index];
      };
      key.clear();
      for (std::size_t c : mandatory_cols) append_key(key, fields[c]);
      for (std::size_t a = 0; a < k; ++a) append_key(key, attr_value(a));
      bool added = false;
      Group& g = table.find_or_add(key, added);
      if (added) {
        for (std::size_t c : mandatory_cols) g.mandatory.push_back(fields[c]);
        for (std::size_t a = 0; a < k; ++a) g.attrs.push_back(attr_value(a));
        g.acc.resize(measure_cols.size());
      }
      ++g.support;
      for (std::size_t m = 0; m < measure_cols.size(); ++m) {
        const std::string& v = fields[measure_cols[m]];
        if (v.empty()) continue;  // absent value
        const auto parsed = text::parse_decimal(v);
        if (!parsed) {
          throw Error(ErrorCode::kCorruption,
                      "non-numeric " + spec.aggregates[m].measure + " in " + fact.name);
        }
        g.acc[m].add(*parsed);
      }
    }
  });

  GroupTable finest = std::move(partials[0]);
  for (std::size_t p = 1; p < parts; ++p) {
    std::string key;
    for (auto& g : partials[p].groups) {
      key.clear();
      for (const auto& v : g.mandatory) append_key(key, v);
      for (const auto& v : g.attrs) append_key(key, v);
      bool added = false;
      Group& target = finest.find_or_add(key, added);
      if (added) {
        target = std::move(g);
      } else {
        target.support += g.support;
        for (std::size_t m = 0; m < target.acc.size(); ++m) target.acc[m].merge(g.acc[m]);
      }
    }
  }
  for (auto e : excluded) cube->summary.rows_excluded += e;

  // Phase 2: every grouping is a roll-up of the finest groups.
  const std::uint64_t masks = std::uint64_t{1} << k;
  std::vector<std::vector<CubeRow>> per_mask(masks);
  const ParallelTiming phase2 = run_parallel(masks, options.workers, [&](std::size_t mask) {
    const auto present = presence_of(mask, k);
    GroupTable rolled;
    std::string key;
    for (const auto& g : finest.groups) {
      key.clear();
      for (const auto& v : g.mandatory) append_key(key, v);
      for (std::size_t a = 0; a < k; ++a) {
        if (present[a]) append_key(key, g.attrs[a]);
      }
      bool added = false;
      Group& target = rolled.find_or_add(key, added);
      if (added) {
        target.mandatory = g.mandatory;
        target.attrs = g.attrs;  // only present positions are read below
        target.acc.resize(g.acc.size());
      }
      target.support += g.support;
      for (std::size_t m = 0; m < g.acc.size(); ++m) target.acc[m].merge(g.acc[m]);
    }
    auto& rows = per_mask[mask];
    rows.reserve(rolled.groups.size());
    for (auto& g : rolled.groups) {
      CubeRow row;
      row.grouping_id = mask;
      row.mandatory = std::move(g.mandatory);
      row.attrs.resize(k);
      for (std::size_t a = 0; a < k; ++a) {
        if (present[a]) row.attrs[a] = std::move(g.attrs[a]);
      }
      row.aggregates = std::move(g.acc);
      row.support_count = g.support;
      rows.push_back(std::move(row));
    }
  });

  for (auto& rows : per_mask) {
    for (auto& r : rows) cube->rows.push_back(std::move(r));
  }
  std::sort(cube->rows.begin(), cube->rows.end(), [](const CubeRow& a, const CubeRow& b) {
    if (a.grouping_id != b.grouping_id) return a.grouping_id < b.grouping_id;
    if (a.mandatory != b.mandatory) return a.mandatory < b.mandatory;
    return a.attrs < b.attrs;
  });

  cube->summary.cube_rows = cube->rows.size();
  cube->summary.cumulative_worker_time = phase1.busy + phase2.busy;
  cube->summary.build_time = std::chrono::duration_cast<Nanos>(Clock::now() - start);
  return cube;
}

// ---------------------------------------------------------------------------
// Persistence
//
// Line layout: grouping_id, mandatory values, then per attribute a presence
// flag and value, then per aggregate sum,count,mean, then support_count.

namespace {

std::string encode_row(const CubeRow& row) {
  std::string out = std::to_string(row.grouping_id);
  for (const auto& m : row.mandatory) {
    out.push_back(',');
    out += m;
  }
  for (const auto& a : row.attrs) {
    out += a ? ",1," : ",0,";
    if (a) out += *a;
  }
  for (const auto& acc : row.aggregates) {
    out.push_back(',');
    out += text::format_decimal(acc.sum);
    out.push_back(',');
    out += std::to_string(acc.count);
    out.push_back(',');
    if (auto mean = acc.mean()) out += text::format_decimal(*mean);
  }
  out.push_back(',');
  out += std::to_string(row.support_count);
  return out;
}

CubeRow decode_row(const CubeSpec& spec, std::string_view line) {
  const auto fields = text::split_fields(line);
  const std::size_t expected =
      1 + spec.mandatory_keys.size() + 2 * spec.k() + 3 * spec.aggregates.size() + 1;
  auto corrupt = [&] {
    return Error(ErrorCode::kCorruption, "malformed row in " + spec.table_name());
  };
  if (fields.size() != expected) throw corrupt();
  CubeRow row;
  std::size_t f = 0;
  auto next_int = [&]() {
    auto v = text::parse_integer(fields[f++]);
    if (!v || *v < 0) throw corrupt();
    return static_cast<std::uint64_t>(*v);
  };
  row.grouping_id = next_int();
  for (std::size_t i = 0; i < spec.mandatory_keys.size(); ++i) row.mandatory.emplace_back(fields[f++]);
  for (std::size_t i = 0; i < spec.k(); ++i) {
    const std::string_view flag = fields[f++];
    const std::string_view value = fields[f++];
    if (flag == "1") {
      row.attrs.emplace_back(std::string(value));
    } else if (flag == "0") {
      row.attrs.emplace_back(std::nullopt);
    } else {
      throw corrupt();
    }
  }
  for (std::size_t i = 0; i < spec.aggregates.size(); ++i) {
    Accumulator acc;
    auto sum = text::parse_decimal(fields[f++]);
    if (!sum) throw corrupt();
    acc.sum = *sum;
    acc.count = next_int();
    ++f;  // mean is derived
    row.aggregates.push_back(acc);
  }
  row.support_count = next_int();
  return row;
}

}  // namespace

void persist_cube(SegmentStore& store, Cube& cube) {
  const fs::path staged = store.new_staging_path(cube.spec.table_name());
  {
    std::ofstream out(staged, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + staged.string());
    for (const auto& row : cube.rows) out << encode_row(row) << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::kIo, "short write to " + staged.string());
  }
  Segment seg;
  try {
    seg = store.commit_batch(cube.spec.table_name(), StagedBatch{staged, cube.rows.size()});
  } catch (...) {
    std::error_code ec;
    fs::remove(staged, ec);
    throw;
  }
  cube.version = seg.batch_id;
  for (const auto& old : store.segments(cube.spec.table_name())) {
    if (old.batch_id < seg.batch_id) store.drop_batch(old.table, old.batch_id);
  }
}

std::shared_ptr<const Cube> load_cube(const SegmentStore& store, const CubeSpec& spec) {
  const auto segs = store.segments(spec.table_name());
  if (segs.empty()) return nullptr;
  const Segment& latest = segs.back();
  auto cube = std::make_shared<Cube>();
  cube->spec = spec;
  cube->version = latest.batch_id;
  const std::string data = text::read_file(latest.path.string());
  std::size_t pos = 0;
  while (pos < data.size()) {
    std::size_t nl = data.find('\n', pos);
    if (nl == std::string::npos) nl = data.size();
    cube->rows.push_back(decode_row(spec, std::string_view(data).substr(pos, nl - pos)));
    pos = nl + 1;
  }
  cube->summary.cube_rows = cube->rows.size();
  return cube;
}

// ---------------------------------------------------------------------------
// Registry and refresh

void CubeRegistry::publish(std::shared_ptr<const Cube> cube) {
  std::lock_guard lock(mu_);
  cubes_[cube->spec.name] = std::move(cube);
}

std::shared_ptr<const Cube> CubeRegistry::current(std::string_view name) const {
  std::lock_guard lock(mu_);
  auto it = cubes_.find(name);
  if (it == cubes_.end() && name.starts_with("cube_")) it = cubes_.find(name.substr(5));
  return it == cubes_.end() ? nullptr : it->second;
}

std::vector<std::string> CubeRegistry::names() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, _] : cubes_) out.push_back(name);
  return out;
}

CubeRefresher::CubeRefresher(SegmentStore& store, const WarehouseSchema& schema,
                             CubeRegistry& registry, std::vector<CubeSpec> specs,
                             CubeBuildOptions options, Logger logger)
    : store_(store),
      schema_(schema),
      registry_(registry),
      specs_(std::move(specs)),
      options_(options),
      logger_(std::move(logger)) {}

CubeRefresher::~CubeRefresher() { stop(); }

void CubeRefresher::start(std::chrono::milliseconds interval) {
  if (specs_.empty() || thread_.joinable()) return;
  thread_ = std::jthread([this, interval](std::stop_token st) { loop(st, interval); });
}

void CubeRefresher::stop() {
  if (thread_.joinable()) {
    thread_.request_stop();
    cv_.notify_all();
    thread_.join();
  }
}

void CubeRefresher::loop(std::stop_token stop, std::chrono::milliseconds interval) {
  while (!stop.stop_requested()) {
    refresh_now();
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, stop, interval, [] { return false; });
  }
}

RefreshStats CubeRefresher::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

namespace {

// Commit time of a segment: the rename into the table directory updates ctime.
std::chrono::system_clock::time_point commit_time(const fs::path& p) {
  struct stat st {};
  if (::stat(p.c_str(), &st) != 0) return std::chrono::system_clock::now();
  return std::chrono::system_clock::time_point(
      std::chrono::duration_cast<std::chrono::system_clock::duration>(
          std::chrono::seconds(st.st_ctim.tv_sec) + std::chrono::nanoseconds(st.st_ctim.tv_nsec)));
}

}  // namespace

bool CubeRefresher::refresh_now() {
  std::lock_guard build_lock(build_mu_);
  bool ok = true;
  for (const auto& spec : specs_) {
    const auto fact_segments = store_.segments(spec.fact);
    std::vector<std::uint64_t> inputs;
    for (const auto& [table, _] : schema_.tables) {
      for (const auto& seg : store_.segments(table)) inputs.push_back(seg.batch_id);
      inputs.push_back(0);  // table boundary
    }
    if (const auto it = built_from_.find(spec.name);
        it != built_from_.end() && it->second == inputs && registry_.current(spec.name)) {
      continue;
    }
    try {
      auto cube = build_cube(store_, schema_, spec, options_);
      if (fault_hook_) fault_hook_(spec);
      persist_cube(store_, *cube);
      registry_.publish(cube);
      built_from_[spec.name] = std::move(inputs);
      const auto visible_at = std::chrono::system_clock::now();

      std::lock_guard lock(mu_);
      ++stats_.builds;
      std::uint64_t& seen = seen_batches_[spec.fact];
      for (const auto& seg : fact_segments) {
        if (seg.batch_id <= seen) continue;
        stats_.last_visibility_lag =
            std::chrono::duration_cast<Nanos>(visible_at - commit_time(seg.path));
        seen = seg.batch_id;
      }
    } catch (const std::exception& e) {
      ok = false;
      std::lock_guard lock(mu_);
      ++stats_.failures;
      stats_.last_error = spec.name + ": " + e.what();
      if (logger_) logger_("cube refresh failed: " + stats_.last_error);
    }
  }
  return ok;
}

}  // namespace cwh
