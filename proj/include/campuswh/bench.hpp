#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "campuswh/etl.hpp"
#include "campuswh/schema.hpp"

namespace cwh::bench {

/// Fixed code universe that generated facts draw from. Codes are stable:
/// C0001.., S000001.., R1.., terms from a fixed calendar.
struct Universe {
  std::size_t students = 2000;
  std::size_t courses = 40;
  std::size_t times = 6;
  std::size_t regtypes = 3;
  std::size_t departments = 8;
  std::size_t programs = 5;
  std::size_t teachers = 60;

  std::string student(std::size_t i) const;
  std::string course(std::size_t i) const;
  std::string time(std::size_t i) const;  // e.g. 2016-17-SPR
  std::string regtype(std::size_t i) const;
  std::string department(std::size_t i) const;
  std::string program(std::size_t i) const;
  std::string teacher(std::size_t i) const;
};

/// Writes a deterministic, shape-valid upload CSV for `table` whose size is
/// within one row of `size_bytes` (never above it). Returns the row count.
std::uint64_t gen_dataset(const std::filesystem::path& out, std::uint64_t size_bytes,
                          std::string_view table, const TenantKey& tenant, std::uint64_t seed,
                          const Universe& universe = {});

/// Writes one upload CSV per dimension table into `dir` (named <Table>.csv).
void gen_dimensions(const std::filesystem::path& dir, const Universe& universe, std::uint64_t seed);

/// StudentPerformance rows covering every (course, time, regtype) once, so
/// the cube has (courses+1)(times+1)(regtypes+1) rows per tenant.
std::uint64_t gen_dense_performance(const std::filesystem::path& out, const Universe& universe,
                                    std::uint64_t seed);

struct OutlierOptions {
  /// Stage 1 keeps [Q1-1.5 IQR, Q3+1.5 IQR] instead of [Q1, Q3].
  bool tukey_fences = false;
};

struct OutlierResult {
  std::vector<double> survivors;  // input order
  std::size_t stage1_survivors = 0;
  bool fell_back_to_stage1 = false;
};

/// Quartile by linear interpolation between order statistics at (n-1)p.
double quantile(std::vector<double> sorted_or_not, double p);

/// Two-stage filter: keep [Q1, Q3], then keep mean +- 1.5 population stddev of
/// what survived. Needs at least 4 samples.
OutlierResult remove_outliers(const std::vector<double>& samples, const OutlierOptions& options = {});

double mean(const std::vector<double>& v);

struct SeriesRow {
  std::uint64_t x = 0;
  std::optional<double> y;
  std::optional<double> z;
};

/// Figure-data series; CSV header is exactly "x,y,z".
struct BenchSeries {
  std::vector<SeriesRow> rows;

  std::string to_csv() const;
  /// gnuplot script plotting y and z against x from `csv_path`.
  std::string gnuplot_script(const std::string& csv_path, const std::string& title,
                             const std::string& y_label, const std::string& z_label) const;
};

/// Per-size statistics behind one series cell.
struct SizeStats {
  std::uint64_t size = 0;
  std::size_t samples = 0;
  std::size_t survivors = 0;
  double mean_effective_ms = 0;
  double mean_cumulative_ms = 0;
  std::size_t n_m = 0;
  std::size_t workers = 0;
  bool outlier_removal_skipped = false;
};

struct EtlBenchPlan {
  std::vector<std::uint64_t> sizes;  // bytes, strictly increasing
  std::size_t reps = 20;             // measured runs, excluding warm-up
  std::vector<SplitMode> modes = {SplitMode::kCase1, SplitMode::kCase2};
  std::uint64_t seed = 7;
  SplitConfig split;  // s_split = 1 MiB
  std::size_t worker_pool_size = default_worker_count();
  OutlierOptions outliers;
  std::filesystem::path work_dir;  // warehouse root used for the runs
  std::string table = "StudentPerformance";

  void validate() const;
};

struct EtlBenchReport {
  BenchSeries series;  // x = bytes, y = Case 1 mean effective ms, z = Case 2
  std::vector<SizeStats> case1;
  std::vector<SizeStats> case2;
  std::vector<std::string> notes;  // warm-up discards, unmet preconditions
};

/// Generates each dataset, runs the ETL reps+1 times per mode (the first run
/// is discarded), removes outliers, and reports means. Each run's batch is
/// dropped after timing.
EtlBenchReport run_etl_bench(const EtlBenchPlan& plan);

struct OlapBenchPlan {
  std::vector<std::uint64_t> cube_rows;  // target cube sizes, increasing
  std::size_t reps = 20;
  std::uint64_t seed = 7;
  /// Scan tasks get this many cube rows each, so workers grow with the cube.
  std::size_t rows_per_task = 200'000;
  std::size_t max_workers = default_worker_count();
  bool single_worker = false;
  OutlierOptions outliers;
  std::filesystem::path work_dir;

  void validate() const;
};

struct OlapBenchReport {
  BenchSeries series;  // x = cube rows, y = mean cumulative ms, z = mean effective ms
  std::vector<SizeStats> stats;
  std::vector<std::string> notes;
};

/// Builds a cube per target size (by scaling the course universe), then runs
/// the avg-marks-by-regtype query reps+1 times against it.
OlapBenchReport run_olap_bench(const OlapBenchPlan& plan);

}  // namespace cwh::bench
