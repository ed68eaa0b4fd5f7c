#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "campuswh/parallel.hpp"
#include "campuswh/schema.hpp"
#include "campuswh/segment_store.hpp"

namespace cwh {

/// Mergeable partial state of an AVG.
struct Accumulator {
  double sum = 0;
  std::uint64_t count = 0;

  void add(double value) {
    sum += value;
    ++count;
  }
  void merge(const Accumulator& other) {
    sum += other.sum;
    count += other.count;
  }
  std::optional<double> mean() const {
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  }
  friend bool operator==(const Accumulator&, const Accumulator&) = default;
};

struct AggregateDef {
  std::string measure;  // fact attribute
  std::string output;   // e.g. avg_marks
};

/// Fact reference joined to a dimension on the dimension key; the dimension's
/// `output_attr` becomes available to the cube under the same name.
struct DimensionJoin {
  std::string fact_attr;
  std::string dimension;
  std::string output_attr;
};

struct CubeSpec {
  std::string name;
  std::string fact;
  std::vector<std::string> mandatory_keys;  // grouped in every row
  std::vector<std::string> cube_attrs;      // rolled up by the cube
  std::vector<AggregateDef> aggregates;
  std::vector<DimensionJoin> joins;

  std::size_t k() const { return cube_attrs.size(); }
  /// Table under which the cube is persisted.
  std::string table_name() const { return "cube_" + name; }
  void validate(const WarehouseSchema& schema) const;
};

/// The shipped cubes: student_performance (mandatory university_key; course,
/// time, and regtype codes) and student_counts (department code, academic
/// year).
const std::vector<CubeSpec>& builtin_cubes();
const CubeSpec& builtin_cube(std::string_view name);

/// Bit j-1 is set iff the j-th listed attribute is present, so the most
/// significant of the k bits belongs to the last attribute.
std::uint64_t grouping_id(std::span<const bool> present);
std::vector<bool> presence_of(std::uint64_t grouping_id, std::size_t k);
/// k-digit binary rendering, most significant bit first ("0101").
std::string mask_string(std::uint64_t grouping_id, std::size_t k);

/// Re-expresses `value` from one base to another (2..36), lowercase output.
std::string conv(std::string_view value, int from_base, int to_base);

struct CubeRow {
  std::uint64_t grouping_id = 0;
  std::vector<std::string> mandatory;
  std::vector<std::optional<std::string>> attrs;  // nullopt: rolled up
  std::vector<Accumulator> aggregates;
  std::uint64_t support_count = 0;

  bool present(std::size_t attr) const { return attrs[attr].has_value(); }
  friend bool operator==(const CubeRow&, const CubeRow&) = default;
};

struct CubeBuildSummary {
  std::uint64_t rows_scanned = 0;
  std::uint64_t rows_excluded = 0;  // unresolved dimension references
  std::uint64_t cube_rows = 0;
  Nanos build_time{0};
  Nanos cumulative_worker_time{0};

  std::string to_text() const;
};

/// An immutable materialized cube. Rows are sorted by grouping_id, then by
/// mandatory values, then by attribute values.
struct Cube {
  CubeSpec spec;
  std::vector<CubeRow> rows;
  std::uint64_t version = 0;  // batch id of the persisted copy, 0 if none
  CubeBuildSummary summary;

  std::optional<std::size_t> attr_index(std::string_view name) const;
  std::optional<std::size_t> mandatory_index(std::string_view name) const;
};

struct CubeBuildOptions {
  std::size_t workers = default_worker_count();
};

/// Joins the deduplicated fact to its dimensions and aggregates all 2^k
/// groupings. Fact rows with an unresolved reference are excluded and
/// counted.
std::shared_ptr<Cube> build_cube(const SegmentStore& store, const WarehouseSchema& schema,
                                 const CubeSpec& spec, const CubeBuildOptions& options = {});

/// Writes the cube as a new batch of spec.table_name() and drops older
/// batches. Sets cube.version to the new batch id.
void persist_cube(SegmentStore& store, Cube& cube);

/// Loads the latest persisted version, or nullptr when none exists.
std::shared_ptr<const Cube> load_cube(const SegmentStore& store, const CubeSpec& spec);

/// Current cube versions, swapped atomically on refresh.
class CubeRegistry {
 public:
  void publish(std::shared_ptr<const Cube> cube);
  std::shared_ptr<const Cube> current(std::string_view name) const;
  std::vector<std::string> names() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Cube>, std::less<>> cubes_;
};

struct RefreshStats {
  std::uint64_t builds = 0;
  std::uint64_t failures = 0;
  std::string last_error;
  /// Commit-to-visibility delay of the most recent newly visible batch.
  std::optional<Nanos> last_visibility_lag;
};

/// Rebuilds every registered spec on a fixed interval. A failed rebuild keeps
/// the previously published cube.
class CubeRefresher {
 public:
  using Logger = std::function<void(const std::string&)>;

  CubeRefresher(SegmentStore& store, const WarehouseSchema& schema, CubeRegistry& registry,
                std::vector<CubeSpec> specs, CubeBuildOptions options = {}, Logger logger = {});
  ~CubeRefresher();
  CubeRefresher(const CubeRefresher&) = delete;
  CubeRefresher& operator=(const CubeRefresher&) = delete;

  /// Starts the background loop; the first rebuild happens immediately.
  void start(std::chrono::milliseconds interval);
  void stop();
  /// One synchronous rebuild of every spec whose inputs changed since its
  /// last successful build. Returns false if any failed.
  bool refresh_now();

  bool has_work() const { return !specs_.empty(); }
  RefreshStats stats() const;

  /// Test hook invoked before a rebuilt cube is persisted.
  void set_fault_hook(std::function<void(const CubeSpec&)> hook) { fault_hook_ = std::move(hook); }

 private:
  void loop(std::stop_token stop, std::chrono::milliseconds interval);

  SegmentStore& store_;
  const WarehouseSchema& schema_;
  CubeRegistry& registry_;
  std::vector<CubeSpec> specs_;
  CubeBuildOptions options_;
  Logger logger_;
  std::function<void(const CubeSpec&)> fault_hook_;

  mutable std::mutex mu_;
  std::condition_variable_any cv_;
  RefreshStats stats_;
  std::map<std::string, std::uint64_t> seen_batches_;  // fact -> highest visible batch
  // Committed batch ids of every table as of each spec's last good build; an
  // unchanged set means the rebuild would be identical and is skipped.
  std::map<std::string, std::vector<std::uint64_t>> built_from_;
  std::mutex build_mu_;
  std::jthread thread_;
};

}  // namespace cwh
