#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cwh {

struct Segment {
  std::string table;
  std::uint64_t batch_id = 0;
  std::filesystem::path path;
  std::uint64_t row_count = 0;
};

struct TableState {
  std::string table;
  std::vector<Segment> segments;  // ascending batch_id

  std::uint64_t row_count() const;
};

/// One stored row. `batch_id` and `line` locate it in its segment.
struct Record {
  std::vector<std::string> fields;
  std::uint64_t batch_id = 0;
  std::uint64_t line = 0;

  friend bool operator==(const Record& a, const Record& b) { return a.fields == b.fields; }
};

/// A file prepared for commit. It must live under the store's staging
/// directory so the commit is a same-filesystem rename.
struct StagedBatch {
  std::filesystem::path path;
  std::uint64_t row_count = 0;
};

enum class Dedupe { kOff, kOn };

/// Directory-per-table storage of immutable segment files.
///
/// Layout: <root>/<table>/<batch_id>.seg, newline-terminated comma-separated
/// records without a header. A commit renames a staged file into place with
/// no-replace semantics, so readers observe either the old or the new set of
/// segments. Commits to one table are serialized by an flock on
/// <root>/<table>/.lock.
class SegmentStore {
 public:
  /// Called with a named point ("commit.before_move", "commit.after_move");
  /// tests throw from it to simulate crashes.
  using FaultHook = std::function<void(std::string_view point)>;

  explicit SegmentStore(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path staging_dir() const;
  /// A fresh, unique path in the staging directory.
  std::filesystem::path new_staging_path(std::string_view stem) const;

  void set_fault_hook(FaultHook hook) { fault_hook_ = std::move(hook); }

  /// Moves `staged` into `table` as the next batch. Cost does not depend on
  /// the row count. On failure the table directory is unchanged and the
  /// staged file is left where it was.
  Segment commit_batch(std::string_view table, const StagedBatch& staged);

  /// Records of all segments. With Dedupe::kOn and non-empty `key_columns`,
  /// only the record from the highest batch survives per key (ties within a
  /// batch go to the last line).
  std::vector<Record> scan(std::string_view table, Dedupe dedupe,
                           std::span<const std::size_t> key_columns = {}) const;

  /// Streams every line of every segment in batch order.
  void for_each_line(std::string_view table,
                     const std::function<void(const Segment&, std::string_view)>& fn) const;

  void drop_batch(std::string_view table, std::uint64_t batch_id);

  /// Segments of `table`, with row counts obtained by counting lines. An
  /// absent table has no segments.
  TableState state(std::string_view table) const;
  std::vector<Segment> segments(std::string_view table) const;
  bool has_table(std::string_view table) const;

 private:
  std::filesystem::path table_dir(std::string_view table) const;
  void fault(std::string_view point) const {
    if (fault_hook_) fault_hook_(point);
  }

  std::filesystem::path root_;
  FaultHook fault_hook_;
};

/// Counts '\n'-terminated lines (plus a final unterminated one).
std::uint64_t count_lines(const std::filesystem::path& path);

}  // namespace cwh
