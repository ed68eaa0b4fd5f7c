#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "campuswh/parallel.hpp"
#include "campuswh/schema.hpp"
#include "campuswh/segment_store.hpp"

namespace cwh {

inline constexpr std::uint64_t kKiB = 1024;
inline constexpr std::uint64_t kMiB = 1024 * kKiB;

/// Split sizing parameters, all in bytes.
struct SplitConfig {
  std::uint64_t s_min = 1 * kMiB;
  std::uint64_t s_max = 1 * kMiB;
  std::uint64_t s_b = 1 * kMiB;  // block size

  void validate() const;
};

enum class SplitMode {
  kCase1,  // always two splits of half the input
  kCase2,  // splits of split_size(cfg); worker count grows with the input
};

std::string_view to_string(SplitMode mode);
SplitMode parse_split_mode(std::string_view text);

struct ByteRange {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  std::uint64_t end() const { return offset + length; }
  friend bool operator==(const ByteRange&, const ByteRange&) = default;
};

struct SplitPlan {
  std::uint64_t s_ip = 0;     // input size
  std::uint64_t s_split = 0;  // nominal split size
  std::vector<ByteRange> splits;

  /// Worker (mapper) count: one per split.
  std::size_t n_m() const { return splits.size(); }
};

/// max(s_min, min(s_max, s_b)).
std::uint64_t split_size(const SplitConfig& cfg);

/// ceil(s_ip / s_split), at least 1.
std::uint64_t mapper_count(std::uint64_t s_ip, std::uint64_t s_split);

/// Plans record-aligned splits: nominal boundaries at multiples of s_split are
/// pushed forward to just past the next '\n'. Boundaries that collapse onto
/// each other are merged, so n_m can be smaller than the nominal count when
/// records are longer than a split.
SplitPlan plan_splits(const std::filesystem::path& file, const SplitConfig& cfg, SplitMode mode);

struct EtlError {
  std::uint64_t line_number = 0;  // 1-based, header is line 1
  std::optional<std::string> tenant_key_value;
  std::string reason;

  friend bool operator==(const EtlError&, const EtlError&) = default;
};

struct EtlErrorReport {
  std::vector<EtlError> entries;  // sorted by line_number

  bool empty() const { return entries.empty(); }
  /// CSV with header line_number,tenant_key_value,reason.
  std::string to_csv() const;
};

struct ExtractResult {
  std::vector<Record> records;  // upload layout; Record::line is the file line
  std::vector<EtlError> errors;
  std::uint64_t lines = 0;  // lines in the split, header included
};

/// Parses and shape-checks the lines of one split. The split starting at
/// offset 0 must open with the table's upload header. `first_line` is the
/// file line number of the split's first line.
ExtractResult extract(const std::filesystem::path& file, const ByteRange& split,
                      const TableDef& table, const TenantKey& tenant,
                      std::uint64_t first_line = 1);

struct TransformResult {
  std::vector<Record> records;  // stored layout
  std::vector<EtlError> errors;
};

/// Converts upload-layout records into the stored layout: the tenant key is
/// filled in, every key and reference gets its qualified companion, and the
/// tenant-provided value is kept next to it.
TransformResult transform(const std::vector<Record>& records, const TableDef& table,
                          const TenantKey& tenant);

struct EtlOptions {
  std::size_t worker_pool_size = default_worker_count();
};

struct BatchResult {
  std::optional<Segment> segment;  // set iff committed
  EtlErrorReport report;           // non-empty iff rejected
  Nanos effective_time{0};
  Nanos cumulative_time{0};
  std::uint64_t rows_in = 0;  // lines read, header included
  std::uint64_t rows_out = 0;
  std::size_t n_m = 0;
  std::size_t workers = 0;

  bool committed() const { return segment.has_value(); }
};

/// Plans splits, extracts and transforms them in parallel into per-split
/// intermediate files, and commits the concatenation as one batch. Any error
/// anywhere rejects the whole file; the report then lists every error found.
BatchResult run_etl(SegmentStore& store, const WarehouseSchema& schema,
                    const std::filesystem::path& file, std::string_view table,
                    const TenantKey& tenant, SplitMode mode, const SplitConfig& cfg,
                    const EtlOptions& options = {});

}  // namespace cwh
