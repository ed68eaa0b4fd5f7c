#include "campuswh/etl.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <functional>

#include "campuswh/error.hpp"
#include "campuswh/text.hpp"

namespace fs = std::filesystem;

namespace cwh {

void SplitConfig::validate() const {
  if (s_min == 0 || s_max == 0 || s_b == 0) {
    throw Error(ErrorCode::kValidation, "split sizes must be positive");
  }
  if (s_min > s_max) throw Error(ErrorCode::kValidation, "s_min exceeds s_max");
}

std::string_view to_string(SplitMode mode) {
  return mode == SplitMode::kCase1 ? "case1" : "case2";
}

SplitMode parse_split_mode(std::string_view text) {
  if (text == "case1") return SplitMode::kCase1;
  if (text == "case2") return SplitMode::kCase2;
  throw Error(ErrorCode::kValidation, "unknown split mode '" + std::string(text) + "'");
}

std::uint64_t split_size(const SplitConfig& cfg) {
  cfg.validate();
  return std::max(cfg.s_min, std::min(cfg.s_max, cfg.s_b));
}

std::uint64_t mapper_count(std::uint64_t s_ip, std::uint64_t s_split) {
  if (s_ip == 0 || s_split == 0) {
    throw Error(ErrorCode::kValidation, "mapper_count needs positive sizes");
  }
  return (s_ip + s_split - 1) / s_split;
}

namespace {

class Fd {
 public:
  Fd(const fs::path& path, int flags, mode_t mode = 0644) {
    fd_ = ::open(path.c_str(), flags | O_CLOEXEC, mode);
    if (fd_ < 0) {
      throw Error(ErrorCode::kIo, "cannot open " + path.string() + ": " + std::strerror(errno));
    }
  }
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }

 private:
  int fd_ = -1;
};

std::uint64_t file_size(int fd) {
  struct stat st {};
  if (::fstat(fd, &st) != 0) throw Error(ErrorCode::kIo, "fstat failed");
  return static_cast<std::uint64_t>(st.st_size);
}

std::size_t pread_some(int fd, char* buf, std::size_t len, std::uint64_t offset) {
  for (;;) {
    const ssize_t n = ::pread(fd, buf, len, static_cast<off_t>(offset));
    if (n >= 0) return static_cast<std::size_t>(n);
    if (errno != EINTR) throw Error(ErrorCode::kIo, std::string("read failed: ") + std::strerror(errno));
  }
}

void write_all(int fd, const char* data, std::size_t len) {
  while (len > 0) {
    const ssize_t n = ::write(fd, data, len);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIo, std::string("write failed: ") + std::strerror(errno));
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

// First record boundary at or after `nominal`.
std::uint64_t align_forward(int fd, std::uint64_t nominal, std::uint64_t size) {
  if (nominal >= size) return size;
  char prev = 0;
  if (pread_some(fd, &prev, 1, nominal - 1) == 1 && prev == '\n') return nominal;
  char buf[1 << 16];
  std::uint64_t pos = nominal;
  while (pos < size) {
    const std::size_t n = pread_some(fd, buf, sizeof buf, pos);
    if (n == 0) break;
    if (const void* nl = std::memchr(buf, '\n', n)) {
      return pos + static_cast<std::uint64_t>(static_cast<const char*>(nl) - buf) + 1;
    }
    pos += n;
  }
  return size;
}

// Calls fn(line) for each line of the byte range, without the '\n'.
void for_each_line(int fd, const ByteRange& range,
                   const std::function<void(std::string_view)>& fn) {
  constexpr std::size_t kChunk = 4 * kMiB;
  std::string carry;
  std::vector<char> buf(kChunk);
  std::uint64_t pos = range.offset;
  while (pos < range.end()) {
    const std::size_t want = static_cast<std::size_t>(std::min<std::uint64_t>(kChunk, range.end() - pos));
    const std::size_t n = pread_some(fd, buf.data(), want, pos);
    if (n == 0) break;
    pos += n;
    std::string_view chunk(buf.data(), n);
    std::size_t start = 0;
    for (;;) {
      const std::size_t nl = chunk.find('\n', start);
      if (nl == std::string_view::npos) break;
      if (carry.empty()) {
        fn(chunk.substr(start, nl - start));
      } else {
        carry.append(chunk.substr(start, nl - start));
        fn(carry);
        carry.clear();
      }
      start = nl + 1;
    }
    carry.append(chunk.substr(start));
  }
  if (!carry.empty()) fn(carry);
}

// Maps each stored attribute to its source in the upload row.
class RowTransformer {
 public:
  explicit RowTransformer(const TableDef& table) {
    const auto upload = table.upload_positions();
    auto upload_index = [&](std::string_view name) {
      const std::size_t stored = table.require_index(name);
      return static_cast<std::size_t>(std::find(upload.begin(), upload.end(), stored) - upload.begin());
    };
    for (const auto& attr : table.attributes) {
      if (attr.kind == AttributeKind::kTenantKey) {
        sources_.push_back({Source::kTenant, 0, attr.name});
      } else if (attr.derived_from) {
        const std::size_t idx = upload_index(*attr.derived_from);
        sources_.push_back({Source::kQualified, idx, *attr.derived_from});
        key_columns_.push_back(idx);
      } else {
        sources_.push_back({Source::kRaw, upload_index(attr.name), attr.name});
      }
    }
  }

  /// Appends the stored-layout line for `upload` to `out`. Returns an error
  /// reason (and leaves `out` unchanged) when a key field is empty.
  std::optional<std::string> append(const TenantKey& tenant,
                                    const std::vector<std::string_view>& upload,
                                    std::string& out) const {
    const std::size_t mark = out.size();
    bool first = true;
    for (const auto& src : sources_) {
      if (!first) out.push_back(',');
      first = false;
      switch (src.kind) {
        case Source::kTenant:
          out += tenant.value();
          break;
        case Source::kQualified: {
          const std::string_view raw = upload[src.upload_index];
          if (raw.empty()) {
            out.resize(mark);
            return "empty key (" + src.name + ")";
          }
          out += tenant.value();
          out.push_back(kKeySeparator);
          out += raw;
          break;
        }
        case Source::kRaw:
          out += upload[src.upload_index];
          break;
      }
    }
    return std::nullopt;
  }

  /// The tenant-provided key values of a row, for error reports.
  std::optional<std::string> key_context(const std::vector<std::string_view>& upload) const {
    std::string out;
    bool any = false;
    for (std::size_t idx : key_columns_) {
      if (idx >= upload.size()) continue;
      if (any) out.push_back('|');
      out += upload[idx];
      any = true;
    }
    if (!any || out.find_first_not_of('|') == std::string::npos) return std::nullopt;
    return out;
  }

 private:
  struct Source {
    enum Kind { kTenant, kQualified, kRaw } kind;
    std::size_t upload_index;
    std::string name;
  };
  std::vector<Source> sources_;
  std::vector<std::size_t> key_columns_;
};

// Error context: key values with commas removed, since the report is CSV.
std::optional<std::string> sanitize(std::optional<std::string> s) {
  if (s) std::replace(s->begin(), s->end(), ',', ';');
  return s;
}

std::string header_reason(const TableDef& table) {
  return "header mismatch: expected " + table.upload_header();
}

}  // namespace

SplitPlan plan_splits(const fs::path& file, const SplitConfig& cfg, SplitMode mode) {
  Fd fd(file, O_RDONLY);
  SplitPlan plan;
  plan.s_ip = file_size(fd.get());
  if (plan.s_ip == 0) throw Error(ErrorCode::kValidation, "empty file " + file.string());

  plan.s_split = mode == SplitMode::kCase1 ? (plan.s_ip + 1) / 2 : split_size(cfg);
  const std::uint64_t nominal = mapper_count(plan.s_ip, plan.s_split);

  std::uint64_t start = 0;
  for (std::uint64_t k = 1; k <= nominal && start < plan.s_ip; ++k) {
    const std::uint64_t end =
        k == nominal ? plan.s_ip : align_forward(fd.get(), k * plan.s_split, plan.s_ip);
    if (end <= start) continue;
    plan.splits.push_back({start, end - start});
    start = end;
  }
  if (start < plan.s_ip) plan.splits.push_back({start, plan.s_ip - start});
  return plan;
}

std::string EtlErrorReport::to_csv() const {
  std::string out = "line_number,tenant_key_value,reason\n";
  for (const auto& e : entries) {
    out += std::to_string(e.line_number);
    out.push_back(',');
    out += e.tenant_key_value.value_or("");
    out.push_back(',');
    std::string reason = e.reason;
    std::replace(reason.begin(), reason.end(), ',', ';');
    out += reason;
    out.push_back('\n');
  }
  return out;
}

ExtractResult extract(const fs::path& file, const ByteRange& split, const TableDef& table,
                      const TenantKey& /*tenant*/, std::uint64_t first_line) {
  Fd fd(file, O_RDONLY);
  const RowTransformer keys(table);
  const std::string header = table.upload_header();
  ExtractResult result;
  std::vector<std::string_view> fields;
  std::uint64_t line = first_line;
  bool expect_header = split.offset == 0;

  for_each_line(fd.get(), split, [&](std::string_view raw) {
    const std::uint64_t this_line = line++;
    ++result.lines;
    const std::string_view row = text::strip_cr(raw);
    if (expect_header) {
      expect_header = false;
      if (row != header) result.errors.push_back({this_line, std::nullopt, header_reason(table)});
      return;
    }
    text::split_fields(row, fields);
    if (auto err = validate_row_shape(table, std::span<const std::string_view>(fields))) {
      result.errors.push_back({this_line, sanitize(keys.key_context(fields)), err->describe()});
      return;
    }
    Record rec;
    rec.fields.assign(fields.begin(), fields.end());
    rec.line = this_line;
    result.records.push_back(std::move(rec));
  });
  return result;
}

TransformResult transform(const std::vector<Record>& records, const TableDef& table,
                          const TenantKey& tenant) {
  const RowTransformer transformer(table);
  TransformResult result;
  result.records.reserve(records.size());
  std::vector<std::string_view> upload;
  std::string line;
  for (const auto& rec : records) {
    upload.assign(rec.fields.begin(), rec.fields.end());
    line.clear();
    if (auto err = transformer.append(tenant, upload, line)) {
      result.errors.push_back({rec.line, sanitize(transformer.key_context(upload)), *err});
      continue;
    }
    Record out;
    out.fields.reserve(table.attributes.size());
    for (auto f : text::split_fields(line)) out.fields.emplace_back(f);
    out.line = rec.line;
    result.records.push_back(std::move(out));
  }
  return result;
}

namespace {

struct SplitOutput {
  fs::path part;
  std::uint64_t bytes = 0;
  std::uint64_t rows = 0;
  std::uint64_t lines = 0;
  std::vector<EtlError> errors;  // split-local line numbers, 1-based
};

// Extract and transform one split straight into its intermediate file.
void process_split(const fs::path& file, const ByteRange& split, const TableDef& table,
                   const RowTransformer& transformer, const TenantKey& tenant,
                   SplitOutput& out) {
  constexpr std::size_t kFlushAt = 1 * kMiB;
  Fd in(file, O_RDONLY);
  Fd part(out.part, O_WRONLY | O_CREAT | O_TRUNC);
  const std::string header = table.upload_header();
  std::string buffer, scratch;
  buffer.reserve(kFlushAt + 4096);
  std::vector<std::string_view> fields;
  bool expect_header = split.offset == 0;

  for_each_line(in.get(), split, [&](std::string_view raw) {
    const std::uint64_t line = ++out.lines;
    const std::string_view row = text::strip_cr(raw);
    if (expect_header) {
      expect_header = false;
      if (row != header) out.errors.push_back({line, std::nullopt, header_reason(table)});
      return;
    }
    text::split_fields(row, fields);
    if (auto err = validate_row_shape(table, std::span<const std::string_view>(fields))) {
      out.errors.push_back({line, sanitize(transformer.key_context(fields)), err->describe()});
      return;
    }
    // Once the batch is rejected, rows are still transformed to find key
    // errors, but the output goes to a scratch buffer.
    const bool rejected = !out.errors.empty();
    std::string& sink = rejected ? scratch : buffer;
    const std::size_t mark = sink.size();
    if (auto err = transformer.append(tenant, fields, sink)) {
      sink.resize(mark);
      out.errors.push_back({line, sanitize(transformer.key_context(fields)), *err});
      return;
    }
    if (rejected) {
      scratch.clear();
      return;
    }
    buffer.push_back('\n');
    ++out.rows;
    if (buffer.size() >= kFlushAt) {
      write_all(part.get(), buffer.data(), buffer.size());
      out.bytes += buffer.size();
      buffer.clear();
    }
  });
  write_all(part.get(), buffer.data(), buffer.size());
  out.bytes += buffer.size();
}

void copy_range(int in_fd, int out_fd, std::uint64_t out_offset, std::uint64_t len) {
  loff_t in_off = 0;
  auto out_off = static_cast<loff_t>(out_offset);
  while (len > 0) {
    const ssize_t n = ::copy_file_range(in_fd, &in_off, out_fd, &out_off, len, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIo, std::string("copy_file_range failed: ") + std::strerror(errno));
    }
    if (n == 0) throw Error(ErrorCode::kIo, "intermediate file shorter than expected");
    len -= static_cast<std::uint64_t>(n);
  }
}

struct PathCleanup {
  std::vector<fs::path> paths;
  ~PathCleanup() {
    std::error_code ec;
    for (const auto& p : paths) fs::remove(p, ec);
  }
};

}  // namespace

BatchResult run_etl(SegmentStore& store, const WarehouseSchema& schema, const fs::path& file,
                    std::string_view table_name, const TenantKey& tenant, SplitMode mode,
                    const SplitConfig& cfg, const EtlOptions& options) {
  const auto start = Clock::now();
  const TableDef& table = schema.table(table_name);
  cfg.validate();
  BatchResult result;

  std::error_code ec;
  if (fs::file_size(file, ec) == 0 || ec) {
    if (ec) throw Error(ErrorCode::kIo, "cannot read " + file.string());
    result.report.entries.push_back({1, std::nullopt, "empty file; " + header_reason(table)});
    result.effective_time = std::chrono::duration_cast<Nanos>(Clock::now() - start);
    return result;
  }

  const SplitPlan plan = plan_splits(file, cfg, mode);
  result.n_m = plan.n_m();
  result.workers = std::min(options.worker_pool_size, plan.n_m());
  const RowTransformer transformer(table);

  PathCleanup cleanup;
  std::vector<SplitOutput> outputs(plan.n_m());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    outputs[i].part = store.new_staging_path(std::string(table_name) + ".part" + std::to_string(i));
    cleanup.paths.push_back(outputs[i].part);
  }

  const ParallelTiming phase1 = run_parallel(plan.n_m(), options.worker_pool_size, [&](std::size_t i) {
    process_split(file, plan.splits[i], table, transformer, tenant, outputs[i]);
  });
  result.cumulative_time += phase1.busy;

  std::uint64_t line_base = 0;
  for (const auto& out : outputs) {
    result.rows_in += out.lines;
    for (const auto& e : out.errors) {
      result.report.entries.push_back({line_base + e.line_number, e.tenant_key_value, e.reason});
    }
    line_base += out.lines;
  }
  std::sort(result.report.entries.begin(), result.report.entries.end(),
            [](const EtlError& a, const EtlError& b) { return a.line_number < b.line_number; });

  if (!result.report.empty()) {
    result.effective_time = std::chrono::duration_cast<Nanos>(Clock::now() - start);
    return result;
  }

  // Concatenate the intermediate files into one staged file; each worker
  // copies its part to a precomputed offset.
  StagedBatch staged{store.new_staging_path(table_name), 0};
  cleanup.paths.push_back(staged.path);
  std::vector<std::uint64_t> offsets(outputs.size(), 0);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    offsets[i] = total;
    total += outputs[i].bytes;
    staged.row_count += outputs[i].rows;
  }
  {
    Fd out(staged.path, O_WRONLY | O_CREAT | O_TRUNC);
    if (::ftruncate(out.get(), static_cast<off_t>(total)) != 0) {
      throw Error(ErrorCode::kIo, "cannot size staged file");
    }
    const ParallelTiming phase2 =
        run_parallel(outputs.size(), options.worker_pool_size, [&](std::size_t i) {
          if (outputs[i].bytes == 0) return;
          Fd part(outputs[i].part, O_RDONLY);
          copy_range(part.get(), out.get(), offsets[i], outputs[i].bytes);
        });
    result.cumulative_time += phase2.busy;
  }

  try {
    result.segment = store.commit_batch(table_name, staged);
  } catch (...) {
    cleanup.paths.pop_back();  // keep the staged file for diagnosis
    throw;
  }
  result.rows_out = staged.row_count;
  result.effective_time = std::chrono::duration_cast<Nanos>(Clock::now() - start);
  return result;
}

}  // namespace cwh
