#include "campuswh/segment_store.hpp"

#include <fcntl.h>
#include <stdio.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "campuswh/error.hpp"
#include "campuswh/text.hpp"

namespace fs = std::filesystem;

namespace cwh {

namespace {

constexpr std::string_view kSegmentSuffix = ".seg";

// Exclusive advisory lock held for the lifetime of the object.
class TableLock {
 public:
  explicit TableLock(const fs::path& dir) {
    const fs::path lock_path = dir / ".lock";
    fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorCode::kIo, "cannot open lock " + lock_path.string());
    while (::flock(fd_, LOCK_EX) != 0) {
      if (errno != EINTR) {
        ::close(fd_);
        throw Error(ErrorCode::kIo, "cannot lock " + lock_path.string());
      }
    }
  }
  ~TableLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  TableLock(const TableLock&) = delete;
  TableLock& operator=(const TableLock&) = delete;

 private:
  int fd_ = -1;
};

std::optional<std::uint64_t> parse_batch_id(const fs::path& p) {
  const std::string name = p.filename().string();
  if (name.size() <= kSegmentSuffix.size() || !name.ends_with(kSegmentSuffix)) return std::nullopt;
  std::uint64_t id = 0;
  const char* end = name.data() + name.size() - kSegmentSuffix.size();
  auto [ptr, ec] = std::from_chars(name.data(), end, id);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return id;
}

void check_table_name(std::string_view table) {
  if (table.empty() || table.front() == '.' || table.front() == '_' ||
      table.find('/') != std::string_view::npos) {
    throw Error(ErrorCode::kValidation, "invalid table name '" + std::string(table) + "'");
  }
}

}  // namespace

std::uint64_t TableState::row_count() const {
  std::uint64_t total = 0;
  for (const auto& s : segments) total += s.row_count;
  return total;
}

std::uint64_t count_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read segment " + path.string());
  std::uint64_t lines = 0;
  char last = '\n';
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    const auto n = in.gcount();
    if (n <= 0) break;
    lines += static_cast<std::uint64_t>(std::count(buf, buf + n, '\n'));
    last = buf[n - 1];
  }
  if (last != '\n') ++lines;
  return lines;
}

SegmentStore::SegmentStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(staging_dir(), ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + staging_dir().string() + ": " + ec.message());
}

fs::path SegmentStore::staging_dir() const { return root_ / "_staging"; }

fs::path SegmentStore::new_staging_path(std::string_view stem) const {
  static std::atomic<std::uint64_t> counter{0};
  const auto now = std::chrono::steady_clock::now().time_since_epoch().count();
  return staging_dir() / (std::string(stem) + "." + std::to_string(::getpid()) + "." +
                          std::to_string(now) + "." + std::to_string(counter++) + ".stage");
}

fs::path SegmentStore::table_dir(std::string_view table) const {
  check_table_name(table);
  return root_ / std::string(table);
}

bool SegmentStore::has_table(std::string_view table) const {
  return fs::is_directory(table_dir(table));
}

std::vector<Segment> SegmentStore::segments(std::string_view table) const {
  std::vector<Segment> out;
  const fs::path dir = table_dir(table);
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (auto id = parse_batch_id(entry.path())) {
      out.push_back(Segment{std::string(table), *id, entry.path(), 0});
    }
  }
  std::sort(out.begin(), out.end(),
            [](const Segment& a, const Segment& b) { return a.batch_id < b.batch_id; });
  return out;
}

TableState SegmentStore::state(std::string_view table) const {
  TableState st{std::string(table), segments(table)};
  for (auto& s : st.segments) s.row_count = count_lines(s.path);
  return st;
}

Segment SegmentStore::commit_batch(std::string_view table, const StagedBatch& staged) {
  const fs::path dir = table_dir(table);
  std::error_code ec;
  if (!fs::exists(staged.path, ec)) {
    throw Error(ErrorCode::kNotFound, "staged file missing: " + staged.path.string());
  }
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());

  TableLock lock(dir);
  std::uint64_t next = 1;
  for (const auto& s : segments(table)) next = std::max(next, s.batch_id + 1);

  fault("commit.before_move");
  // A conflicting name means a committer outside the lock raced us; move on
  // to the next id.
  for (int attempt = 0; attempt < 64; ++attempt, ++next) {
    const fs::path dest = dir / (std::to_string(next) + std::string(kSegmentSuffix));
    if (::renameat2(AT_FDCWD, staged.path.c_str(), AT_FDCWD, dest.c_str(), RENAME_NOREPLACE) == 0) {
      fault("commit.after_move");
      return Segment{std::string(table), next, dest, staged.row_count};
    }
    if (errno != EEXIST) {
      throw Error(ErrorCode::kIo, "commit of " + staged.path.string() + " failed: " +
                                      std::strerror(errno));
    }
  }
  throw Error(ErrorCode::kConflict, "could not allocate a batch id for " + std::string(table));
}

void SegmentStore::drop_batch(std::string_view table, std::uint64_t batch_id) {
  const fs::path dir = table_dir(table);
  const fs::path path = dir / (std::to_string(batch_id) + std::string(kSegmentSuffix));
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kNotFound,
                "table " + std::string(table) + " has no batch " + std::to_string(batch_id));
  }
  TableLock lock(dir);
  std::error_code ec;
  if (!fs::remove(path, ec) || ec) {
    throw Error(ErrorCode::kIo, "cannot remove " + path.string());
  }
}

void SegmentStore::for_each_line(
    std::string_view table,
    const std::function<void(const Segment&, std::string_view)>& fn) const {
  for (const auto& seg : segments(table)) {
    std::string data;
    try {
      data = text::read_file(seg.path.string());
    } catch (const Error&) {
      throw Error(ErrorCode::kIo, "unreadable segment " + seg.path.string());
    }
    std::size_t pos = 0;
    while (pos < data.size()) {
      std::size_t nl = data.find('\n', pos);
      if (nl == std::string::npos) nl = data.size();
      fn(seg, std::string_view(data).substr(pos, nl - pos));
      pos = nl + 1;
    }
  }
}

std::vector<Record> SegmentStore::scan(std::string_view table, Dedupe dedupe,
                                       std::span<const std::size_t> key_columns) const {
  std::vector<Record> out;
  const bool keyed = dedupe == Dedupe::kOn && !key_columns.empty();
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::string_view> fields;
  std::uint64_t current_batch = 0;
  std::uint64_t line = 0;
  std::string key;

  for_each_line(table, [&](const Segment& seg, std::string_view text_line) {
    if (seg.batch_id != current_batch) {
      current_batch = seg.batch_id;
      line = 0;
    }
    ++line;
    text::split_fields(text_line, fields);
    Record rec;
    rec.fields.assign(fields.begin(), fields.end());
    rec.batch_id = seg.batch_id;
    rec.line = line;
    if (!keyed) {
      out.push_back(std::move(rec));
      return;
    }
    key.clear();
    for (std::size_t c : key_columns) {
      if (c >= fields.size()) {
        throw Error(ErrorCode::kCorruption, "short record in " + seg.path.string() + ":" +
                                                std::to_string(line));
      }
      key.append(fields[c]);
      key.push_back('\x1f');
    }
    auto [it, inserted] = slot.try_emplace(key, out.size());
    if (inserted) {
      out.push_back(std::move(rec));
    } else {
      out[it->second] = std::move(rec);
    }
  });
  return out;
}

}  // namespace cwh
