#include <doctest.h>

#include <set>

#include "campuswh/error.hpp"
#include "campuswh/segment_store.hpp"
#include "fixtures.hpp"

using namespace cwh;
using testing::TempDir;

namespace {

StagedBatch stage(SegmentStore& store, const std::string& body) {
  const auto p = store.new_staging_path("t");
  testing::write_text(p, body);
  return {p, count_lines(p)};
}

std::string rows(std::size_t n, const std::string& prefix = "k") {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += prefix + std::to_string(i) + ",v\n";
  return out;
}

std::uint64_t independent_line_count(const std::filesystem::path& p) {
  const std::string s = testing::read_text(p);
  return static_cast<std::uint64_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("commit of 1000 rows adds 1000 rows") {
  TempDir dir;
  SegmentStore store(dir.path());
  const auto before = store.state("Students").row_count();
  auto staged = stage(store, rows(1000));
  const Segment seg = store.commit_batch("Students", staged);
  CHECK(seg.row_count == 1000);
  CHECK(seg.batch_id == 1);
  CHECK(independent_line_count(seg.path) == 1000);
  CHECK(store.state("Students").row_count() == before + 1000);
  CHECK_FALSE(std::filesystem::exists(staged.path));
}

TEST_CASE("empty batch commits with zero rows") {
  TempDir dir;
  SegmentStore store(dir.path());
  const Segment seg = store.commit_batch("Students", stage(store, ""));
  CHECK(seg.row_count == 0);
  CHECK(store.scan("Students", Dedupe::kOff).empty());
}

TEST_CASE("batch ids increase per table") {
  TempDir dir;
  SegmentStore store(dir.path());
  CHECK(store.commit_batch("A", stage(store, rows(2))).batch_id == 1);
  CHECK(store.commit_batch("A", stage(store, rows(2))).batch_id == 2);
  CHECK(store.commit_batch("B", stage(store, rows(2))).batch_id == 1);
  CHECK(store.segments("A").size() == 2);
}

TEST_CASE("table names cannot escape the root") {
  TempDir dir;
  SegmentStore store(dir.path());
  CHECK_THROWS_AS(store.commit_batch("../x", stage(store, rows(1))), Error);
  CHECK_THROWS_AS(store.commit_batch("_staging", stage(store, rows(1))), Error);
}

TEST_CASE("failed move leaves the table byte-identical") {
  TempDir dir;
  SegmentStore store(dir.path());
  store.commit_batch("T", stage(store, rows(5)));
  const auto before = testing::snapshot(dir.path() / "T");
  auto staged = stage(store, rows(7, "n"));
  store.set_fault_hook([](std::string_view point) {
    if (point == "commit.before_move") throw Error(ErrorCode::kIo, "injected");
  });
  CHECK_THROWS_AS(store.commit_batch("T", staged), Error);
  CHECK(testing::snapshot(dir.path() / "T") == before);
  CHECK(std::filesystem::exists(staged.path));
}

TEST_CASE("dedupe keeps the record of the latest batch") {
  TempDir dir;
  SegmentStore store(dir.path());
  store.commit_batch("T", stage(store, "K,v1\nJ,x\n"));
  store.commit_batch("T", stage(store, "K,v2\n"));
  const std::size_t key[] = {0};
  auto recs = store.scan("T", Dedupe::kOn, key);
  REQUIRE(recs.size() == 2);
  std::map<std::string, std::string> by_key;
  for (const auto& r : recs) by_key[r.fields[0]] = r.fields[1];
  CHECK(by_key["K"] == "v2");
  CHECK(by_key["J"] == "x");
}

TEST_CASE("dedupe on a duplicate-free table changes nothing") {
  TempDir dir;
  SegmentStore store(dir.path());
  store.commit_batch("T", stage(store, rows(20)));
  const std::size_t key[] = {0};
  auto on = store.scan("T", Dedupe::kOn, key);
  auto off = store.scan("T", Dedupe::kOff);
  auto cmp = [](const Record& a, const Record& b) { return a.fields < b.fields; };
  std::sort(on.begin(), on.end(), cmp);
  std::sort(off.begin(), off.end(), cmp);
  CHECK(on == off);
}

TEST_CASE("dedupe off returns the union") {
  TempDir dir;
  SegmentStore store(dir.path());
  store.commit_batch("T", stage(store, rows(3)));
  store.commit_batch("T", stage(store, rows(4)));
  CHECK(store.scan("T", Dedupe::kOff).size() == 7);
}

TEST_CASE("drop_batch") {
  TempDir dir;
  SegmentStore store(dir.path());
  SUBCASE("dropping the only batch empties the table") {
    store.commit_batch("T", stage(store, rows(3)));
    store.drop_batch("T", 1);
    CHECK(store.state("T").row_count() == 0);
  }
  SUBCASE("dropping batch 2 of three") {
    for (int i = 0; i < 3; ++i) store.commit_batch("T", stage(store, rows(2, "b" + std::to_string(i + 1) + "_")));
    store.drop_batch("T", 2);
    std::set<std::uint64_t> batches;
    for (const auto& r : store.scan("T", Dedupe::kOff)) batches.insert(r.batch_id);
    CHECK(batches == std::set<std::uint64_t>{1, 3});
  }
  SUBCASE("unknown batch is an error and changes nothing") {
    store.commit_batch("T", stage(store, rows(3)));
    const auto before = testing::snapshot(dir.path() / "T");
    CHECK_THROWS_AS(store.drop_batch("T", 9), Error);
    CHECK(testing::snapshot(dir.path() / "T") == before);
  }
}

TEST_CASE("records carry batch and line") {
  TempDir dir;
  SegmentStore store(dir.path());
  store.commit_batch("T", stage(store, "a,1\nb,2\n"));
  auto recs = store.scan("T", Dedupe::kOff);
  REQUIRE(recs.size() == 2);
  CHECK(recs[1].batch_id == 1);
  CHECK(recs[1].line == 2);
  CHECK(recs[1].fields == std::vector<std::string>{"b", "2"});
}
