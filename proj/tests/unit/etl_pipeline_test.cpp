#include <doctest.h>

#include "campuswh/error.hpp"
#include "campuswh/etl.hpp"
#include "fixtures.hpp"

using namespace cwh;
using testing::TempDir;

namespace {

const char* kHeader = "student_id,course_code,time_code,regtype_code,grade,marks,percent_attended\n";

std::string perf_line(std::size_t i) {
  return "S" + std::to_string(i) + ",CS101,2016-17-SPR,R1,A," + std::to_string(40 + i % 60) + ",75\n";
}

std::string perf_file(std::size_t data_lines) {
  std::string out = kHeader;
  for (std::size_t i = 1; i <= data_lines; ++i) out += perf_line(i);
  return out;
}

}  // namespace

TEST_CASE("split_size") {
  CHECK(split_size({4 * kMiB, 4 * kMiB, 77}) == 4 * kMiB);
  CHECK(split_size({1, 256 * kMiB, 64 * kMiB}) == 64 * kMiB);
  CHECK(split_size({128 * kMiB, 256 * kMiB, 64 * kMiB}) == 128 * kMiB);
  CHECK(split_size({1, 2, 64 * kMiB}) == 2);
}

TEST_CASE("mapper_count") {
  CHECK(mapper_count(2'097'152, 1'048'576) == 2);
  CHECK(mapper_count(2'095'843, 1'048'576) == 2);
  CHECK(mapper_count(100, 1'048'576) == 1);
  CHECK(mapper_count(2'097'153, 1'048'576) == 3);
  CHECK_THROWS_AS(mapper_count(10, 0), Error);
}

TEST_CASE("plan_splits") {
  TempDir dir;
  SUBCASE("2 MiB in case2 with 1 MiB splits") {
    // 64-byte records so the nominal boundary is a line start.
    std::string line(63, 'x');
    line += '\n';
    std::string body;
    while (body.size() < 2 * kMiB) body += line;
    testing::write_text(dir / "f", body);
    const auto plan = plan_splits(dir / "f", SplitConfig{}, SplitMode::kCase2);
    CHECK(plan.n_m() == 2);
    CHECK(plan.splits[1].offset == kMiB);
  }
  SUBCASE("case1 always plans two splits") {
    testing::write_text(dir / "f", perf_file(500));
    const auto plan = plan_splits(dir / "f", SplitConfig{1024, 1024, 1024}, SplitMode::kCase1);
    CHECK(plan.n_m() == 2);
  }
  SUBCASE("mid-record boundary moves to the next line start") {
    const std::string body = "aaaa\nbbbbbbbbbb\ncc\n";
    testing::write_text(dir / "f", body);
    const auto plan = plan_splits(dir / "f", SplitConfig{7, 7, 7}, SplitMode::kCase2);
    std::string joined;
    for (const auto& s : plan.splits) {
      CHECK((s.offset == 0 || body[s.offset - 1] == '\n'));
      joined += body.substr(s.offset, s.length);
    }
    CHECK(joined == body);
    CHECK(plan.splits[1].offset == 16);
  }
  SUBCASE("empty file") {
    testing::write_text(dir / "f", "");
    CHECK_THROWS_AS(plan_splits(dir / "f", SplitConfig{}, SplitMode::kCase2), Error);
  }
}

TEST_CASE("extract") {
  TempDir dir;
  const auto& table = builtin_schema().table("StudentPerformance");
  const TenantKey tenant("University1");
  SUBCASE("three valid lines") {
    testing::write_text(dir / "f", perf_file(3));
    const auto size = std::filesystem::file_size(dir / "f");
    const auto r = extract(dir / "f", {0, size}, table, tenant);
    CHECK(r.records.size() == 3);
    CHECK(r.errors.empty());
  }
  SUBCASE("line 7 with the wrong field count") {
    std::string body = kHeader;
    for (int i = 2; i <= 10; ++i) body += i == 7 ? "S7,CS101,R1\n" : perf_line(i);
    testing::write_text(dir / "f", body);
    const auto r = extract(dir / "f", {0, body.size()}, table, tenant);
    REQUIRE(r.errors.size() == 1);
    CHECK(r.errors[0].line_number == 7);
    CHECK(r.errors[0].reason.find("arity") != std::string::npos);
  }
  SUBCASE("100 lines with lines 5 and 42 malformed") {
    std::string body = kHeader;
    for (int i = 2; i <= 100; ++i) {
      if (i == 5) body += "S5,CS101,2016-17-SPR,R1,A,eighty,75\n";
      else if (i == 42) body += "S42,CS101\n";
      else body += perf_line(i);
    }
    testing::write_text(dir / "f", body);
    const auto r = extract(dir / "f", {0, body.size()}, table, tenant);
    CHECK(r.records.size() == 97);
    REQUIRE(r.errors.size() == 2);
    CHECK(r.errors[0].line_number == 5);
    CHECK(r.errors[1].line_number == 42);
  }
  SUBCASE("wrong header") {
    const std::string body = "a,b,c\n" + perf_line(1);
    testing::write_text(dir / "f", body);
    const auto r = extract(dir / "f", {0, body.size()}, table, tenant);
    REQUIRE(r.errors.size() == 1);
    CHECK(r.errors[0].line_number == 1);
  }
}

TEST_CASE("transform qualifies keys and keeps raw values") {
  const TenantKey tenant("University1");
  SUBCASE("fact row") {
    const auto& table = builtin_schema().table("StudentPerformance");
    Record in;
    in.fields = {"student1", "CS101", "2016-17-SPR", "R1", "A", "80", "90"};
    in.line = 2;
    const auto r = transform({in}, table, tenant);
    REQUIRE(r.errors.empty());
    REQUIRE(r.records.size() == 1);
    const auto& f = r.records[0].fields;
    CHECK(f[table.require_index("university_key")] == "University1");
    CHECK(f[table.require_index("student_key")] == "University1_student1");
    CHECK(f[table.require_index("student_id")] == "student1");
    CHECK(f[table.require_index("course_key")] == "University1_CS101");
    CHECK(f[table.require_index("course_code")] == "CS101");
    CHECK(f[table.require_index("time_key")] == "University1_2016-17-SPR");
    CHECK(f[table.require_index("regtype_key")] == "University1_R1");
    CHECK(f[table.require_index("marks")] == "80");
  }
  SUBCASE("dimension row without references") {
    const auto& table = builtin_schema().table("Regtypes");
    Record in;
    in.fields = {"R1", "Regular"};
    const auto r = transform({in}, table, tenant);
    REQUIRE(r.records.size() == 1);
    const auto& f = r.records[0].fields;
    CHECK(f[table.require_index("regtype_code")] == "R1");
    CHECK(f[table.require_index("regtype_name")] == "Regular");
    CHECK(f[table.require_index("university_key")] == "University1");
  }
  SUBCASE("empty key is an error") {
    const auto& table = builtin_schema().table("Regtypes");
    Record in;
    in.fields = {"", "Regular"};
    in.line = 3;
    const auto r = transform({in}, table, tenant);
    REQUIRE(r.errors.size() == 1);
    CHECK(r.errors[0].line_number == 3);
  }
}

TEST_CASE("run_etl") {
  TempDir dir;
  SegmentStore store(dir / "wh");
  const TenantKey tenant("University1");
  const SplitConfig small{4 * kKiB, 4 * kKiB, 4 * kKiB};

  SUBCASE("clean 1000-row file commits every row") {
    testing::write_text(dir / "f.csv", perf_file(1000));
    const auto r = run_etl(store, builtin_schema(), dir / "f.csv", "StudentPerformance", tenant,
                           SplitMode::kCase2, small, EtlOptions{4});
    REQUIRE(r.committed());
    CHECK(r.rows_out == 1000);
    CHECK(r.rows_in == 1001);
    CHECK(r.n_m > 2);
    CHECK(store.state("StudentPerformance").row_count() == 1000);
  }
  SUBCASE("one bad line rejects the whole file") {
    std::string body = perf_file(1000);
    const std::string bad = perf_line(600);
    body.replace(body.find(bad), bad.size(), "S600,CS101,2016-17-SPR,R1,A,x,75\n");
    testing::write_text(dir / "f.csv", body);
    const auto before = testing::snapshot(dir / "wh");
    const auto r = run_etl(store, builtin_schema(), dir / "f.csv", "StudentPerformance", tenant,
                           SplitMode::kCase2, small, EtlOptions{4});
    CHECK_FALSE(r.committed());
    REQUIRE(r.report.entries.size() == 1);
    CHECK(r.report.entries[0].line_number == 601);
    CHECK(testing::snapshot(dir / "wh") == before);
  }
  SUBCASE("case1 and case2 commit identical contents") {
    testing::write_text(dir / "f.csv", perf_file(700));
    const auto a = run_etl(store, builtin_schema(), dir / "f.csv", "StudentPerformance", tenant,
                           SplitMode::kCase1, small, EtlOptions{2});
    const auto b = run_etl(store, builtin_schema(), dir / "f.csv", "StudentPerformance", tenant,
                           SplitMode::kCase2, small, EtlOptions{2});
    REQUIRE(a.committed());
    REQUIRE(b.committed());
    CHECK(a.n_m == 2);
    CHECK(testing::read_text(a.segment->path) == testing::read_text(b.segment->path));
  }
  SUBCASE("empty file is rejected") {
    testing::write_text(dir / "f.csv", "");
    const auto r = run_etl(store, builtin_schema(), dir / "f.csv", "StudentPerformance", tenant,
                           SplitMode::kCase2, small);
    CHECK_FALSE(r.committed());
    REQUIRE(r.report.entries.size() == 1);
    CHECK(r.report.entries[0].line_number == 1);
  }
  SUBCASE("no part files are left in staging") {
    testing::write_text(dir / "f.csv", perf_file(300));
    run_etl(store, builtin_schema(), dir / "f.csv", "StudentPerformance", tenant, SplitMode::kCase2, small);
    CHECK(std::filesystem::is_empty(store.staging_dir()));
  }
}

TEST_CASE("error report CSV") {
  EtlErrorReport report;
  report.entries.push_back({5, "S5", "not numeric, marks"});
  report.entries.push_back({42, std::nullopt, "arity"});
  CHECK(report.to_csv() ==
        "line_number,tenant_key_value,reason\n"
        "5,S5,not numeric; marks\n"
        "42,,arity\n");
}
