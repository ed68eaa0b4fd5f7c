#include <doctest.h>

#include "campuswh/error.hpp"
#include "campuswh/olap.hpp"
#include "fixtures.hpp"

using namespace cwh;
using testing::TempDir;

namespace {

struct SampleWarehouse {
  TempDir dir;
  SegmentStore store{dir / "wh"};
  CubeRegistry registry;
  OlapService olap{registry};

  explicit SampleWarehouse(bool second_tenant = false) {
    testing::load_sample_fixture(store, dir.path(), "University1");
    if (second_tenant) {
      for (const auto& [table, csv] : testing::sample_dimensions()) {
        testing::load_csv(store, dir.path(), table, "University2", csv);
      }
      testing::load_csv(store, dir.path(), "StudentPerformance", "University2",
                        "student_id,course_code,time_code,regtype_code,grade,marks,percent_attended\n"
                        "S1,CS101,2016-17-SPR,R1,A,1,1\n"
                        "S2,CS102,2016-17-SPR,R2,A,3,3\n");
    }
    for (const auto& spec : builtin_cubes()) registry.publish(build_cube(store, builtin_schema(), spec, {1}));
  }
};

TenantContext ctx(const std::string& tenant) { return {TenantKey(tenant), "test"}; }

}  // namespace

TEST_CASE("regtype query: per-regtype rows plus one summary row") {
  SampleWarehouse w;
  const auto cube = w.registry.current("student_performance");
  const auto r = query_cube(ctx("University1"), *cube, {2, 6}, {{"time_code", "2016-17-SPR"}});
  REQUIRE(r.rows.size() == 4);
  std::size_t summary = 0;
  for (const auto& row : r.rows) {
    CHECK(row.mandatory[0] == "University1");
    if (row.grouping_id == 2) ++summary;
  }
  CHECK(summary == 1);
}

TEST_CASE("finest grain without filters returns only the tenant's rows") {
  SampleWarehouse w(true);
  const auto cube = w.registry.current("student_performance");
  const auto r = query_cube(ctx("University1"), *cube, {7}, {});
  CHECK(r.rows.size() == 4);
  for (const auto& row : r.rows) CHECK(row.mandatory[0] == "University1");
}

TEST_CASE("tenant filter is dropped with a warning") {
  SampleWarehouse w(true);
  const auto cube = w.registry.current("student_performance");
  const auto r = query_cube(ctx("University1"), *cube, {7}, {{"university_key", "University2"}});
  CHECK(r.rows.size() == 4);
  CHECK_FALSE(r.warnings.empty());
  for (const auto& row : r.rows) CHECK(row.mandatory[0] == "University1");
}

TEST_CASE("masks outside the cube are rejected") {
  SampleWarehouse w;
  const auto cube = w.registry.current("student_performance");
  CHECK_THROWS_AS(query_cube(ctx("University1"), *cube, {8}, {}), Error);
}

TEST_CASE("parallel scan matches single scan") {
  SampleWarehouse w(true);
  const auto cube = w.registry.current("student_performance");
  const auto a = query_cube(ctx("University1"), *cube, {0, 1, 2, 3, 4, 5, 6, 7}, {});
  const auto b = query_cube(ctx("University1"), *cube, {0, 1, 2, 3, 4, 5, 6, 7}, {}, QueryOptions{3, 2});
  CHECK(a.rows == b.rows);
}

TEST_CASE("report catalog") {
  const auto& cat = report_catalog();
  CHECK_FALSE(cat.empty());
  CHECK(&report_catalog() == &cat);
  CHECK(std::any_of(cat.begin(), cat.end(), [](const ReportDef& d) { return d.report_id == "avg_marks_by_regtype"; }));
  const auto& regtype_report = *std::find_if(cat.begin(), cat.end(),
                                    [](const ReportDef& d) { return d.report_id == "avg_marks_by_regtype"; });
  CHECK(regtype_report.masks == std::set<std::uint64_t>{2, 6});
}

TEST_CASE("avg_marks_by_regtype on the sample fixture") {
  SampleWarehouse w;
  const auto r = w.olap.generate_report(ctx("University1"), "avg_marks_by_regtype", {{"time_code", "2016-17-SPR"}});
  CHECK(r.columns == std::vector<std::string>{"time_code", "regtype_code", "avg_marks"});
  CHECK(r.to_csv() == testing::sample_report_csv());
  CHECK(r.to_table().find("(4 rows)") != std::string::npos);
}

TEST_CASE("report for a tenant without data is empty") {
  SampleWarehouse w;
  const auto r = w.olap.generate_report(ctx("University9"), "avg_marks_by_regtype", {{"time_code", "2016-17-SPR"}});
  CHECK(r.rows.empty());
  CHECK(r.to_csv() == "time_code,regtype_code,avg_marks\n");
}

TEST_CASE("forged university_key parameter is ignored") {
  SampleWarehouse w(true);
  const auto plain =
      w.olap.generate_report(ctx("University1"), "avg_marks_by_regtype", {{"time_code", "2016-17-SPR"}});
  const auto forged = w.olap.generate_report(
      ctx("University1"), "avg_marks_by_regtype", {{"time_code", "2016-17-SPR"}, {"university_key", "University2"}});
  CHECK(forged.to_csv() == plain.to_csv());
}

TEST_CASE("report parameter errors") {
  SampleWarehouse w;
  CHECK_THROWS_AS(w.olap.generate_report(ctx("University1"), "avg_marks_by_regtype", {}), Error);
  CHECK_THROWS_AS(w.olap.generate_report(ctx("University1"), "avg_marks_by_regtype",
                                         {{"time_code", "2016-17-SPR"}, {"colour", "red"}}),
                  Error);
  CHECK_THROWS_AS(w.olap.generate_report(ctx("University1"), "no_such_report", {}), Error);
}

TEST_CASE("attendance and head-count reports") {
  SampleWarehouse w;
  const auto att =
      w.olap.generate_report(ctx("University1"), "avg_attendance_by_course", {{"time_code", "2016-17-SPR"}});
  // CS101: 90, 80; CS102: 75, 65, 95; all: 81
  CHECK(att.to_csv() ==
        "time_code,course_code,avg_per_att\n"
        "2016-17-SPR,CS101,85\n"
        "2016-17-SPR,CS102,78.33333333333333\n"
        "2016-17-SPR,ALL,81\n");
  const auto counts =
      w.olap.generate_report(ctx("University1"), "student_counts_by_department", {{"academic_year", "2016-17"}});
  CHECK(counts.rows.empty());
}
