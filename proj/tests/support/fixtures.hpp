#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "campuswh/bench.hpp"
#include "campuswh/etl.hpp"
#include "campuswh/schema.hpp"
#include "campuswh/segment_store.hpp"

namespace testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "cwh-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& p, const std::string& body) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << body;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

/// Every file under `dir` with its bytes, for before/after comparisons.
inline std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_text(e.path());
  }
  return out;
}

/// Loads CSV text through the real pipeline and insists it commits.
inline cwh::BatchResult load_csv(cwh::SegmentStore& store, const fs::path& scratch, const std::string& table,
                                 const std::string& tenant, const std::string& csv,
                                 cwh::SplitMode mode = cwh::SplitMode::kCase2) {
  static int counter = 0;
  const fs::path file = scratch / ("upload-" + std::to_string(++counter) + ".csv");
  write_text(file, csv);
  auto r = cwh::run_etl(store, cwh::builtin_schema(), file, table, cwh::TenantKey(tenant), mode,
                        cwh::SplitConfig{}, cwh::EtlOptions{2});
  if (!r.committed()) {
    throw std::runtime_error("fixture upload into " + table + " rejected:\n" + r.report.to_csv());
  }
  return r;
}

inline void load_generated_dimensions(cwh::SegmentStore& store, const fs::path& scratch,
                                      const std::string& tenant, const cwh::bench::Universe& u,
                                      std::uint64_t seed = 1) {
  const fs::path dir = scratch / ("dims-" + tenant);
  cwh::bench::gen_dimensions(dir, u, seed);
  for (const auto* dim : cwh::builtin_schema().dimensions()) {
    load_csv(store, scratch, dim->name, tenant, read_text(dir / (dim->name + ".csv")));
  }
}

/// Hand-checked dimension rows shared by the report fixtures: two courses,
/// terms 2016-17-AUT and 2016-17-SPR, regtypes R1..R3.
inline const std::map<std::string, std::string>& sample_dimensions() {
  static const std::map<std::string, std::string> dims = {
      {"Universities", "institution_code,institution_name,country\nU1,University One,IN\n"},
      {"Departments", "department_code,department_name\nCSE,Computer Science\n"},
      {"Programs", "program_code,program_name,duration_years\nBT,B.Tech,4\n"},
      {"Courses",
       "course_code,course_name,credits,department_code\nCS101,Programming,4,CSE\nCS102,Data Structures,4,CSE\n"},
      {"Students",
       "student_id,student_name,admission_year\nS1,Asha,2015\nS2,Ravi,2015\nS3,Meera,2016\n"},
      {"Teachers", "teacher_id,teacher_name,designation\nT1,Kumar,Professor\n"},
      {"Times",
       "time_code,academic_year,term\n2016-17-AUT,2016-17,AUT\n2016-17-SPR,2016-17,SPR\n"},
      {"Regtypes",
       "regtype_code,regtype_name\nR1,Regular\nR2,Repeat\nR3,Audit\n"},
  };
  return dims;
}

/// Marks in 2016-17-SPR: R1 {80, 90}, R2 {70, 60}, R3 {50}; overall 70.
/// One AUT row that the time_code filter must exclude.
inline const std::string& sample_performance_csv() {
  static const std::string csv =
      "student_id,course_code,time_code,regtype_code,grade,marks,percent_attended\n"
      "S1,CS101,2016-17-SPR,R1,A,80,90\n"
      "S2,CS101,2016-17-SPR,R1,A,90,80\n"
      "S1,CS102,2016-17-SPR,R2,B,70,75\n"
      "S3,CS102,2016-17-SPR,R2,C,60,65\n"
      "S2,CS102,2016-17-SPR,R3,D,50,95\n"
      "S1,CS101,2016-17-AUT,R1,F,10,20\n";
  return csv;
}

inline const std::string& sample_report_csv() {
  static const std::string csv =
      "time_code,regtype_code,avg_marks\n"
      "2016-17-SPR,R1,85\n"
      "2016-17-SPR,R2,65\n"
      "2016-17-SPR,R3,50\n"
      "2016-17-SPR,ALL,70\n";
  return csv;
}

inline void load_sample_fixture(cwh::SegmentStore& store, const fs::path& scratch,
                               const std::string& tenant = "University1") {
  for (const auto& [table, csv] : sample_dimensions()) load_csv(store, scratch, table, tenant, csv);
  load_csv(store, scratch, "StudentPerformance", tenant, sample_performance_csv());
}

}  // namespace testing
