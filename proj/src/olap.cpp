#include "campuswh/olap.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <sstream>

#include "campuswh/error.hpp"
#include "campuswh/text.hpp"

namespace cwh {

namespace {

constexpr std::string_view kTenantAttr = "university_key";

struct BoundFilter {
  std::size_t attr;
  std::string value;
};

bool row_matches(const CubeRow& row, const std::set<std::uint64_t>& masks,
                 std::optional<std::size_t> tenant_mandatory,
                 std::optional<std::size_t> tenant_attr, const std::string& tenant,
                 const std::vector<BoundFilter>& filters) {
  if (!masks.contains(row.grouping_id)) return false;
  if (tenant_mandatory) {
    if (row.mandatory[*tenant_mandatory] != tenant) return false;
  } else {
    const auto& v = row.attrs[*tenant_attr];
    if (!v || *v != tenant) return false;
  }
  for (const auto& f : filters) {
    const auto& v = row.attrs[f.attr];
    if (!v || *v != f.value) return false;
  }
  return true;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

QueryResult query_cube(const TenantContext& ctx, const Cube& cube,
                       const std::set<std::uint64_t>& masks, const std::vector<Filter>& filters,
                       const QueryOptions& options) {
  const std::size_t k = cube.spec.k();
  for (auto m : masks) {
    if (m >= (std::uint64_t{1} << k)) {
      throw Error(ErrorCode::kValidation, "grouping mask " + std::to_string(m) +
                                              " out of range for k=" + std::to_string(k));
    }
  }
  const auto tenant_mandatory = cube.mandatory_index(kTenantAttr);
  const auto tenant_attr = cube.attr_index(kTenantAttr);
  if (!tenant_mandatory && !tenant_attr) {
    throw Error(ErrorCode::kValidation, "cube " + cube.spec.name + " has no tenant key");
  }

  QueryResult result;
  result.cube_version = cube.version;
  std::vector<BoundFilter> bound;
  for (const auto& [attr, value] : filters) {
    if (attr == kTenantAttr || cube.mandatory_index(attr)) {
      result.warnings.push_back("ignored filter on " + attr);
      continue;
    }
    const auto idx = cube.attr_index(attr);
    if (!idx) throw Error(ErrorCode::kValidation, "cube has no attribute " + attr);
    const bool ever_present = std::any_of(masks.begin(), masks.end(), [&](std::uint64_t m) {
      return ((m >> *idx) & 1U) != 0;
    });
    if (!ever_present) {
      result.warnings.push_back("filter on " + attr + " is rolled up in every mask; result is empty");
    }
    bound.push_back({*idx, value});
  }

  const std::string& tenant = ctx.university_key.value();
  const std::size_t n = cube.rows.size();
  const std::size_t per_task = options.rows_per_task == 0 ? std::max<std::size_t>(n, 1)
                                                          : options.rows_per_task;
  const std::size_t tasks = std::max<std::size_t>(1, (n + per_task - 1) / per_task);
  std::vector<std::vector<std::size_t>> hits(tasks);
  result.timing = run_parallel(tasks, options.workers, [&](std::size_t t) {
    const std::size_t begin = t * per_task;
    const std::size_t end = std::min(n, begin + per_task);
    for (std::size_t i = begin; i < end; ++i) {
      if (row_matches(cube.rows[i], masks, tenant_mandatory, tenant_attr, tenant, bound)) {
        hits[t].push_back(i);
      }
    }
  });
  for (const auto& h : hits) {
    for (auto i : h) result.rows.push_back(cube.rows[i]);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

std::string ReportResult::to_csv() const {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) out.push_back(',');
    out += columns[i];
  }
  out.push_back('\n');
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out.push_back(',');
      out += row[i];
    }
    out.push_back('\n');
  }
  return out;
}

std::string ReportResult::to_table() const {
  std::vector<std::size_t> width(columns.size());
  for (std::size_t i = 0; i < columns.size(); ++i) width[i] = columns[i].size();
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out << (i ? " | " : "") << cells[i] << std::string(width[i] - cells[i].size(), ' ');
    }
    out << '\n';
  };
  line(columns);
  for (std::size_t i = 0; i < columns.size(); ++i) {
    out << (i ? "-+-" : "") << std::string(width[i], '-');
  }
  out << '\n';
  for (const auto& row : rows) line(row);
  out << "(" << rows.size() << " rows)\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Catalog

namespace {

void check_report(const ReportDef& def) {
  const CubeSpec& spec = builtin_cube(def.cube);
  const std::size_t k = spec.k();
  auto attr_pos = [&](const std::string& attr) -> std::size_t {
    for (std::size_t i = 0; i < k; ++i) {
      if (spec.cube_attrs[i] == attr) return i;
    }
    throw Error(ErrorCode::kValidation, def.report_id + ": unknown attribute " + attr);
  };
  for (auto m : def.masks) {
    if (m >= (std::uint64_t{1} << k)) {
      throw Error(ErrorCode::kValidation, def.report_id + ": mask out of range");
    }
  }
  for (const auto& p : def.parameters) {
    const std::size_t pos = attr_pos(p);
    for (auto m : def.masks) {
      if (((m >> pos) & 1U) == 0) {
        throw Error(ErrorCode::kValidation, def.report_id + ": parameter " + p + " rolled up");
      }
    }
  }
  for (const auto& c : def.columns) {
    if (c.source == ColumnSource::kAttribute) attr_pos(c.ref);
  }
}

std::uint64_t mask_of(std::string_view binary) { return std::stoull(conv(binary, 2, 10)); }

}  // namespace

const std::vector<ReportDef>& report_catalog() {
  static const std::vector<ReportDef> catalog = [] {
    std::vector<ReportDef> out;
    out.push_back(ReportDef{
        "avg_marks_by_regtype",
        "Average marks per registration type for one term, with an all-regtype summary row",
        "student_performance",
        {mask_of("010"), mask_of("110")},
        {"time_code"},
        {{"time_code", ColumnSource::kAttribute, "time_code"},
         {"regtype_code", ColumnSource::kAttribute, "regtype_code"},
         {"avg_marks", ColumnSource::kMean, "avg_marks"}},
    });
    out.push_back(ReportDef{
        "avg_attendance_by_course",
        "Average attendance percentage per course for one term, with an all-course summary row",
        "student_performance",
        {mask_of("010"), mask_of("011")},
        {"time_code"},
        {{"time_code", ColumnSource::kAttribute, "time_code"},
         {"course_code", ColumnSource::kAttribute, "course_code"},
         {"avg_per_att", ColumnSource::kMean, "avg_per_att"}},
    });
    out.push_back(ReportDef{
        "student_counts_by_department",
        "Student head counts per department for one academic year, with a total row",
        "student_counts",
        {mask_of("10"), mask_of("11")},
        {"academic_year"},
        {{"academic_year", ColumnSource::kAttribute, "academic_year"},
         {"department_code", ColumnSource::kAttribute, "department_code"},
         {"total_head_count", ColumnSource::kSum, "avg_head_count"},
         {"avg_head_count", ColumnSource::kMean, "avg_head_count"}},
    });
    for (const auto& def : out) check_report(def);
    return out;
  }();
  return catalog;
}

ReportResult render_report(const TenantContext& ctx, const Cube& cube, const ReportDef& def,
                           const std::map<std::string, std::string>& params) {
  std::vector<Filter> filters;
  for (const auto& p : def.parameters) {
    auto it = params.find(p);
    if (it == params.end()) {
      throw Error(ErrorCode::kValidation, "report " + def.report_id + " needs parameter " + p);
    }
    filters.emplace_back(p, it->second);
  }
  for (const auto& [name, _] : params) {
    if (name == kTenantAttr) continue;  // scope comes from the session only
    if (std::find(def.parameters.begin(), def.parameters.end(), name) == def.parameters.end()) {
      throw Error(ErrorCode::kValidation,
                  "report " + def.report_id + " has no parameter " + name);
    }
  }

  QueryResult q = query_cube(ctx, cube, def.masks, filters);

  // Attribute columns in output order drive the sort; rolled-up sorts last.
  std::vector<std::size_t> sort_attrs;
  for (const auto& c : def.columns) {
    if (c.source == ColumnSource::kAttribute) sort_attrs.push_back(*cube.attr_index(c.ref));
  }
  std::sort(q.rows.begin(), q.rows.end(), [&](const CubeRow& a, const CubeRow& b) {
    for (auto i : sort_attrs) {
      const auto& x = a.attrs[i];
      const auto& y = b.attrs[i];
      if (x.has_value() != y.has_value()) return x.has_value();
      if (x && *x != *y) return *x < *y;
    }
    return false;
  });

  auto agg_index = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < cube.spec.aggregates.size(); ++i) {
      if (cube.spec.aggregates[i].output == name) return i;
    }
    throw Error(ErrorCode::kValidation, "cube has no aggregate " + name);
  };

  ReportResult result;
  result.report_id = def.report_id;
  result.cube_version = q.cube_version;
  result.generated_at = utc_now();
  result.warnings = std::move(q.warnings);
  for (const auto& c : def.columns) result.columns.push_back(c.name);
  for (const auto& row : q.rows) {
    std::vector<std::string> cells;
    for (const auto& c : def.columns) {
      switch (c.source) {
        case ColumnSource::kAttribute: {
          const auto& v = row.attrs[*cube.attr_index(c.ref)];
          cells.push_back(v ? *v : std::string(kRolledUpLiteral));
          break;
        }
        case ColumnSource::kMean: {
          const auto mean = row.aggregates[agg_index(c.ref)].mean();
          cells.push_back(mean ? text::format_decimal(*mean) : std::string());
          break;
        }
        case ColumnSource::kSum:
          cells.push_back(text::format_decimal(row.aggregates[agg_index(c.ref)].sum));
          break;
        case ColumnSource::kCount:
          cells.push_back(std::to_string(row.aggregates[agg_index(c.ref)].count));
          break;
        case ColumnSource::kSupport:
          cells.push_back(std::to_string(row.support_count));
          break;
      }
    }
    result.rows.push_back(std::move(cells));
  }
  return result;
}

std::shared_ptr<const Cube> OlapService::require_cube(std::string_view name) const {
  auto cube = registry_.current(name);
  if (!cube) throw Error(ErrorCode::kNotFound, "cube " + std::string(name) + " is not built");
  return cube;
}

QueryResult OlapService::query(const TenantContext& ctx, std::string_view cube,
                               const std::set<std::uint64_t>& masks,
                               const std::vector<Filter>& filters,
                               const QueryOptions& options) const {
  const auto version = require_cube(cube);  // pinned for the whole query
  return query_cube(ctx, *version, masks, filters, options);
}

ReportResult OlapService::generate_report(const TenantContext& ctx, std::string_view report_id,
                                          const std::map<std::string, std::string>& params) const {
  for (const auto& def : report_catalog()) {
    if (def.report_id == report_id) {
      const auto cube = require_cube(def.cube);
      return render_report(ctx, *cube, def, params);
    }
  }
  throw Error(ErrorCode::kNotFound, "unknown report " + std::string(report_id));
}

const std::vector<ReportDef>& OlapService::list_reports(const TenantContext&) const {
  return report_catalog();
}

}  // namespace cwh
