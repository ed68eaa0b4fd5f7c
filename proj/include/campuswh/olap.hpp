#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "campuswh/cube.hpp"
#include "campuswh/schema.hpp"

namespace cwh {

/// Authenticated scope of a request. All data access is limited to
/// `university_key`.
struct TenantContext {
  TenantKey university_key;
  std::string session_id;
};

using Filter = std::pair<std::string, std::string>;

struct QueryOptions {
  std::size_t workers = 1;
  /// Cube rows per scan task; 0 scans the cube as one task.
  std::size_t rows_per_task = 0;
};

struct QueryResult {
  std::vector<CubeRow> rows;  // in cube order
  std::vector<std::string> warnings;
  std::uint64_t cube_version = 0;
  ParallelTiming timing;
};

/// Cube rows with grouping_id in `masks`, belonging to the session tenant,
/// and matching every filter. A filter on an attribute that is rolled up in
/// a row excludes the row. Filters on the tenant key are dropped: the scope
/// always comes from `ctx`.
QueryResult query_cube(const TenantContext& ctx, const Cube& cube,
                       const std::set<std::uint64_t>& masks, const std::vector<Filter>& filters,
                       const QueryOptions& options = {});

enum class ColumnSource { kAttribute, kMean, kSum, kCount, kSupport };

struct OutputColumn {
  std::string name;
  ColumnSource source = ColumnSource::kAttribute;
  std::string ref;  // attribute name, or aggregate output name
};

struct ReportDef {
  std::string report_id;
  std::string description;
  std::string cube;
  std::set<std::uint64_t> masks;
  std::vector<std::string> parameters;  // attributes bound from request params
  std::vector<OutputColumn> columns;
};

struct ReportResult {
  std::string report_id;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::string generated_at;  // informational; not part of the serialized forms
  std::uint64_t cube_version = 0;
  std::vector<std::string> warnings;

  std::string to_csv() const;
  std::string to_table() const;
};

/// The static report catalog. Validated against the builtin cubes.
const std::vector<ReportDef>& report_catalog();

class OlapService {
 public:
  explicit OlapService(const CubeRegistry& registry) : registry_(registry) {}

  QueryResult query(const TenantContext& ctx, std::string_view cube,
                    const std::set<std::uint64_t>& masks, const std::vector<Filter>& filters,
                    const QueryOptions& options = {}) const;

  ReportResult generate_report(const TenantContext& ctx, std::string_view report_id,
                               const std::map<std::string, std::string>& params) const;

  const std::vector<ReportDef>& list_reports(const TenantContext& ctx) const;

 private:
  std::shared_ptr<const Cube> require_cube(std::string_view name) const;

  const CubeRegistry& registry_;
};

/// Renders a report directly from a cube (no registry).
ReportResult render_report(const TenantContext& ctx, const Cube& cube, const ReportDef& def,
                           const std::map<std::string, std::string>& params);

}  // namespace cwh
