#include "campuswh/schema.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <sstream>

#include "campuswh/error.hpp"
#include "campuswh/text.hpp"

namespace cwh {

std::string_view to_string(AttributeKind kind) {
  switch (kind) {
    case AttributeKind::kTenantKey: return "tenant-key";
    case AttributeKind::kDimensionKey: return "dimension-key";
    case AttributeKind::kNaturalKey: return "natural-key";
    case AttributeKind::kReference: return "reference";
    case AttributeKind::kCode: return "code";
    case AttributeKind::kMeasure: return "measure";
    case AttributeKind::kDescriptive: return "descriptive";
  }
  return "?";
}

std::string_view to_string(ValueClass value_class) {
  switch (value_class) {
    case ValueClass::kText: return "text";
    case ValueClass::kInteger: return "integer";
    case ValueClass::kDecimal: return "decimal";
  }
  return "?";
}

std::string_view to_string(ShapeReason reason) {
  switch (reason) {
    case ShapeReason::kArity: return "arity";
    case ShapeReason::kNotNumeric: return "not-numeric";
    case ShapeReason::kNotInteger: return "not-integer";
    case ShapeReason::kReservedValue: return "reserved-value";
    case ShapeReason::kBadCharacter: return "bad-character";
  }
  return "?";
}

std::string ShapeError::describe() const {
  std::string out(to_string(reason));
  if (!field_name.empty()) out += " (" + field_name + ")";
  return out;
}

// ---------------------------------------------------------------------------
// TableDef

std::optional<std::size_t> TableDef::index_of(std::string_view attribute) const {
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (attributes[i].name == attribute) return i;
  }
  return std::nullopt;
}

std::size_t TableDef::require_index(std::string_view attribute) const {
  if (auto idx = index_of(attribute)) return *idx;
  throw Error(ErrorCode::kNotFound,
              "table " + name + " has no attribute " + std::string(attribute));
}

const AttributeDef& TableDef::attribute(std::string_view attr_name) const {
  return attributes[require_index(attr_name)];
}

std::vector<std::size_t> TableDef::upload_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (attributes[i].uploaded()) out.push_back(i);
  }
  return out;
}

std::string TableDef::upload_header() const {
  std::string out;
  for (std::size_t pos : upload_positions()) {
    if (!out.empty()) out.push_back(',');
    out += attributes[pos].name;
  }
  return out;
}

std::vector<std::size_t> TableDef::natural_key_positions() const {
  std::vector<std::size_t> out;
  out.reserve(natural_key.size());
  for (const auto& attr : natural_key) out.push_back(require_index(attr));
  return out;
}

std::optional<std::size_t> TableDef::tenant_key_position() const {
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (attributes[i].kind == AttributeKind::kTenantKey) return i;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// WarehouseSchema

const TableDef& WarehouseSchema::table(std::string_view name) const {
  auto it = tables.find(name);
  if (it == tables.end()) {
    throw Error(ErrorCode::kNotFound, "unknown table " + std::string(name));
  }
  return it->second;
}

bool WarehouseSchema::contains(std::string_view name) const {
  return tables.find(name) != tables.end();
}

std::vector<const TableDef*> WarehouseSchema::dimensions() const {
  std::vector<const TableDef*> out;
  for (const auto& [_, t] : tables) {
    if (t.table_class == TableClass::kDimension) out.push_back(&t);
  }
  return out;
}

std::vector<const TableDef*> WarehouseSchema::facts() const {
  std::vector<const TableDef*> out;
  for (const auto& [_, t] : tables) {
    if (t.table_class == TableClass::kFact) out.push_back(&t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// TenantKey / qualification

TenantKey::TenantKey(std::string value) : value_(std::move(value)) {
  if (value_.empty()) throw Error(ErrorCode::kValidation, "tenant key is empty");
  for (char c : value_) {
    if (c == kKeySeparator || c == ',' || c == '\n' || c == '\r') {
      throw Error(ErrorCode::kValidation,
                  "tenant key '" + value_ + "' contains a reserved character");
    }
  }
}

std::string qualify_key(const TenantKey& tenant, std::string_view raw_key) {
  if (raw_key.empty()) throw Error(ErrorCode::kValidation, "raw key is empty");
  std::string out;
  out.reserve(tenant.value().size() + 1 + raw_key.size());
  out += tenant.value();
  out.push_back(kKeySeparator);
  out += raw_key;
  return out;
}

// ---------------------------------------------------------------------------
// Catalog

namespace {

AttributeDef tenant_key() {
  return {"university_key", AttributeKind::kTenantKey, ValueClass::kText, {}, {}};
}

AttributeDef dim_key(std::string name, std::string from) {
  return {std::move(name), AttributeKind::kDimensionKey, ValueClass::kText, {}, std::move(from)};
}

AttributeDef natural(std::string name) {
  return {std::move(name), AttributeKind::kNaturalKey, ValueClass::kText, {}, {}};
}

AttributeDef reference(std::string name, std::string table, std::string from) {
  return {std::move(name), AttributeKind::kReference, ValueClass::kText, std::move(table),
          std::move(from)};
}

AttributeDef code(std::string name) {
  return {std::move(name), AttributeKind::kCode, ValueClass::kText, {}, {}};
}

AttributeDef measure(std::string name, ValueClass vc = ValueClass::kDecimal) {
  return {std::move(name), AttributeKind::kMeasure, vc, {}, {}};
}

AttributeDef descriptive(std::string name, ValueClass vc = ValueClass::kText) {
  return {std::move(name), AttributeKind::kDescriptive, vc, {}, {}};
}

// Dimension rows are identified by their qualified key, which is unique across
// tenants.
TableDef dimension(std::string name, std::string key, std::string natural_key,
                   std::vector<AttributeDef> rest) {
  TableDef t;
  t.name = std::move(name);
  t.table_class = TableClass::kDimension;
  t.attributes = {tenant_key(), dim_key(key, natural_key), natural(natural_key)};
  for (auto& a : rest) t.attributes.push_back(std::move(a));
  t.natural_key = {std::move(key)};
  return t;
}

// A fact reference contributes the qualified key and the retained raw value.
void add_reference(TableDef& t, const std::string& key, const std::string& table,
                   const std::string& raw) {
  t.attributes.push_back(reference(key, table, raw));
  t.attributes.push_back(code(raw));
  t.natural_key.push_back(key);
}

WarehouseSchema make_builtin() {
  WarehouseSchema s;
  auto add = [&s](TableDef t) { s.tables.emplace(t.name, std::move(t)); };

  add(dimension("Universities", "institution_key", "institution_code",
                {descriptive("institution_name"), descriptive("country")}));
  add(dimension("Departments", "department_key", "department_code",
                {descriptive("department_name")}));
  add(dimension("Programs", "program_key", "program_code",
                {descriptive("program_name"), descriptive("duration_years", ValueClass::kInteger)}));
  {
    TableDef courses = dimension("Courses", "course_key", "course_code",
                                 {descriptive("course_name"),
                                  descriptive("credits", ValueClass::kInteger)});
    courses.attributes.push_back(reference("department_key", "Departments", "department_code"));
    courses.attributes.push_back(code("department_code"));
    add(std::move(courses));
  }
  add(dimension("Students", "student_key", "student_id",
                {descriptive("student_name"), descriptive("admission_year", ValueClass::kInteger)}));
  add(dimension("Teachers", "teacher_key", "teacher_id",
                {descriptive("teacher_name"), descriptive("designation")}));
  add(dimension("Times", "time_key", "time_code",
                {code("academic_year"), code("term")}));
  add(dimension("Regtypes", "regtype_key", "regtype_code", {descriptive("regtype_name")}));

  {
    TableDef f;
    f.name = "StudentPerformance";
    f.table_class = TableClass::kFact;
    f.attributes = {tenant_key()};
    f.natural_key = {"university_key"};
    add_reference(f, "student_key", "Students", "student_id");
    add_reference(f, "course_key", "Courses", "course_code");
    add_reference(f, "time_key", "Times", "time_code");
    add_reference(f, "regtype_key", "Regtypes", "regtype_code");
    f.attributes.push_back(code("grade"));
    f.attributes.push_back(measure("marks"));
    f.attributes.push_back(measure("percent_attended"));
    add(std::move(f));
  }
  {
    TableDef f;
    f.name = "TeachingQuality";
    f.table_class = TableClass::kFact;
    f.attributes = {tenant_key()};
    f.natural_key = {"university_key"};
    add_reference(f, "teacher_key", "Teachers", "teacher_id");
    add_reference(f, "course_key", "Courses", "course_code");
    add_reference(f, "time_key", "Times", "time_code");
    f.attributes.push_back(measure("rating"));
    add(std::move(f));
  }
  {
    TableDef f;
    f.name = "StudentCounts";
    f.table_class = TableClass::kFact;
    f.attributes = {tenant_key()};
    f.natural_key = {"university_key"};
    add_reference(f, "department_key", "Departments", "department_code");
    add_reference(f, "program_key", "Programs", "program_code");
    add_reference(f, "time_key", "Times", "time_code");
    f.attributes.push_back(measure("head_count", ValueClass::kInteger));
    add(std::move(f));
  }
  check_schema(s);
  return s;
}

}  // namespace

const WarehouseSchema& builtin_schema() {
  static const WarehouseSchema schema = make_builtin();
  return schema;
}

void check_schema(const WarehouseSchema& schema) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kValidation, msg); };

  for (const auto& [name, t] : schema.tables) {
    std::set<std::string> seen;
    std::size_t tenant_keys = 0, dim_keys = 0, natural_keys = 0, refs = 0, measures = 0;
    for (const auto& a : t.attributes) {
      if (!seen.insert(a.name).second) fail(name + ": duplicate attribute " + a.name);
      switch (a.kind) {
        case AttributeKind::kTenantKey: ++tenant_keys; break;
        case AttributeKind::kDimensionKey: ++dim_keys; break;
        case AttributeKind::kNaturalKey: ++natural_keys; break;
        case AttributeKind::kReference: ++refs; break;
        case AttributeKind::kMeasure: ++measures; break;
        default: break;
      }
      if (a.kind == AttributeKind::kReference) {
        if (!a.referenced_table) fail(name + "." + a.name + ": reference without target");
        auto target = schema.tables.find(*a.referenced_table);
        if (target == schema.tables.end() ||
            target->second.table_class != TableClass::kDimension) {
          fail(name + "." + a.name + ": reference target is not a dimension");
        }
      }
      if (a.derived_from) {
        auto src = t.index_of(*a.derived_from);
        if (!src || !t.attributes[*src].uploaded()) {
          fail(name + "." + a.name + ": derived from a non-uploaded attribute");
        }
      }
    }
    for (const auto& k : t.natural_key) {
      if (!t.index_of(k)) fail(name + ": natural key names unknown attribute " + k);
    }
    if (t.table_class == TableClass::kFact) {
      if (tenant_keys != 1) fail(name + ": fact must have exactly one tenant key");
      if (refs < 1 || measures < 1) fail(name + ": fact needs references and measures");
    } else {
      if (dim_keys != 1 || natural_keys != 1) {
        fail(name + ": dimension needs exactly one dimension key and one natural key");
      }
    }
  }

  // Reference graph must be acyclic.
  std::map<std::string, int> state;  // 0 unvisited, 1 on stack, 2 done
  std::function<void(const std::string&)> visit = [&](const std::string& name) {
    int& st = state[name];
    if (st == 2) return;
    if (st == 1) fail("reference cycle through " + name);
    st = 1;
    for (const auto& a : schema.table(name).attributes) {
      if (a.referenced_table) visit(*a.referenced_table);
    }
    state[name] = 2;
  };
  for (const auto& [name, _] : schema.tables) visit(name);
}

// ---------------------------------------------------------------------------
// Row shape

namespace {

template <typename Str>
std::optional<ShapeError> validate_impl(const TableDef& table, std::span<const Str> fields) {
  const auto positions = table.upload_positions();
  if (fields.size() != positions.size()) return ShapeError{std::nullopt, {}, ShapeReason::kArity};

  for (std::size_t i = 0; i < positions.size(); ++i) {
    const AttributeDef& attr = table.attributes[positions[i]];
    const std::string_view value = fields[i];
    auto err = [&](ShapeReason r) { return ShapeError{i, attr.name, r}; };

    if (value.find_first_of("\"\r\n") != std::string_view::npos) return err(ShapeReason::kBadCharacter);
    if (value.empty()) continue;
    switch (attr.value_class) {
      case ValueClass::kDecimal:
        if (!text::parse_decimal(value)) return err(ShapeReason::kNotNumeric);
        break;
      case ValueClass::kInteger:
        if (!text::parse_integer(value)) return err(ShapeReason::kNotInteger);
        break;
      case ValueClass::kText:
        break;
    }
    if ((attr.kind == AttributeKind::kCode || attr.kind == AttributeKind::kNaturalKey) &&
        value == kRolledUpLiteral) {
      return err(ShapeReason::kReservedValue);
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<ShapeError> validate_row_shape(const TableDef& table,
                                             std::span<const std::string_view> fields) {
  return validate_impl(table, fields);
}

std::optional<ShapeError> validate_row_shape(const TableDef& table,
                                             std::span<const std::string> fields) {
  return validate_impl(table, fields);
}

// ---------------------------------------------------------------------------

std::string schema_reference(const WarehouseSchema& schema) {
  std::ostringstream out;
  out << "# Warehouse schema (version " << schema.version << ")\n";
  for (const auto& [name, t] : schema.tables) {
    out << "\n## " << name << " ("
        << (t.table_class == TableClass::kFact ? "fact" : "dimension") << ")\n\n";
    out << "Upload CSV header:\n\n    " << t.upload_header() << "\n\n";
    out << "Natural key: ";
    for (std::size_t i = 0; i < t.natural_key.size(); ++i) {
      out << (i ? ", " : "") << t.natural_key[i];
    }
    out << "\n\n| attribute | kind | value class | references | derived from |\n";
    out << "|---|---|---|---|---|\n";
    for (const auto& a : t.attributes) {
      out << "| " << a.name << " | " << to_string(a.kind) << " | " << to_string(a.value_class)
          << " | " << a.referenced_table.value_or("") << " | " << a.derived_from.value_or("")
          << " |\n";
    }
  }
  return out.str();
}

}  // namespace cwh
