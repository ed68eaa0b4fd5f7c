#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cwh {

/// Separator between the tenant prefix and a tenant-provided key.
inline constexpr char kKeySeparator = '_';

/// Literal used by reports for rolled-up attributes. Rejected as a code value
/// at upload time so it can never be confused with data.
inline constexpr std::string_view kRolledUpLiteral = "ALL";

enum class AttributeKind {
  kTenantKey,     // university_key, filled from the session
  kDimensionKey,  // qualified identity of a dimension row
  kNaturalKey,    // tenant-provided identity of a dimension row
  kReference,     // qualified foreign key into a dimension
  kCode,          // tenant-provided code, including raw foreign-key values
  kMeasure,
  kDescriptive,
};

enum class ValueClass { kText, kInteger, kDecimal };

enum class TableClass { kDimension, kFact };

std::string_view to_string(AttributeKind kind);
std::string_view to_string(ValueClass value_class);

struct AttributeDef {
  std::string name;
  AttributeKind kind = AttributeKind::kDescriptive;
  ValueClass value_class = ValueClass::kText;
  /// Dimension table named by a reference attribute.
  std::optional<std::string> referenced_table;
  /// For derived attributes (dimension keys, references): the uploaded
  /// attribute whose value is qualified with the tenant prefix.
  std::optional<std::string> derived_from;

  /// True when the tenant supplies this attribute in the upload CSV.
  bool uploaded() const {
    return kind != AttributeKind::kTenantKey && !derived_from.has_value();
  }
};

/// A table in its stored layout. The upload layout is the subsequence of
/// uploaded attributes, in the same order.
struct TableDef {
  std::string name;
  TableClass table_class = TableClass::kDimension;
  std::vector<AttributeDef> attributes;
  /// Stored attributes identifying a logical row; duplicates across batches
  /// are resolved on this key when scanning.
  std::vector<std::string> natural_key;

  std::optional<std::size_t> index_of(std::string_view attribute) const;
  std::size_t require_index(std::string_view attribute) const;
  const AttributeDef& attribute(std::string_view name) const;

  /// Positions (in the stored layout) of the attributes a tenant uploads.
  std::vector<std::size_t> upload_positions() const;
  /// Canonical upload CSV header, e.g. "student_id,course_code,...".
  std::string upload_header() const;
  std::size_t upload_arity() const { return upload_positions().size(); }
  std::vector<std::size_t> natural_key_positions() const;
  std::optional<std::size_t> tenant_key_position() const;
};

struct WarehouseSchema {
  std::map<std::string, TableDef, std::less<>> tables;
  int version = 1;

  const TableDef& table(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::vector<const TableDef*> dimensions() const;
  std::vector<const TableDef*> facts() const;
};

/// Tenant identity; guaranteed non-empty and free of the key separator, so
/// qualified keys decode unambiguously.
class TenantKey {
 public:
  explicit TenantKey(std::string value);

  const std::string& value() const noexcept { return value_; }
  friend bool operator==(const TenantKey&, const TenantKey&) = default;
  friend auto operator<=>(const TenantKey&, const TenantKey&) = default;

 private:
  std::string value_;
};

/// The shipped catalog: 8 dimensions and 3 facts. Immutable and shared.
const WarehouseSchema& builtin_schema();

/// Checks structural invariants (reference targets, tenant-key count, key
/// kinds, acyclicity). Throws Error(kValidation) on the first violation.
void check_schema(const WarehouseSchema& schema);

/// tenant + "_" + raw_key.
std::string qualify_key(const TenantKey& tenant, std::string_view raw_key);

enum class ShapeReason {
  kArity,
  kNotNumeric,
  kNotInteger,
  kReservedValue,
  kBadCharacter,
};

std::string_view to_string(ShapeReason reason);

struct ShapeError {
  /// Position within the upload layout; absent for arity errors.
  std::optional<std::size_t> field_index;
  std::string field_name;
  ShapeReason reason = ShapeReason::kArity;

  std::string describe() const;
};

/// Validates one upload row against the table's upload format. Empty fields
/// are accepted as absent values; emptiness of key fields is checked during
/// transform, where the tenant context is known.
std::optional<ShapeError> validate_row_shape(const TableDef& table,
                                             std::span<const std::string_view> fields);
std::optional<ShapeError> validate_row_shape(const TableDef& table,
                                             std::span<const std::string> fields);

/// Markdown reference of every table: attributes, upload header, natural key.
std::string schema_reference(const WarehouseSchema& schema);

}  // namespace cwh
