#include "campuswh/warehouse.hpp"

#include <algorithm>
#include <sstream>

#include "campuswh/error.hpp"
#include "campuswh/text.hpp"

namespace fs = std::filesystem;

namespace cwh {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(std::string_view key, std::string_view value) {
  auto v = text::parse_integer(value);
  if (!v || *v < 0) {
    throw Error(ErrorCode::kValidation,
                "config key " + std::string(key) + " needs a non-negative integer");
  }
  return static_cast<std::uint64_t>(*v);
}

}  // namespace

fs::path GatewayConfig::registry_file() const {
  return registry_path.empty() ? warehouse_root / "registry.csv" : registry_path;
}

void GatewayConfig::apply(std::string_view text) {
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::kValidation, "config line " + std::to_string(line_no) + ": missing '='");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));

    if (key == "warehouse_root") {
      warehouse_root = std::string(value);
    } else if (key == "s_min") {
      split.s_min = to_u64(key, value);
    } else if (key == "s_max") {
      split.s_max = to_u64(key, value);
    } else if (key == "s_b") {
      split.s_b = to_u64(key, value);
    } else if (key == "worker_pool_size") {
      worker_pool_size = std::max<std::uint64_t>(1, to_u64(key, value));
    } else if (key == "cube_refresh_interval_ms") {
      cube_refresh_interval = std::chrono::milliseconds(to_u64(key, value));
    } else if (key == "listen_address") {
      const auto colon = value.rfind(':');
      if (colon == std::string_view::npos) {
        throw Error(ErrorCode::kValidation, "listen_address needs host:port");
      }
      listen_host = std::string(value.substr(0, colon));
      listen_port = static_cast<int>(to_u64(key, value.substr(colon + 1)));
    } else if (key == "session_ttl_s") {
      session_ttl = std::chrono::seconds(to_u64(key, value));
    } else if (key == "upload_limit_bytes") {
      upload_limit_bytes = to_u64(key, value);
    } else if (key == "registry") {
      registry_path = std::string(value);
    } else {
      throw Error(ErrorCode::kValidation, "unknown config key " + std::string(key));
    }
  }
  split.validate();
}

GatewayConfig GatewayConfig::load(const fs::path& file) {
  GatewayConfig cfg;
  cfg.apply(text::read_file(file.string()));
  return cfg;
}

std::string GatewayConfig::to_text() const {
  std::ostringstream out;
  out << "warehouse_root = " << warehouse_root.string() << "\n"
      << "s_min = " << split.s_min << "\n"
      << "s_max = " << split.s_max << "\n"
      << "s_b = " << split.s_b << "\n"
      << "worker_pool_size = " << worker_pool_size << "\n"
      << "cube_refresh_interval_ms = " << cube_refresh_interval.count() << "\n"
      << "listen_address = " << listen_host << ":" << listen_port << "\n"
      << "session_ttl_s = " << session_ttl.count() << "\n"
      << "upload_limit_bytes = " << upload_limit_bytes << "\n";
  if (!registry_path.empty()) out << "registry = " << registry_path.string() << "\n";
  return out.str();
}

Warehouse::Warehouse(GatewayConfig config)
    : config_(std::move(config)),
      schema_(builtin_schema()),
      store_(config_.warehouse_root),
      olap_(registry_) {}

void Warehouse::init_layout(const GatewayConfig& config) {
  std::error_code ec;
  fs::create_directories(config.warehouse_root / "_staging", ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + config.warehouse_root.string());
  for (const auto& [name, _] : builtin_schema().tables) {
    fs::create_directories(config.warehouse_root / name, ec);
  }
  for (const auto& spec : builtin_cubes()) {
    fs::create_directories(config.warehouse_root / spec.table_name(), ec);
  }
  if (!fs::exists(config.config_file())) text::write_file(config.config_file().string(), config.to_text());
}

BatchResult Warehouse::ingest(const TenantContext& ctx, std::string_view table,
                              const fs::path& file, SplitMode mode) {
  return run_etl(store_, schema_, file, table, ctx.university_key, mode, config_.split,
                 EtlOptions{config_.worker_pool_size});
}

std::vector<std::shared_ptr<const Cube>> Warehouse::build_cubes(const std::vector<std::string>& names) {
  std::vector<std::shared_ptr<const Cube>> out;
  for (const auto& spec : builtin_cubes()) {
    if (!names.empty() && std::find(names.begin(), names.end(), spec.name) == names.end() &&
        std::find(names.begin(), names.end(), spec.table_name()) == names.end()) {
      continue;
    }
    auto cube = build_cube(store_, schema_, spec, CubeBuildOptions{config_.worker_pool_size});
    persist_cube(store_, *cube);
    registry_.publish(cube);
    out.push_back(cube);
  }
  if (!names.empty() && out.size() != names.size()) {
    throw Error(ErrorCode::kNotFound, "unknown cube name in request");
  }
  return out;
}

void Warehouse::load_cubes() {
  for (const auto& spec : builtin_cubes()) {
    if (auto cube = load_cube(store_, spec)) registry_.publish(cube);
  }
}

ReportResult Warehouse::report(const TenantContext& ctx, std::string_view report_id,
                               const std::map<std::string, std::string>& params) const {
  return olap_.generate_report(ctx, report_id, params);
}

}  // namespace cwh
