#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "campuswh/cube.hpp"
#include "campuswh/etl.hpp"
#include "campuswh/olap.hpp"
#include "campuswh/schema.hpp"
#include "campuswh/segment_store.hpp"

namespace cwh {

/// Operator configuration. Read from a key=value file; every key is optional.
///
///   warehouse_root = ./warehouse
///   s_min = 1048576
///   s_max = 1048576
///   s_b = 1048576
///   worker_pool_size = <hardware threads>
///   cube_refresh_interval_ms = 60000
///   listen_address = 127.0.0.1:8080
///   session_ttl_s = 3600
///   upload_limit_bytes = 268435456
///   registry = <warehouse_root>/registry.csv
struct GatewayConfig {
  std::filesystem::path warehouse_root = "warehouse";
  SplitConfig split;
  std::size_t worker_pool_size = default_worker_count();
  std::chrono::milliseconds cube_refresh_interval{60'000};
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;
  std::chrono::seconds session_ttl{3600};
  std::uint64_t upload_limit_bytes = 256 * kMiB;
  std::filesystem::path registry_path;  // empty: <warehouse_root>/registry.csv

  std::filesystem::path registry_file() const;
  std::filesystem::path config_file() const { return warehouse_root / "warehouse.conf"; }

  /// Applies the keys of a key=value text ('#' starts a comment).
  void apply(std::string_view text);
  static GatewayConfig load(const std::filesystem::path& file);
  std::string to_text() const;
};

/// Ties schema, store, cubes and reports together for one warehouse root.
class Warehouse {
 public:
  explicit Warehouse(GatewayConfig config);

  /// Creates the directory layout: one directory per catalog table, the
  /// staging area, and a config file. Idempotent.
  static void init_layout(const GatewayConfig& config);

  const GatewayConfig& config() const { return config_; }
  const WarehouseSchema& schema() const { return schema_; }
  SegmentStore& store() { return store_; }
  const SegmentStore& store() const { return store_; }
  CubeRegistry& cubes() { return registry_; }
  const OlapService& olap() const { return olap_; }

  BatchResult ingest(const TenantContext& ctx, std::string_view table,
                     const std::filesystem::path& file, SplitMode mode);

  /// Builds, persists and publishes the named builtin cubes (all if empty).
  std::vector<std::shared_ptr<const Cube>> build_cubes(const std::vector<std::string>& names = {});

  /// Publishes the persisted versions of every builtin cube that exists.
  void load_cubes();

  ReportResult report(const TenantContext& ctx, std::string_view report_id,
                      const std::map<std::string, std::string>& params) const;

 private:
  GatewayConfig config_;
  const WarehouseSchema& schema_;
  SegmentStore store_;
  CubeRegistry registry_;
  OlapService olap_;
};

}  // namespace cwh
