#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "campuswh/olap.hpp"
#include "campuswh/warehouse.hpp"

namespace httplib {
class Server;
}

namespace cwh {

/// "sha256$<salt hex>$<digest hex>" with digest = SHA-256(salt || secret).
std::string hash_secret(std::string_view secret);
std::string hash_secret(std::string_view secret, std::string_view salt_hex);
bool verify_secret(std::string_view secret, std::string_view stored_hash);

/// Random opaque token, hex-encoded.
std::string random_token(std::size_t bytes = 32);

/// Login -> tenant mapping, loaded from a CSV with header
/// login,secret_hash,university_key.
class TenantRegistry {
 public:
  struct Entry {
    std::string secret_hash;
    TenantKey university_key;
  };

  TenantRegistry() = default;
  /// Rejects duplicate logins, duplicate university keys, malformed hashes.
  static TenantRegistry parse(std::string_view csv);
  static TenantRegistry load(const std::filesystem::path& file);
  std::string to_csv() const;

  void add(const std::string& login, std::string secret_hash, TenantKey university_key);
  bool has_tenant(std::string_view university_key) const;
  std::optional<TenantKey> tenant_of(std::string_view login) const;
  std::size_t size() const { return entries_.size(); }

  /// Uniform failure for unknown logins and wrong secrets.
  TenantContext authenticate(std::string_view login, std::string_view secret) const;

  /// Scope for operator tools acting on behalf of a registered tenant.
  TenantContext operator_context(std::string_view university_key) const;

 private:
  std::map<std::string, Entry, std::less<>> entries_;
};

/// Sessions issued by the service; expire after a fixed TTL.
class SessionManager {
 public:
  explicit SessionManager(std::chrono::seconds ttl) : ttl_(ttl) {}

  std::string open(const TenantContext& ctx);
  std::optional<TenantContext> resolve(std::string_view token);
  void close(std::string_view token);

 private:
  struct Session {
    TenantContext ctx;
    std::chrono::steady_clock::time_point expires;
  };
  std::chrono::seconds ttl_;
  std::mutex mu_;
  std::map<std::string, Session, std::less<>> sessions_;
};

/// JSON rendering of an ETL result (batch_id, rows_in, rows_out,
/// effective_ms, cumulative_ms, errors[]).
std::string batch_result_json(const BatchResult& result);

/// Request/response service over a Warehouse. Every data endpoint requires a
/// session token and is scoped to its tenant.
///
///   POST /authenticate   {"login", "secret"} -> {"token", "university_key", "expires_in_s"}
///   POST /upload         multipart: table, mode (case1|case2), file
///   GET  /reports        report catalog
///   GET  /report/<id>    ?<param>=...&format=csv|table|json
///
/// Tokens are accepted as "Authorization: Bearer <token>".
class Service {
 public:
  Service(Warehouse& warehouse, TenantRegistry registry);
  ~Service();

  /// Binds and serves until stop(). Returns the bound port (useful with 0).
  int bind(const std::string& host, int port);
  void listen_after_bind();
  void stop();

  /// Starts refreshing cubes on the configured interval.
  void start_refresh();
  CubeRefresher& refresher() { return *refresher_; }

 private:
  void install_routes();

  Warehouse& warehouse_;
  TenantRegistry registry_;
  SessionManager sessions_;
  std::unique_ptr<CubeRefresher> refresher_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace cwh
