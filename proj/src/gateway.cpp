#include "campuswh/gateway.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <httplib.h>
#include <json.hpp>

#include <set>

#include "campuswh/error.hpp"
#include "campuswh/text.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace cwh {

namespace {

constexpr std::string_view kHashScheme = "sha256";

std::string to_hex(const unsigned char* data, std::size_t len) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (std::size_t i = 0; i < len; ++i) {
    out.push_back(kHex[data[i] >> 4]);
    out.push_back(kHex[data[i] & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::string_view salt, std::string_view secret) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw Error(ErrorCode::kIo, "EVP_MD_CTX_new failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, salt.data(), salt.size()) == 1 &&
                  EVP_DigestUpdate(ctx, secret.data(), secret.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error(ErrorCode::kIo, "sha256 failed");
  return to_hex(digest, len);
}

struct ParsedHash {
  std::string_view salt;
  std::string_view digest;
};

std::optional<ParsedHash> parse_hash(std::string_view stored) {
  const auto a = stored.find('$');
  if (a == std::string_view::npos || stored.substr(0, a) != kHashScheme) return std::nullopt;
  const auto b = stored.find('$', a + 1);
  if (b == std::string_view::npos) return std::nullopt;
  ParsedHash h{stored.substr(a + 1, b - a - 1), stored.substr(b + 1)};
  if (h.salt.empty() || h.digest.size() != 64) return std::nullopt;
  return h;
}

// Compared against when the login is unknown, so both failure paths hash.
const std::string& dummy_hash() {
  static const std::string h = hash_secret("unused", "00000000000000000000000000000000");
  return h;
}

Error auth_failure() { return Error(ErrorCode::kAuthentication, "authentication failed"); }

}  // namespace

std::string hash_secret(std::string_view secret, std::string_view salt_hex) {
  return std::string(kHashScheme) + "$" + std::string(salt_hex) + "$" + sha256_hex(salt_hex, secret);
}

std::string hash_secret(std::string_view secret) { return hash_secret(secret, random_token(16)); }

bool verify_secret(std::string_view secret, std::string_view stored_hash) {
  const auto parsed = parse_hash(stored_hash);
  if (!parsed) return false;
  const std::string digest = sha256_hex(parsed->salt, secret);
  return digest.size() == parsed->digest.size() &&
         CRYPTO_memcmp(digest.data(), parsed->digest.data(), digest.size()) == 0;
}

std::string random_token(std::size_t bytes) {
  std::string buf(bytes, '\0');
  if (RAND_bytes(reinterpret_cast<unsigned char*>(buf.data()), static_cast<int>(bytes)) != 1) {
    throw Error(ErrorCode::kIo, "RAND_bytes failed");
  }
  return to_hex(reinterpret_cast<const unsigned char*>(buf.data()), bytes);
}

// ---------------------------------------------------------------------------
// TenantRegistry

void TenantRegistry::add(const std::string& login, std::string secret_hash, TenantKey university_key) {
  if (login.empty() || login.find_first_of(",\n\r") != std::string::npos) {
    throw Error(ErrorCode::kValidation, "invalid login '" + login + "'");
  }
  if (!parse_hash(secret_hash)) {
    throw Error(ErrorCode::kValidation, "login " + login + ": secret is not a recognised hash");
  }
  if (entries_.contains(login)) throw Error(ErrorCode::kValidation, "duplicate login " + login);
  if (has_tenant(university_key.value())) {
    throw Error(ErrorCode::kValidation,
                "university_key " + university_key.value() + " is mapped by more than one login");
  }
  entries_.emplace(login, Entry{std::move(secret_hash), std::move(university_key)});
}

TenantRegistry TenantRegistry::parse(std::string_view csv) {
  TenantRegistry reg;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < csv.size()) {
    std::size_t nl = csv.find('\n', pos);
    if (nl == std::string_view::npos) nl = csv.size();
    const std::string_view line = text::strip_cr(csv.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != "login,secret_hash,university_key") {
        throw Error(ErrorCode::kValidation, "registry header must be login,secret_hash,university_key");
      }
      continue;
    }
    if (line.empty()) continue;
    const auto fields = text::split_fields(line);
    if (fields.size() != 3) {
      throw Error(ErrorCode::kValidation, "registry line " + std::to_string(line_no) + ": need 3 fields");
    }
    reg.add(std::string(fields[0]), std::string(fields[1]), TenantKey(std::string(fields[2])));
  }
  return reg;
}

TenantRegistry TenantRegistry::load(const fs::path& file) {
  return parse(text::read_file(file.string()));
}

std::string TenantRegistry::to_csv() const {
  std::string out = "login,secret_hash,university_key\n";
  for (const auto& [login, e] : entries_) {
    out += login + "," + e.secret_hash + "," + e.university_key.value() + "\n";
  }
  return out;
}

bool TenantRegistry::has_tenant(std::string_view university_key) const {
  for (const auto& [_, e] : entries_) {
    if (e.university_key.value() == university_key) return true;
  }
  return false;
}

std::optional<TenantKey> TenantRegistry::tenant_of(std::string_view login) const {
  auto it = entries_.find(login);
  if (it == entries_.end()) return std::nullopt;
  return it->second.university_key;
}

TenantContext TenantRegistry::authenticate(std::string_view login, std::string_view secret) const {
  auto it = entries_.find(login);
  const std::string& stored = it == entries_.end() ? dummy_hash() : it->second.secret_hash;
  const bool ok = verify_secret(secret, stored);
  if (it == entries_.end() || !ok) throw auth_failure();
  return TenantContext{it->second.university_key, random_token(16)};
}

TenantContext TenantRegistry::operator_context(std::string_view university_key) const {
  for (const auto& [_, e] : entries_) {
    if (e.university_key.value() == university_key) return TenantContext{e.university_key, "operator"};
  }
  throw Error(ErrorCode::kNotFound, "tenant " + std::string(university_key) + " is not registered");
}

// ---------------------------------------------------------------------------
// Sessions

std::string SessionManager::open(const TenantContext& ctx) {
  std::string token = random_token();
  std::lock_guard lock(mu_);
  sessions_.insert_or_assign(token, Session{TenantContext{ctx.university_key, token},
                                            std::chrono::steady_clock::now() + ttl_});
  return token;
}

std::optional<TenantContext> SessionManager::resolve(std::string_view token) {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(token);
  if (it == sessions_.end()) return std::nullopt;
  if (std::chrono::steady_clock::now() >= it->second.expires) {
    sessions_.erase(it);
    return std::nullopt;
  }
  return it->second.ctx;
}

void SessionManager::close(std::string_view token) {
  std::lock_guard lock(mu_);
  if (auto it = sessions_.find(token); it != sessions_.end()) sessions_.erase(it);
}

// ---------------------------------------------------------------------------
// Service

std::string batch_result_json(const BatchResult& r) {
  auto ms = [](Nanos d) { return std::chrono::duration<double, std::milli>(d).count(); };
  json j;
  j["outcome"] = r.committed() ? "committed" : "rejected";
  j["batch_id"] = r.committed() ? json(r.segment->batch_id) : json(nullptr);
  j["rows_in"] = r.rows_in;
  j["rows_out"] = r.rows_out;
  j["n_m"] = r.n_m;
  j["effective_ms"] = ms(r.effective_time);
  j["cumulative_ms"] = ms(r.cumulative_time);
  j["errors"] = json::array();
  for (const auto& e : r.report.entries) {
    j["errors"].push_back({{"line_number", e.line_number},
                           {"tenant_key_value", e.tenant_key_value ? json(*e.tenant_key_value) : json(nullptr)},
                           {"reason", e.reason}});
  }
  return j.dump();
}

namespace {

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kValidation:
    case ErrorCode::kUsage: return 400;
    case ErrorCode::kAuthentication: return 401;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict: return 409;
    case ErrorCode::kLimit: return 413;
    default: return 500;
  }
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message,
                json extra = json::object()) {
  extra["error"] = std::string(to_string(code));
  extra["message"] = message;
  res.status = status_for(code);
  res.set_content(extra.dump(), "application/json");
}

// Runs a handler, converting exceptions into JSON error responses.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, e.code(), e.what());
  } catch (const json::exception& e) {
    send_error(res, ErrorCode::kValidation, std::string("bad request body: ") + e.what());
  } catch (const std::exception& e) {
    send_error(res, ErrorCode::kIo, e.what());
  }
}

}  // namespace

Service::Service(Warehouse& warehouse, TenantRegistry registry)
    : warehouse_(warehouse),
      registry_(std::move(registry)),
      sessions_(warehouse.config().session_ttl),
      refresher_(std::make_unique<CubeRefresher>(
          warehouse.store(), warehouse.schema(), warehouse.cubes(), builtin_cubes(),
          CubeBuildOptions{warehouse.config().worker_pool_size},
          [](const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); })),
      server_(std::make_unique<httplib::Server>()) {
  server_->set_payload_max_length(warehouse.config().upload_limit_bytes + kMiB);
  install_routes();
}

Service::~Service() {
  stop();
  refresher_->stop();
}

void Service::start_refresh() { refresher_->start(warehouse_.config().cube_refresh_interval); }

int Service::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorCode::kIo, "cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) {
    throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void Service::listen_after_bind() { server_->listen_after_bind(); }

void Service::stop() {
  if (server_) server_->stop();
}

void Service::install_routes() {
  auto session_of = [this](const httplib::Request& req) -> TenantContext {
    const std::string auth = req.get_header_value("Authorization");
    constexpr std::string_view kBearer = "Bearer ";
    if (!auth.starts_with(kBearer)) throw Error(ErrorCode::kAuthentication, "missing session token");
    auto ctx = sessions_.resolve(std::string_view(auth).substr(kBearer.size()));
    if (!ctx) throw Error(ErrorCode::kAuthentication, "invalid or expired session token");
    return *ctx;
  };

  server_->Post("/authenticate", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      const TenantContext ctx = registry_.authenticate(body.at("login").get<std::string>(),
                                                       body.at("secret").get<std::string>());
      const std::string token = sessions_.open(ctx);
      res.set_content(json{{"token", token},
                           {"university_key", ctx.university_key.value()},
                           {"expires_in_s", warehouse_.config().session_ttl.count()}}
                          .dump(),
                      "application/json");
    });
  });

  server_->Post("/upload", [this, session_of](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const TenantContext ctx = session_of(req);
      if (!req.is_multipart_form_data() || !req.has_file("file") || !req.has_file("table")) {
        throw Error(ErrorCode::kValidation, "upload needs multipart fields 'table' and 'file'");
      }
      const auto file = req.get_file_value("file");
      const std::uint64_t limit = warehouse_.config().upload_limit_bytes;
      if (file.content.size() > limit) {
        send_error(res, ErrorCode::kLimit,
                   "upload of " + std::to_string(file.content.size()) + " bytes exceeds limit",
                   json{{"limit_bytes", limit}});
        return;
      }
      const std::string table = req.get_file_value("table").content;
      const SplitMode mode =
          req.has_file("mode") ? parse_split_mode(req.get_file_value("mode").content) : SplitMode::kCase2;
      if (!warehouse_.schema().contains(table)) {
        throw Error(ErrorCode::kNotFound, "unknown table " + table);
      }
      const fs::path upload = warehouse_.store().new_staging_path("upload");
      text::write_file(upload.string(), file.content);
      BatchResult result;
      try {
        result = warehouse_.ingest(ctx, table, upload, mode);
      } catch (...) {
        std::error_code ec;
        fs::remove(upload, ec);
        throw;
      }
      std::error_code ec;
      fs::remove(upload, ec);
      res.status = result.committed() ? 200 : 422;
      res.set_content(batch_result_json(result), "application/json");
    });
  });

  server_->Get("/reports", [this, session_of](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const TenantContext ctx = session_of(req);
      json list = json::array();
      for (const auto& def : warehouse_.olap().list_reports(ctx)) {
        json cols = json::array();
        for (const auto& c : def.columns) cols.push_back(c.name);
        list.push_back({{"report_id", def.report_id},
                        {"description", def.description},
                        {"parameters", def.parameters},
                        {"columns", cols}});
      }
      res.set_content(json{{"reports", list}}.dump(), "application/json");
    });
  });

  server_->Get(R"(/report/([A-Za-z0-9_]+))",
               [this, session_of](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const TenantContext ctx = session_of(req);
      std::map<std::string, std::string> params;
      std::string format = "csv";
      for (const auto& [k, v] : req.params) {
        if (k == "format") {
          format = v;
        } else {
          params[k] = v;
        }
      }
      const ReportResult report = warehouse_.report(ctx, req.matches[1].str(), params);
      if (format == "csv") {
        res.set_content(report.to_csv(), "text/csv");
      } else if (format == "table") {
        res.set_content(report.to_table(), "text/plain");
      } else if (format == "json") {
        res.set_content(json{{"report_id", report.report_id},
                             {"columns", report.columns},
                             {"rows", report.rows},
                             {"cube_version", report.cube_version},
                             {"generated_at", report.generated_at}}
                            .dump(),
                        "application/json");
      } else {
        throw Error(ErrorCode::kValidation, "unknown format " + format);
      }
    });
  });
}

}  // namespace cwh
