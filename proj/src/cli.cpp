#include "campuswh/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "campuswh/bench.hpp"
#include "campuswh/error.hpp"
#include "campuswh/gateway.hpp"
#include "campuswh/text.hpp"
#include "campuswh/warehouse.hpp"

namespace fs = std::filesystem;

namespace cwh {

namespace {

struct SampleTenant {
  const char* login;
  const char* secret;
  const char* university_key;
};

constexpr SampleTenant kSampleTenants[] = {
    {"university1", "university1-secret", "University1"},
    {"university2", "university2-secret", "University2"},
};

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

double ms(Nanos d) { return std::chrono::duration<double, std::milli>(d).count(); }

void write_output(const std::string& body, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << body;
  } else {
    text::write_file(path, body);
  }
}

struct Globals {
  std::string root = "warehouse";
  std::string config;
  std::size_t workers = 0;
};

GatewayConfig load_config(const Globals& g) {
  GatewayConfig cfg;
  cfg.warehouse_root = g.root;
  const fs::path file = g.config.empty() ? cfg.config_file() : fs::path(g.config);
  if (!g.config.empty() || fs::exists(file)) {
    cfg.apply(text::read_file(file.string()));
    // --root wins over the file unless only --config was given.
    if (g.config.empty()) cfg.warehouse_root = g.root;
  }
  if (g.workers > 0) cfg.worker_pool_size = g.workers;
  return cfg;
}

std::map<std::string, std::string> parse_params(const std::vector<std::string>& raw) {
  std::map<std::string, std::string> params;
  for (const auto& p : raw) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::kUsage, "--param expects key=value, got '" + p + "'");
    }
    params[p.substr(0, eq)] = p.substr(eq + 1);
  }
  return params;
}

std::vector<std::uint64_t> parse_list(const std::string& text, std::uint64_t scale, const char* what) {
  std::vector<std::uint64_t> out;
  for (const auto& field : text::split_fields(text)) {
    const auto v = text::parse_integer(field);
    if (!v || *v <= 0) throw Error(ErrorCode::kUsage, std::string("bad ") + what + " '" + std::string(field) + "'");
    out.push_back(static_cast<std::uint64_t>(*v) * scale);
  }
  return out;
}

void write_series(const bench::BenchSeries& series, const std::string& out_dir, const std::string& stem,
                  const std::string& title, const std::string& y, const std::string& z,
                  std::ostream& out) {
  const std::string csv = series.to_csv();
  if (out_dir.empty()) {
    out << csv;
    return;
  }
  fs::create_directories(out_dir);
  const fs::path csv_path = fs::path(out_dir) / (stem + ".csv");
  text::write_file(csv_path.string(), csv);
  text::write_file((fs::path(out_dir) / (stem + ".gp")).string(),
                   series.gnuplot_script(csv_path.filename().string(), title, y, z));
  out << "wrote " << csv_path.string() << "\n";
}

void print_stats(const std::vector<bench::SizeStats>& stats, const char* label, std::ostream& out) {
  for (const auto& s : stats) {
    out << label << " size=" << s.size << " n_m=" << s.n_m << " workers=" << s.workers
        << " samples=" << s.samples << " kept=" << s.survivors
        << " effective_ms=" << fixed2(s.mean_effective_ms)
        << " cumulative_ms=" << fixed2(s.mean_cumulative_ms)
        << (s.outlier_removal_skipped ? " (outlier removal skipped)" : "") << "\n";
  }
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"campuswh: multi-tenant campus data warehouse"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--root", g.root, "Warehouse root directory")->capture_default_str();
  app.add_option("--config", g.config, "key=value config file (default <root>/warehouse.conf)");
  app.add_option("--workers", g.workers, "Worker pool size override");

  // init
  auto* init = app.add_subcommand("init", "Create the warehouse layout and a sample registry");

  // ingest
  std::string tenant, table, file, mode = "case2", errors_out;
  auto* ingest = app.add_subcommand("ingest", "Load one CSV file into a table as a single batch");
  ingest->add_option("--tenant", tenant, "Registered university_key")->required();
  ingest->add_option("--table", table, "Target table")->required();
  ingest->add_option("--file", file, "Upload CSV")->required()->check(CLI::ExistingFile);
  ingest->add_option("--mode", mode, "case1 | case2")->capture_default_str();
  ingest->add_option("--errors", errors_out, "Write the error report CSV here on rejection");

  // build-cube
  std::vector<std::string> cube_names;
  auto* build = app.add_subcommand("build-cube", "Rebuild and publish cubes");
  build->add_option("cubes", cube_names, "Cube names (default: all)");

  // report
  std::string report_id, format = "csv", report_out;
  std::vector<std::string> raw_params;
  auto* report = app.add_subcommand("report", "Generate a report for one tenant");
  report->add_option("--tenant", tenant, "Registered university_key")->required();
  report->add_option("--report", report_id, "Report id")->required();
  report->add_option("--param", raw_params, "key=value report parameter (repeatable)");
  report->add_option("--format", format, "csv | table")
      ->check(CLI::IsMember({"csv", "table"}))
      ->capture_default_str();
  report->add_option("--out", report_out, "Output file (default stdout)");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Run a benchmark");
  bench_cmd->require_subcommand(1);
  std::string bench_dir = "bench-work", bench_out;
  std::size_t reps = 20;
  std::uint64_t seed = 7;
  bool tukey = false;
  std::string sizes_mib = "2,4,8,16,32,64";
  auto* bench_etl = bench_cmd->add_subcommand("etl", "ETL time against input size, Case 1 and Case 2");
  bench_etl->add_option("--sizes-mib", sizes_mib, "Comma-separated input sizes in MiB")->capture_default_str();
  std::string cube_rows = "200000,400000,600000,800000,1000000";
  std::size_t rows_per_task = 200'000;
  bool single_worker = false;
  auto* bench_olap = bench_cmd->add_subcommand("olap", "Query time against cube size");
  bench_olap->add_option("--cube-rows", cube_rows, "Comma-separated target cube sizes")->capture_default_str();
  bench_olap->add_option("--rows-per-task", rows_per_task, "Cube rows per scan worker")->capture_default_str();
  bench_olap->add_flag("--single-worker", single_worker, "Scan with one worker");
  for (auto* sub : {bench_etl, bench_olap}) {
    sub->add_option("--reps", reps, "Measured runs per point")->capture_default_str();
    sub->add_option("--seed", seed, "Dataset seed")->capture_default_str();
    sub->add_option("--work-dir", bench_dir, "Scratch warehouse")->capture_default_str();
    sub->add_option("--out-dir", bench_out, "Write <name>.csv and <name>.gp here (default: CSV to stdout)");
    sub->add_flag("--tukey", tukey, "Stage-1 outlier filter uses 1.5 IQR fences");
  }

  // serve
  auto* serve = app.add_subcommand("serve", "Run the tenant service");

  // schema
  auto* schema_cmd = app.add_subcommand("schema", "Print the table catalog");

  // gen
  std::string gen_out, dims_dir;
  std::uint64_t gen_size = kMiB;
  std::string gen_table = "StudentPerformance";
  auto* gen = app.add_subcommand("gen", "Generate synthetic upload files");
  gen->add_option("--table", gen_table, "Fact table")->capture_default_str();
  gen->add_option("--size", gen_size, "Target size in bytes")->capture_default_str();
  gen->add_option("--out", gen_out, "Fact CSV path");
  gen->add_option("--dimensions", dims_dir, "Also write one CSV per dimension into this directory");
  gen->add_option("--seed", seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: usage: " << e.what() << "\n";
    err << app.help();
    return 2;
  }

  try {
    if (app.got_subcommand(schema_cmd)) {
      out << schema_reference(builtin_schema());
      return 0;
    }

    if (app.got_subcommand(gen)) {
      if (gen_out.empty() && dims_dir.empty()) {
        throw Error(ErrorCode::kUsage, "gen needs --out and/or --dimensions");
      }
      if (!dims_dir.empty()) bench::gen_dimensions(dims_dir, {}, seed);
      if (!gen_out.empty()) {
        const auto rows = bench::gen_dataset(gen_out, gen_size, gen_table, TenantKey("Generated"), seed);
        out << "wrote " << rows << " rows to " << gen_out << "\n";
      }
      return 0;
    }

    if (app.got_subcommand(bench_cmd)) {
      const bench::OutlierOptions outliers{tukey};
      if (bench_cmd->got_subcommand(bench_etl)) {
        bench::EtlBenchPlan plan;
        plan.sizes = parse_list(sizes_mib, kMiB, "size");
        plan.reps = reps;
        plan.seed = seed;
        plan.outliers = outliers;
        plan.work_dir = bench_dir;
        if (g.workers > 0) plan.worker_pool_size = g.workers;
        const auto rep = bench::run_etl_bench(plan);
        for (const auto& n : rep.notes) out << "note: " << n << "\n";
        print_stats(rep.case1, "case1", out);
        print_stats(rep.case2, "case2", out);
        write_series(rep.series, bench_out, "etl", "ETL effective time", "Case 1", "Case 2", out);
      } else {
        bench::OlapBenchPlan plan;
        plan.cube_rows = parse_list(cube_rows, 1, "cube size");
        plan.reps = reps;
        plan.seed = seed;
        plan.rows_per_task = rows_per_task;
        plan.single_worker = single_worker;
        plan.outliers = outliers;
        plan.work_dir = bench_dir;
        if (g.workers > 0) plan.max_workers = g.workers;
        const auto rep = bench::run_olap_bench(plan);
        for (const auto& n : rep.notes) out << "note: " << n << "\n";
        print_stats(rep.stats, "olap", out);
        write_series(rep.series, bench_out, "olap", "OLAP query time", "cumulative", "effective", out);
      }
      return 0;
    }

    GatewayConfig cfg = load_config(g);

    if (app.got_subcommand(init)) {
      Warehouse::init_layout(cfg);
      const fs::path reg = cfg.registry_file();
      if (!fs::exists(reg)) {
        TenantRegistry registry;
        for (const auto& t : kSampleTenants) registry.add(t.login, hash_secret(t.secret), TenantKey(t.university_key));
        text::write_file(reg.string(), registry.to_csv());
        out << "wrote sample registry " << reg.string() << " (logins university1, university2)\n";
      }
      out << "initialized " << cfg.warehouse_root.string() << "\n";
      return 0;
    }

    const TenantRegistry registry = TenantRegistry::load(cfg.registry_file());
    Warehouse wh(cfg);

    if (app.got_subcommand(ingest)) {
      const TenantContext ctx = registry.operator_context(tenant);
      const BatchResult r = wh.ingest(ctx, table, file, parse_split_mode(mode));
      if (!r.committed()) {
        write_output(r.report.to_csv(), errors_out, errors_out.empty() ? err : out);
        err << "error: validation: batch rejected with " << r.report.entries.size() << " error(s)\n";
        return 1;
      }
      out << "committed " << table << " batch " << r.segment->batch_id << "\n"
          << "rows_in " << r.rows_in << "\n"
          << "rows_out " << r.rows_out << "\n"
          << "n_m " << r.n_m << "\n"
          << "workers " << r.workers << "\n"
          << "effective_ms " << fixed2(ms(r.effective_time)) << "\n"
          << "cumulative_ms " << fixed2(ms(r.cumulative_time)) << "\n";
      return 0;
    }

    if (app.got_subcommand(build)) {
      for (const auto& cube : wh.build_cubes(cube_names)) {
        out << cube->spec.table_name() << " version " << cube->version << "\n" << cube->summary.to_text();
      }
      return 0;
    }

    if (app.got_subcommand(report)) {
      const TenantContext ctx = registry.operator_context(tenant);
      wh.load_cubes();
      const ReportResult r = wh.report(ctx, report_id, parse_params(raw_params));
      for (const auto& w : r.warnings) err << "warning: " << w << "\n";
      write_output(format == "csv" ? r.to_csv() : r.to_table(), report_out, out);
      return 0;
    }

    if (app.got_subcommand(serve)) {
      wh.load_cubes();
      Service service(wh, registry);
      service.start_refresh();
      const int port = service.bind(cfg.listen_host, cfg.listen_port);
      out << "listening on " << cfg.listen_host << ":" << port << std::endl;
      service.listen_after_bind();
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    if (e.code() == ErrorCode::kUsage) return 2;
    return 1;
  } catch (const std::exception& e) {
    err << "error: io: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace cwh
