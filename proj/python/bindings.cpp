#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "campuswh/bench.hpp"
#include "campuswh/cli.hpp"
#include "campuswh/cube.hpp"
#include "campuswh/error.hpp"
#include "campuswh/etl.hpp"
#include "campuswh/schema.hpp"

namespace py = pybind11;

namespace {

std::tuple<int, std::string, std::string> run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"campuswh"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = cwh::cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  }
  return {code, out.str(), err.str()};
}

}  // namespace

PYBIND11_MODULE(_campuswh, m) {
  m.doc() = "Bindings for the campuswh warehouse core.";

  py::register_exception<cwh::Error>(m, "Error", PyExc_RuntimeError);

  m.def("qualify_key", [](const std::string& tenant, const std::string& raw) {
    return cwh::qualify_key(cwh::TenantKey(tenant), raw);
  });
  m.def("split_size", [](std::uint64_t s_min, std::uint64_t s_max, std::uint64_t s_b) {
    return cwh::split_size(cwh::SplitConfig{s_min, s_max, s_b});
  }, py::arg("s_min"), py::arg("s_max"), py::arg("s_b"));
  m.def("mapper_count", &cwh::mapper_count, py::arg("s_ip"), py::arg("s_split"));
  m.def(
      "plan_splits",
      [](const std::filesystem::path& file, std::uint64_t s_split, const std::string& mode) {
        const auto plan = cwh::plan_splits(file, cwh::SplitConfig{s_split, s_split, s_split},
                                           cwh::parse_split_mode(mode));
        std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
        for (const auto& s : plan.splits) out.emplace_back(s.offset, s.length);
        return out;
      },
      py::arg("file"), py::arg("s_split"), py::arg("mode") = "case2");

  m.def("grouping_id", [](const std::vector<bool>& present) {
    std::unique_ptr<bool[]> buf(new bool[present.size()]);
    for (std::size_t i = 0; i < present.size(); ++i) buf[i] = present[i];
    return cwh::grouping_id(std::span<const bool>(buf.get(), present.size()));
  });
  m.def("mask_string", &cwh::mask_string, py::arg("grouping_id"), py::arg("k"));
  m.def("conv", [](const std::string& v, int from, int to) { return cwh::conv(v, from, to); });

  m.def("quantile", &cwh::bench::quantile);
  m.def(
      "remove_outliers",
      [](const std::vector<double>& samples, bool tukey) {
        return cwh::bench::remove_outliers(samples, {tukey}).survivors;
      },
      py::arg("samples"), py::arg("tukey_fences") = false);

  m.def("schema_reference", [] { return cwh::schema_reference(cwh::builtin_schema()); });
  m.def("run_cli", &run_cli, py::arg("args"),
        "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
