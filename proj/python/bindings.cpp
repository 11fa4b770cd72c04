// Python bindings. Structured values cross the boundary as JSON text; the pure-Python
// package decodes them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "rollforge/buffer/buffer.hpp"
#include "rollforge/core/errors.hpp"
#include "rollforge/core/model.hpp"
#include "rollforge/data/audit.hpp"
#include "rollforge/data/dataset.hpp"
#include "rollforge/data/select.hpp"
#include "rollforge/forge/forge.hpp"
#include "rollforge/orch/config.hpp"
#include "rollforge/orch/run.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace rollforge;

namespace {

template <class T>
std::vector<T> parse_list(const std::string& text) {
  return json::parse(text).get<std::vector<T>>();
}

std::string run_json(const std::string& config_yaml) {
  auto config = orch::run_config_from_yaml(config_yaml);
  orch::validate(config);
  orch::RunResult r;
  {
    py::gil_scoped_release release;
    r = orch::run(config);
  }
  return json{{"dir", r.dir.string()}, {"summary", r.summary}, {"windows", r.windows}}.dump();
}

std::string audit_json(const std::string& dataset, const std::optional<std::string>& config) {
  const auto ds = data::load_dataset(dataset);
  const auto cfg = config ? data::load_audit_config(*config) : data::default_audit_config();
  py::gil_scoped_release release;
  return json(data::run_audit(ds, cfg)).dump();
}

class PyBuffer {
 public:
  PyBuffer(std::size_t group_size, std::uint64_t off_by_n, std::size_t global_batch_size) {
    buffer::BufferConfig c;
    c.group_size = group_size;
    c.off_by_n = off_by_n;
    c.global_batch_size = global_batch_size;
    buffer_ = std::make_unique<buffer::SampleBuffer>(c);
  }

  py::tuple submit(const std::string& group) {
    const auto a = buffer_->submit_group(json::parse(group).get<core::SampleGroup>());
    return py::make_tuple(a.admitted, a.reason, a.missing);
  }

  std::string dequeue(std::uint64_t current, std::size_t num_groups, std::int64_t timeout_ms) {
    buffer::DequeueResult r;
    {
      py::gil_scoped_release release;
      r = buffer_->dequeue(core::PolicyVersion{current}, num_groups, timeout_ms);
    }
    return json{{"groups", r.groups}, {"would_block", r.would_block}}.dump();
  }

  std::size_t announce_version(std::uint64_t v) { return buffer_->announce_version(core::PolicyVersion{v}); }
  std::string stats() { return json(buffer_->stats()).dump(); }
  void close() { buffer_->close(); }

 private:
  std::unique_ptr<buffer::SampleBuffer> buffer_;
};

}  // namespace

PYBIND11_MODULE(_rollforge, m) {
  m.doc() = "rollforge native core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  m.def("reverse_kl", [](const std::vector<double>& student, const std::vector<double>& teacher) {
    return forge::reverse_kl(student, teacher).value;
  }, py::arg("student"), py::arg("teacher"));
  m.def("grpo_advantage", [](const std::vector<double>& r) { return forge::grpo_advantage(r); }, py::arg("rewards"));

  m.def("paint_mask", [](const std::string& trajectory) {
    return json(forge::paint_mask(json::parse(trajectory).get<core::Trajectory>())).dump();
  });
  m.def("build_group_samples", [](const std::string& group) {
    return json(forge::build_group_samples(json::parse(group).get<core::SampleGroup>())).dump();
  });
  m.def("opd_loss", [](const std::string& samples, double kl_weight) {
    const auto r = forge::opd_loss(parse_list<forge::TrainSample>(samples), kl_weight);
    return json{{"loss", r.loss}, {"pg_sum", r.pg_sum}, {"kl_sum", r.kl_sum},
                {"masked_tokens", r.masked_tokens}, {"divergent_tokens", r.divergent_tokens}}.dump();
  });
  m.def("pack", [](const std::string& samples, std::size_t max_len) {
    auto s = parse_list<forge::TrainSample>(samples);
    return json(forge::pack(s, max_len)).dump();
  });
  m.def("unpack", [](const std::string& packs) { return json(forge::unpack(parse_list<forge::Pack>(packs))).dump(); });

  m.def("apportion", &data::apportion, py::arg("sizes"), py::arg("k"));
  m.def("luhn_valid", &data::luhn_valid, py::arg("digits"));
  m.def("audit", &audit_json, py::arg("dataset"), py::arg("config") = py::none());

  m.def("default_run_config", [] { return orch::to_yaml(orch::RunConfig{}); });
  m.def("run", &run_json, py::arg("config_yaml"));

  py::class_<PyBuffer>(m, "Buffer")
      .def(py::init<std::size_t, std::uint64_t, std::size_t>(), py::arg("group_size"), py::arg("off_by_n"),
           py::arg("global_batch_size"))
      .def("submit", &PyBuffer::submit)
      .def("dequeue", &PyBuffer::dequeue, py::arg("current"), py::arg("num_groups"), py::arg("timeout_ms") = 0)
      .def("announce_version", &PyBuffer::announce_version)
      .def("stats", &PyBuffer::stats)
      .def("close", &PyBuffer::close);
}
