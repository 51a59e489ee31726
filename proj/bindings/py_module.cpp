/* Copyright 2026 The espsim Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "espsim/cluster.hpp"
#include "espsim/config.hpp"
#include "espsim/cost_model.hpp"
#include "espsim/engine.hpp"
#include "espsim/events.hpp"
#include "espsim/metrics.hpp"
#include "espsim/policies.hpp"
#include "espsim/trace.hpp"

namespace py = pybind11;
using namespace espsim;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Iteration-level simulator for elastic LLM serving clusters";

  auto sim_error = py::register_exception<SimError>(m, "SimError");
  py::register_exception<ConfigError>(m, "ConfigError", sim_error);
  py::register_exception<TraceParseError>(m, "TraceParseError", sim_error);
  py::register_exception<UnknownStrategyError>(m, "UnknownStrategyError",
                                               sim_error);
  py::register_exception<InfeasiblePlanError>(m, "InfeasiblePlanError",
                                              sim_error);

  py::class_<TraceRecord>(m, "TraceRecord")
      .def(py::init<>())
      .def(py::init([](Millis arrival_ms, TokenCount input_len,
                       TokenCount output_len) {
             return TraceRecord{arrival_ms, input_len, output_len};
           }),
           py::arg("arrival_ms"), py::arg("input_len"), py::arg("output_len"))
      .def_readwrite("arrival_ms", &TraceRecord::arrival_ms)
      .def_readwrite("input_len", &TraceRecord::input_len)
      .def_readwrite("output_len", &TraceRecord::output_len)
      .def("__eq__",
           [](const TraceRecord& a, const TraceRecord& b) { return a == b; })
      .def("__repr__", [](const TraceRecord& r) {
        std::ostringstream os;
        os << "TraceRecord(arrival_ms=" << r.arrival_ms
           << ", input_len=" << r.input_len << ", output_len=" << r.output_len
           << ")";
        return os.str();
      });

  m.def(
      "gen_trace",
      [](const std::string& distribution, double requests_per_s, int count,
         uint64_t seed) {
        TraceSpec spec;
        spec.distribution = distribution;
        spec.requests_per_s = requests_per_s;
        spec.count = count;
        spec.seed = seed;
        return gen_trace(spec);
      },
      py::arg("distribution"), py::arg("requests_per_s"), py::arg("count"),
      py::arg("seed"),
      "Poisson arrivals with lengths drawn from the named distribution");
  m.def("load_trace", &load_trace, py::arg("path"));
  m.def("save_trace", &save_trace, py::arg("trace"), py::arg("path"));

  py::class_<StrategyKey>(m, "StrategyKey")
      .def(py::init<int, int>(), py::arg("dop") = 1, py::arg("tp") = 1)
      .def_readwrite("dop", &StrategyKey::dop)
      .def_readwrite("tp", &StrategyKey::tp)
      .def("__eq__",
           [](const StrategyKey& a, const StrategyKey& b) { return a == b; })
      .def("__repr__", [](const StrategyKey& k) {
        return "StrategyKey(dop=" + std::to_string(k.dop) +
               ", tp=" + std::to_string(k.tp) + ")";
      });

  py::class_<CostCoefficients>(m, "CostCoefficients")
      .def(py::init<>())
      .def_readwrite("alpha", &CostCoefficients::alpha)
      .def_readwrite("beta", &CostCoefficients::beta)
      .def_readwrite("gamma", &CostCoefficients::gamma);

  py::class_<DecodeCoefficients>(m, "DecodeCoefficients")
      .def(py::init<>())
      .def_readwrite("alpha", &DecodeCoefficients::alpha)
      .def_readwrite("beta", &DecodeCoefficients::beta)
      .def_readwrite("gamma", &DecodeCoefficients::gamma)
      .def_readwrite("compute_bound_batch_threshold",
                     &DecodeCoefficients::compute_bound_batch_threshold);

  py::class_<StrategyRecord>(m, "StrategyRecord")
      .def(py::init<>())
      .def_readwrite("key", &StrategyRecord::key)
      .def_readwrite("prefill", &StrategyRecord::prefill)
      .def_readwrite("decode", &StrategyRecord::decode)
      .def_readwrite("tipping_ms", &StrategyRecord::tipping_ms);

  py::class_<ProfileSample>(m, "ProfileSample")
      .def(py::init<>())
      .def_readwrite("lengths", &ProfileSample::lengths)
      .def_readwrite("measured_ms", &ProfileSample::measured_ms);

  py::class_<Sib>(m, "Sib")
      .def(py::init<>())
      .def("put", &Sib::put, py::arg("record"))
      .def("has", &Sib::has, py::arg("key"))
      .def("record", &Sib::record, py::arg("key"),
           py::return_value_policy::reference_internal)
      .def("keys", &Sib::keys)
      .def(
          "prefill_time",
          [](const Sib& sib, const std::vector<TokenCount>& lens,
             const StrategyKey& key) { return sib.prefill_time(lens, key); },
          py::arg("input_lens"), py::arg("key"))
      .def("decode_time", &Sib::decode_time, py::arg("batch_size"),
           py::arg("resident_kv"), py::arg("key"), py::arg("n_masters") = 1)
      .def("tipping_point_ms", &Sib::tipping_point_ms, py::arg("key"))
      .def("add_profile", &Sib::add_profile, py::arg("key"), py::arg("sample"))
      .def("fit_all", &Sib::fit_all)
      .def_static("load", &Sib::load, py::arg("path"))
      .def("save", &Sib::save, py::arg("path"));

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("layers", &ModelConfig::layers)
      .def_readwrite("hidden_dim", &ModelConfig::hidden_dim)
      .def_readwrite("kv_heads", &ModelConfig::kv_heads)
      .def_readwrite("bytes_per_element", &ModelConfig::bytes_per_element)
      .def_readwrite("max_context", &ModelConfig::max_context);

  m.def("kv_bytes_per_token", &kv_bytes_per_token, py::arg("model"),
        "Bytes of KV cache one token occupies: key and value, all layers");

  py::class_<SimConfig>(m, "SimConfig")
      .def(py::init<>())
      .def_readwrite("instances", &SimConfig::instances)
      .def_readwrite("kv_capacity", &SimConfig::kv_capacity)
      .def_readwrite("instances_per_node", &SimConfig::instances_per_node)
      .def_readwrite("bandwidth_tokens_per_ms",
                     &SimConfig::bandwidth_tokens_per_ms)
      .def_readwrite("model", &SimConfig::model)
      .def_readwrite("instance_tp", &SimConfig::instance_tp)
      .def_readwrite("scan_window", &SimConfig::scan_window)
      .def_readwrite("enable_scale_up", &SimConfig::enable_scale_up)
      .def_readwrite("cold_start_avg_lat_ms", &SimConfig::cold_start_avg_lat_ms)
      .def_readwrite("policy", &SimConfig::policy)
      .def_readwrite("slo_scale", &SimConfig::slo_scale)
      .def_readwrite("slo_abs_ms", &SimConfig::slo_abs_ms)
      .def_readwrite("exact_output_reservation",
                     &SimConfig::exact_output_reservation)
      .def_readwrite("charge_overlapped_comm",
                     &SimConfig::charge_overlapped_comm)
      .def_readwrite("sib_path", &SimConfig::sib_path)
      .def_readwrite("seed", &SimConfig::seed)
      .def("validate", &SimConfig::validate);

  m.def("load_config", &load_config, py::arg("path"));

  py::class_<PolicyConfig>(m, "PolicyConfig")
      .def(py::init<>())
      .def_readwrite("kind", &PolicyConfig::kind)
      .def_readwrite("dop", &PolicyConfig::dop)
      .def_readwrite("copies", &PolicyConfig::copies)
      .def_readwrite("chunk_size", &PolicyConfig::chunk_size)
      .def_readwrite("prefill_instances", &PolicyConfig::prefill_instances)
      .def_readwrite("decode_instances", &PolicyConfig::decode_instances)
      .def("__repr__", [](const PolicyConfig& c) {
        return "PolicyConfig('" + policy_to_string(c) + "')";
      });

  m.def("parse_policy", &parse_policy, py::arg("text"));
  m.def("policy_to_string", &policy_to_string, py::arg("policy"));

  py::class_<Event>(m, "Event")
      .def_readonly("time_ms", &Event::time_ms)
      .def_property_readonly(
          "kind", [](const Event& e) { return event_kind_name(e.kind); })
      .def_readonly("request", &Event::request)
      .def_readonly("group", &Event::group)
      .def_readonly("tokens", &Event::tokens)
      .def_readonly("detail", &Event::detail)
      .def("__eq__", [](const Event& a, const Event& b) { return a == b; })
      .def("__repr__", [](const Event& e) {
        std::ostringstream os;
        os << "Event(time_ms=" << e.time_ms << ", kind='"
           << event_kind_name(e.kind) << "', request=" << e.request << ")";
        return os.str();
      });

  py::class_<EventLog>(m, "EventLog")
      .def(py::init<>())
      .def("events", &EventLog::events,
           py::return_value_policy::reference_internal)
      .def("__len__", &EventLog::size)
      .def("save", &EventLog::save, py::arg("path"))
      .def_static("load", &EventLog::load, py::arg("path"));

  py::class_<LatencyStats>(m, "LatencyStats")
      .def_readonly("mean", &LatencyStats::mean)
      .def_readonly("p50", &LatencyStats::p50)
      .def_readonly("p90", &LatencyStats::p90)
      .def_readonly("p99", &LatencyStats::p99)
      .def("__repr__", [](const LatencyStats& s) {
        std::ostringstream os;
        os << "LatencyStats(mean=" << s.mean << ", p50=" << s.p50
           << ", p90=" << s.p90 << ", p99=" << s.p99 << ")";
        return os.str();
      });

  py::class_<MetricsParams>(m, "MetricsParams")
      .def(py::init<>())
      .def_readwrite("instance_tp", &MetricsParams::instance_tp)
      .def_readwrite("slo_scale", &MetricsParams::slo_scale)
      .def_readwrite("slo_abs_ms", &MetricsParams::slo_abs_ms);

  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("submitted", &MetricsReport::submitted)
      .def_readonly("finished", &MetricsReport::finished)
      .def_readonly("rejected", &MetricsReport::rejected)
      .def_readonly("evictions", &MetricsReport::evictions)
      .def_readonly("per_token_e2e", &MetricsReport::per_token_e2e)
      .def_readonly("norm_input", &MetricsReport::norm_input)
      .def_readonly("norm_output", &MetricsReport::norm_output)
      .def_readonly("tokens_per_s", &MetricsReport::tokens_per_s)
      .def_readonly("requests_per_s", &MetricsReport::requests_per_s)
      .def_readonly("slo_attainment", &MetricsReport::slo_attainment)
      .def_readonly("offered_rate_per_s", &MetricsReport::offered_rate_per_s);

  py::class_<RunOutput>(m, "RunOutput")
      .def_readonly("log", &RunOutput::log)
      .def_readonly("report", &RunOutput::report);

  m.def("run_simulation", &run_simulation, py::arg("config"), py::arg("trace"),
        "Run a trace through a fresh engine; returns the event log and report");
  m.def("compute_metrics", &compute_metrics, py::arg("log"), py::arg("sib"),
        py::arg("params"));
  m.def("unloaded_latency_ms", &unloaded_latency_ms, py::arg("input_len"),
        py::arg("output_len"), py::arg("sib"), py::arg("instance_tp"));
  m.def("p90_goodput", &p90_goodput, py::arg("points"),
        "Highest offered rate with attainment >= 0.9, or 0; points are "
        "(rate, attainment)");
  m.def("percentile", &percentile, py::arg("values"), py::arg("p"),
        "Nearest-rank percentile over an unsorted sample, p in (0, 100]");
}
