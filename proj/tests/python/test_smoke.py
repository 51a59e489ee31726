"""Smoke tests for the python bindings: one pass over every exposed surface."""

from pathlib import Path

import pytest

import espsim

ROOT = Path(__file__).resolve().parents[2]
DEFAULT_SIB = ROOT / "configs" / "default_sib.jsonl"
DEFAULT_INI = ROOT / "configs" / "default.ini"
EXAMPLE_TRACE = ROOT / "configs" / "example_trace.jsonl"


def make_sib(max_dop=4):
    sib = espsim.Sib()
    for d in range(1, max_dop + 1):
        rec = espsim.StrategyRecord()
        rec.key = espsim.StrategyKey(dop=d, tp=1)
        prefill = espsim.CostCoefficients()
        prefill.alpha = 4.0 + 1.0 * d
        prefill.beta = 0.08 / d
        prefill.gamma = 4.8e-8 / d
        rec.prefill = prefill
        decode = espsim.DecodeCoefficients()
        decode.alpha = 4.0 + 0.8 * d
        decode.beta = 0.06
        decode.gamma = 2e-5
        decode.compute_bound_batch_threshold = 64
        rec.decode = decode
        rec.tipping_ms = 60000.0 / d
        sib.put(rec)
    return sib


def small_config():
    config = espsim.SimConfig()
    config.instances = 4
    config.kv_capacity = 200000
    config.bandwidth_tokens_per_ms = 800
    config.sib_path = str(DEFAULT_SIB)
    config.policy = "esp"
    return config


def test_kv_footprint():
    model = espsim.ModelConfig()
    model.layers = 32
    model.hidden_dim = 4096
    model.bytes_per_element = 2
    assert espsim.kv_bytes_per_token(model) == 524288


def test_gen_trace_deterministic():
    a = espsim.gen_trace("mixed", 2.0, 50, seed=7)
    b = espsim.gen_trace("mixed", 2.0, 50, seed=7)
    assert len(a) == 50
    assert a == b
    assert all(r.arrival_ms <= s.arrival_ms for r, s in zip(a, a[1:]))
    with pytest.raises(espsim.ConfigError):
        espsim.gen_trace("nosuchdist", 2.0, 10, seed=1)


def test_trace_round_trip(tmp_path):
    trace = espsim.gen_trace("sharegpt", 5.0, 20, seed=3)
    path = tmp_path / "trace.jsonl"
    espsim.save_trace(trace, str(path))
    assert espsim.load_trace(str(path)) == trace
    assert len(espsim.load_trace(str(EXAMPLE_TRACE))) == 5


def test_run_simulation_and_metrics(tmp_path):
    config = small_config()
    trace = espsim.gen_trace("sharegpt", 2.0, 50, seed=5)
    out = espsim.run_simulation(config, trace)
    assert out.report.submitted == 50
    assert out.report.finished + out.report.rejected == 50
    assert out.report.finished > 0
    assert len(out.log) > 0
    kinds = {e.kind for e in out.log.events()}
    assert {"arrival", "prefill_start", "prefill_end", "finish"} <= kinds

    log_path = tmp_path / "events.jsonl"
    out.log.save(str(log_path))
    reloaded = espsim.EventLog.load(str(log_path))
    assert len(reloaded) == len(out.log)

    params = espsim.MetricsParams()
    params.instance_tp = config.instance_tp
    params.slo_scale = config.slo_scale
    report = espsim.compute_metrics(reloaded, espsim.Sib.load(str(DEFAULT_SIB)), params)
    assert report.finished == out.report.finished
    assert report.slo_attainment == pytest.approx(out.report.slo_attainment)
    assert report.norm_output.mean == pytest.approx(out.report.norm_output.mean)


def test_run_simulation_deterministic():
    config = small_config()
    trace = espsim.gen_trace("mixed", 1.0, 40, seed=11)
    a = espsim.run_simulation(config, trace)
    b = espsim.run_simulation(config, trace)
    assert a.log.events() == b.log.events()


def test_policy_parsing():
    for text in ["esp", "static-tp", "static-hybrid:2", "replicated:2x2",
                 "chunked:2048", "disagg:3+1"]:
        assert espsim.policy_to_string(espsim.parse_policy(text)) == text
    spec = espsim.parse_policy("disagg:3+1")
    assert spec.kind == "disagg"
    assert spec.prefill_instances == 3
    assert spec.decode_instances == 1
    with pytest.raises(espsim.ConfigError):
        espsim.parse_policy("bogus")


def test_load_config():
    config = espsim.load_config(str(DEFAULT_INI))
    assert config.instances == 4
    assert config.kv_capacity == 200000
    assert config.policy == "esp"
    assert config.slo_scale == 25.0


def test_sib_fit_recovers_coefficients(tmp_path):
    truth = make_sib(2)
    sib = espsim.Sib()
    key = espsim.StrategyKey(dop=2, tp=1)
    lengths = [[1000], [5000, 9000], [20000], [400, 70000], [12000, 3000, 52000]]
    for lens in lengths:
        sample = espsim.ProfileSample()
        sample.lengths = lens
        sample.measured_ms = truth.prefill_time(lens, key)
        sib.add_profile(key, sample)
    sib.fit_all()
    fitted = sib.record(key).prefill
    assert fitted.alpha == pytest.approx(4.0 + 2.0, rel=1e-6)
    assert fitted.beta == pytest.approx(0.08 / 2, rel=1e-6)
    assert fitted.gamma == pytest.approx(4.8e-8 / 2, rel=1e-6)

    path = tmp_path / "sib.jsonl"
    sib.save(str(path))
    assert espsim.Sib.load(str(path)).has(key)


def test_cost_model_queries():
    sib = make_sib(4)
    key = espsim.StrategyKey(dop=2, tp=1)
    assert sib.prefill_time([1000, 2000], key) == pytest.approx(
        6.0 + 0.04 * 3000 + 2.4e-8 * (1000**2 + 2000**2))
    assert sib.decode_time(8, 10000, key) > 0
    assert sib.tipping_point_ms(key) == pytest.approx(30000.0)
    assert espsim.unloaded_latency_ms(1000, 4, sib, 1) > 0
    with pytest.raises(espsim.UnknownStrategyError):
        espsim.unloaded_latency_ms(1000, 4, sib, 9)


def test_metrics_helpers():
    values = [float(v) for v in range(1, 11)]
    assert espsim.percentile(values, 50) == 5.0
    assert espsim.percentile(values, 90) == 9.0
    assert espsim.p90_goodput([(0.5, 0.99), (1.0, 0.95), (2.0, 0.5)]) == 1.0
    assert espsim.p90_goodput([(0.5, 0.2)]) == 0.0
