import json
import math
import os
import pathlib

import numpy as np
import pytest

import tvmpc

ROOT = pathlib.Path(os.environ.get("TVMPC_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))
TB_CONFIG = str(ROOT / "configs" / "token_bucket.json")
ACT_CONFIG = str(ROOT / "configs" / "actuator.json")


@pytest.fixture(scope="module")
def tb():
    cfg = tvmpc.load_config(TB_CONFIG)
    return cfg, tvmpc.synthesize(cfg)


def test_models():
    a, b = tvmpc.batch_reactor(0.1)
    assert a.shape == (4, 4) and b.shape == (4, 2)
    assert tvmpc.spectral_radius(a) > 1.0
    a2, b2 = tvmpc.two_batch_reactors(0.1)
    assert a2.shape == (8, 8) and b2.shape == (8, 4)
    ad, bd = tvmpc.zoh_discretize(np.array([[0.0]]), np.array([[1.0]]), 0.5)
    assert ad[0, 0] == pytest.approx(1.0) and bd[0, 0] == pytest.approx(0.5)


def test_bucket_trajectory():
    levels, bad = tvmpc.bucket_trajectory(22, [1, 0, 0], 1, 8, 22)
    assert list(levels) == [22, 15, 16, 17]
    assert bad == -1
    _, bad = tvmpc.bucket_trajectory(0, [1], 1, 8, 22)
    assert bad == 0
    assert tvmpc.wrap_phase(-1, 8) == 7


def test_config_errors_name_the_field():
    with pytest.raises(tvmpc.ConfigError, match="network"):
        tvmpc.parse_config(json.dumps({"plant": {"fixture": "walsh_batch_reactor"}}))
    with pytest.raises(tvmpc.ConfigError):
        tvmpc.load_config(str(ROOT / "does_not_exist.json"))


def test_synthesize_and_simulate(tb):
    cfg, cert = tb
    assert cfg.kind == "token_bucket" and cert.period == cfg.period == 8
    assert min(cert.margins) > 0.0
    assert len(cert.P) == 8 and all(np.all(np.linalg.eigvalsh(p) > 0) for p in cert.P)
    trace = tvmpc.simulate(cfg, cert, steps=20, seed=1)
    assert len(trace) == 21
    cols = trace.as_dict()
    assert set(trace.columns) == set(cols)
    assert np.all(cols["beta"] >= 0) and np.all(cols["beta"] <= 22)
    report = tvmpc.check_certificates(trace, cert, cfg)
    assert report["passed"], report["messages"]
    again = tvmpc.trace_from_csv(trace.to_csv())
    assert again.to_csv() == trace.to_csv()


def test_single_solve(tb):
    cfg, cert = tb
    state = tvmpc.TokenBucketState(np.array([1.0, 0.0, 1.0, 0.0]), np.zeros(2), 22)
    sol = tvmpc.solve_token_bucket(cfg, cert, state, 0)
    assert sol["feasible"] and math.isfinite(sol["value"])
    assert len(sol["schedule"]) == cfg.horizon


def test_benchmark(tb):
    cfg, cert = tb
    rows = tvmpc.benchmark(cfg, cert, horizons=[2, 8], repetitions=1)
    assert [(r["mode"], r["N"]) for r in rows] == [("time_varying", 2), ("multi_step", 8), ("time_varying", 8)]
    assert all(r["feasible"] for r in rows)


def test_actuator_roundtrip(tmp_path):
    cfg = tvmpc.load_config(ACT_CONFIG)
    cert = tvmpc.synthesize(cfg)
    path = tmp_path / "cert.json"
    path.write_text(cert.to_json(cfg))
    cert2, cfg2 = tvmpc.load_certificate(str(path))
    assert cert2.parameter_hash == cert.parameter_hash and cfg2.kind == "actuator"
    trace = tvmpc.simulate(cfg2, cert2, steps=5)
    assert len(trace) == 6
    assert tvmpc.check_certificates(trace, cert2, cfg2)["passed"]


def test_cli_exit_codes(tmp_path):
    cert = tmp_path / "c.json"
    assert tvmpc.cli_main(["synthesize", TB_CONFIG, "-o", str(cert)]) == 0
    assert tvmpc.cli_main(["synthesize", str(tmp_path / "missing.json"), "-o", str(cert)]) == 1
