import csv
import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multicontinuum import experiments
from multicontinuum.experiments import (
    ConfigError, ErrorReport, ExperimentConfig, StageError, error_from_averages, format_table, load_config,
    case_grid, parse_eps, relative_error, run_case, sweep,
)


def small(tmp_path, **kw):
    base = dict(eps=Fraction(1, 4), n_fine=20, layers=1, out=str(tmp_path / "run"))
    base.update(kw)
    return ExperimentConfig(**base)


# ------------------------------------------------------------ error metric

def test_two_block_arithmetic():
    ref = np.array([1.0, 2.0])
    mac = np.array([1.1, 1.9])
    mask = np.array([True, True])
    assert error_from_averages(mac, ref, mask) == pytest.approx(np.sqrt(0.02 / 5), rel=1e-12)
    assert error_from_averages(mac, ref, mask, "ratio") == pytest.approx(0.02 / 5, rel=1e-12)
    assert np.sqrt(0.02 / 5) == pytest.approx(0.0632, abs=1e-4)


def test_trivial_errors():
    ref = np.array([1.0, -2.0, 3.0])
    mask = np.ones(3, bool)
    assert error_from_averages(ref.copy(), ref, mask) == 0.0
    assert error_from_averages(np.zeros(3), ref, mask) == 1.0
    with pytest.raises(ZeroDivisionError):
        error_from_averages(ref, np.zeros(3), mask)


def test_absent_blocks_skipped():
    ref = np.array([1.0, np.nan, 2.0])
    mac = np.array([1.1, 123.0, 1.9])
    assert error_from_averages(mac, ref, np.array([True, False, True])) == pytest.approx(np.sqrt(0.02 / 5))


@given(st.floats(-1, 1), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_shift_changes_error_by_formula(delta, seed):
    """Shifting only U is not invariant; the change follows the arithmetic."""
    rng = np.random.default_rng(seed)
    ref = rng.uniform(0.5, 2.0, 8)
    mac = ref + rng.normal(scale=0.1, size=8)
    mask = np.ones(8, bool)
    d = mac - ref
    expect = np.sum((d + delta) ** 2) / np.sum(ref ** 2)
    assert error_from_averages(mac + delta, ref, mask, "ratio") == pytest.approx(expect, rel=1e-12, abs=1e-15)


# ------------------------------------------------------------ config

def test_parse_eps():
    assert parse_eps("1/20") == Fraction(1, 20)
    assert parse_eps(0.1) == Fraction(1, 10)
    with pytest.raises(ConfigError):
        parse_eps(None)


@pytest.mark.parametrize("bad", [
    dict(structure_id=3), dict(kappa="two"), dict(eps="2/5"), dict(layers=-1),
    dict(n_fine=30), dict(convention="log"), dict(center="x"),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad)


def test_config_roundtrip(tmp_path):
    c = ExperimentConfig(structure_id=2, kappa="sine", eps="1/20", layers=2)
    assert ExperimentConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"structure_id": 2, "eps": "1/20"}))
    assert load_config(path)["eps"] == "1/20"
    path.write_text(json.dumps({"nested": {"a": 1}}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_case_grid_counts():
    assert len(case_grid()) == 36
    assert len({(c.structure_id, c.kappa) for c in case_grid()}) == 4


# ------------------------------------------------------------ run_case

@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("case")
    cfg = small(out)
    report = run_case(cfg)
    return cfg, report


def test_outputs_written(run_dir):
    cfg, report = run_dir
    out = Path(cfg.out)
    for name in ("manifest.json", "errors.csv", "coefficients.csv", "fields_ref.csv", "fields_macro.csv",
                 "averages.csv", "geometry.csv"):
        assert (out / name).is_file(), name
    rows = list(csv.DictReader(open(out / "errors.csv")))
    assert list(rows[0]) == ["structure", "kappa", "eps", "l", "e1", "e2"]
    assert float(rows[0]["e1"]) == report.e1 >= 0 and float(rows[0]["e2"]) == report.e2 >= 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["error_convention"] == "sqrt" and man["grad_load"] is True
    assert len(man["errors_with_grad_load_flipped"]) == 2
    assert ExperimentConfig.from_dict(man["config"]) == cfg
    coef = list(csv.reader(open(out / "coefficients.csv")))
    assert len(coef[0]) == 1 + 4 + 8 + 8 + 16 + 2 + 4 and len(coef) == 1 + 16


def test_relative_error_objects_agree(run_dir):
    cfg, report = run_dir
    rep, art = experiments.compute_case(cfg)
    for i in (1, 2):
        assert relative_error(art["macro"], art["reference"], i) == report.errors[i - 1]


def test_determinism(run_dir, tmp_path):
    cfg, _ = run_dir
    cfg2 = ExperimentConfig.from_dict({**cfg.to_dict(), "out": str(tmp_path / "again")})
    run_case(cfg2)
    for name in ("errors.csv", "coefficients.csv", "fields_ref.csv", "fields_macro.csv", "averages.csv"):
        assert (Path(cfg.out) / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_failure_removes_partial_outputs(tmp_path, monkeypatch):
    cfg = small(tmp_path)

    def boom(*a, **k):
        raise RuntimeError("disk full")

    monkeypatch.setattr(experiments, "write_macro_fields", boom)
    with pytest.raises(RuntimeError):
        run_case(cfg)
    assert not Path(cfg.out).exists()


def test_stage_tagged_error(tmp_path, monkeypatch):
    def singular(*a, **k):
        raise ValueError("degenerate")

    monkeypatch.setattr(experiments, "upscale", singular)
    with pytest.raises(StageError) as info:
        run_case(small(tmp_path))
    assert info.value.stage == "cell_problems"


def test_failed_report_refuses_serialization(tmp_path):
    rep = ErrorReport(config=small(tmp_path), errors=(0.1, 0.2), failed_stage="macro")
    with pytest.raises(RuntimeError):
        rep.error_row()


def test_basis_dump(tmp_path):
    cfg = small(tmp_path, layers=0, dump_basis=True)
    run_case(cfg)
    files = sorted((Path(cfg.out) / "basis").iterdir())
    assert len(files) == 16
    header = files[0].read_text().splitlines()[0]
    assert header.startswith("x1,x2,phi1,phi2")


# ------------------------------------------------------------ sweep

def test_sweep_empty():
    with pytest.raises(ConfigError):
        sweep([], "nowhere")


def test_sweep_with_failure(tmp_path, monkeypatch):
    real = experiments.upscale

    def flaky(mesh, kappa, f, l, **kw):
        if mesh.structure_id == 2:
            raise RuntimeError("injected")
        return real(mesh, kappa, f, l, **kw)

    monkeypatch.setattr(experiments, "upscale", flaky)
    configs = [small(tmp_path, structure_id=s, kappa=k, layers=l)
               for s in (1, 2) for k in ("one", "sine") for l in (0, 1)]
    reports, failures = sweep(configs, tmp_path / "sw")
    assert len(reports) == 4 and len(failures) == 4
    tables = sorted(p.name for p in (tmp_path / "sw").glob("table_*.txt"))
    assert tables == ["table_s1_one.txt", "table_s1_sine.txt"]
    assert (tmp_path / "sw" / "failures.log").read_text().count("injected") == 4
    rows = list(csv.DictReader(open(tmp_path / "sw" / "errors.csv")))
    assert len(rows) == 4


def test_format_table(run_dir):
    _, report = run_dir
    text = format_table([report], 1, "one")
    assert "eps=1/4" in text and f"{report.e1:.2e}" in text
