import math
from fractions import Fraction

import numpy as np
import pytest

from eikograph.harness import (ConfigError, ConvergenceTable, MCReport, SweepConfig, config_hash,
                               emit_report, fit_rate, header_line, mc_cover_probability,
                               run_convergence, theoretical_exponent, write_errors_csv)
from eikograph.manifold import BoundarySpec, ManifoldSpec
from eikograph.reference import ErrorRecord

S2 = ManifoldSpec.sphere(2, 1.0)
CAP = BoundarySpec.cap([0, 0, 1.0], 0.3)


def small_sweep(**kw):
    base = dict(manifold=S2.to_dict(), boundary=CAP.to_dict(), n_list=[200, 400],
                trials_per_n=2, K1=29.65, T=1.0)
    base.update(kw)
    return SweepConfig(**base)


def test_sweep_validation():
    with pytest.raises(ConfigError):
        small_sweep(n_list=[400, 200])
    with pytest.raises(ConfigError):
        small_sweep(n_list=[200, 200])
    with pytest.raises(ConfigError):
        small_sweep(trials_per_n=0)
    with pytest.raises(ConfigError):
        small_sweep(zeta=0.0)
    with pytest.raises(ConfigError):
        small_sweep(epsilons=[0.5])
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({**small_sweep().to_dict(), "colour": "red"})
    assert SweepConfig.from_dict(small_sweep().to_dict()) == small_sweep()


def test_theoretical_exponent_is_rational():
    assert theoretical_exponent(0.5, 0.5, 0.5, 2) == Fraction(1, 6)
    assert theoretical_exponent(0.25, 2, 1, 3) == Fraction(1, 4) / (Fraction(5, 4) * 3)
    assert small_sweep().theoretical_exponent() == Fraction(1, 6)


def test_fit_synthetic_exponent():
    ns = [500, 2000, 8000, 32000]
    groups = {n: [3.0 * (math.log(n) / n) ** (1 / 6)] * 3 for n in ns}
    slope, ci = fit_rate(groups)
    assert slope == pytest.approx(1 / 6, abs=1e-12)
    assert ci[0] == pytest.approx(1 / 6, abs=1e-12) and ci[1] == pytest.approx(1 / 6, abs=1e-12)


def test_fit_two_points_closed_form():
    e = 0.8
    slope, _ = fit_rate({100: [e], 1000: [e / 2]})
    x = [math.log(math.log(n) / n) for n in (100, 1000)]
    assert slope == pytest.approx(math.log(2) / (x[0] - x[1]), rel=1e-12)


def test_fit_degenerate_inputs():
    slope, _ = fit_rate({100: [0.3, 0.3], 1000: [0.3, 0.3]})
    assert slope == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_rate({100: [0.3]})
    with pytest.raises(ValueError):
        fit_rate({100: [0.3], 1000: [0.0]})


def test_fit_bootstrap_brackets_noisy_slope():
    rng = np.random.default_rng(0)
    groups = {n: list((math.log(n) / n) ** 0.3 * np.exp(rng.normal(0, 0.05, 8)))
              for n in (300, 1000, 3000, 10000)}
    slope, (lo, hi) = fit_rate(groups, seed=3)
    assert lo <= slope <= hi and lo < 0.3 < hi
    assert fit_rate(groups, seed=3) == (slope, (lo, hi))


def test_small_sweep_runs_and_fits():
    t = run_convergence(small_sweep())
    assert len(t.records) == 4 and not t.failures
    assert set(t.group_stats()) == {200, 400}
    assert t.fitted_slope is not None and t.slope_ci[0] <= t.fitted_slope <= t.slope_ci[1]
    for r in t.records:
        assert r.dt <= r.epsilon ** 1.5 and r.sup_error > 0
        assert r.seed in (0, 1)


def test_singleton_sweep_flags_slope():
    t = run_convergence(small_sweep(n_list=[200], trials_per_n=1))
    assert len(t.group_stats()) == 1 and t.fitted_slope is None
    assert "two groups" in t.fit_note


def test_failed_trials_are_quarantined():
    # a single anchor and a tiny epsilon: no vertex lands within the boundary threshold
    pole = BoundarySpec.point_set([[0, 0, 1.0]])
    sweep = small_sweep(boundary=pole.to_dict(), epsilons=[0.05, 0.05], dts=[0.01, 0.01])
    t = run_convergence(sweep)
    assert len(t.failures) == 4 and not t.records
    assert all("empty boundary" in f["reason"] for f in t.failures)
    assert t.fitted_slope is None


def test_matched_overrides_and_threads():
    a = run_convergence(small_sweep(epsilons=[0.9, 0.7], dts=[0.1, 0.05]))
    assert a.epsilons == {200: 0.9, 400: 0.7}
    b = run_convergence(small_sweep(epsilons=[0.9, 0.7], dts=[0.1, 0.05], threads=2))
    assert [r.sup_error for r in a.records] == [r.sup_error for r in b.records]


def test_nonuniform_potential_uses_shortest_path_oracle():
    sweep = small_sweep(n_list=[300], trials_per_n=1, T=6.0, epsilons=[0.6], dts=[0.1],
                        potential={"id": "bump", "params": {"center": [1, 0, 0], "width": 0.5,
                                                            "height": 1.0, "base": 1.0}})
    t = run_convergence(sweep)
    assert len(t.records) == 1 and 0 < t.records[0].sup_error < 1.0


def test_mc_trivial_cases():
    d = S2.diameter()
    full = mc_cover_probability(S2, CAP, 2000, 50, 0.5, 1.0, 1.0, a=0.5,
                                epsilon=(8 * d / 0.5) ** (1 / 1.5))
    assert full.cover_frequency == 1.0
    none = mc_cover_probability(S2, CAP, 5, 50, 0.5, 1.0, 1.0, a=0.5, epsilon=0.01)
    assert none.cover_frequency == 0.0 and none.hausdorff_frequency == 0.0
    assert 0 <= none.cover_frequency <= 1
    with pytest.raises(ValueError):
        mc_cover_probability(S2, CAP, 100, 10, 0.5, 1.0, 1.0)


def empty_table():
    return ConvergenceTable([], [], {}, {}, 29.65, small_sweep())


def test_emit_empty_table(tmp_path):
    files = emit_report(empty_table(), tmp_path, "csv", "# eikograph 0 abc")
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert lines == ["# eikograph 0 abc", "n,seed,epsilon,dt,sup_error,boundary_hausdorff"]
    assert "zero rows" in (tmp_path / "summary.txt").read_text()
    assert len(files) == 2


def test_emit_populated_and_deterministic(tmp_path):
    t = run_convergence(small_sweep())
    emit_report(t, tmp_path / "a", "csv")
    emit_report(t, tmp_path / "b", "csv")
    emit_report(t, tmp_path / "j", "json")
    rows = (tmp_path / "a" / "convergence.csv").read_text().splitlines()
    assert len(rows) - 1 == 2 * 2
    for name in ("convergence.csv", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = (tmp_path / "a" / "summary.txt").read_text()
    assert "theoretical_exponent = 1/6" in summary and "fitted_slope" in summary
    assert "medians_decreasing:" in summary and "C_eta" in summary
    assert (tmp_path / "j" / "convergence.json").exists()


def test_emit_errors(tmp_path):
    with pytest.raises(ValueError):
        emit_report(empty_table(), tmp_path, "xml")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(empty_table(), blocker / "sub", "csv")


def test_emit_mc_report(tmp_path):
    rep = MCReport(2000, 200, 0.97, 1.0, 1.88)
    emit_report(rep, tmp_path, "csv", "# h")
    lines = (tmp_path / "mc_cover.csv").read_text().splitlines()
    assert lines[0] == "# h" and lines[1].startswith("n,trials,cover_frequency")


def test_errors_csv_layout(tmp_path):
    recs = [ErrorRecord(100, 0.5, 0.1, 0.2, 0.01, 1.23, 7)]
    write_errors_csv(recs, tmp_path / "e.csv", "# eikograph 0.1.0 abc")
    write_errors_csv(recs, tmp_path / "e.csv", "# eikograph 0.1.0 abc")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[1] == "n,epsilon,dt,sup_error,boundary_hausdorff,runtime_seconds,seed"
    assert len(lines) == 4 and lines[2] == "100,0.5,0.1,0.2,0.01,,7"
    write_errors_csv(recs, tmp_path / "r.csv", record_runtime=True)
    assert (tmp_path / "r.csv").read_text().splitlines()[1] == "100,0.5,0.1,0.2,0.01,1.23,7"


def test_header_line():
    cfg = {"b": 1, "a": [1, 2]}
    assert header_line(cfg) == header_line({"a": [1, 2], "b": 1})
    assert header_line(cfg).startswith("# eikograph ") and config_hash(cfg) in header_line(cfg)
