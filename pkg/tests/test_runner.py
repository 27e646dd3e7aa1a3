import numpy as np
import pytest

from distbeam.config import ExperimentSpec
from distbeam.containers import read_csv
from distbeam.distnet import ledger_check
from distbeam.runner import (METRIC_ORDER, RESULT_HEADER, THREADS_ENV, RunError, check_spec,
                             process, run_experiment, run_seed, sweep, training_ratfs)
from distbeam.scene import synthesize
from distbeam.stft import OlsConfig

GATED = {"preset": "desk", "duration": 1.2,
         "sources": [
             {"position": [0.3, -0.6, 1.3], "role": "target",
              "signal": {"kind": "speechlike", "seed": 3}, "active": [[0.4, 1.2]]},
             {"position": [2.2, 0.2, 1.3], "signal": {"kind": "speechlike", "seed": 4}},
             {"position": [1.2, 2.3, 1.3], "signal": {"kind": "white", "seed": 5}},
         ]}


def _spec(**kw):
    base = dict(scene={"preset": "desk", "duration": 1.0}, beamformer="BDLCMP")
    base.update(kw)
    return ExperimentSpec(**base)


def _same_metrics(a, b):
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_equal(a[k], b[k], err_msg=k)


def _pipeline(spec, seed=0, root_hook=None):
    ols = OlsConfig(**spec.stft)
    scene = spec.scene_config(seed)
    y, gt = synthesize(scene, ols.fft_len, ols.analysis_len)
    a, b = training_ratfs(scene, gt, spec, ols, seed)
    return process(y, scene, gt, spec, a, b, root_hook=root_hook), scene, gt


def test_delay_and_sum_is_distortionless():
    res, scene, gt = _pipeline(_spec(beamformer="DS"))
    r = np.abs(np.sum(np.conj(res.weights) * gt.ratf_target, axis=1))
    np.testing.assert_allclose(r, 1.0, atol=1e-12)
    assert run_experiment(_spec(beamformer="DS"), write=False).exit_status == 0


def test_acyclic_matches_centralized():
    cen, *_ = _pipeline(_spec(mode="centralized"))
    acy, *_ = _pipeline(_spec(mode="acyclic", topology="ring"))
    scale = np.max(np.abs(cen.output))
    assert np.max(np.abs(cen.output - acy.output)) <= 1e-9 * scale
    assert acy.max_residual <= 1e-8


def test_bdlcmv_acyclic_is_silent_while_target_talks():
    spec = _spec(beamformer="BDLCMV", mode="acyclic", scene=GATED, tad={"kind": "ideal"})
    res, scene, gt = _pipeline(spec)
    first = int(np.argmax(~res.tad))
    assert res.tad.any() and (~res.tad).any()
    for beta in range(first + 1, res.tad.size):
        if res.tad[beta]:
            assert not res.recomputed[beta]
            assert res.ledger.per_bin_constant(beta, "weight") == 0
        else:
            assert res.ledger.per_bin_constant(beta, "weight") > 0


def test_cyclic_ledger_per_frame():
    spec = _spec(mode="cyclic", t_max=2, output_t_max=3, scene={"preset": "desk", "duration": 0.6})
    res, scene, gt = _pipeline(spec)
    r = gt.ratf_interferers.shape[0]
    for beta in res.ledger.frames:
        rep = ledger_check(res.ledger, beta, weight_mode="cyclic", output_mode="cyclic",
                           N=scene.n_nodes, K=res.n_leaves, r=r, t_max=2, output_t_max=3)
        assert rep["weight"][0] == 2 * (r + 1) * 5
        assert rep["output"][0] == 3 * 5
        assert rep["ok"]
    assert np.isfinite(res.extra["dual_error"]) and np.isfinite(res.extra["weight_error"])


def test_root_hook_reroots_every_frame():
    roots = []

    def hook(beta):
        roots.append(beta % 5 + 1)
        return roots[-1]

    spec = _spec(mode="acyclic", topology="chain", scene={"preset": "desk", "duration": 0.6})
    res, *_ = _pipeline(spec, root_hook=hook)
    assert len(roots) == res.tad.size
    # re-rooting changes the message schedule but not the answer
    ref, *_ = _pipeline(spec)
    assert np.max(np.abs(res.output - ref.output)) <= 1e-9 * np.max(np.abs(ref.output))


@pytest.mark.parametrize("kw", [
    dict(beamformer="LCMP", mode="acyclic"),
    dict(beamformer="MVDR", tad={"kind": "none"}),
    dict(beamformer="NOPE"),
    dict(mode="gossip"),
    dict(ratf={"source": "guessed"}),
    dict(ratf={"source": "perturbed", "radius": -1}),
    dict(mode="cyclic", t_max=0),
    dict(mode="cyclic", rho=0.0),
    dict(seeds=[]),
])
def test_check_spec_rejects(kw):
    with pytest.raises(RunError):
        check_spec(_spec(**kw))


def test_lcmp_centralized_is_accepted():
    check_spec(_spec(beamformer="LCMP"))


@pytest.mark.parametrize("ratf", [{"source": "estimated"}, {"source": "perturbed", "radius": 0.1}])
def test_training_ratf_sources(ratf):
    spec = _spec(ratf=ratf, scene={"preset": "desk", "duration": 0.6})
    ols = OlsConfig(**spec.stft)
    scene = spec.scene_config(0)
    y, gt = synthesize(scene, ols.fft_len, ols.analysis_len)
    a, b = training_ratfs(scene, gt, spec, ols, 0)
    assert a.shape == gt.ratf_target.shape and b.shape == gt.ratf_interferers.shape
    np.testing.assert_allclose(a[:, scene.reference_mic], 1.0, atol=1e-12)
    assert not np.allclose(a, gt.ratf_target)
    a2, _ = training_ratfs(scene, gt, spec, ols, 0)
    np.testing.assert_array_equal(a, a2)


def test_result_and_ledger_csv(tmp_path):
    spec = _spec(mode="acyclic", seeds=[0, 1], scene={"preset": "desk", "duration": 0.6},
                 outputs={"results_csv": str(tmp_path / "r.csv"),
                          "ledger_csv": str(tmp_path / "l.csv"), "audio": str(tmp_path / "o.wav")})
    out = run_experiment(spec)
    rows = read_csv(tmp_path / "r.csv")
    assert list(rows[0]) == RESULT_HEADER
    assert len(rows) == 3 * len(METRIC_ORDER)
    assert {r["failures"] for r in rows} == {"0"}
    mean = {r["metric"]: float(r["value"]) for r in rows if r["seed"] == "mean"}
    g = [rec.metrics["ssnr_gain"] for rec in out.records]
    assert mean["ssnr_gain"] == pytest.approx(np.mean(g), rel=1e-8)
    led = read_csv(tmp_path / "l.csv")
    assert list(led[0]) == ["seed", "frame", "bin", "phase", "algorithm", "scalars"]
    assert {r["bin"] for r in led} == {"-1"}
    assert (tmp_path / "o_seed0.wav").exists() and (tmp_path / "o_seed1.wav").exists()


def test_threads_do_not_change_results(monkeypatch):
    spec = _spec(seeds=[0, 1], scene={"preset": "desk", "duration": 0.6})
    one = run_experiment(spec, write=False)
    monkeypatch.setenv(THREADS_ENV, "2")
    two = run_experiment(spec, write=False)
    for a, b in zip(one.records, two.records):
        np.testing.assert_array_equal(a.result.output, b.result.output)


def test_sweep_single_value_matches_run():
    spec = _spec(mode="acyclic", scene={"preset": "desk", "duration": 0.6})
    s = sweep(spec, "perturbation_radius", [0.1], seeds=[2])
    r = run_experiment(spec.replace(ratf={"source": "perturbed", "radius": 0.1}, seeds=[2]),
                       write=False)
    np.testing.assert_array_equal(s.records[0].result.output, r.records[0].result.output)
    _same_metrics(s.records[0].metrics, r.records[0].metrics)


def test_sweep_mean_rows(tmp_path):
    spec = _spec(mode="hybrid", scene={"preset": "desk", "duration": 0.5})
    sweep(spec, "topology", ["ring", "chain"], seeds=[0, 1], out_csv=tmp_path / "s.csv")
    rows = read_csv(tmp_path / "s.csv")
    for topo in ("ring", "chain"):
        per = [float(r["value"]) for r in rows
               if r["axis_value"] == topo and r["metric"] == "ssnr_gain" and r["seed"] != "mean"]
        mean = [float(r["value"]) for r in rows
                if r["axis_value"] == topo and r["metric"] == "ssnr_gain" and r["seed"] == "mean"]
        assert len(per) == 2 and mean[0] == pytest.approx(np.mean(per), rel=1e-8)
    with pytest.raises(RunError):
        sweep(spec, "fft_len", [512])


def test_run_seed_is_deterministic():
    spec = _spec(scene={"preset": "desk", "duration": 0.6})
    a, b = run_seed(spec, 3), run_seed(spec, 3)
    _same_metrics(a.metrics, b.metrics)


@pytest.mark.slow
def test_tmax_sweep_dual_error_monotone():
    """More PDMM iterations per frame should never leave the iterate further from the solve."""
    spec = _spec(mode="hybrid", topology="ring", scene={"preset": "desk", "duration": 0.5})
    s = sweep(spec, "t_max", list(range(1, 51)), seeds=[0])
    d = np.array([rec.metrics["dual_error"] for rec in s.records])
    assert d[-1] < 0.1 * d[0]
    assert np.all(np.diff(d) <= 0), f"increases at t_max {np.flatnonzero(np.diff(d) > 0) + 2}"
