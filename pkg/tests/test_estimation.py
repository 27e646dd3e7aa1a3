import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from distbeam.estimation import (LOADING, SINC_MIN, CpsdmSet, EstimationError, TadLabeler,
                                 batch_cpsdm, diagonal_loading, estimate_ratf, isotropic_matrix,
                                 label_frames, update_cpsdm)
from distbeam.scene import NodeSpec, SceneConfig, SourceSpec, synthesize
from distbeam.stft import OlsConfig, analyze

from .conftest import random_ratfs

BLOCKS = [np.arange(0, 2), np.arange(2, 5), np.arange(5, 6)]


def _frames(rng, n, K=7, M=6):
    return rng.standard_normal((n, K, M)) + 1j * rng.standard_normal((n, K, M))


def test_single_frame_is_outer_product(rng):
    y = _frames(rng, 1)[0]
    P = CpsdmSet(7, 6).update(y)
    np.testing.assert_allclose(P.data, y[:, :, None] * np.conj(y[:, None, :]), rtol=1e-15, atol=0)
    assert P.frame_count == 1


def test_repeated_frame_cumulative(rng):
    y = _frames(rng, 1)[0]
    P = CpsdmSet(7, 6)
    for _ in range(9):
        update_cpsdm(P, y, True)
    np.testing.assert_allclose(P.data, np.einsum("ki,kj->kij", y, np.conj(y)), atol=1e-12)


def test_cumulative_equals_batch(rng):
    Y = _frames(rng, 50)
    include = rng.random(50) < 0.6
    P = CpsdmSet(7, 6)
    for y, inc in zip(Y, include):
        P.update(y, bool(inc))
    ref = batch_cpsdm(Y, include)
    assert P.frame_count == include.sum()
    assert np.max(np.abs(P.data - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_exponential_recursion(rng):
    Y = _frames(rng, 20)
    P = CpsdmSet(7, 6, averaging="exponential", forgetting=0.9)
    want = None
    for y in Y:
        P.update(y)
        o = np.einsum("ki,kj->kij", y, np.conj(y))
        want = o if want is None else 0.9 * want + 0.1 * o
    np.testing.assert_allclose(P.data, want, atol=1e-12)


def test_excluded_frame_leaves_state(rng):
    Y = _frames(rng, 2)
    P = CpsdmSet(7, BLOCKS, "block_diagonal").update(Y[0])
    before = [d.copy() for d in P.data]
    P.update(Y[1], False)
    assert not P.changed and P.frame_count == 1
    for a, b in zip(before, P.data):
        np.testing.assert_array_equal(a, b)


@given(st.integers(0, 2**31 - 1), st.integers(1, 30))
def test_hermitian_exact_and_blocks_match_full(seed, n):
    Y = _frames(np.random.default_rng(seed), n)
    full = CpsdmSet(7, BLOCKS)
    block = CpsdmSet(7, BLOCKS, "block_diagonal")
    for y in Y:
        full.update(y)
        block.update(y)
    assert np.array_equal(full.data, np.conj(np.swapaxes(full.data, -1, -2)))
    for i in range(3):
        assert np.max(np.abs(full.block(i) - block.block(i))) <= 1e-12 * np.max(np.abs(full.data))
    dense = block.full()
    assert np.all(dense[:, 0, 2:] == 0)


def test_dimension_mismatch_and_bad_modes():
    P = CpsdmSet(7, 6)
    with pytest.raises(EstimationError):
        P.update(np.zeros((7, 5)))
    with pytest.raises(EstimationError):
        CpsdmSet(7, 6, mode="diag")
    with pytest.raises(EstimationError):
        CpsdmSet(7, 6, averaging="median")


def test_diagonal_loading_not_stored(rng):
    y = _frames(rng, 1)[0]
    P = CpsdmSet(7, 6).update(y)
    L = diagonal_loading(P.data)
    tr = np.real(np.trace(P.data, axis1=1, axis2=2)) / 6
    np.testing.assert_array_equal(L, P.data + (LOADING * tr)[:, None, None] * np.eye(6))
    np.testing.assert_allclose(P.data, y[:, :, None] * np.conj(y[:, None, :]), rtol=1e-15, atol=0)
    assert np.all(np.linalg.eigvalsh(L) > 0)


def test_isotropic_matrix_basics(rng):
    mics = rng.uniform(-0.5, 0.5, (6, 3))
    mics[1] = mics[0]
    P = isotropic_matrix(mics, np.arange(513), 16000, 1024)
    assert P.shape == (513, 6, 6)
    np.testing.assert_array_equal(P[:, 0, 1], 1.0)
    np.testing.assert_array_equal(np.diagonal(P, axis1=1, axis2=2), 1.0)
    np.testing.assert_array_equal(P, np.swapaxes(P, 1, 2))
    assert P.min() >= SINC_MIN - 1e-12 and P.max() <= 1.0
    assert isotropic_matrix(mics, 3.5, 16000, 1024).shape == (6, 6)
    with pytest.raises(EstimationError):
        isotropic_matrix(mics, -1, 16000, 1024)


@pytest.mark.parametrize("d, f0, tol", [(0.5091, 333.9, 0.5), (0.02, 8500.0, 10.0)])
def test_isotropic_first_zero(d, f0, tol):
    mics = np.array([[0.0, 0, 0], [d, 0, 0]])
    fs, nfft = 16000.0, 1024

    def entry(freq):
        return isotropic_matrix(mics, freq * nfft / fs, fs, nfft, 340.0)[0, 1]

    root = brentq(entry, 1.0, 1.5 * f0)
    assert abs(root - f0) <= tol


def test_ratf_from_rank_one(rng):
    a = random_ratfs(rng, 9, 5, 1)[0]
    P = 2.5 * np.einsum("ki,kj->kij", a, np.conj(a))
    est, bad = estimate_ratf(P, 0)
    assert not bad.any()
    np.testing.assert_allclose(est, a, atol=1e-10)
    est2, _ = estimate_ratf(P + 0.3 * np.eye(5), 0)
    np.testing.assert_allclose(est2, a, atol=1e-10)
    assert np.all(est2[:, 0] == 1)


def test_ratf_vanishing_reference_flagged():
    a = np.array([[0.0, 1.0, 2.0]], complex)
    P = np.einsum("ki,kj->kij", a, np.conj(a))
    with pytest.warns(RuntimeWarning):
        est, bad = estimate_ratf(P, 0)
    assert bad[0] and np.max(np.abs(est[0])) == pytest.approx(1.0)


def test_ratf_estimate_in_noisy_solo_scene():
    nodes = [NodeSpec(1, [[0, 0, 1], [0.02, 0, 1], [0.04, 0, 1]]),
             NodeSpec(2, [[0.8, 0.3, 1], [0.82, 0.3, 1], [0.84, 0.3, 1]])]
    cfg = SceneConfig(nodes, [SourceSpec([0.4, 1.2, 1.3], "target", {"kind": "white", "seed": 3})],
                      duration=2.0, self_noise_snr=20.0, rng_seed=1)
    y, gt = synthesize(cfg)
    ols = OlsConfig()
    P = CpsdmSet(ols.n_bins, cfg.n_mics)
    for frame in analyze(y, ols):
        P.update(frame)
    est, _ = estimate_ratf(P, cfg.reference_mic)
    k = np.arange(ols.n_bins)
    band = (k * 16000 / 1024 >= 300) & (k * 16000 / 1024 <= 4000)
    true = gt.ratf_target
    cos = np.abs(np.sum(np.conj(est) * true, axis=1)) / (np.linalg.norm(est, axis=1)
                                                        * np.linalg.norm(true, axis=1))
    angle = np.degrees(np.arccos(np.clip(cos, 0, 1)))
    assert np.max(angle[band]) < 5.0


class _GT:
    def __init__(self, flags):
        self.flags = np.asarray(flags)

    def frame_activity(self, ols):
        return self.flags


def test_ideal_tad_reads_ground_truth():
    flags = np.r_[np.zeros(10, bool), np.ones(5, bool)]
    out = label_frames(TadLabeler("ideal"), ols=OlsConfig(), ground_truth=_GT(flags))
    assert not out[:10].any() and out[10:].all()
    with pytest.raises(EstimationError):
        TadLabeler("ideal").label()
    with pytest.raises(EstimationError):
        TadLabeler("oracle")


def test_energy_tad_silence_all_false():
    out = TadLabeler("energy").label(np.zeros(16000), OlsConfig(), 16000)
    assert out.size == OlsConfig().n_frames(16000) and not out.any()


def test_energy_tad_accuracy_at_zero_db():
    nodes = [NodeSpec(1, [[0, 0, 1], [0.02, 0, 1], [0.04, 0, 1]])]
    cfg = SceneConfig(nodes, [SourceSpec([0.5, 0.5, 1.2], "target", {"kind": "speechlike", "seed": 11}),
                              SourceSpec([-0.5, 0.6, 1.2], "interferer", {"kind": "white", "seed": 12})],
                      duration=8.0, self_noise_snr=40.0, rng_seed=2)
    y, gt = synthesize(cfg)
    ols = OlsConfig()
    est = TadLabeler("energy").label(y[cfg.reference_mic], ols, 16000)
    truth = gt.frame_activity(ols)
    assert np.mean(est == truth) >= 0.70
