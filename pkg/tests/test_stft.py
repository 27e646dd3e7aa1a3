import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distbeam.stft import OlsAnalyzer, OlsConfig, OlsError, OlsSynthesizer, analyze, synthesize_output

CFG = OlsConfig()


def _passthrough(x, cfg=CFG, ref=0):
    Y = analyze(x, cfg)
    return synthesize_output(Y[:, :, ref], cfg, x.shape[-1])


def test_defaults():
    assert (CFG.frame_len, CFG.analysis_len, CFG.hop, CFG.fft_len, CFG.n_bins) == (400, 800, 200, 1024, 513)
    assert OlsConfig.for_rate(16000) == CFG
    for bad in ((401, 1024), (400, 1000), (600, 1024)):
        with pytest.raises(OlsError):
            OlsConfig(*bad)


def test_constant_input_dc_and_dirichlet():
    Y = analyze(np.ones((1, 800)), CFG)
    assert Y.shape == (1, 513, 1)
    assert Y[0, 0, 0] == pytest.approx(800.0)
    # zero padding to 1024: the other bins follow the rectangular-window DFT
    k = np.arange(513)
    with np.errstate(invalid="ignore", divide="ignore"):
        dirichlet = np.where(k == 0, 800.0, (1 - np.exp(-2j * np.pi * k * 800 / 1024))
                             / (1 - np.exp(-2j * np.pi * k / 1024)))
    np.testing.assert_allclose(Y[0, :, 0], dirichlet, atol=1e-9)
    # with the window filling the transform every other bin vanishes
    Y2 = analyze(np.ones((1, 1024)), OlsConfig(512, 1024))
    np.testing.assert_allclose(Y2[0, 1:, 0], 0.0, atol=1e-9)


def test_impulse_is_flat():
    x = np.zeros((1, 1000))
    x[0, 0] = 1.0
    np.testing.assert_allclose(analyze(x, CFG)[0, :, 0], 1.0, atol=1e-12)


def test_frame_layout_and_drop():
    x = np.random.default_rng(0).standard_normal((2, 1799))
    Y = analyze(x, CFG)
    assert Y.shape[0] == CFG.n_frames(1799) == 5  # frames beyond the end are dropped
    np.testing.assert_allclose(Y[3, :, 1], np.fft.rfft(x[1, 600:1400], 1024), atol=1e-9)


def test_short_signal_gives_empty_stream(caplog):
    with caplog.at_level(logging.WARNING):
        Y = analyze(np.zeros((3, 799)), CFG)
    assert Y.shape == (0, 513, 3) and "shorter" in caplog.text


@given(st.integers(0, 2**31 - 1), st.integers(2000, 6000))
def test_round_trip_interior(seed, T):
    x = np.random.default_rng(seed).standard_normal((2, T))
    out = _passthrough(x, ref=1)
    sl = CFG.interior(T)
    assert np.linalg.norm(out[sl] - x[1, sl]) <= 1e-9 * np.linalg.norm(x[1, sl])


def test_zero_spectra_zero_output():
    assert not np.any(synthesize_output(np.zeros((10, 513)), CFG, 3000))


def test_tone_amplitude_preserved():
    k0 = 64
    n = np.arange(8000)
    x = np.cos(2 * np.pi * k0 * 16000 / 1024 * n / 16000)[None]
    out = _passthrough(x)
    sl = CFG.interior(8000)
    amp = np.sqrt(2 * np.mean(out[sl] ** 2))
    assert abs(20 * np.log10(amp)) < 0.1


def test_hann_cola():
    w = CFG.synthesis_window()
    h = CFG.hop
    np.testing.assert_allclose(w[:h] + w[h:], 1.0, atol=1e-12)


def test_short_filter_equals_linear_convolution():
    rng = np.random.default_rng(7)
    x = rng.standard_normal(6000)
    h = rng.standard_normal(CFG.frame_len) * np.exp(-np.arange(CFG.frame_len) / 50)
    H = np.fft.rfft(h, CFG.fft_len)
    Y = analyze(x[None], CFG)[:, :, 0]
    out = synthesize_output(Y * H[None], CFG, x.size)
    want = np.convolve(x, h)[:x.size]
    sl = CFG.interior(x.size)
    assert np.linalg.norm(out[sl] - want[sl]) <= 1e-6 * np.linalg.norm(want[sl])


def test_bin_count_checked():
    with pytest.raises(OlsError):
        synthesize_output(np.zeros((4, 512)), CFG)
    with pytest.raises(OlsError):
        OlsSynthesizer(CFG).push(np.zeros(100))


def test_streaming_matches_batch():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 5000))
    Y = analyze(x, CFG)
    an = OlsAnalyzer(CFG, 2)
    frames = []
    for start in range(0, 5000, 333):
        frames += an.push(x[:, start:start + 333])
    np.testing.assert_allclose(np.array(frames), Y, atol=1e-9)
    syn = OlsSynthesizer(CFG)
    stream = np.concatenate([syn.push(Y[b, :, 0]) for b in range(Y.shape[0])])
    batch = synthesize_output(Y[:, :, 0], CFG, 5000)
    L = CFG.frame_len
    np.testing.assert_allclose(stream, batch[L:L + stream.size], atol=1e-9)
