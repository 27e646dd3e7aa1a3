"""Quality measures for beamformer output."""
from __future__ import annotations

import numpy as np

SSNR_CLAMP = (-10.0, 35.0)
SILENCE_DB = -40.0  # segments this far below the loudest one are skipped


class MetricError(ValueError):
    pass


def segment_snrs(clean, processed, segment_len=400, clamp=SSNR_CLAMP, silence_db=SILENCE_DB):
    """Clamped per-segment SNRs in dB, silent reference segments removed.

    Signals are truncated to their common length; a trailing partial segment
    is dropped.
    """
    x = np.asarray(clean, float).ravel()
    y = np.asarray(processed, float).ravel()
    n = min(x.size, y.size) // segment_len
    if n == 0:
        raise MetricError("signals do not overlap by one full segment")
    x = x[:n * segment_len].reshape(n, segment_len)
    y = y[:n * segment_len].reshape(n, segment_len)
    sig = np.sum(x ** 2, axis=1)
    err = np.sum((x - y) ** 2, axis=1)
    peak = sig.max()
    keep = sig > 0
    if peak > 0:
        keep &= sig >= peak * 10 ** (silence_db / 10)
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(sig[keep] / err[keep])
    return np.clip(snr, *clamp)


def ssnr(clean, processed, segment_len=400, clamp=SSNR_CLAMP, silence_db=SILENCE_DB) -> float:
    """Mean clamped segmental SNR of ``processed`` against ``clean`` (dB)."""
    s = segment_snrs(clean, processed, segment_len, clamp, silence_db)
    if s.size == 0:
        raise MetricError("reference is silent in every segment")
    return float(np.mean(s))


def ssnr_gain(unprocessed, processed, clean, **kw) -> float:
    """SSNR improvement of ``processed`` over the unprocessed reference channel."""
    return ssnr(clean, processed, **kw) - ssnr(clean, unprocessed, **kw)


def response(w, v) -> np.ndarray:
    """``|w^H v|`` per bin for ``w, v`` of shape ``(K, M)``."""
    return np.abs(np.sum(np.conj(w) * v, axis=-1))


def null_depth(w, interferer_ratfs, per_bin=False, floor_db=-300.0) -> np.ndarray:
    """Residual interferer response ``10 log10 |w^H b_i|^2``.

    Returns the worst bin per interferer ``(r,)``, or ``(r, K)`` with
    ``per_bin``.
    """
    b = np.asarray(interferer_ratfs).reshape(-1, *np.shape(w))
    g = np.abs(np.einsum("km,rkm->rk", np.conj(w), b)) ** 2
    db = np.maximum(10 * np.log10(np.maximum(g, 1e-300)), floor_db)
    return db if per_bin else db.max(axis=1)


def target_distortion(clean_ref, filtered_target, segment_len=400) -> float:
    """Energy of ``clean - filtered`` relative to ``clean`` (dB), whole signal."""
    x = np.asarray(clean_ref, float)
    y = np.asarray(filtered_target, float)
    n = min(x.size, y.size)
    e = np.sum((x[:n] - y[:n]) ** 2)
    s = np.sum(x[:n] ** 2)
    if s == 0:
        raise MetricError("clean reference is silent")
    return float(10 * np.log10(max(e, 1e-300) / s))


def output_power_db(x) -> float:
    p = np.mean(np.asarray(x, float) ** 2)
    return float(10 * np.log10(max(p, 1e-300)))
