"""Overlap-and-save analysis/synthesis with a half-frame shift.

Frame ``beta`` analyses ``2*L`` input samples starting at ``beta*L/2`` with a
rectangular window, zero-padded to ``fft_len``.  After per-bin processing the
last ``L`` samples of the inverse transform are Hann-windowed and
overlap-added at a hop of ``L/2``.  Output sample ``n`` is aligned with input
sample ``n`` (no latency is introduced in the indexing).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy.signal import get_window

log = logging.getLogger(__name__)


class OlsError(ValueError):
    pass


@dataclass(frozen=True)
class OlsConfig:
    frame_len: int = 400  # L_fr, 25 ms at 16 kHz
    fft_len: int = 1024

    def __post_init__(self):
        if self.frame_len <= 0 or self.frame_len % 2:
            raise OlsError(f"frame_len must be a positive even number, got {self.frame_len}")
        if self.fft_len & (self.fft_len - 1):
            raise OlsError(f"fft_len must be a power of two, got {self.fft_len}")
        if self.fft_len < 2 * self.frame_len:
            raise OlsError("fft_len must be at least twice frame_len")

    @classmethod
    def for_rate(cls, sample_rate, frame_ms=25.0, fft_len=1024):
        L = int(round(sample_rate * frame_ms / 1000.0))
        return cls(L + (L % 2), fft_len)

    @property
    def analysis_len(self) -> int:
        return 2 * self.frame_len

    @property
    def hop(self) -> int:
        return self.frame_len // 2

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.analysis_len:
            return 0
        return (n_samples - self.analysis_len) // self.hop + 1

    def synthesis_window(self) -> np.ndarray:
        # periodic Hann: exact constant-overlap-add at hop L/2
        return get_window("hann", self.frame_len, fftbins=True)

    def interior(self, n_samples: int) -> slice:
        """Output samples reconstructed by two overlapping frames."""
        nf = self.n_frames(n_samples)
        start = self.frame_len + self.hop
        stop = (nf - 1) * self.hop + self.frame_len + self.hop if nf else 0
        return slice(start, max(start, stop))


def analyze(samples, cfg: OlsConfig) -> np.ndarray:
    """Frames of multichannel spectra, shape ``(n_frames, n_bins, M)``.

    A signal shorter than one analysis window yields an empty array and a
    warning.
    """
    x = np.atleast_2d(np.asarray(samples, float))
    M, T = x.shape
    nf = cfg.n_frames(T)
    if nf == 0:
        log.warning("signal of %d samples is shorter than one analysis window (%d)", T,
                    cfg.analysis_len)
        return np.zeros((0, cfg.n_bins, M), dtype=complex)
    idx = np.arange(nf)[:, None] * cfg.hop + np.arange(cfg.analysis_len)[None, :]
    seg = x[:, idx]  # (M, nf, 2L)
    spec = sfft.rfft(seg, cfg.fft_len, axis=-1)  # (M, nf, K)
    return np.ascontiguousarray(np.transpose(spec, (1, 2, 0)))


def synthesize_output(spectra, cfg: OlsConfig, n_samples: int | None = None) -> np.ndarray:
    """Overlap-add single-channel output spectra ``(n_frames, n_bins)``."""
    z = np.asarray(spectra)
    if z.ndim != 2 or z.shape[1] != cfg.n_bins:
        raise OlsError(f"expected (n_frames, {cfg.n_bins}) spectra, got {z.shape}")
    nf = z.shape[0]
    L = cfg.frame_len
    total = (nf - 1) * cfg.hop + cfg.analysis_len if nf else 0
    n_samples = total if n_samples is None else n_samples
    out = np.zeros(max(n_samples, total))
    if nf == 0:
        return out[:n_samples]
    blocks = sfft.irfft(z, cfg.fft_len, axis=-1)[:, L:2 * L] * cfg.synthesis_window()
    for beta in range(nf):
        s = beta * cfg.hop + L
        out[s:s + L] += blocks[beta]
    return out[:n_samples]


class OlsAnalyzer:
    """Streaming analysis: push sample blocks, pop finished frames."""

    def __init__(self, cfg: OlsConfig, n_channels: int):
        self.cfg = cfg
        self._buf = np.zeros((n_channels, 0))
        self.frame_index = 0

    def push(self, block) -> list[np.ndarray]:
        self._buf = np.hstack([self._buf, np.atleast_2d(np.asarray(block, float))])
        frames = []
        while self._buf.shape[1] >= self.cfg.analysis_len:
            seg = self._buf[:, :self.cfg.analysis_len]
            frames.append(sfft.rfft(seg, self.cfg.fft_len, axis=-1).T)
            self._buf = self._buf[:, self.cfg.hop:]
            self.frame_index += 1
        return frames


class OlsSynthesizer:
    """Streaming synthesis: push one output spectrum, pop ``hop`` finished samples.

    The concatenated output starts at input sample ``frame_len``.
    """

    def __init__(self, cfg: OlsConfig):
        self.cfg = cfg
        self._win = cfg.synthesis_window()
        self._tail = np.zeros(cfg.hop)

    def push(self, spectrum) -> np.ndarray:
        z = np.asarray(spectrum)
        if z.shape != (self.cfg.n_bins,):
            raise OlsError(f"expected {self.cfg.n_bins} bins, got {z.shape}")
        L, h = self.cfg.frame_len, self.cfg.hop
        block = sfft.irfft(z, self.cfg.fft_len)[L:2 * L] * self._win
        done = self._tail + block[:h]
        self._tail = block[h:].copy()
        return done
