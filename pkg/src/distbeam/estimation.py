"""Second-order statistics: CPSDMs, the isotropic coherence model, RATF
estimation and target activity detection."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from .scene import isotropic_coherence

log = logging.getLogger(__name__)

LOADING = 1e-10  # diagonal loading factor, relative to trace / size
SINC_MIN = -0.21723362821122166  # global minimum of sin(x)/x


class EstimationError(ValueError):
    pass


def hermitize(P: np.ndarray) -> np.ndarray:
    """Mirror the upper triangle onto the lower one (exact Hermitian symmetry)."""
    P = np.array(P, copy=True)
    n = P.shape[-1]
    iu = np.triu_indices(n, 1)
    P[..., iu[1], iu[0]] = np.conj(P[..., iu[0], iu[1]])
    d = np.arange(n)
    P[..., d, d] = P[..., d, d].real
    return P


def outer(y: np.ndarray) -> np.ndarray:
    """Per-bin rank-one products ``y y^H`` for ``y`` of shape ``(K, M)``."""
    return hermitize(y[..., :, None] * np.conj(y[..., None, :]))


def diagonal_loading(P: np.ndarray) -> np.ndarray:
    """Return ``P + eps*I`` with ``eps = LOADING * trace(P) / size`` per matrix."""
    n = P.shape[-1]
    tr = np.real(np.trace(P, axis1=-2, axis2=-1)) / n
    eps = LOADING * np.where(tr > 0, tr, 1.0)
    return P + eps[..., None, None] * np.eye(n)


class CpsdmSet:
    """Running per-bin CPSDM estimate, full or block-diagonal.

    ``blocks`` lists the global channel indices of each node.  In
    ``block_diagonal`` mode only the node blocks are stored, which is what a
    node can estimate from its own microphones.
    """

    def __init__(self, n_bins: int, blocks, mode: str = "full", averaging: str = "cumulative",
                 forgetting: float = 0.98, dtype=complex):
        if mode not in ("full", "block_diagonal"):
            raise EstimationError(f"unknown CPSDM mode {mode!r}")
        if averaging not in ("cumulative", "exponential"):
            raise EstimationError(f"unknown averaging mode {averaging!r}")
        if isinstance(blocks, (int, np.integer)):
            blocks = [np.arange(blocks)]
        self.blocks = [np.asarray(b, dtype=int) for b in blocks]
        self.n_mics = int(sum(b.size for b in self.blocks))
        self.n_bins = int(n_bins)
        self.mode = mode
        self.averaging = averaging
        self.forgetting = float(forgetting)
        self.frame_count = 0
        self.changed = False
        if mode == "full":
            self.data = np.zeros((n_bins, self.n_mics, self.n_mics), dtype=dtype)
        else:
            self.data = [np.zeros((n_bins, b.size, b.size), dtype=dtype) for b in self.blocks]

    def copy(self) -> "CpsdmSet":
        new = CpsdmSet.__new__(CpsdmSet)
        new.__dict__.update(self.__dict__)
        new.data = self.data.copy() if self.mode == "full" else [d.copy() for d in self.data]
        return new

    @property
    def block_sizes(self) -> list[int]:
        return [b.size for b in self.blocks]

    def _blend(self, old, new):
        n = self.frame_count
        if n == 1:
            return new
        if self.averaging == "cumulative":
            return old + (new - old) / n
        lam = self.forgetting
        return lam * old + (1.0 - lam) * new

    def update(self, frame, include: bool = True) -> "CpsdmSet":
        y = np.asarray(frame)
        if y.shape != (self.n_bins, self.n_mics):
            raise EstimationError(f"frame shape {y.shape} != {(self.n_bins, self.n_mics)}")
        self.changed = bool(include)
        if not include:
            return self
        self.frame_count += 1
        if self.mode == "full":
            self.data = hermitize(self._blend(self.data, outer(y)))
        else:
            self.data = [hermitize(self._blend(d, outer(y[:, b]))) for d, b in zip(self.data, self.blocks)]
        return self

    def full(self) -> np.ndarray:
        """Dense ``(K, M, M)`` matrices (zero off the blocks in block mode)."""
        if self.mode == "full":
            return self.data
        P = np.zeros((self.n_bins, self.n_mics, self.n_mics), dtype=self.data[0].dtype)
        for d, b in zip(self.data, self.blocks):
            P[:, b[:, None], b[None, :]] = d
        return P

    def block(self, i: int) -> np.ndarray:
        b = self.blocks[i]
        if self.mode == "full":
            return self.data[:, b[:, None], b[None, :]]
        return self.data[i]

    def node_blocks(self) -> list[np.ndarray]:
        return [self.block(i) for i in range(len(self.blocks))]

    def __repr__(self):
        return (f"CpsdmSet(mode={self.mode}, bins={self.n_bins}, M={self.n_mics}, "
                f"frames={self.frame_count}, averaging={self.averaging})")


def update_cpsdm(state: CpsdmSet, frame, include: bool) -> CpsdmSet:
    return state.update(frame, include)


def batch_cpsdm(frames, include=None) -> np.ndarray:
    """Plain sample average ``(1/|L|) sum y y^H`` over the included frames."""
    Y = np.asarray(frames)
    if include is not None:
        Y = Y[np.asarray(include, bool)]
    return np.einsum("lki,lkj->kij", Y, np.conj(Y)) / Y.shape[0]


def isotropic_matrix(mics, k, sample_rate, fft_len, speed_of_sound=340.0) -> np.ndarray:
    """Isotropic coherence ``sinc(2 pi k fs d / (fft_len c))`` for bin(s) ``k``.

    ``k`` may be fractional.  Returns ``(M, M)`` for scalar ``k``.
    """
    kk = np.atleast_1d(np.asarray(k, float))
    if np.any(kk < 0):
        raise EstimationError("bin index must be non-negative")
    P = isotropic_coherence(mics, kk * sample_rate / fft_len, speed_of_sound)
    return P[0] if np.ndim(k) == 0 else P


def estimate_ratf(cpsdm, reference_mic: int = 0):
    """Dominant eigenvector per bin, scaled to a unit reference element.

    Returns ``(ratf (K, M), unreliable (K,) bool)``.  Bins whose reference
    element vanishes are normalised by their largest-magnitude element
    instead and flagged.
    """
    if isinstance(cpsdm, CpsdmSet):
        if cpsdm.mode != "full":
            raise EstimationError("RATF estimation needs a full CPSDM")
        P = cpsdm.data
    else:
        P = np.asarray(cpsdm)
    _, vecs = np.linalg.eigh(P)
    v = vecs[..., :, -1]
    ref = v[:, reference_mic]
    bad = np.abs(ref) < 1e-12
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} bins with vanishing reference element; "
                      "normalising by the largest element", RuntimeWarning, stacklevel=2)
    piv = np.where(bad, v[np.arange(v.shape[0]), np.argmax(np.abs(v), axis=1)], ref)
    ratf = v / piv[:, None]
    ratf[~bad, reference_mic] = 1.0
    return ratf, bad


# ---------------------------------------------------------------------------
# target activity detection
# ---------------------------------------------------------------------------

@dataclass
class TadLabeler:
    """Frame-level target activity detector on the reference channel.

    ``kind="ideal"`` reads ground truth; ``kind="energy"`` takes the loudest
    10 ms sub-frame of each analysis window, median-smooths it over
    ``smoothing`` frames and compares it with a percentile noise floor plus
    ``threshold_db``.  The 1.5 dB offset was calibrated once on talk-spurt
    targets in stationary noise at 0 dB SNR.
    """

    kind: str = "ideal"
    threshold_db: float = 1.5
    smoothing: int = 3
    subframe_ms: float = 10.0
    floor_percentile: float = 10.0
    reference_mic: int = 0

    def __post_init__(self):
        if self.kind not in ("ideal", "energy"):
            raise EstimationError(f"unknown TAD kind {self.kind!r}")

    def frame_energy_db(self, ref_samples, ols, sample_rate) -> np.ndarray:
        x = np.asarray(ref_samples, float)
        nf = ols.n_frames(x.size)
        sub = max(int(round(self.subframe_ms * 1e-3 * sample_rate)), 1)
        n_sub = ols.analysis_len // sub
        idx = np.arange(nf)[:, None] * ols.hop + np.arange(n_sub * sub)[None, :]
        seg = x[idx].reshape(nf, n_sub, sub)
        e = np.mean(seg ** 2, axis=-1)
        return 10 * np.log10(np.max(e, axis=-1) + 1e-20)

    def label(self, ref_samples=None, ols=None, sample_rate=16000.0, ground_truth=None) -> np.ndarray:
        if self.kind == "ideal":
            if ground_truth is None:
                raise EstimationError("ideal TAD needs ground truth")
            return ground_truth.frame_activity(ols)
        e = self.frame_energy_db(ref_samples, ols, sample_rate)
        if e.size == 0:
            return np.zeros(0, dtype=bool)
        if self.smoothing > 1:
            e = median_filter(e, size=self.smoothing, mode="nearest")
        if np.max(e) <= -190:  # digital silence
            return np.zeros(e.size, dtype=bool)
        floor = np.percentile(e, self.floor_percentile)
        return e > floor + self.threshold_db


def label_frames(labeler: TadLabeler, ref_samples=None, ols=None, sample_rate=16000.0,
                 ground_truth=None) -> np.ndarray:
    return labeler.label(ref_samples, ols, sample_rate, ground_truth)
