"""Linearly constrained beamformers.

Every beamformer here solves ``min w^H P w  s.t.  Lambda^H w = f`` bin by bin,
differing only in the matrix ``P`` and the constraint set:

=========  ======================  ====================  ===
kind       P                       constraints           TAD
=========  ======================  ====================  ===
MPDR       noisy, full             distortionless        no
MVDR       noise, full             distortionless        yes
DS         identity                distortionless        no
LCMP       noisy, full             distortionless+nulls  no
LCMV       noise, full             distortionless+nulls  yes
LCDS       identity                distortionless+nulls  no
BDLCMP     noisy, block-diagonal   distortionless+nulls  no
BDLCMV     noise, block-diagonal   distortionless+nulls  yes
BDALCMV    ambient, block-diag.    distortionless+nulls  no
ILCMV      p_iso*P_iso + c*I       distortionless+nulls  no
=========  ======================  ====================  ===
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimation import CpsdmSet, diagonal_loading, hermitize, isotropic_matrix
from .scene import farfield_steering_vector


class BeamformError(ValueError):
    pass


@dataclass(frozen=True)
class KindSpec:
    statistic: str  # noisy | noise | identity | ambient | isotropic
    structure: str  # full | block
    nulls: bool
    needs_tad: bool


TABLE = {
    "MPDR": KindSpec("noisy", "full", False, False),
    "MVDR": KindSpec("noise", "full", False, True),
    "DS": KindSpec("identity", "full", False, False),
    "LCMP": KindSpec("noisy", "full", True, False),
    "LCMV": KindSpec("noise", "full", True, True),
    "LCDS": KindSpec("identity", "full", True, False),
    "BDLCMP": KindSpec("noisy", "block", True, False),
    "BDLCMV": KindSpec("noise", "block", True, True),
    "BDALCMV": KindSpec("ambient", "block", True, False),
    "ILCMV": KindSpec("isotropic", "full", True, False),
}

# kinds whose objective separates over nodes
SEPARABLE = ("BDLCMP", "BDLCMV", "BDALCMV", "DS", "LCDS")


@dataclass
class ConstraintSet:
    lam: np.ndarray  # (K, M, d)
    f: np.ndarray  # (d,)
    rank_deficient: np.ndarray  # (K,) bool

    @property
    def d(self) -> int:
        return self.lam.shape[-1]

    @property
    def n_bins(self) -> int:
        return self.lam.shape[0]

    @property
    def target(self) -> np.ndarray:
        return self.lam[..., 0]

    def distortionless(self) -> "ConstraintSet":
        """The single-constraint (target only) subset."""
        return ConstraintSet(self.lam[..., :1].copy(), self.f[:1].copy(),
                             np.zeros(self.n_bins, dtype=bool))

    def rows(self, idx) -> np.ndarray:
        return self.lam[:, idx, :]


def build_constraints(target_ratf, interferer_ratfs=(), mode="with_nulls",
                      rank_tol=1e-10) -> ConstraintSet:
    """Stack ``[a b_1 ... b_r]`` per bin with response ``f = [1 0 ... 0]``."""
    a = np.atleast_2d(np.asarray(target_ratf, complex))
    K, M = a.shape
    b = np.asarray(interferer_ratfs, complex).reshape(-1, K, M)
    if mode == "distortionless_only":
        b = b[:0]
    elif mode != "with_nulls":
        raise BeamformError(f"unknown constraint mode {mode!r}")
    r = b.shape[0]
    if r and r >= M - 1:
        raise BeamformError(f"cannot null r={r} interferers with M={M} microphones")
    lam = np.concatenate([a[:, :, None], np.transpose(b, (1, 2, 0))], axis=2)
    if not np.all(np.isfinite(lam)):
        raise BeamformError("non-finite RATF entries")
    f = np.zeros(r + 1, dtype=complex)
    f[0] = 1.0
    if r:
        sv = np.linalg.svd(lam, compute_uv=False)
        deficient = sv[:, -1] <= rank_tol * sv[:, 0]
    else:
        deficient = np.linalg.norm(a, axis=1) == 0
    return ConstraintSet(lam, f, deficient)


@dataclass
class BeamWeights:
    w: np.ndarray  # (K, M)
    kind: str = "LCQP"
    residual: np.ndarray = field(default=None)
    objective: np.ndarray = field(default=None)
    failed: np.ndarray = field(default=None)
    mu: np.ndarray = field(default=None)  # dual variable Gamma^{-1} f, (K, d)

    @property
    def n_failed(self) -> int:
        return 0 if self.failed is None else int(np.count_nonzero(self.failed))


def _H(x):
    return np.conj(np.swapaxes(x, -1, -2))


def hpd_solve(A, B):
    """Solve ``A X = B`` for stacked Hermitian positive definite ``A``."""
    L = np.linalg.cholesky(A)
    return np.linalg.solve(_H(L), np.linalg.solve(L, B))


def solve_gram(G, f, rcond=1e-12):
    """Solve ``G mu = f`` per bin; returns ``(mu (K, d), singular (K,))``.

    Cholesky first.  Bins where it fails, or where a pivot falls below
    ``rcond * ||G||`` (roundoff can let an exactly singular matrix through),
    fall back to a pseudo-inverse cut at the same level and are reported
    singular if that drops rank.
    """
    G = hermitize(G)
    K, d, _ = G.shape
    rhs = np.broadcast_to(np.asarray(f, complex)[:, None], (K, d, 1))
    singular = np.zeros(K, dtype=bool)
    mu = np.empty((K, d), dtype=complex)
    norm = np.linalg.norm(G, 2, axis=(1, 2))
    redo = np.ones(K, dtype=bool)
    try:
        L = np.linalg.cholesky(G)
        piv = np.abs(np.diagonal(L, axis1=1, axis2=2)) ** 2
        redo = np.min(piv, axis=1) <= rcond * norm
        ok = ~redo
        mu[ok] = np.linalg.solve(_H(L[ok]), np.linalg.solve(L[ok], rhs[ok]))[..., 0]
    except np.linalg.LinAlgError:
        pass
    for k in np.flatnonzero(redo):
        u, s, vh = np.linalg.svd(G[k])
        keep = s > rcond * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
        if np.all(keep):
            mu[k] = np.linalg.solve(G[k], rhs[k, :, 0])
            continue
        singular[k] = True
        inv = (vh[keep].conj().T / s[keep]) @ u[:, keep].conj().T
        mu[k] = inv @ rhs[k, :, 0]
    bad = ~np.all(np.isfinite(mu), axis=1)
    singular |= bad
    mu[bad] = 0.0
    return mu, singular


def ds_weights(a) -> np.ndarray:
    """Delay-and-sum weights ``a / ||a||^2`` per bin."""
    a = np.asarray(a)
    return a / np.sum(np.abs(a) ** 2, axis=-1, keepdims=True)


def _as_blocks(P, blocks):
    if isinstance(P, CpsdmSet):
        return P.node_blocks(), P.blocks
    if isinstance(P, (list, tuple)):
        if blocks is None:
            raise BeamformError("block matrices need the channel layout")
        return list(P), [np.asarray(b) for b in blocks]
    return None, None


def solve_lcqp(P, constraints: ConstraintSet, blocks=None, kind="LCQP", previous=None) -> BeamWeights:
    """Closed-form constrained minimum ``P^-1 L (L^H P^-1 L)^-1 f`` per bin.

    ``P`` may be a dense ``(K, M, M)`` stack, a list of node blocks (with
    ``blocks`` giving their channels), a :class:`CpsdmSet`, or ``None`` for the
    identity.  Diagonal loading is applied here and never stored.  Bins whose
    Gram matrix is singular keep ``previous`` weights, or delay-and-sum when
    there are none, and are flagged in ``failed``.
    """
    lam, f = constraints.lam, constraints.f
    K, M, d = lam.shape
    bl, layout = _as_blocks(P, blocks)

    if P is None:
        X = lam.copy()
        quad = lambda w: np.sum(np.abs(w) ** 2, axis=1)
    elif bl is not None:
        X = np.empty_like(lam)
        for Pk, idx in zip(bl, layout):
            X[:, idx, :] = hpd_solve(diagonal_loading(Pk), lam[:, idx, :])

        def quad(w):
            return sum(np.real(np.einsum("ki,kij,kj->k", np.conj(w[:, idx]), Pk, w[:, idx]))
                       for Pk, idx in zip(bl, layout))
    else:
        Pf = np.asarray(P)
        if Pf.shape != (K, M, M):
            raise BeamformError(f"P has shape {Pf.shape}, expected {(K, M, M)}")
        X = hpd_solve(diagonal_loading(Pf), lam)
        quad = lambda w: np.real(np.einsum("ki,kij,kj->k", np.conj(w), Pf, w))

    G = _H(lam) @ X
    mu, failed = solve_gram(G, f)
    w = np.einsum("kmd,kd->km", X, mu)
    if np.any(failed):
        fallback = ds_weights(lam[..., 0]) if previous is None else np.asarray(previous)
        w[failed] = fallback[failed]
    residual = np.max(np.abs(np.einsum("kmd,km->kd", np.conj(lam), w) - f), axis=1)
    return BeamWeights(w, kind, residual, quad(w), failed, mu)


def model_cpsdm(ratfs, powers, noise_power, n_mics=None) -> np.ndarray:
    """``sum_i p_i a_i a_i^H + noise_power * I`` for stacked ``ratfs (S, K, M)``."""
    A = np.asarray(ratfs, complex)
    if A.ndim == 2:
        A = A[:, None, :]
    P = np.einsum("s,ski,skj->kij", np.asarray(powers, float), A, np.conj(A))
    return hermitize(P + noise_power * np.eye(A.shape[-1]))


class Beamformer:
    """Per-frame weight computation for one Table-II kind.

    Call :meth:`weights` once per frame with the running statistics.  Weights
    are recomputed only when the statistic the kind depends on changed in
    that frame; otherwise the previous solution is returned as is.
    """

    def __init__(self, kind, constraints: ConstraintSet, blocks, ambient=None, iso_power=None,
                 self_noise_power=None, mics=None, sample_rate=16000.0, fft_len=1024,
                 speed_of_sound=340.0):
        kind = kind.upper()
        if kind not in TABLE:
            raise BeamformError(f"unknown beamformer kind {kind!r}")
        self.kind = kind
        self.spec = TABLE[kind]
        self.constraints = constraints if self.spec.nulls else constraints.distortionless()
        self.blocks = [np.asarray(b) for b in blocks]
        self.fixed = None
        self.last = None
        self.recomputed = False
        if self.spec.statistic == "ambient":
            if ambient is None:
                raise BeamformError("BDALCMV needs caller-supplied ambient node blocks")
            self.fixed = list(ambient)
        elif self.spec.statistic == "isotropic":
            if iso_power is None or self_noise_power is None or mics is None:
                raise BeamformError("ILCMV needs p_iso, the self-noise power and geometry")
            n_bins = self.constraints.n_bins
            P_iso = isotropic_matrix(mics, np.arange(n_bins), sample_rate, fft_len, speed_of_sound)
            self.fixed = np.asarray(iso_power).reshape(-1, 1, 1) * P_iso \
                + self_noise_power * np.eye(P_iso.shape[-1])

    def _solve(self, P):
        prev = None if self.last is None else self.last.w
        blocks = self.blocks if isinstance(P, list) else None
        return solve_lcqp(P, self.constraints, blocks, self.kind, prev)

    def weights(self, noisy: CpsdmSet | None = None, noise: CpsdmSet | None = None) -> BeamWeights:
        stat = self.spec.statistic
        if stat in ("identity", "ambient", "isotropic"):
            P, changed = (None if stat == "identity" else self.fixed), self.last is None
        else:
            src = noisy if stat == "noisy" else noise
            if src is None:
                raise BeamformError(f"{self.kind} needs the {stat} CPSDM")
            changed = self.last is None or src.changed
            if src.frame_count == 0:
                P = None  # no statistics yet: identity objective
            elif self.spec.structure == "block":
                P = src.node_blocks()
            else:
                if src.mode != "full":
                    raise BeamformError(f"{self.kind} needs a full CPSDM")
                P = src.data
        self.recomputed = changed
        if changed:
            self.last = self._solve(P)
        return self.last


def make_beamformer(kind, constraints, blocks, **kw) -> Beamformer:
    return Beamformer(kind, constraints, blocks, **kw)


def directivity(w, mics, k, azimuths_deg, sample_rate=16000.0, fft_len=1024,
                speed_of_sound=340.0, reference_mic=0, floor_db=-300.0) -> np.ndarray:
    """Spatial response ``10 log10 |w^H a(theta)|^2`` over far-field azimuths."""
    A = farfield_steering_vector(mics, np.atleast_1d(azimuths_deg), k, sample_rate, fft_len,
                                 speed_of_sound, reference_mic)
    g = np.abs(A @ np.conj(np.asarray(w))) ** 2
    return np.maximum(10 * np.log10(np.maximum(g, 1e-300)), floor_db)
