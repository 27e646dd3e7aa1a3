"""Anechoic scene synthesis for microphone-array experiments.

A scene is a set of nodes (each owning one or more microphones) and a set of
point sources, exactly one of which is the target.  Channels are numbered
globally by concatenating the nodes in ascending node-id order, so node
``kappa`` owns a contiguous block of channels.

Propagation is direct path only: a source at distance ``d`` from a microphone
arrives with gain ``1/d`` after ``d/c`` seconds.  Fractional delays are applied
in the frequency domain, which makes :func:`steering_vector` the exact ground
truth for the relative acoustic transfer functions (RATFs).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy.io import wavfile

D_MIN = 0.01  # minimum source-microphone distance [m]

_SIGNAL_KINDS = ("white", "pink", "speechlike", "file")


class SceneError(ValueError):
    """Raised for an invalid scene description."""


@dataclass(frozen=True)
class NodeSpec:
    id: int
    mics: np.ndarray  # (M_kappa, 3)

    def __post_init__(self):
        mics = np.atleast_2d(np.asarray(self.mics, dtype=float))
        if mics.shape[1] == 2:
            mics = np.hstack([mics, np.zeros((mics.shape[0], 1))])
        object.__setattr__(self, "mics", mics)

    @property
    def n_mics(self) -> int:
        return self.mics.shape[0]


@dataclass(frozen=True)
class SourceSpec:
    """A point source.

    ``signal`` is either an array of samples or a generator spec such as
    ``{"kind": "speechlike", "seed": 3}``; see :func:`make_source_signal`.
    ``active`` optionally restricts the source to a list of ``(start, stop)``
    intervals in seconds.
    """

    position: np.ndarray
    role: str = "interferer"
    signal: object = field(default_factory=lambda: {"kind": "white"})
    power: float = 1.0
    active: tuple | None = None

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).ravel()
        if pos.size == 2:
            pos = np.append(pos, 0.0)
        object.__setattr__(self, "position", pos)
        if self.role not in ("target", "interferer"):
            raise SceneError(f"unknown source role {self.role!r}")


@dataclass
class SceneConfig:
    nodes: list
    sources: list
    sample_rate: float = 16000.0
    speed_of_sound: float = 340.0
    duration: float = 10.0
    self_noise_snr: float | None = 40.0
    diffuse_noise_power: float = 0.0
    reference_mic: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        self.nodes = sorted(self.nodes, key=lambda n: n.id)
        self.validate()

    # -- layout ---------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    @property
    def node_sizes(self) -> list[int]:
        return [n.n_mics for n in self.nodes]

    @property
    def n_mics(self) -> int:
        return sum(self.node_sizes)

    @property
    def mic_positions(self) -> np.ndarray:
        return np.vstack([n.mics for n in self.nodes])

    @property
    def blocks(self) -> list[np.ndarray]:
        """Global channel indices owned by each node, in node order."""
        edges = np.cumsum([0] + self.node_sizes)
        return [np.arange(a, b) for a, b in zip(edges[:-1], edges[1:])]

    def node_of_mic(self, j: int) -> int:
        for node, idx in zip(self.nodes, self.blocks):
            if j in idx:
                return node.id
        raise SceneError(f"channel {j} out of range")

    @property
    def target(self) -> SourceSpec:
        return next(s for s in self.sources if s.role == "target")

    @property
    def interferers(self) -> list:
        return [s for s in self.sources if s.role == "interferer"]

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def validate(self) -> None:
        if not self.nodes:
            raise SceneError("scene has no nodes")
        ids = self.node_ids
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise SceneError(f"node ids must be exactly 1..N, got {ids}")
        n_target = sum(s.role == "target" for s in self.sources)
        if n_target != 1:
            raise SceneError(f"exactly one target source required, got {n_target}")
        r = len(self.sources) - 1
        if r >= self.n_mics - 1:
            raise SceneError(f"need r < M - 1, got r={r}, M={self.n_mics}")
        if not 0 <= self.reference_mic < self.n_mics:
            raise SceneError(f"reference mic {self.reference_mic} out of range")
        if not np.all(np.isfinite(self.mic_positions)):
            raise SceneError("non-finite microphone position")
        for s in self.sources:
            if not np.all(np.isfinite(s.position)):
                raise SceneError("non-finite source position")
        if self.sample_rate <= 0 or self.speed_of_sound <= 0:
            raise SceneError("sample rate and speed of sound must be positive")


@dataclass
class GroundTruth:
    """Oracle quantities produced alongside a synthesized scene."""

    ratf_target: np.ndarray  # (K, M)
    ratf_interferers: np.ndarray  # (r, K, M)
    target_mask: np.ndarray  # (T,) bool, target activity at the reference mic
    interferer_masks: np.ndarray  # (r, T)
    target_image: np.ndarray  # (M, T), target component at every mic
    reference_mic: int

    @property
    def clean_target_ref(self) -> np.ndarray:
        return self.target_image[self.reference_mic]

    def frame_activity(self, ols, mask=None) -> np.ndarray:
        """Per-frame activity flags for a frame layout ``ols``.

        A frame counts as active if the source is active anywhere inside its
        analysis window, so an ideal detector never leaks target energy into
        noise statistics.
        """
        mask = self.target_mask if mask is None else mask
        n_frames = ols.n_frames(mask.shape[-1])
        csum = np.concatenate([[0], np.cumsum(mask.astype(np.int64))])
        starts = np.arange(n_frames) * ols.hop
        stops = starts + ols.analysis_len
        return (csum[stops] - csum[starts]) > 0

    def interferer_activity(self, ols) -> np.ndarray:
        return np.array([self.frame_activity(ols, m) for m in self.interferer_masks])


# ---------------------------------------------------------------------------
# steering vectors
# ---------------------------------------------------------------------------

def _bins(k):
    return np.atleast_1d(np.asarray(k, dtype=float))


def _distances(mics, source_pos):
    d = np.linalg.norm(np.asarray(mics, float) - np.asarray(source_pos, float), axis=1)
    if np.any(d < D_MIN):
        raise SceneError(f"source within {D_MIN} m of a microphone")
    return d


def steering_vector(mics, source_pos, k, sample_rate, fft_len, speed_of_sound=340.0,
                    reference_mic=0):
    """Anechoic RATF vector of a point source for frequency bin(s) ``k``.

    Returns an ``(M,)`` vector for scalar ``k`` and ``(K, M)`` otherwise.  The
    reference element is exactly ``1+0j``.
    """
    mics = np.atleast_2d(np.asarray(mics, float))
    source_pos = np.asarray(source_pos, float).ravel()
    if source_pos.size == 2:
        source_pos = np.append(source_pos, 0.0)
    if mics.shape[1] == 2:
        mics = np.hstack([mics, np.zeros((mics.shape[0], 1))])
    d = _distances(mics, source_pos)
    gain = d[reference_mic] / d
    tau = (d - d[reference_mic]) / speed_of_sound
    kk = _bins(k)
    phase = -2j * np.pi * np.outer(kk, tau) * sample_rate / fft_len
    phase[:, reference_mic] = 0.0
    a = gain[None, :] * np.exp(phase)
    a[:, reference_mic] = 1.0
    return a[0] if np.ndim(k) == 0 else a


def farfield_steering_vector(mics, azimuth_deg, k, sample_rate, fft_len,
                             speed_of_sound=340.0, reference_mic=0):
    """Plane-wave steering vector(s) for arrival azimuths in the x-y plane.

    Returns ``(M,)`` for scalar arguments, else ``(n_angles, M)``.
    """
    mics = np.atleast_2d(np.asarray(mics, float))
    theta = np.deg2rad(np.atleast_1d(np.asarray(azimuth_deg, float)))
    u = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    proj = mics[:, :2] @ u.T  # (M, n_angles)
    tau = -(proj - proj[reference_mic]) / speed_of_sound
    a = np.exp(-2j * np.pi * float(k) * sample_rate / fft_len * tau.T)
    a[:, reference_mic] = 1.0
    return a[0] if np.ndim(azimuth_deg) == 0 else a


# ---------------------------------------------------------------------------
# source signals
# ---------------------------------------------------------------------------

def read_wav_mono(path, sample_rate) -> np.ndarray:
    """Read a mono 16-bit PCM file and linearly resample it to ``sample_rate``."""
    fs_in, data = wavfile.read(path)
    if data.dtype != np.int16:
        raise SceneError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    if data.ndim != 1:
        raise SceneError(f"{path}: expected a mono file")
    x = data.astype(float) / 32768.0
    if fs_in == sample_rate:
        return x
    t_in = np.arange(x.size) / fs_in
    t_out = np.arange(int(np.floor(t_in[-1] * sample_rate)) + 1) / sample_rate
    return np.interp(t_out, t_in, x)


def write_wav_mono(path, samples, sample_rate) -> None:
    x = np.clip(np.asarray(samples, float), -1.0, 1.0 - 1.0 / 32768)
    wavfile.write(path, int(sample_rate), np.round(x * 32768).astype(np.int16))


def _pink(rng, n):
    spec = sfft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=float)
    f[0] = 1.0
    return sfft.irfft(spec / np.sqrt(f), n)


def _speechlike(rng, n, fs):
    """Talk-spurt noise: pink carrier, syllabic envelope, random pauses."""
    carrier = _pink(rng, n)
    mask = np.zeros(n, dtype=bool)
    t = int(rng.uniform(0.05, 0.4) * fs)
    while t < n:
        on = int(rng.uniform(0.3, 1.2) * fs)
        mask[t:t + on] = True
        t += on + int(rng.uniform(0.2, 0.8) * fs)
    tt = np.arange(n) / fs
    syll = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(3.0, 5.0) * tt + rng.uniform(0, 2 * np.pi))
    # raised-cosine ramps at spurt edges keep the mask meaningful
    ramp = np.convolve(mask.astype(float), np.hanning(int(0.01 * fs) + 1), mode="same")
    ramp /= ramp.max() if ramp.max() > 0 else 1.0
    return carrier * syll * np.minimum(ramp, 1.0) * mask, mask


def make_source_signal(spec, n_samples, sample_rate, rng) -> tuple[np.ndarray, np.ndarray]:
    """Build ``(samples, activity_mask)`` of length ``n_samples``.

    ``spec`` is an array of samples or a dict with ``kind`` in
    ``white | pink | speechlike | file`` (``file`` needs ``path``).  An explicit
    ``seed`` in the dict overrides ``rng``.
    """
    if isinstance(spec, np.ndarray) or isinstance(spec, (list, tuple)):
        x = np.asarray(spec, float)
        mask = np.ones(x.size, dtype=bool)
    else:
        kind = spec.get("kind", "white")
        if kind not in _SIGNAL_KINDS:
            raise SceneError(f"unknown signal kind {kind!r}")
        if "seed" in spec:
            rng = np.random.default_rng(spec["seed"])
        if kind == "white":
            x = rng.standard_normal(n_samples)
            mask = np.ones(n_samples, dtype=bool)
        elif kind == "pink":
            x = _pink(rng, n_samples)
            mask = np.ones(n_samples, dtype=bool)
        elif kind == "speechlike":
            x, mask = _speechlike(rng, n_samples, sample_rate)
        else:
            x = read_wav_mono(Path(spec["path"]), sample_rate)
            mask = np.abs(x) > 0
    if x.size < n_samples:
        extra = n_samples - x.size
        x = np.concatenate([x, np.zeros(extra)])
        mask = np.concatenate([mask, np.zeros(extra, dtype=bool)])
    return x[:n_samples], mask[:n_samples]


def _interval_mask(intervals, n, fs):
    mask = np.zeros(n, dtype=bool)
    for start, stop in intervals:
        mask[max(int(round(start * fs)), 0):min(int(round(stop * fs)), n)] = True
    return mask


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def delay_and_scale(signal, delays, gains, sample_rate, n_out=None):
    """Fractionally delay one signal to several outputs (frequency domain).

    The transform is at least twice the signal length, so integer delays are
    exact and the sinc tails of fractional delays decay before they can wrap
    round onto the start of the record.
    """
    signal = np.asarray(signal, float)
    n = signal.size if n_out is None else n_out
    pad = int(np.ceil(np.max(delays) * sample_rate)) + max(signal.size, 64)
    n_fft = sfft.next_fast_len(signal.size + pad, real=True)
    spec = sfft.rfft(signal, n_fft)
    f = np.arange(spec.size) / n_fft * sample_rate
    ph = np.exp(-2j * np.pi * np.outer(np.asarray(delays, float), f))
    out = sfft.irfft(spec[None, :] * ph * np.asarray(gains, float)[:, None], n_fft, axis=1)
    return out[:, :n]


def isotropic_coherence(mics, freqs, speed_of_sound=340.0) -> np.ndarray:
    """Spherically isotropic coherence matrices ``(F, M, M)`` at ``freqs`` Hz."""
    mics = np.atleast_2d(np.asarray(mics, float))
    d = np.linalg.norm(mics[:, None, :] - mics[None, :, :], axis=-1)
    return np.sinc(2.0 * np.asarray(freqs, float)[:, None, None] * d[None] / speed_of_sound)


def psd_sqrt(mats) -> np.ndarray:
    """Hermitian square root of a stack of matrices, clamping eigenvalues at 0."""
    vals, vecs = np.linalg.eigh(mats)
    vals = np.sqrt(np.clip(vals, 0.0, None))
    return (vecs * vals[..., None, :]) @ np.conj(np.swapaxes(vecs, -1, -2))


def diffuse_noise(mics, n_samples, sample_rate, speed_of_sound, rng, power=1.0):
    """Multichannel noise whose spatial coherence follows the isotropic model."""
    mics = np.atleast_2d(np.asarray(mics, float))
    n_fft = sfft.next_fast_len(n_samples, real=True)
    white = rng.standard_normal((mics.shape[0], n_fft))
    spec = sfft.rfft(white, axis=1)  # (M, F)
    freqs = np.arange(spec.shape[1]) / n_fft * sample_rate
    mix = psd_sqrt(isotropic_coherence(mics, freqs, speed_of_sound))  # (F, M, M)
    mixed = np.einsum("fij,jf->if", mix, spec)
    out = sfft.irfft(mixed, n_fft, axis=1)[:, :n_samples]
    return np.sqrt(power) * out


def synthesize(config: SceneConfig, fft_len: int = 1024, min_samples: int = 0):
    """Render ``config`` to ``(samples (M, T), GroundTruth)``.

    ``min_samples`` lets callers demand at least one processing frame.
    """
    config.validate()
    fs = config.sample_rate
    c = config.speed_of_sound
    T = config.n_samples
    if T < max(min_samples, 1):
        raise SceneError(f"scene of {T} samples is shorter than one frame ({min_samples})")
    mics = config.mic_positions
    M = mics.shape[0]
    ref = config.reference_mic
    seeds = np.random.SeedSequence(config.rng_seed).spawn(len(config.sources) + 2)

    bins = np.arange(fft_len // 2 + 1)
    images = {}
    masks = {}
    ratfs = {}
    for i, src in enumerate(config.sources):
        d = _distances(mics, src.position)
        x, mask = make_source_signal(src.signal, T, fs, np.random.default_rng(seeds[i]))
        if src.active is not None:
            gate = _interval_mask(src.active, T, fs)
            x = x * gate
            mask = mask & gate
        p = np.mean(x[mask] ** 2) if mask.any() else 0.0
        if p > 0:
            x = x * np.sqrt(src.power / p)
        images[i] = delay_and_scale(x, d / c, 1.0 / d, fs, T)
        lag = int(round(d[ref] / c * fs))
        masks[i] = np.concatenate([np.zeros(lag, dtype=bool), mask])[:T]
        ratfs[i] = steering_vector(mics, src.position, bins, fs, fft_len, c, ref)

    t_idx = next(i for i, s in enumerate(config.sources) if s.role == "target")
    i_idx = [i for i, s in enumerate(config.sources) if s.role == "interferer"]
    y = sum(images.values())

    target_ref = images[t_idx][ref]
    tmask = masks[t_idx]
    if config.self_noise_snr is not None and np.isfinite(config.self_noise_snr):
        p_t = np.mean(target_ref[tmask] ** 2) if tmask.any() else np.mean(target_ref ** 2)
        sigma = np.sqrt(p_t / 10 ** (config.self_noise_snr / 10))
        y = y + sigma * np.random.default_rng(seeds[-2]).standard_normal((M, T))
    if config.diffuse_noise_power > 0:
        y = y + diffuse_noise(mics, T, fs, c, np.random.default_rng(seeds[-1]),
                              config.diffuse_noise_power)

    gt = GroundTruth(
        ratf_target=ratfs[t_idx],
        ratf_interferers=np.array([ratfs[i] for i in i_idx]).reshape(len(i_idx), bins.size, M),
        target_mask=tmask,
        interferer_masks=np.array([masks[i] for i in i_idx]).reshape(len(i_idx), T),
        target_image=images[t_idx],
        reference_mic=ref,
    )
    return y, gt


def self_noise_sigma(config: SceneConfig, gt: GroundTruth) -> float:
    """Standard deviation of the white self-noise injected by :func:`synthesize`."""
    if config.self_noise_snr is None or not np.isfinite(config.self_noise_snr):
        return 0.0
    x = gt.clean_target_ref
    m = gt.target_mask
    p_t = np.mean(x[m] ** 2) if m.any() else np.mean(x ** 2)
    return float(np.sqrt(p_t / 10 ** (config.self_noise_snr / 10)))


def uniform_linear_node(node_id, center, n_mics=3, spacing=0.02, axis_deg=0.0) -> NodeSpec:
    """A node with ``n_mics`` microphones on a line through ``center``."""
    u = np.array([np.cos(np.deg2rad(axis_deg)), np.sin(np.deg2rad(axis_deg)), 0.0])
    offs = (np.arange(n_mics) - (n_mics - 1) / 2) * spacing
    return NodeSpec(node_id, np.asarray(center, float)[None, :] + offs[:, None] * u[None, :])


def random_point_on_sphere(rng, center, radius) -> np.ndarray:
    """Uniform draw on the surface of a sphere (used for positional errors)."""
    v = rng.standard_normal(3)
    v /= np.linalg.norm(v)
    return np.asarray(center, float) + radius * v


def desk_scene(seed=0, duration=10.0, **overrides) -> SceneConfig:
    """Five 3-mic nodes round a table with one target and three interferers.

    Loosely follows a meeting layout: 2 cm intra-node spacing, nodes about a
    metre apart, talkers around the table at 1.2 m height above the nodes.
    """
    centers = [(0.0, 0.0, 1.0), (1.0, 0.1, 1.0), (1.6, 0.9, 1.0), (0.6, 1.5, 1.0), (-0.4, 0.9, 1.0)]
    nodes = [uniform_linear_node(i + 1, c, 3, 0.02, axis_deg=36.0 * i) for i, c in enumerate(centers)]
    rng = np.random.default_rng(seed)
    sigs = [{"kind": "speechlike", "seed": int(s)} for s in rng.integers(0, 2**31, 4)]
    sources = [
        SourceSpec((0.3, -0.6, 1.3), "target", sigs[0]),
        SourceSpec((2.2, 0.2, 1.3), "interferer", sigs[1]),
        SourceSpec((1.2, 2.3, 1.3), "interferer", sigs[2]),
        SourceSpec((-1.1, 1.6, 1.3), "interferer", sigs[3]),
    ]
    kw = dict(nodes=nodes, sources=sources, duration=duration, self_noise_snr=40.0,
              reference_mic=0, rng_seed=seed)
    kw.update(overrides)
    cfg = SceneConfig(**kw)
    # nearest microphone to the target is the reference
    d = np.linalg.norm(cfg.mic_positions - cfg.target.position, axis=1)
    cfg.reference_mic = int(np.argmin(d)) if "reference_mic" not in overrides else cfg.reference_mic
    return cfg
