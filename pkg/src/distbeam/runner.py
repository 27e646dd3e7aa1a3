"""End-to-end experiments: synthesize, analyse, estimate, beamform, synthesize
output, score.

Beamforming runs centrally or over a simulated network:

* ``centralized``: one solver sees every channel.
* ``acyclic``: weights by tree aggregation, output summed up the tree.
* ``cyclic``: weights by warm-started PDMM, output by PDMM averaging.
* ``hybrid``: PDMM weights, tree-summed output.

Only kinds whose objective separates over nodes can run distributed.
"""
from __future__ import annotations

import dataclasses
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .beamform import SEPARABLE, TABLE, Beamformer, BeamWeights, build_constraints, solve_lcqp
from .config import ExperimentSpec
from .containers import write_csv
from .distnet import (PdmmState, TxLedger, aggregate_dual, aggregate_output, average_output,
                      build_spanning_tree, local_systems, make_topology, pdmm_weight_step,
                      pdmm_weights, warm_start, weight_problem)
from .estimation import CpsdmSet, TadLabeler, estimate_ratf, isotropic_matrix
from .scene import (SceneConfig, SceneError, random_point_on_sphere, self_noise_sigma,
                    steering_vector, synthesize, write_wav_mono)
from .stft import OlsConfig, analyze, synthesize_output

log = logging.getLogger(__name__)

MODES = ("centralized", "acyclic", "cyclic", "hybrid")
RATF_SOURCES = ("ground_truth", "estimated", "perturbed")
THREADS_ENV = "DISTBEAM_THREADS"
RESULT_HEADER = ["scenario", "algorithm", "mode", "axis", "axis_value", "seed", "metric", "value",
                 "failures"]
SWEEP_AXES = ("perturbation_radius", "t_max", "topology")


class RunError(ValueError):
    pass


def check_spec(spec: ExperimentSpec) -> None:
    """Reject incompatible kind/mode/TAD/RATF combinations."""
    kind = spec.beamformer
    if kind not in TABLE:
        raise RunError(f"unknown beamformer {kind!r}; expected one of {sorted(TABLE)}")
    if spec.mode not in MODES:
        raise RunError(f"unknown mode {spec.mode!r}; expected one of {MODES}")
    if spec.mode != "centralized" and kind not in SEPARABLE:
        raise RunError(f"{kind} does not separate over nodes; it can only run centralized "
                       f"(distributable kinds: {', '.join(SEPARABLE)})")
    tad = dict(spec.tad or {})
    if TABLE[kind].needs_tad and tad.get("kind") not in ("ideal", "energy"):
        raise RunError(f"{kind} needs a target activity detector (tad: ideal | energy)")
    src = dict(spec.ratf or {}).get("source", "ground_truth")
    if src not in RATF_SOURCES:
        raise RunError(f"unknown RATF source {src!r}; expected one of {RATF_SOURCES}")
    if src == "perturbed" and float(spec.ratf.get("radius", 0.0)) < 0:
        raise RunError("perturbation radius must be non-negative")
    if int(spec.t_max) < 1 or int(spec.output_t_max) < 1:
        raise RunError("iteration limits must be at least 1")
    if not float(spec.rho) > 0:
        raise RunError("rho must be positive")
    if not spec.seeds:
        raise RunError("at least one seed is required")


# ---------------------------------------------------------------------------
# RATFs
# ---------------------------------------------------------------------------

def _perturbed_position(rng, mics, center, radius, tries=100):
    for _ in range(tries):
        p = random_point_on_sphere(rng, center, radius)
        if np.min(np.linalg.norm(mics - p, axis=1)) >= 0.05:
            return p
    raise RunError(f"could not place a training position {radius} m from {center}")


def _solo_estimate(scene: SceneConfig, src_index: int, ols: OlsConfig, seed: int):
    """Dominant-eigenvector RATF from a recording of one source alone."""
    src = dataclasses.replace(scene.sources[src_index], role="target")
    solo = SceneConfig(
        nodes=scene.nodes, sources=[src], sample_rate=scene.sample_rate, speed_of_sound=scene.speed_of_sound,
        duration=scene.duration, self_noise_snr=scene.self_noise_snr, diffuse_noise_power=0.0,
        reference_mic=scene.reference_mic, rng_seed=seed + 7919 * (src_index + 1))
    y, gt = synthesize(solo, ols.fft_len, ols.analysis_len)
    Y = analyze(y, ols)
    active = gt.frame_activity(ols)
    P = CpsdmSet(ols.n_bins, scene.n_mics)
    for frame, a in zip(Y, active):
        P.update(frame, bool(a))
    ratf, _ = estimate_ratf(P, scene.reference_mic)
    return ratf


def training_ratfs(scene: SceneConfig, gt, spec: ExperimentSpec, ols: OlsConfig, seed: int):
    """RATFs the beamformer is built from: ``(target (K, M), interferers (r, K, M))``."""
    src = (spec.ratf or {}).get("source", "ground_truth")
    if src == "ground_truth":
        return gt.ratf_target, gt.ratf_interferers
    t_idx = next(i for i, s in enumerate(scene.sources) if s.role == "target")
    i_idx = [i for i, s in enumerate(scene.sources) if s.role == "interferer"]
    if src == "estimated":
        est = {i: _solo_estimate(scene, i, ols, seed) for i in [t_idx] + i_idx}
        return est[t_idx], np.array([est[i] for i in i_idx]).reshape(gt.ratf_interferers.shape)
    radius = float(spec.ratf.get("radius", 0.0))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2718]))
    mics = scene.mic_positions
    bins = np.arange(ols.n_bins)
    out = {}
    for i in [t_idx] + i_idx:
        p = scene.sources[i].position
        if radius > 0:
            p = _perturbed_position(rng, mics, p, radius)
        out[i] = steering_vector(mics, p, bins, scene.sample_rate, ols.fft_len,
                                 scene.speed_of_sound, scene.reference_mic)
    return out[t_idx], np.array([out[i] for i in i_idx]).reshape(gt.ratf_interferers.shape)


# ---------------------------------------------------------------------------
# processing
# ---------------------------------------------------------------------------

@dataclass
class ProcessResult:
    output: np.ndarray
    target_output: np.ndarray  # the clean target image through the same weights
    ledger: TxLedger
    weights: np.ndarray  # last frame (K, M)
    failures: int
    max_residual: float
    target_response: float  # mean |w^H a_true| over frames and bins
    null_depth_db: np.ndarray  # worst bin per interferer, last frame
    tad: np.ndarray
    recomputed: np.ndarray  # per frame: did the weight statistic change
    n_leaves: int | None
    extra: dict = field(default_factory=dict)


def _ambient_blocks(scene, gt, ols, blocks):
    """Oracle per-node ambient statistics (self-noise plus diffuse noise) in DFT units."""
    scale = ols.analysis_len
    sigma2 = self_noise_sigma(scene, gt) ** 2
    K = ols.n_bins
    out = []
    for idx in blocks:
        P = np.broadcast_to(sigma2 * np.eye(idx.size), (K, idx.size, idx.size)).astype(complex)
        if scene.diffuse_noise_power > 0:
            iso = isotropic_matrix(scene.mic_positions[idx], np.arange(K), scene.sample_rate,
                                   ols.fft_len, scene.speed_of_sound)
            P = P + scene.diffuse_noise_power * iso
        out.append(scale * P)
    return out


def _beamformer(spec, scene, gt, ols, constraints, blocks):
    kind = spec.beamformer
    stat = TABLE[kind].statistic
    kw = {}
    if stat == "ambient":
        kw["ambient"] = _ambient_blocks(scene, gt, ols, blocks)
    elif stat == "isotropic":
        sig2 = self_noise_sigma(scene, gt) ** 2
        kw.update(iso_power=ols.analysis_len * scene.diffuse_noise_power,
                  self_noise_power=ols.analysis_len * max(sig2, 1e-12),
                  mics=scene.mic_positions, sample_rate=scene.sample_rate,
                  fft_len=ols.fft_len, speed_of_sound=scene.speed_of_sound)
    return Beamformer(kind, constraints, blocks, **kw)


def _statistic_blocks(bf: Beamformer, noisy: CpsdmSet, noise: CpsdmSet):
    """The node blocks and change flag a separable kind would solve with."""
    stat = bf.spec.statistic
    if stat == "identity":
        return [None] * len(bf.blocks), bf.last is None
    if stat == "ambient":
        return bf.fixed, bf.last is None
    src = noisy if stat == "noisy" else noise
    changed = bf.last is None or src.changed
    if src.frame_count == 0:
        return [None] * len(bf.blocks), changed
    return src.node_blocks(), changed


def process(y, scene: SceneConfig, gt, spec: ExperimentSpec, ratf_target, ratf_interferers,
            root_hook=None) -> ProcessResult:
    """Run the frame loop on one synthesized mixture."""
    ols = OlsConfig(**(spec.stft or {}))
    kind = spec.beamformer
    mode = spec.mode
    blocks = scene.blocks
    N = scene.n_nodes
    Y = analyze(y, ols)
    X = analyze(gt.target_image, ols)
    n_frames, K, M = Y.shape
    if n_frames == 0:
        raise RunError("signal is shorter than one analysis window")

    tad_kw = dict(spec.tad or {"kind": "ideal"})
    labeler = TadLabeler(reference_mic=scene.reference_mic, **tad_kw)
    active = labeler.label(y[scene.reference_mic], ols, scene.sample_rate, gt)

    avg = dict(spec.averaging or {})
    avg_mode = avg.get("mode", "cumulative")
    lam = float(avg.get("forgetting", 0.98))
    struct = "block_diagonal" if TABLE[kind].structure == "block" else "full"
    noisy = CpsdmSet(K, blocks, struct, avg_mode, lam)
    noise = CpsdmSet(K, blocks, struct, avg_mode, lam)
    mode_c = "with_nulls" if TABLE[kind].nulls else "distortionless_only"
    constraints = build_constraints(ratf_target, ratf_interferers, mode_c)
    bf = _beamformer(spec, scene, gt, ols, constraints, blocks)
    cons = bf.constraints
    d = cons.d

    ledger = TxLedger(K, kind, mode)
    graph = tree = None
    n_leaves = None
    if mode != "centralized":
        graph = make_topology(spec.topology, N)
        default_root = spec.root if spec.root is not None else scene.node_of_mic(scene.reference_mic)
        tree = build_spanning_tree(graph, default_root)
        n_leaves = tree.n_leaves
    pdmm_state = None
    local = systems = scaled = None
    ref_node = scene.node_of_mic(scene.reference_mic)

    Z = np.zeros((n_frames, K), dtype=complex)
    ZX = np.zeros((n_frames, K), dtype=complex)
    recomputed = np.zeros(n_frames, dtype=bool)
    responses = []
    failures = 0
    max_res = 0.0
    a_true = gt.ratf_target
    w = None
    for beta in range(n_frames):
        ledger.begin_frame(beta)
        frame = Y[beta]
        noisy.update(frame, True)
        noise.update(frame, not active[beta])
        if root_hook is not None and tree is not None:
            tree = build_spanning_tree(graph, root_hook(beta))
            n_leaves = tree.n_leaves

        if mode == "centralized":
            bw = bf.weights(noisy, noise)
            changed = bf.recomputed
        else:
            P_blocks, changed = _statistic_blocks(bf, noisy, noise)
            if mode == "acyclic":
                if changed:
                    systems = local_systems(tree, blocks, P_blocks, cons)
                    prev = None if bf.last is None else bf.last.w
                    bf.last = aggregate_dual(tree, systems, cons, ledger, prev, kind).weights
                bw = bf.last
            else:
                if changed or systems is None:
                    # per-sample power units: the consensus point and the
                    # weights are unchanged, but rho no longer depends on the
                    # DFT gain
                    scaled = [None if Pk is None else Pk / ols.analysis_len for Pk in P_blocks]
                    systems = local_systems(graph, blocks, scaled, cons)
                    local = weight_problem(graph, systems, cons.f, spec.rho)
                if spec.warm_start:
                    pdmm_state = warm_start(pdmm_state, graph, K, d, spec.rho)
                else:
                    pdmm_state = PdmmState.cold(graph, K, d, spec.rho)
                for _ in range(int(spec.t_max)):
                    pdmm_state = pdmm_weight_step(pdmm_state, local, graph, ledger)
                wk = pdmm_weights(pdmm_state, systems, M)
                res = np.max(np.abs(np.einsum("kmd,km->kd", np.conj(cons.lam), wk) - cons.f),
                             axis=1)
                bw = BeamWeights(wk, kind, res, None, np.zeros(K, dtype=bool), None)
                bf.last = bw
        recomputed[beta] = changed
        w = bw.w
        if changed:
            failures += bw.n_failed
            if mode in ("centralized", "acyclic"):
                max_res = max(max_res, float(np.max(bw.residual)))

        prods = {n: np.sum(np.conj(w[:, idx]) * frame[:, idx], axis=1)
                 for n, idx in zip(scene.node_ids, blocks)}
        if mode == "centralized":
            Z[beta] = sum(prods.values())
        elif mode in ("acyclic", "hybrid"):
            Z[beta] = aggregate_output(tree, prods, ledger)
        else:
            st, _ = average_output(graph, prods, spec.output_t_max, spec.rho, ledger)
            Z[beta] = N * st.x[ref_node][:, 0]
        ZX[beta] = np.sum(np.conj(w) * X[beta], axis=1)
        responses.append(metrics.response(w[1:-1], a_true[1:-1]))

    extra = {}
    if mode in ("cyclic", "hybrid"):
        # distance of the last frame's iterate from the exact solve of the same statistics
        ref = solve_lcqp(scaled, cons, blocks)
        mu_den = np.maximum(np.linalg.norm(ref.mu, axis=1), 1e-300)
        dual = np.max([np.linalg.norm(pdmm_state.x[n] - ref.mu, axis=1) for n in graph.nodes], axis=0)
        w_den = np.maximum(np.linalg.norm(ref.w, axis=1), 1e-300)
        extra["dual_error"] = float(np.median(dual / mu_den))
        extra["weight_error"] = float(np.median(np.linalg.norm(w - ref.w, axis=1) / w_den))

    T = y.shape[1]
    out = synthesize_output(Z, ols, T)
    tout = synthesize_output(ZX, ols, T)
    nd = metrics.null_depth(w, gt.ratf_interferers) if gt.ratf_interferers.size else np.zeros(0)
    return ProcessResult(out, tout, ledger, w, failures, max_res,
                         float(np.mean(responses)), nd, active, recomputed, n_leaves, extra)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    seed: int
    metrics: dict
    failures: int
    result: ProcessResult


def run_seed(spec: ExperimentSpec, seed: int) -> RunRecord:
    check_spec(spec)
    ols = OlsConfig(**(spec.stft or {}))
    try:
        scene = spec.scene_config(seed)
        y, gt = synthesize(scene, ols.fft_len, ols.analysis_len)
    except SceneError as exc:
        raise RunError(str(exc)) from exc
    a, b = training_ratfs(scene, gt, spec, ols, seed)
    res = process(y, scene, gt, spec, a, b)
    region = ols.interior(y.shape[1])
    ref = y[scene.reference_mic, region]
    clean = gt.clean_target_ref[region]
    seg = ols.frame_len
    m = {
        "ssnr_in": metrics.ssnr(clean, ref, seg),
        "ssnr_out": metrics.ssnr(clean, res.output[region], seg),
        "target_response": res.target_response,
        "target_distortion_db": metrics.target_distortion(clean, res.target_output[region]),
        "null_depth_db": float(np.max(res.null_depth_db)) if res.null_depth_db.size else -300.0,
        "max_residual": res.max_residual,
        "weight_scalars": res.ledger.total("weight"),
        "output_scalars": res.ledger.total("output"),
        "tad_active_fraction": float(np.mean(res.tad)),
        # PDMM modes only; nan elsewhere
        "dual_error": res.extra.get("dual_error", float("nan")),
        "weight_error": res.extra.get("weight_error", float("nan")),
    }
    m["ssnr_gain"] = m["ssnr_out"] - m["ssnr_in"]
    res.extra["scene"] = scene
    return RunRecord(seed, m, res.failures, res)


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _run_jobs(jobs):
    """Run ``(spec, seed)`` jobs, in parallel if requested; results keep job order."""
    workers = n_threads()
    if workers == 1 or len(jobs) == 1:
        return [run_seed(s, seed) for s, seed in jobs]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda j: run_seed(*j), jobs))


METRIC_ORDER = ("ssnr_in", "ssnr_out", "ssnr_gain", "target_response", "target_distortion_db",
                "null_depth_db", "max_residual", "weight_scalars", "output_scalars",
                "tad_active_fraction", "dual_error", "weight_error")


def _rows(spec, records, axis="", value=""):
    rows = []
    for rec in records:
        for name in METRIC_ORDER:
            rows.append([spec.id, spec.beamformer, spec.mode, axis, value, rec.seed, name,
                         rec.metrics[name], rec.failures])
    return rows


def _mean_rows(spec, records, axis="", value=""):
    fails = sum(r.failures for r in records)
    return [[spec.id, spec.beamformer, spec.mode, axis, value, "mean", name,
             float(np.mean([r.metrics[name] for r in records])), fails] for name in METRIC_ORDER]


@dataclass
class ExperimentResult:
    records: list
    rows: list
    exit_status: int


def run_experiment(spec: ExperimentSpec, write=True) -> ExperimentResult:
    """All seeds of one spec; writes the configured CSV/audio outputs."""
    check_spec(spec)
    records = _run_jobs([(spec, s) for s in spec.seeds])
    rows = _rows(spec, records)
    if len(records) > 1:
        rows += _mean_rows(spec, records)
    outputs = spec.outputs or {}
    if write:
        if outputs.get("results_csv"):
            write_csv(outputs["results_csv"], RESULT_HEADER, rows)
        if outputs.get("ledger_csv"):
            _write_ledgers(outputs["ledger_csv"], records, bool(outputs.get("ledger_per_bin")))
        if outputs.get("audio"):
            fs = spec.scene_config(records[0].seed).sample_rate
            for rec in records:
                path = outputs["audio"]
                if len(records) > 1:
                    root, ext = os.path.splitext(path)
                    path = f"{root}_seed{rec.seed}{ext or '.wav'}"
                write_wav_mono(path, rec.result.output, fs)
    for rec in records:
        if rec.failures:
            log.warning("seed %d: %d per-bin solve failures", rec.seed, rec.failures)
    return ExperimentResult(records, rows, 0)


def _write_ledgers(path, records, per_bin):
    rows = []
    for rec in records:
        for row in rec.result.ledger.rows(per_bin):
            rows.append((rec.seed,) + tuple(row))
    write_csv(path, ["seed", "frame", "bin", "phase", "algorithm", "scalars"], rows)


def sweep(spec: ExperimentSpec, axis: str, values, seeds=None, out_csv=None) -> ExperimentResult:
    """Run ``spec`` for every value on ``axis`` and every seed; per-seed and mean rows."""
    if axis not in SWEEP_AXES:
        raise RunError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    seeds = list(spec.seeds if seeds is None else seeds)
    variants = []
    for v in values:
        if axis == "perturbation_radius":
            ratf = dict(spec.ratf or {})
            ratf.update(source="perturbed", radius=float(v))
            s = spec.replace(ratf=ratf, seeds=seeds)
        elif axis == "t_max":
            s = spec.replace(t_max=int(v), seeds=seeds)
        else:
            s = spec.replace(topology=v, seeds=seeds)
        check_spec(s)
        variants.append((v, s))
    jobs = [(s, seed) for _, s in variants for seed in seeds]
    records = _run_jobs(jobs)
    rows = []
    all_records = []
    for i, (v, s) in enumerate(variants):
        recs = records[i * len(seeds):(i + 1) * len(seeds)]
        all_records += recs
        label = v if not isinstance(v, dict) else str(v)
        rows += _rows(s, recs, axis, label)
        rows += _mean_rows(s, recs, axis, label)
    if out_csv:
        write_csv(out_csv, RESULT_HEADER, rows)
    return ExperimentResult(all_records, rows, 0)
