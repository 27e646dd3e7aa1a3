"""File formats: a binary container for CPSDMs and weights, and CSV writers.

Binary layout (little endian)::

    magic      4s   b"DBMX"
    version    u16  1
    kind       u8   0 full CPSDM, 1 block-diagonal CPSDM, 2 weights
    dtype      u8   0 complex64, 1 complex128
    M          u32  number of channels
    fft_len    u32  DFT length (bins = fft_len/2 + 1)
    n_bins     u32
    frames     u64  frame count of the estimate (0 for weights)
    n_blocks   u32
    sizes      u32 * n_blocks
    payload    per bin, row major: one M x M matrix (full), each node block
               in order (block-diagonal), or one M-vector (weights)
"""
from __future__ import annotations

import csv
import struct

import numpy as np

from .estimation import CpsdmSet

MAGIC = b"DBMX"
VERSION = 1
_HEAD = struct.Struct("<4sHBBIIIQI")
_KINDS = {"full": 0, "block_diagonal": 1, "weights": 2}
_DTYPES = {0: np.dtype("<c8"), 1: np.dtype("<c16")}


class ContainerError(ValueError):
    pass


def _dtype_code(dtype) -> int:
    return 0 if np.dtype(dtype) == np.complex64 else 1


def _write(path, kind, M, fft_len, n_bins, frames, sizes, payload, dtype):
    code = _dtype_code(dtype)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, _KINDS[kind], code, M, fft_len, n_bins, frames,
                            len(sizes)))
        fh.write(np.asarray(sizes, "<u4").tobytes())
        fh.write(np.ascontiguousarray(payload, _DTYPES[code]).tobytes())


def _read(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEAD.size:
        raise ContainerError(f"{path}: truncated header")
    magic, version, kind, code, M, fft_len, n_bins, frames, nb = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise ContainerError(f"{path}: not a container file")
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise ContainerError(f"{path}: unknown dtype code {code}")
    off = _HEAD.size
    sizes = np.frombuffer(raw, "<u4", nb, off).astype(int).tolist()
    off += 4 * nb
    data = np.frombuffer(raw, _DTYPES[code], offset=off)
    kind = {v: k for k, v in _KINDS.items()}.get(kind)
    if kind is None:
        raise ContainerError(f"{path}: unknown payload kind")
    return kind, M, fft_len, n_bins, frames, sizes, data


def save_cpsdm(path, cpsdm: CpsdmSet, fft_len: int, dtype=np.complex128) -> None:
    if cpsdm.mode == "full":
        payload = cpsdm.data.reshape(cpsdm.n_bins, -1)
    else:
        payload = np.concatenate([d.reshape(cpsdm.n_bins, -1) for d in cpsdm.data], axis=1)
    _write(path, cpsdm.mode, cpsdm.n_mics, fft_len, cpsdm.n_bins, cpsdm.frame_count,
           cpsdm.block_sizes, payload, dtype)


def load_cpsdm(path) -> tuple[CpsdmSet, int]:
    """Return ``(cpsdm, fft_len)``."""
    kind, M, fft_len, K, frames, sizes, data = _read(path)
    if kind == "weights":
        raise ContainerError(f"{path} holds weights, not a CPSDM")
    edges = np.cumsum([0] + sizes)
    blocks = [np.arange(a, b) for a, b in zip(edges[:-1], edges[1:])]
    out = CpsdmSet(K, blocks, mode=kind)
    want = K * (M * M if kind == "full" else sum(s * s for s in sizes))
    if data.size != want:
        raise ContainerError(f"{path}: payload has {data.size} values, expected {want}")
    data = data.astype(complex).reshape(K, -1)
    if kind == "full":
        out.data = data.reshape(K, M, M).copy()
    else:
        cuts = np.cumsum([0] + [s * s for s in sizes])
        out.data = [data[:, a:b].reshape(K, s, s).copy()
                    for a, b, s in zip(cuts[:-1], cuts[1:], sizes)]
    out.frame_count = int(frames)
    return out, fft_len


def save_weights(path, w, fft_len: int, block_sizes=None, dtype=np.complex128) -> None:
    w = np.asarray(w)
    K, M = w.shape
    _write(path, "weights", M, fft_len, K, 0, block_sizes or [M], w, dtype)


def load_weights(path) -> tuple[np.ndarray, int, list[int]]:
    """Return ``(w (K, M), fft_len, block_sizes)``."""
    kind, M, fft_len, K, _, sizes, data = _read(path)
    if kind != "weights":
        raise ContainerError(f"{path} holds a CPSDM, not weights")
    if data.size != K * M:
        raise ContainerError(f"{path}: payload has {data.size} values, expected {K * M}")
    return data.astype(complex).reshape(K, M).copy(), fft_len, sizes


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def fmt(v) -> str:
    """Nine significant digits for floats, plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_directivity_csv(path, azimuths_deg, gain_db) -> None:
    write_csv(path, ["theta_deg", "gain_dB"], zip(np.asarray(azimuths_deg, float),
                                                   np.asarray(gain_db, float)))
