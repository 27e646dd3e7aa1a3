"""Transmission accounting.

Every scalar a node puts on the air goes through a :class:`Mailbox`, which
charges a :class:`TxLedger`.  A broadcast is charged once regardless of how
many neighbours hear it.  Counts are per frequency bin and per frame.
"""
from __future__ import annotations

import csv
from collections import defaultdict

import numpy as np

PHASES = ("weight", "output")


class LedgerError(ValueError):
    pass


class TxLedger:
    """Exact integer scalar counts, keyed by ``(frame, phase)``, one per bin."""

    def __init__(self, n_bins: int, algorithm: str = "", category: str = ""):
        self.n_bins = int(n_bins)
        self.algorithm = algorithm
        self.category = category
        self.frame = 0
        self._counts: dict[tuple[int, str], np.ndarray] = {}

    def begin_frame(self, frame: int) -> None:
        self.frame = int(frame)
        for phase in PHASES:
            self._counts.setdefault((self.frame, phase), np.zeros(self.n_bins, dtype=np.int64))

    def charge(self, phase: str, scalars: int, bins=None) -> None:
        if phase not in PHASES:
            raise LedgerError(f"unknown phase {phase!r}")
        row = self._counts.setdefault((self.frame, phase), np.zeros(self.n_bins, dtype=np.int64))
        if bins is None:
            row += int(scalars)
        else:
            row[bins] += int(scalars)

    def counts(self, frame: int, phase: str) -> np.ndarray:
        return self._counts.get((frame, phase), np.zeros(self.n_bins, dtype=np.int64))

    @property
    def frames(self) -> list[int]:
        return sorted({f for f, _ in self._counts})

    def total(self, phase: str | None = None) -> int:
        return int(sum(v.sum() for (f, p), v in self._counts.items() if phase in (None, p)))

    def per_bin_constant(self, frame: int, phase: str) -> int:
        """The common per-bin count of a frame; raises if bins differ."""
        c = self.counts(frame, phase)
        if c.size and np.any(c != c[0]):
            raise LedgerError(f"frame {frame} {phase}: per-bin counts differ")
        return int(c[0]) if c.size else 0

    def rows(self, per_bin: bool = True):
        """Yield ``(frame, bin, phase, algorithm, scalars)``.

        Without ``per_bin`` a frame whose bins all cost the same becomes one
        row with ``bin = -1`` and that common per-bin count.
        """
        for (f, p) in sorted(self._counts, key=lambda x: (x[0], PHASES.index(x[1]))):
            c = self._counts[(f, p)]
            if not per_bin and c.size and np.all(c == c[0]):
                yield f, -1, p, self.algorithm, int(c[0])
                continue
            for k, n in enumerate(c):
                yield f, k, p, self.algorithm, int(n)

    def to_csv(self, path, per_bin: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "bin", "phase", "algorithm", "scalars"])
            w.writerows(self.rows(per_bin))


class Mailbox:
    """In-memory transport; delivery is immediate, charging is per payload.

    Payloads are arrays whose last axis is the message and whose leading axis
    runs over frequency bins, so ``payload.shape[-1]`` scalars are charged to
    every bin.
    """

    def __init__(self, ledger: TxLedger | None, phase: str):
        self.ledger = ledger
        self.phase = phase
        self._inbox = defaultdict(list)

    def _charge(self, payload):
        if self.ledger is not None:
            self.ledger.charge(self.phase, np.shape(payload)[-1])

    def send(self, src: int, dst: int, payload) -> None:
        self._charge(payload)
        self._inbox[dst].append((src, payload))

    def broadcast(self, src: int, dsts, payload) -> None:
        dsts = list(dsts)
        if not dsts:
            return
        self._charge(payload)
        for d in dsts:
            self._inbox[d].append((src, payload))

    def receive(self, dst: int) -> list:
        msgs = self._inbox.pop(dst, [])
        return msgs


# ---------------------------------------------------------------------------
# closed-form costs (per frame and bin)
# ---------------------------------------------------------------------------

def cost_table(N: int, K: int, r: int, t_max: int = 1) -> dict[str, int]:
    """Closed-form transmission counts for every weight and output row."""
    return {
        "BDLCMV/BDLCMP (cyclic)": t_max * (r + 1) * N,
        "BDLCMV/BDLCMP (acyclic)": (r * r + 3 * r + 2) * (N - 1) // 2 + (r + 1) * (N - K),
        "BDLCMV (acyclic, unchanged P)": 0,
        "DLCMV (acyclic)": 2 * N - 1 - K,
        "DGSC (acyclic)": (2 * N - 1 - K) + (r + 1) * (N - K),
        "TI-DANSE (cyclic)": (2 * N - 1 - K) * (r + 1),
        "output (cyclic)": t_max * N,
        "output (acyclic)": N - 1,
    }


def expected_weight_cost(mode: str, N: int, K: int, r: int, t_max: int, changed: bool) -> int:
    rows = cost_table(N, K, r, t_max)
    if mode == "cyclic":
        return rows["BDLCMV/BDLCMP (cyclic)"]
    if mode == "acyclic":
        return rows["BDLCMV/BDLCMP (acyclic)"] if changed else rows["BDLCMV (acyclic, unchanged P)"]
    raise LedgerError(f"no weight-phase cost for mode {mode!r}")


def expected_output_cost(mode: str, N: int, t_max: int) -> int:
    if mode == "cyclic":
        return t_max * N
    if mode == "acyclic":
        return N - 1
    raise LedgerError(f"no output-phase cost for mode {mode!r}")


def ledger_check(ledger: TxLedger, frame: int, *, weight_mode: str, output_mode: str, N: int,
                 K: int, r: int, t_max: int = 1, changed: bool = True,
                 output_t_max: int | None = None) -> dict:
    """Compare one frame's measured counts with the closed forms.

    ``output_t_max`` defaults to ``t_max``.  Returns a report dict;
    ``report["ok"]`` is False on any mismatch.
    """
    want_w = expected_weight_cost(weight_mode, N, K, r, t_max, changed)
    want_o = expected_output_cost(output_mode, N, t_max if output_t_max is None else output_t_max)
    got_w = ledger.per_bin_constant(frame, "weight")
    got_o = ledger.per_bin_constant(frame, "output")
    return {"frame": frame, "weight": (got_w, want_w), "output": (got_o, want_o),
            "ok": got_w == want_w and got_o == want_o}


def format_cost_table(N: int, K: int, r: int, t_max: int) -> str:
    rows = cost_table(N, K, r, t_max)
    width = max(len(k) for k in rows)
    lines = [f"# N={N} K={K} r={r} t_max={t_max}  (scalars per frame and bin)"]
    lines += [f"{k:<{width}}  {v}" for k, v in rows.items()]
    return "\n".join(lines)
