"""Post-hoc inspection of learned adapters: contribution curves, effective
dimension, orthonormality residuals and pairwise subspace distances."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DegenerateInputError
from .linalg import svd
from .model import MultiDomainNet
from .persist import atomic_write_text
from .subspace import contribution_curve, truncation_rank


def adapter_curve(m: np.ndarray, rank: int | None = None) -> np.ndarray:
    """Contribution curve of ``m``'s singular values, cut to ``rank`` entries.

    Raises:
        DegenerateInputError: ``m`` is all zeros.
    """
    curve = contribution_curve(svd(np.asarray(m, dtype=np.float64)).sigma)
    return curve[:rank] if rank is not None else curve


def linearity_gap(curve) -> float:
    """``max_k |C_k - k/r|``: distance from the equal-energy (straight) curve."""
    curve = np.asarray(curve, dtype=np.float64)
    r = curve.size
    return float(np.max(np.abs(curve - np.arange(1, r + 1) / r)))


def orth_residual(b: np.ndarray) -> float:
    return float(np.linalg.norm(b.T @ b - np.eye(b.shape[1]), "fro"))


def subspace_distance(b_i: np.ndarray, b_j: np.ndarray) -> float:
    return float(np.linalg.norm(b_i @ b_i.T - b_j @ b_j.T, "fro"))


@dataclass
class AdapterRecord:
    layer: int
    adapter: str
    curve: np.ndarray | None      # None when the adapter is all zeros
    effective_dim: int | None
    linearity_gap: float | None
    orth_residual: float

    @property
    def degenerate(self) -> bool:
        return self.curve is None


@dataclass
class AdapterReport:
    records: list[AdapterRecord]
    pairs: list[tuple[int, int, int, float]]   # (layer, i, j, distance)

    def mean_linearity_gap(self, domain_only: bool = True) -> float:
        gaps = [r.linearity_gap for r in self.records
                if not r.degenerate and (r.adapter != "shared" or not domain_only)]
        return float(np.mean(gaps)) if gaps else float("nan")

    def mean_distance(self) -> float:
        return float(np.mean([p[3] for p in self.pairs])) if self.pairs else float("nan")

    def mean_orth_residual(self, domain_only: bool = True) -> float:
        res = [r.orth_residual for r in self.records if r.adapter != "shared" or not domain_only]
        return float(np.mean(res)) if res else float("nan")


def report(net: MultiDomainNet, on: str = "B") -> AdapterReport:
    """Analyse every adapter of ``net``.

    Args:
        on: ``"B"`` to analyse the B factor, ``"delta"`` for ``B A^T``.
    """
    if on not in ("B", "delta"):
        raise ContractError(f"on must be 'B' or 'delta', got {on!r}")
    records = []
    pairs = []
    for idx, layer in enumerate(net.layers):
        named = [("shared", layer.shared)] + [(f"dom{i}", p) for i, p in enumerate(layer.specific)]
        if not named:
            raise ContractError(f"layer {idx} has no adapters")
        for name, pair in named:
            target = pair.b if on == "B" else pair.delta()
            try:
                curve = adapter_curve(target, pair.rank)
                rec = AdapterRecord(idx, name, curve, truncation_rank(curve, 0.95),
                                    linearity_gap(curve), orth_residual(pair.b))
            except DegenerateInputError:
                rec = AdapterRecord(idx, name, None, None, None, orth_residual(pair.b))
            records.append(rec)
        for i in range(len(layer.specific)):
            for j in range(i + 1, len(layer.specific)):
                pairs.append((idx, i, j, subspace_distance(layer.specific[i].b,
                                                           layer.specific[j].b)))
    return AdapterReport(records, pairs)


REPORT_COLUMNS = ["layer", "adapter", "k", "C_k", "linearity_gap", "orth_residual",
                  "effective_dim", "degenerate"]


def write_report(rep: AdapterReport, out: str | Path, rank: int) -> tuple[Path, Path]:
    """Write one row per (layer, adapter, k) to ``out`` and pair distances to
    ``pairs.csv`` alongside it. Degenerate adapters get blank curve fields and
    ``degenerate=1``."""
    out = Path(out)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for rec in rep.records:
        for k in range(1, rank + 1):
            if rec.degenerate:
                w.writerow([rec.layer, rec.adapter, k, "", "", repr(rec.orth_residual), "", 1])
            else:
                w.writerow([rec.layer, rec.adapter, k, repr(float(rec.curve[k - 1])),
                            repr(rec.linearity_gap), repr(rec.orth_residual),
                            rec.effective_dim, 0])
    atomic_write_text(out, buf.getvalue())
    pbuf = io.StringIO()
    pw = csv.writer(pbuf, lineterminator="\n")
    pw.writerow(["layer", "i", "j", "distance"])
    for layer, i, j, dist in rep.pairs:
        pw.writerow([layer, i, j, repr(dist)])
    pairs_path = out.with_name("pairs.csv")
    atomic_write_text(pairs_path, pbuf.getvalue())
    return out, pairs_path
