"""The six standard label-distribution evaluation measures."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from lcgldl.errors import DataError

KL_EPS = 1e-12
NAMES = ("chebyshev", "clark", "canberra", "kl", "cosine", "intersection")
HIGHER_IS_BETTER = {"chebyshev": False, "clark": False, "canberra": False, "kl": False,
                    "cosine": True, "intersection": True}
DIST_TOL = 1e-6


@dataclass(frozen=True)
class MetricsReport:
    chebyshev: float
    clark: float
    canberra: float
    kl: float
    cosine: float
    intersection: float

    def as_dict(self) -> dict:
        return asdict(self)

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, k) for k in NAMES)


@dataclass(frozen=True)
class AggregateReport:
    mean: dict
    std: dict
    fold_count: int

    def as_dict(self) -> dict:
        return {"mean": dict(self.mean), "std": dict(self.std), "fold_count": self.fold_count}

    @classmethod
    def from_dict(cls, doc: dict) -> "AggregateReport":
        return cls(dict(doc["mean"]), dict(doc["std"]), int(doc["fold_count"]))


def _check(rows, what):
    rows = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(rows)) or rows.min(initial=0.0) < 0.0:
        raise DataError(f"{what} contains negative or non-finite entries")
    sums = rows.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > DIST_TOL):
        raise DataError(f"{what} rows are not distributions")
    return rows


def _safe_ratio(num, den):
    # 0/0 cells (both entries zero) contribute nothing
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _per_row(d: np.ndarray, dh: np.ndarray) -> np.ndarray:
    """Six measures for each row pair, shape (m, 6)."""
    diff = d - dh
    absdiff = np.abs(diff)
    total = d + dh
    cheb = absdiff.max(axis=-1)
    clark = np.sqrt(_safe_ratio(diff * diff, total * total).sum(axis=-1))
    canb = _safe_ratio(absdiff, total).sum(axis=-1)
    q = np.maximum(dh, KL_EPS)
    # 0 ln 0 = 0
    kl = np.where(d > 0, d * np.log(np.where(d > 0, d, 1.0) / q), 0.0).sum(axis=-1)
    # one sqrt of the product keeps cos(d, d) == 1 exactly
    cos = (d * dh).sum(axis=-1) / np.sqrt((d * d).sum(axis=-1) * (dh * dh).sum(axis=-1))
    # equals sum(min(d, dh)) for distributions, and is exactly 1 when d == dh
    inter = 1.0 - 0.5 * absdiff.sum(axis=-1)
    return np.stack([cheb, clark, canb, kl, cos, inter], axis=-1)


def evaluate_pair(d, d_hat) -> MetricsReport:
    d = _check(np.atleast_2d(d), "true distribution")
    d_hat = _check(np.atleast_2d(d_hat), "predicted distribution")
    if d.shape != d_hat.shape or d.shape[0] != 1:
        raise DataError(f"evaluate_pair needs two vectors of equal length, got {d.shape} and {d_hat.shape}")
    return MetricsReport(*(float(v) for v in _per_row(d, d_hat)[0]))


def evaluate_dataset(true, pred) -> MetricsReport:
    true = _check(true, "true label matrix")
    pred = _check(pred, "predicted label matrix")
    if true.shape != pred.shape:
        raise DataError(f"shape mismatch: {true.shape} vs {pred.shape}")
    return MetricsReport(*(float(v) for v in _per_row(true, pred).mean(axis=0)))


def aggregate(reports) -> AggregateReport:
    reports = list(reports)
    if not reports:
        raise DataError("cannot aggregate an empty list of reports")
    table = np.array([r.as_tuple() for r in reports])
    mean = table.mean(axis=0)
    std = table.std(axis=0, ddof=1) if len(reports) > 1 else np.zeros(len(NAMES))
    return AggregateReport(dict(zip(NAMES, map(float, mean))), dict(zip(NAMES, map(float, std))), len(reports))


_HEADERS = {"chebyshev": "Chebyshev", "clark": "Clark", "canberra": "Canberra", "kl": "K-L",
            "cosine": "Cosine", "intersection": "Intersection"}


def format_table(rows: dict, precision: int = 4) -> str:
    """Aligned ``mean±std`` table, one line per named aggregate."""
    heads = ["Algorithm"] + [f"{_HEADERS[k]} {'↑' if HIGHER_IS_BETTER[k] else '↓'}" for k in NAMES]
    body = []
    for label, agg in rows.items():
        body.append([label] + [f"{agg.mean[k]:.{precision}f}±{agg.std[k]:.{precision}f}" for k in NAMES])
    widths = [max(len(r[i]) for r in [heads] + body) for i in range(len(heads))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(heads, widths)).rstrip()]
    lines.append("-+-".join("-" * w for w in widths))
    lines += [" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in body]
    return "\n".join(lines)
