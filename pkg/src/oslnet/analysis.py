"""Weight-angle matrices, norm-bound checks, paired t-tests and aggregate statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .layers import build_mask
from .linalg import as_matrix, spectral_norm

SIGNIFICANCE = 0.05


class DegenerateWeightsError(ValueError):
    pass


class DegenerateTestError(ValueError):
    """All paired differences identical, so the t statistic is undefined."""

    def __init__(self, mean_diff: float, n: int):
        super().__init__(f"paired differences have zero variance (mean diff {mean_diff}, n={n})")
        self.mean_diff = mean_diff
        self.n = n


def angle_matrix(weights) -> np.ndarray:
    """Pairwise angles in degrees between the columns of ``weights``."""
    w = as_matrix(weights)
    norms = np.linalg.norm(w, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateWeightsError(f"class {int(zero[0])} has an all-zero weight vector")
    gram = w.T @ w
    u = w / norms
    # 2 atan2(|u - v|, |u + v|) stays accurate near 0 and 180 degrees where arccos does not
    minus = np.linalg.norm(u[:, :, None] - u[:, None, :], axis=0)
    plus = np.linalg.norm(u[:, :, None] + u[:, None, :], axis=0)
    ang = np.degrees(2.0 * np.arctan2(minus, plus))
    # exact zeros in the Gram matrix give exactly 90; the diagonal is 0 by definition
    ang[gram == 0.0] = 90.0
    np.fill_diagonal(ang, 0.0)
    return (ang + ang.T) / 2


def off_diagonal(mat: np.ndarray) -> np.ndarray:
    """Upper-triangle entries above the diagonal."""
    return mat[np.triu_indices(mat.shape[0], k=1)]


def verify_norm_bounds(d: int, k: int, bound_b: float = 1.0, trials: int = 1000, seed: int = 0) -> dict:
    """Sample ``W ~ U[-B, B]^{d x k}`` and check the spectral-norm bounds.

    The masked matrix must satisfy ``|M*W|_2 <= sqrt(d) B`` and the full one
    ``|W|_2 <= sqrt(d k) B``. Ratios are reported against each bound.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    mask = build_mask(d, k).matrix
    rng = np.random.default_rng(seed)
    masked_bound = math.sqrt(d) * bound_b
    full_bound = math.sqrt(d * k) * bound_b
    max_masked = max_full = 0.0
    violations = 0
    ratios_gap = []
    for t in range(trials):
        w = rng.uniform(-bound_b, bound_b, size=(d, k))
        s_masked = spectral_norm(mask * w, seed=seed + t)
        s_full = spectral_norm(w, seed=seed + t)
        r_masked = s_masked / masked_bound
        r_full = s_full / full_bound
        # tiny slack for the floating-point rounding of the power iteration
        if r_masked > 1 + 1e-12 or r_full > 1 + 1e-12:
            violations += 1
        max_masked = max(max_masked, r_masked)
        max_full = max(max_full, r_full)
        ratios_gap.append(s_masked / s_full)
    return {
        "d": d,
        "k": k,
        "bound": bound_b,
        "trials": trials,
        "seed": seed,
        "max_ratio_masked": max_masked,
        "max_ratio_full": max_full,
        "mean_masked_over_full": float(np.mean(ratios_gap)),
        "bound_gap": 1 / math.sqrt(k),
        "violations": violations,
    }


# --- Student t distribution -------------------------------------------------

def _betacf(a: float, b: float, x: float, tol: float = 1e-15, max_iter: int = 500) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_tailed_p(t: float, df: float) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(x, df / 2.0, 0.5)


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_two_tailed_p(t, df)
    return 1.0 - tail if t >= 0 else tail


@dataclass(frozen=True)
class TTestReport:
    n: int
    mean_diff: float
    t_statistic: float
    degrees_of_freedom: int
    p_value: float
    significant: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def verdict(self) -> str:
        return "significant" if self.significant else "not significant"


def paired_ttest(a, b, alpha: float = SIGNIFICANCE) -> TTestReport:
    """Two-tailed paired Student's t-test on ``a - b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples need equal 1-D shapes, got {a.shape} and {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    diff = a - b
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        raise DegenerateTestError(mean, n)
    t = mean / (sd / math.sqrt(n))
    p = t_two_tailed_p(t, n - 1)
    return TTestReport(n, mean, t, n - 1, p, p < alpha)


# --- aggregation ------------------------------------------------------------

def aggregate(values) -> dict:
    """Mean, sample std, quantiles and 1.5 IQR outliers of a list of accuracies.

    Accepts plain numbers or objects with a ``test_acc`` attribute.
    """
    vals = np.asarray([getattr(v, "test_acc", v) for v in values], dtype=np.float64)
    if vals.size == 0:
        raise ValueError("cannot aggregate an empty result list")
    q1, med, q3 = np.percentile(vals, [25, 50, 75], method="linear")
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    outliers = vals[(vals < lo) | (vals > hi)]
    return {
        "n": int(vals.size),
        "mean": float(vals.mean()),
        "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
        "single": bool(vals.size == 1),
        "min": float(vals.min()),
        "median": float(med),
        "max": float(vals.max()),
        "boxplot_quartiles": [float(q1), float(med), float(q3)],
        "outliers": outliers.tolist(),
    }


def write_quartiles_csv(path, summaries: dict[str, dict], comment: str | None = None) -> None:
    """One row per arm: ``arm,n,min,q1,median,q3,max,n_outliers``, after an optional ``#`` line."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "n", "min", "q1", "median", "q3", "max", "n_outliers"])
        for arm, s in summaries.items():
            q1, med, q3 = s["boxplot_quartiles"]
            w.writerow([arm, s["n"], s["min"], q1, med, q3, s["max"], len(s["outliers"])])


def write_angles_csv(path, angles: np.ndarray) -> None:
    np.savetxt(path, angles, delimiter=",", fmt="%.10g")
