"""
Group statistics, longitudinal fingerprinting and the classification harness.

Tests return :class:`TestResult` records. Small samples use exact null
distributions (Wilcoxon signed-rank up to n=25; Mann-Whitney while the
smaller group has fewer than 8 members or the total is at most 20); larger
samples use tie-corrected normal approximations without continuity
correction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

__all__ = [
    "WILCOXON_EXACT_MAX_N",
    "MWU_EXACT_MIN_GROUP",
    "MWU_EXACT_MAX_TOTAL",
    "TestResult",
    "welch_t",
    "cohens_d",
    "bonferroni",
    "spearman",
    "pearson",
    "wilcoxon_one_sided",
    "mann_whitney_u",
    "PairwiseDistances",
    "within_between",
    "PCAModel",
    "pca_fit",
    "SLDAModel",
    "ledoit_wolf_gamma",
    "slda_fit",
    "slda_predict",
    "stratified_folds",
    "roc_auc",
    "cv_evaluate",
    "slicewise_effects",
]

WILCOXON_EXACT_MAX_N = 25
MWU_EXACT_MIN_GROUP = 8
MWU_EXACT_MAX_TOTAL = 20


@dataclass
class TestResult:
    """One test outcome. ``flag`` names a degenerate case (empty when fine)."""

    test: str
    statistic: float
    p: float
    n: tuple
    df: float | None = None
    effect: float | None = None
    method: str = ""
    flag: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n"] = list(self.n)
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1)


def welch_t(a, b) -> TestResult:
    """Two-sided Welch t-test with Satterthwaite degrees of freedom."""
    a, b = _arr(a), _arr(b)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("Welch's t-test needs at least two samples per group")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    n = (len(a), len(b))
    if va + vb == 0:
        if diff == 0:
            return TestResult("welch_t", 0.0, 1.0, n, math.nan, method="t", flag="degenerate")
        return TestResult("welch_t", math.copysign(math.inf, diff), 0.0, n, math.nan, method="t", flag="zero-variance")
    t = diff / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    p = float(2 * stats.t.sf(abs(t), df))
    return TestResult("welch_t", float(t), min(p, 1.0), n, float(df), method="t")


def cohens_d(a, b) -> TestResult:
    """(mean a - mean b) / pooled SD; p is NaN (effect size only)."""
    a, b = _arr(a), _arr(b)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("Cohen's d needs at least two samples per group")
    pooled = ((len(a) - 1) * a.var(ddof=1) + (len(b) - 1) * b.var(ddof=1)) / (len(a) + len(b) - 2)
    n = (len(a), len(b))
    if pooled == 0:
        return TestResult("cohens_d", math.nan, math.nan, n, flag="undefined")
    d = float((a.mean() - b.mean()) / math.sqrt(pooled))
    return TestResult("cohens_d", d, math.nan, n, effect=d)


def bonferroni(p, alpha: float = 0.05) -> tuple:
    """Adjusted p-values ``min(p*m, 1)`` and reject flags ``p*m <= alpha``."""
    p = _arr(p)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    raw = p * m
    return np.minimum(raw, 1.0), raw <= alpha


def _corr_t_p(r: float, n: int) -> float:
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1 - r * r))
    return float(2 * stats.t.sf(abs(t), n - 2))


def pearson(x, y) -> TestResult:
    """Pearson r with a two-sided p from the t transform."""
    x, y = _arr(x), _arr(y)
    if len(x) != len(y) or len(x) < 3:
        raise ValueError("correlation needs two equal-length vectors of at least 3 values")
    xc, yc = x - x.mean(), y - y.mean()
    den = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if den == 0:
        return TestResult("pearson", math.nan, math.nan, (len(x),), flag="undefined")
    r = float(np.clip((xc @ yc) / den, -1.0, 1.0))
    return TestResult("pearson", r, _corr_t_p(r, len(x)), (len(x),), len(x) - 2, effect=r)


def spearman(x, y) -> TestResult:
    """Spearman rho as the Pearson correlation of mid-ranks."""
    x, y = _arr(x), _arr(y)
    if len(x) != len(y) or len(x) < 3:
        raise ValueError("correlation needs two equal-length vectors of at least 3 values")
    res = pearson(stats.rankdata(x), stats.rankdata(y))
    res.test = "spearman"
    return res


def _subset_sum_counts(values: np.ndarray, k: int | None = None) -> np.ndarray:
    """
    Counts of subsets by integer sum; restricted to size ``k`` when given.

    With ``k=None`` this is the signed-rank null (each value in or out); with
    ``k`` it is the rank-sum null of a group of size ``k``.
    """
    total = int(values.sum())
    if k is None:
        dp = np.zeros(total + 1)
        dp[0] = 1.0
        for v in values.astype(int):
            dp[v:] = dp[v:] + dp[: len(dp) - v].copy()
        return dp
    dp = np.zeros((k + 1, total + 1))
    dp[0, 0] = 1.0
    for v in values.astype(int):
        dp[1:, v:] = dp[1:, v:] + dp[:-1, : total + 1 - v].copy()
    return dp[k]


def wilcoxon_one_sided(greater, lesser) -> TestResult:
    """
    Paired signed-rank test of ``greater > lesser``.

    W is the sum of the ranks of positive differences after dropping zeros.
    For n <= 25 the p-value is exact (ties handled on doubled mid-ranks),
    above that it is the tie-corrected normal tail without continuity
    correction.
    """
    g, l_ = _arr(greater), _arr(lesser)
    if g.shape != l_.shape:
        raise ValueError("paired samples must have equal length")
    d = g - l_
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return TestResult("wilcoxon", 0.0, 1.0, (0,), flag="degenerate")
    ranks = stats.rankdata(np.abs(d))
    w = float(ranks[d > 0].sum())
    if n <= WILCOXON_EXACT_MAX_N:
        r2 = np.rint(2 * ranks).astype(int)
        counts = _subset_sum_counts(r2)
        p = float(counts[int(round(2 * w)) :].sum() / counts.sum())
        return TestResult("wilcoxon", w, min(p, 1.0), (n,), method="exact")
    _, tie = np.unique(np.abs(d), return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie**3 - tie) / 48.0
    z = (w - mean) / math.sqrt(var)
    return TestResult("wilcoxon", w, float(stats.norm.sf(z)), (n,), effect=float(z), method="normal")


def mann_whitney_u(a, b, alternative: str = "two-sided") -> TestResult:
    """
    Mann-Whitney U counting a-wins (ties count one half).

    Exact while the smaller group has fewer than 8 members or the total is
    at most 20; otherwise tie-corrected normal without continuity correction.
    """
    a, b = _arr(a), _arr(b)
    if not len(a) or not len(b):
        raise ValueError("both groups need at least one sample")
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    n1, n2 = len(a), len(b)
    u = float(np.sum(a[:, None] > b[None, :]) + 0.5 * np.sum(a[:, None] == b[None, :]))
    ranks = stats.rankdata(np.concatenate([a, b]))
    exact = min(n1, n2) < MWU_EXACT_MIN_GROUP or n1 + n2 <= MWU_EXACT_MAX_TOTAL
    if exact:
        # null distribution of the doubled rank sum of group a
        r2 = np.rint(2 * ranks).astype(int)
        counts = _subset_sum_counts(r2, n1)
        probs = counts / counts.sum()
        u2 = int(round(2 * u + n1 * (n1 + 1)))  # doubled rank sum of a
        p_hi = float(probs[u2:].sum())
        p_lo = float(probs[: u2 + 1].sum())
        method = "exact"
    else:
        N = n1 + n2
        _, tie = np.unique(ranks, return_counts=True)
        var = n1 * n2 / 12.0 * ((N + 1) - np.sum(tie**3 - tie) / (N * (N - 1)))
        z = (u - n1 * n2 / 2.0) / math.sqrt(var) if var > 0 else 0.0
        p_hi, p_lo = float(stats.norm.sf(z)), float(stats.norm.cdf(z))
        method = "normal"
    if alternative == "greater":
        p = p_hi
    elif alternative == "less":
        p = p_lo
    else:
        p = min(1.0, 2 * min(p_hi, p_lo))
    return TestResult("mann_whitney_u", u, p, (n1, n2), effect=u / (n1 * n2), method=method)


@dataclass
class PairwiseDistances:
    """
    Longitudinal distance summary.

    ``within[i]`` is the baseline to follow-up distance of subject i,
    ``between`` the baseline-to-baseline matrix and ``cross[i, j]`` (optional)
    the distance from follow-up i to baseline j.
    """

    subjects: list
    within: np.ndarray
    between: np.ndarray
    cross: np.ndarray | None = None

    def __post_init__(self):
        self.within = _arr(self.within)
        self.between = np.asarray(self.between, dtype=float)
        n = len(self.subjects)
        if self.within.shape != (n,) or self.between.shape != (n, n):
            raise ValueError("distance shapes do not match the subject list")
        if not np.array_equal(self.between, self.between.T) or np.any(np.diag(self.between) != 0):
            raise ValueError("between matrix must be symmetric with a zero diagonal")
        if np.any(self.within < 0) or np.any(self.between < 0):
            raise ValueError("distances are non-negative")
        if self.cross is not None:
            self.cross = np.asarray(self.cross, dtype=float)
            if self.cross.shape != (n, n):
                raise ValueError("cross matrix must be n x n")


def within_between(d: PairwiseDistances, summary: str = "median") -> dict:
    """
    Per-subject within distance W_i, between summary B_i and ratio R_i = B_i/W_i.

    B_i summarises row i of the baseline matrix without its diagonal. A zero
    W_i leaves R_i undefined (NaN) and is flagged. The one-sided Wilcoxon test
    asks whether B exceeds W.
    """
    n = len(d.subjects)
    if n < 2:
        raise ValueError("need at least two subjects")
    if summary not in ("median", "mean"):
        raise ValueError(f"unknown summary {summary!r}")
    off = d.between[~np.eye(n, dtype=bool)].reshape(n, n - 1)
    B = np.median(off, axis=1) if summary == "median" else off.mean(axis=1)
    W = d.within
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.where(W > 0, B / np.where(W > 0, W, 1.0), np.nan)
    out = {
        "summary": summary,
        "subjects": list(d.subjects),
        "W": W,
        "B": B,
        "R": R,
        "zero_within": [s for s, w in zip(d.subjects, W) if w == 0],
        "median_W": float(np.median(W)),
        "median_B": float(np.median(B)),
        "median_R": float(np.nanmedian(R)) if np.any(np.isfinite(R)) else math.nan,
        "wilcoxon": wilcoxon_one_sided(B, W),
    }
    if d.cross is not None:
        nearest = np.argmin(d.cross, axis=1)
        # ties with another baseline do not count as a clean hit
        own = d.cross[np.arange(n), np.arange(n)]
        strict = np.sum(d.cross <= own[:, None], axis=1) == 1
        out["nearest_own"] = (nearest == np.arange(n)) & strict
    return out


@dataclass
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (k, p)
    explained_variance: np.ndarray
    explained_ratio: np.ndarray

    @property
    def k(self) -> int:
        return len(self.components)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) @ self.components.T


def pca_fit(X, variance_retained: float = 0.95) -> PCAModel:
    """Smallest k principal axes whose cumulative explained variance reaches the target."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("PCA needs a 2D matrix with at least two rows")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    ev = s**2 / (len(X) - 1)
    total = ev.sum()
    if total <= 0 or s[0] <= np.finfo(float).eps * max(X.shape) * np.abs(X).max():
        raise ValueError("data has rank 0; PCA is degenerate")
    ratio = ev / total
    k = int(np.searchsorted(np.cumsum(ratio), variance_retained - 1e-12) + 1)
    k = min(k, len(ev))
    # deterministic sign: largest loading of each axis positive
    comp = vt[:k]
    flip = np.sign(comp[np.arange(k), np.argmax(np.abs(comp), axis=1)])
    comp = comp * flip[:, None]
    return PCAModel(mean, comp, ev[:k], ratio[:k])


def ledoit_wolf_gamma(Xc) -> float:
    """
    Analytic optimal shrinkage intensity toward ``tr(S)/p * I`` for centred rows ``Xc``.
    """
    Xc = np.asarray(Xc, dtype=float)
    n, p = Xc.shape
    X2 = Xc**2
    trace_terms = X2.sum(axis=0) / n
    mu = trace_terms.sum() / p
    beta_ = np.sum(X2.T @ X2)
    delta_ = np.sum((Xc.T @ Xc) ** 2) / n**2
    beta = (beta_ / n - delta_) / (p * n)
    delta = (delta_ - 2.0 * mu * trace_terms.sum() + p * mu**2) / p
    beta = min(beta, delta)
    return 0.0 if beta == 0 else float(beta / delta)


@dataclass
class SLDAModel:
    classes: np.ndarray
    means: np.ndarray
    priors: np.ndarray
    gamma: float
    covariance: np.ndarray
    coef: np.ndarray
    intercept: float


def slda_fit(X, y, shrinkage="auto", priors: str = "empirical") -> SLDAModel:
    """
    Two-class LDA on a shrunken pooled within-class covariance.

    The covariance is ``(1 - g) S + g tr(S)/p I`` with ``g`` from
    :func:`ledoit_wolf_gamma` (``shrinkage="auto"``) or a fixed number.
    The score ``x @ coef + intercept`` is the log posterior odds of
    ``classes[1]``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    classes = np.unique(y)
    if len(classes) != 2:
        raise ValueError(f"training data must contain exactly two classes, got {classes.tolist()}")
    if X.ndim == 1:
        X = X[:, None]
    means = np.stack([X[y == c].mean(axis=0) for c in classes])
    Xc = X - means[np.searchsorted(classes, y)]
    n, p = X.shape
    S = Xc.T @ Xc / n
    g = ledoit_wolf_gamma(Xc) if shrinkage == "auto" else float(shrinkage)
    if not 0.0 <= g <= 1.0:
        raise ValueError("shrinkage must be in [0, 1]")
    mu = np.trace(S) / p
    cov = (1 - g) * S + g * mu * np.eye(p)
    if priors == "empirical":
        pri = np.array([np.mean(y == c) for c in classes])
    elif priors == "equal":
        pri = np.array([0.5, 0.5])
    else:
        raise ValueError(f"unknown priors {priors!r}")
    coef = np.linalg.lstsq(cov, means[1] - means[0], rcond=None)[0]
    intercept = float(-0.5 * (means[1] + means[0]) @ coef + math.log(pri[1] / pri[0]))
    return SLDAModel(classes, means, pri, g, cov, coef, intercept)


def slda_predict(model: SLDAModel, X) -> tuple:
    """Continuous scores and hard labels (``classes[1]`` when the score is positive)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    scores = X @ model.coef + model.intercept
    labels = np.where(scores > 0, model.classes[1], model.classes[0])
    return scores, labels


def stratified_folds(y, k: int = 5, seed: int = 0) -> np.ndarray:
    """Fold index per sample: each class is shuffled and dealt round-robin."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=int)
    offset = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < k:
            raise ValueError(f"class {c!r} has {len(idx)} members, fewer than k={k}")
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = (np.arange(len(idx)) + offset) % k
        offset += len(idx)
    return fold


def roc_auc(scores, positive) -> float:
    """ROC-AUC from the rank sum of the positive scores (mid-ranks for ties)."""
    scores = _arr(scores)
    positive = np.asarray(positive, dtype=bool)
    n1, n0 = int(positive.sum()), int((~positive).sum())
    if n1 == 0 or n0 == 0:
        raise ValueError("ROC-AUC needs both classes")
    r = stats.rankdata(scores)
    return float((r[positive].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def _standardise(train, test):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (train - mu) / sd, (test - mu) / sd


def cv_evaluate(X, y, k: int = 5, seed: int = 0, positive=1, variance_retained: float = 0.95) -> dict:
    """
    Stratified k-fold evaluation of scaler + PCA + shrinkage LDA.

    Every step is fit on the training folds only. Per fold it reports
    ROC-AUC (rank statistic, checked against Mann-Whitney U / (n1 n0)),
    balanced accuracy and F1 of the positive class.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    folds = stratified_folds(y, k, seed)
    per_fold = []
    for f in range(k):
        tr, te = folds != f, folds == f
        a, b = _standardise(X[tr], X[te])
        pca = pca_fit(a, variance_retained)
        model = slda_fit(pca.transform(a), y[tr])
        scores, labels = slda_predict(model, pca.transform(b))
        if model.classes[1] != positive:
            scores = -scores
        pos = y[te] == positive
        auc = roc_auc(scores, pos)
        u = mann_whitney_u(scores[pos], scores[~pos]).statistic
        if auc != u / (pos.sum() * (~pos).sum()):
            raise AssertionError("ROC-AUC and Mann-Whitney U disagree")
        pred = labels == positive
        tp = np.sum(pred & pos)
        recall_pos = tp / pos.sum()
        recall_neg = np.sum(~pred & ~pos) / (~pos).sum()
        prec = tp / pred.sum() if pred.sum() else 0.0
        f1 = 0.0 if tp == 0 else 2 * prec * recall_pos / (prec + recall_pos)
        per_fold.append(
            {
                "fold": f,
                "n_test": int(te.sum()),
                "k_pca": pca.k,
                "gamma": model.gamma,
                "roc_auc": auc,
                "mwu_auc": float(u / (pos.sum() * (~pos).sum())),
                "balanced_accuracy": float((recall_pos + recall_neg) / 2),
                "f1": float(f1),
            }
        )
    agg = {}
    for key in ("roc_auc", "balanced_accuracy", "f1"):
        v = np.array([r[key] for r in per_fold])
        agg[key] = {"mean": float(v.mean()), "sd": float(v.std(ddof=1)) if k > 1 else 0.0}
    return {"k": k, "seed": seed, "folds": per_fold, "aggregate": agg}


def slicewise_effects(group_a, group_b, axes=("sagittal", "coronal", "axial"), alpha: float = 0.05) -> list:
    """
    Position-wise Cohen's d and Bonferroni-adjusted Welch p across all axes.

    ``group_a`` and ``group_b`` are ``(subjects, axes, grid)`` arrays of
    interpolated curves. The correction runs over every (axis, position).
    """
    A, B = np.asarray(group_a, dtype=float), np.asarray(group_b, dtype=float)
    if A.shape[1:] != B.shape[1:] or A.shape[1] != len(axes):
        raise ValueError("curve arrays must be (subjects, axes, grid) with matching axes and grid")
    grid = A.shape[2]
    ds, ps = [], []
    for ai in range(len(axes)):
        for j in range(grid):
            ds.append(cohens_d(A[:, ai, j], B[:, ai, j]).statistic)
            ps.append(welch_t(A[:, ai, j], B[:, ai, j]).p)
    adj, rej = bonferroni(ps, alpha)
    pos = np.linspace(0, 1, grid) if grid > 1 else np.zeros(1)
    out = []
    for i, (d, pa, r) in enumerate(zip(ds, adj, rej)):
        out.append({"axis": axes[i // grid], "position": float(pos[i % grid]), "cohens_d": d, "p_adj": float(pa), "reject": bool(r)})
    return out
