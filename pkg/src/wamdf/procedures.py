"""Step-up decision procedures on weighted p-values.

The four variants share one engine: divide p-values by their weights,
optionally estimate the number of true nulls from a census at level
lambda, then run the step-up scan capped at an upper threshold u.
Variant tags follow the weighted/unweighted x adaptive/unadaptive grid:

    UU  unweighted unadaptive (the classic step-up at level alpha)
    WU  weighted unadaptive
    UA  unweighted adaptive
    WA  weighted adaptive
"""

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VARIANTS",
    "TestBattery",
    "DecisionReport",
    "weighted_pvalues",
    "estimate_m0",
    "adaptive_fdp_estimate",
    "step_up_threshold",
    "run_procedure",
    "alpha_star",
    "fdr_upper_bound",
]

VARIANTS = ("UU", "WU", "UA", "WA")


def weighted_pvalues(pvalues, weights):
    """Per-hypothesis weighted p-values ``Q_m = P_m / w_m``.

    Values above 1 are legitimate (small weights); such hypotheses simply
    can never be rejected because the selected threshold never exceeds 1.
    """
    p = np.asarray(pvalues, dtype=float)
    w = np.asarray(weights, dtype=float)
    if p.shape != w.shape:
        raise ValueError("p-values and weights must have equal length")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("p-values must lie in [0, 1]")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return p / w


@dataclass
class TestBattery:
    """Observed p-values with their weights and derived weighted p-values."""

    __test__ = False  # domain class, not a pytest case

    pvalues: np.ndarray
    weights: np.ndarray
    q: np.ndarray = field(init=False)

    def __post_init__(self):
        self.pvalues = np.asarray(self.pvalues, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.q = weighted_pvalues(self.pvalues, self.weights)

    @property
    def M(self):
        return self.pvalues.size


@dataclass
class DecisionReport:
    """Outcome of one procedure run: threshold, null-count estimate, rejections."""

    variant: str
    alpha: float
    lam: float | None
    u: float
    t_hat: float
    m0_hat: float
    rejected: np.ndarray
    pvalues: np.ndarray
    weights: np.ndarray
    q: np.ndarray

    @property
    def n_rejected(self):
        return int(self.rejected.sum())

    @property
    def rejected_indices(self):
        return np.flatnonzero(self.rejected)

    def to_dict(self):
        return {
            "variant": self.variant,
            "alpha": self.alpha,
            "lambda": self.lam,
            "u": self.u,
            "t_hat": self.t_hat,
            "m0_hat": self.m0_hat,
            "rejected_indices": self.rejected_indices.tolist(),
            "R": self.n_rejected,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def to_tsv(self, path):
        """Per-hypothesis table: index, P, w, Q, rejected."""
        with open(path, "w") as fh:
            fh.write("index\tp\tweight\tq\trejected\n")
            for i in range(self.pvalues.size):
                fh.write(
                    f"{i}\t{self.pvalues[i]:.{10}g}\t{self.weights[i]:.{10}g}"
                    f"\t{self.q[i]:.{10}g}\t{int(self.rejected[i])}\n"
                )


def estimate_m0(q, lam):
    """Census estimate of the number of true nulls from weighted p-values.

    ``(M - #{Q_m <= lambda} + 1) / (1 - lambda)``; the +1 keeps the
    estimate strictly positive, and the value may exceed M.
    """
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    q = np.asarray(q, dtype=float)
    r_lam = int(np.sum(q <= lam))
    return (q.size - r_lam + 1) / (1.0 - lam)


def adaptive_fdp_estimate(t, q, m0_hat):
    """Estimated FDP at overall threshold t: ``m0_hat * t / max(R(t), 1)``."""
    if not 0 <= t <= 1:
        raise ValueError("threshold t must lie in [0, 1]")
    q = np.asarray(q, dtype=float)
    r = int(np.sum(q <= t))
    return m0_hat * t / max(r, 1)


def step_up_threshold(q, m0_hat, alpha, u):
    """Step-up selection of the overall threshold on weighted p-values.

    With ordered ``Q_(1) <= ... <= Q_(M)``, take ``j`` the largest m with
    ``Q_(m) <= alpha * m / m0_hat`` (0 if none) and return
    ``t_hat = min(j * alpha / m0_hat, u)`` along with the indices of the
    hypotheses with ``Q_m <= t_hat``.  This rejects the same set as
    maximizing t subject to the estimated FDP staying at or below alpha.
    Tied weighted p-values at the threshold are rejected together.
    """
    q = np.asarray(q, dtype=float)
    m = q.size
    order = np.sort(q)
    passes = order <= alpha * np.arange(1, m + 1) / m0_hat
    j = int(np.flatnonzero(passes)[-1] + 1) if passes.any() else 0
    t_hat = min(j * alpha / m0_hat, u) if j > 0 else 0.0
    rejected = q <= t_hat
    return t_hat, np.flatnonzero(rejected)


def run_procedure(variant, pvalues, weights=None, alpha=0.05, lam=None, u=None,
                  finite_fdr=False):
    """Run one of the UU/WU/UA/WA procedures on a p-value battery.

    Parameters
    ----------
    variant : str
        One of ``VARIANTS``.  Unweighted variants force unit weights.
    pvalues : array_like
    weights : array_like, optional
        Required for WU/WA; ignored (forced to 1) for UU/UA.
    alpha : float
        Nominal FDR level.
    lam : float, optional
        Census level for the null-count estimate; required for UA/WA.
    u : float, optional
        Upper bound for the selected threshold.  Defaults to
        ``1 / max(weights)`` (so unit weights give 1).
    finite_fdr : bool
        Finite-sample FDR mode: forces ``u = lam`` and shrinks the level
        to ``alpha_star(alpha, lam, max(weights))`` so the FDR is at most
        alpha for arbitrary fixed weights under independence.

    Returns
    -------
    DecisionReport
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    p = np.asarray(pvalues, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("p-values must be a nonempty 1-d vector")
    if variant in ("UU", "UA"):
        w = np.ones_like(p)
    else:
        if weights is None:
            raise ValueError(f"variant {variant} requires weights")
        w = np.asarray(weights, dtype=float)
        if w.shape != p.shape:
            raise ValueError("weights must match the p-value vector length")
    battery = TestBattery(p, w)

    adaptive = variant in ("UA", "WA")
    if adaptive and lam is None:
        raise ValueError(f"variant {variant} requires lambda")

    level = alpha
    w_max = float(w.max())
    if finite_fdr:
        if lam is None:
            raise ValueError("finite-FDR mode requires lambda")
        level = alpha_star(alpha, lam, w_max)
        u = lam
    elif u is None:
        u = 1.0 / w_max
    if u * w_max > 1.0 + 1e-9:
        raise ValueError("u * max(weights) must not exceed 1")
    if lam is not None and lam > u + 1e-12:
        raise ValueError("lambda must not exceed u")

    m0_hat = estimate_m0(battery.q, lam) if adaptive else float(battery.M)
    t_hat, _ = step_up_threshold(battery.q, m0_hat, level, u)
    return DecisionReport(
        variant=variant,
        alpha=alpha,
        lam=lam,
        u=u,
        t_hat=t_hat,
        m0_hat=m0_hat,
        rejected=battery.q <= t_hat,
        pvalues=battery.pvalues,
        weights=battery.weights,
        q=battery.q,
    )


def alpha_star(alpha, lam, w_max):
    """Shrunken nominal level guaranteeing finite-sample FDR control.

    Running the adaptive procedure at ``alpha * (1/w_max) *
    (1 - lam*w_max) / (1 - lam)`` with ``u = lam`` keeps the FDR at or
    below alpha for any fixed weights with maximum ``w_max``, under
    independence of the null statistics.
    """
    if w_max <= 0:
        raise ValueError("w_max must be positive")
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    if lam * w_max >= 1.0:
        raise ValueError("lambda * w_max must be below 1")
    return alpha * (1.0 / w_max) * (1.0 - lam * w_max) / (1.0 - lam)


def fdr_upper_bound(alpha, lam, w0_bar, m0):
    """Finite-sample FDR bound for the adaptive procedure with u = lambda.

    ``alpha * w0_bar * (1 - lam) / (1 - lam * w0_bar) * [1 - (lam*w0_bar)^m0]``
    where ``w0_bar`` is the mean weight over true nulls.  Unit weights
    recover the classic adaptive bound ``alpha * (1 - lam^m0)``.
    """
    if m0 < 1:
        raise ValueError("m0 must be at least 1")
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    if w0_bar <= 0:
        raise ValueError("w0_bar must be positive")
    if lam * w0_bar >= 1.0:
        raise ValueError("lambda * w0_bar must be below 1")
    geom = 1.0 - (lam * w0_bar) ** m0
    return alpha * w0_bar * (1.0 - lam) / (1.0 - lam * w0_bar) * geom
