"""Monte Carlo harness for the decision procedures under the random effects model.

Each replication draws per-hypothesis priors and effect sizes, generates
one-sided normal test statistics, re-solves the pre-data weights from the
realized priors (the procedure is assumed to know them), runs the requested
procedure variants, and records the realized false and correct discovery
proportions.  Replications use independent counter-based RNG substreams
keyed by (seed, replication), so serial and parallel runs agree bitwise.
"""

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.special import ndtr

from .procedures import VARIANTS, run_procedure
from .weights import NoSolutionError, PriorSpec, asymptotically_optimal_weights, perturb_weights

__all__ = [
    "SimConfig",
    "SimSummary",
    "simulation_preset",
    "generate_model1",
    "generate_du",
    "evaluate",
    "run_simulation",
]

_WEIGHT_MODES = ("optimal", "perturbed", "independent", "unit")
_MASK64 = (1 << 64) - 1


@dataclass
class SimConfig:
    """One Monte Carlo experiment: data law, weight scheme, and bookkeeping.

    ``p_law`` is ``"fixed"`` (all priors equal ``p_fixed``) or ``"uniform"``
    (drawn from Uniform(0, 1) each replication).  ``gamma_law`` is
    ``"uniform"`` for Uniform(1, gamma_a) draws (``gamma_a == 1`` gives the
    homogeneous case) or ``"fixed"`` for a constant ``gamma_fixed``.
    ``lambda_rule`` is ``"solved"`` to use the mean threshold at the solved
    multiplier as the census level, or ``"fixed"`` to use ``lambda_fixed``.
    """

    M: int
    n_reps: int
    seed: int
    alpha: float = 0.05
    variants: tuple = VARIANTS
    p_law: str = "fixed"
    p_fixed: float = 0.5
    gamma_law: str = "uniform"
    gamma_a: float = 5.0
    gamma_fixed: float | None = None
    weight_mode: str = "optimal"
    lambda_rule: str = "solved"
    lambda_fixed: float | None = None
    preset: int | None = None

    def __post_init__(self):
        if self.M < 1 or self.n_reps < 1:
            raise ValueError("M and n_reps must be at least 1")
        if self.seed is None:
            raise ValueError("a seed is required; silent nondeterminism is not allowed")
        if self.p_law not in ("fixed", "uniform"):
            raise ValueError(f"unknown p_law {self.p_law!r}")
        if self.gamma_law not in ("uniform", "fixed"):
            raise ValueError(f"unknown gamma_law {self.gamma_law!r}")
        if self.gamma_law == "uniform" and self.gamma_a < 1:
            raise ValueError("gamma_a must be at least 1")
        if self.gamma_law == "fixed" and not (self.gamma_fixed and self.gamma_fixed > 0):
            raise ValueError("gamma_fixed must be positive for gamma_law='fixed'")
        if self.weight_mode not in _WEIGHT_MODES:
            raise ValueError(f"unknown weight_mode {self.weight_mode!r}")
        if self.lambda_rule == "fixed" and not (self.lambda_fixed and 0 < self.lambda_fixed < 1):
            raise ValueError("lambda_fixed must lie in (0, 1) for lambda_rule='fixed'")
        if self.lambda_rule not in ("solved", "fixed"):
            raise ValueError(f"unknown lambda_rule {self.lambda_rule!r}")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ValueError(f"unknown variants: {sorted(unknown)}")
        self.variants = tuple(self.variants)

    @classmethod
    def from_file(cls, path):
        """Load a config from a ``key = value`` file.

        Lines starting with ``#`` are comments.  A ``preset`` key (1-4)
        seeds the remaining fields, which individual keys then override.
        """
        raw = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, value = (s.strip() for s in line.split("=", 1))
                raw[key] = value
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key == "variants":
                kwargs[key] = tuple(v.strip() for v in value.split(","))
            elif key in ("M", "n_reps", "seed", "preset"):
                kwargs[key] = int(value)
            elif key in ("p_law", "gamma_law", "weight_mode", "lambda_rule"):
                kwargs[key] = value
            elif key in known:
                kwargs[key] = float(value)
            else:
                raise ValueError(f"{path}: unknown config key {key!r}")
        preset = kwargs.pop("preset", None)
        if preset is not None:
            base = simulation_preset(
                preset,
                a=kwargs.pop("gamma_a", 5.0),
                M=kwargs.pop("M", 1000),
                n_reps=kwargs.pop("n_reps", 1000),
                seed=kwargs.pop("seed", 0),
                alpha=kwargs.pop("alpha", 0.05),
            )
            return replace(base, **kwargs)
        return cls(**kwargs)


def simulation_preset(preset, a=5.0, M=1000, n_reps=1000, seed=0, alpha=0.05):
    """Canned configurations for the four standard weight-scheme studies.

    1. homogeneous priors (p = 0.5), solved weights
    2. Uniform(0, 1) priors, solved weights
    3. Uniform(0, 1) priors, solved weights perturbed by Uniform(0, 2) noise
    4. Uniform(0, 1) priors, weights drawn Uniform(0, 2) independent of the data
    """
    common = dict(M=M, n_reps=n_reps, seed=seed, alpha=alpha, gamma_a=float(a), preset=preset)
    if preset == 1:
        return SimConfig(p_law="fixed", p_fixed=0.5, weight_mode="optimal", **common)
    if preset == 2:
        return SimConfig(p_law="uniform", weight_mode="optimal", **common)
    if preset == 3:
        return SimConfig(p_law="uniform", weight_mode="perturbed", **common)
    if preset == 4:
        return SimConfig(p_law="uniform", weight_mode="independent", **common)
    raise ValueError(f"unknown preset {preset!r}; expected 1-4")


def substream(seed, rep):
    """Counter-based generator for one replication; independent across reps."""
    key = np.array([seed & _MASK64, rep & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def generate_model1(config, rng):
    """Draw one replication of the random effects model.

    Returns (theta, p, gamma, pvalues): per-hypothesis truth indicators,
    priors, effect sizes, and one-sided p-values ``1 - Phi(Z)`` for
    ``Z ~ N(theta * gamma, 1)``.
    """
    m = config.M
    if config.p_law == "fixed":
        p = np.full(m, float(config.p_fixed))
    else:
        p = rng.uniform(0.0, 1.0, m)
    if config.gamma_law == "fixed":
        gamma = np.full(m, float(config.gamma_fixed))
    else:
        gamma = rng.uniform(1.0, float(config.gamma_a), m)
    theta = rng.random(m) < p
    z = rng.standard_normal(m) + np.where(theta, gamma, 0.0)
    pvalues = ndtr(-z)
    return theta, p, gamma, pvalues


def generate_du(m0, m1, rng):
    """Least-favorable p-value configuration: m0 Uniform(0, 1) nulls first,
    then m1 exact zeros for the false nulls."""
    if m0 < 0 or m1 < 0 or m0 + m1 < 1:
        raise ValueError("need m0, m1 >= 0 with m0 + m1 >= 1")
    return np.concatenate([rng.uniform(0.0, 1.0, m0), np.zeros(m1)])


def evaluate(theta, report):
    """Realized (FDP, CDP) of a decision report against the truth vector."""
    theta = np.asarray(theta, dtype=bool)
    rejected = np.asarray(report.rejected, dtype=bool)
    if theta.shape != rejected.shape:
        raise ValueError("truth and rejection vectors must have equal length")
    r = int(rejected.sum())
    v = int((rejected & ~theta).sum())
    m1 = int(theta.sum())
    fdp = v / max(r, 1)
    cdp = int((rejected & theta).sum()) / max(m1, 1)
    return fdp, cdp


def _draw_positive_uniform02(rng, size, limit=None, max_tries=100):
    """Uniform(0, 2) draws, resampling zeros and entries breaking ``x*limit <= 1``."""
    x = rng.uniform(0.0, 2.0, size)
    for _ in range(max_tries):
        bad = x <= 0.0
        if limit is not None:
            bad |= x * limit > 1.0
        if not bad.any():
            return x
        x[bad] = rng.uniform(0.0, 2.0, int(bad.sum()))
    raise RuntimeError("could not draw admissible weight multipliers")


def _replicate(config, rep):
    """One replication; returns (ok, warned, {variant: (fdp, cdp, R)})."""
    rng = substream(config.seed, rep)
    theta, p, gamma, pvalues = generate_model1(config, rng)
    prior = PriorSpec(p, gamma)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            profile = asymptotically_optimal_weights(prior, config.alpha)
        except NoSolutionError:
            return False, True, {}
    warned = any(issubclass(w.category, RuntimeWarning) for w in caught)

    lam = profile.t_bar if config.lambda_rule == "solved" else float(config.lambda_fixed)
    if config.weight_mode == "optimal":
        weights, u = profile.weights, profile.u
    elif config.weight_mode == "perturbed":
        mult = _draw_positive_uniform02(rng, config.M, limit=profile.thresholds)
        perturbed = perturb_weights(profile, mult)
        weights, u = perturbed.weights, perturbed.u
    elif config.weight_mode == "independent":
        weights = _draw_positive_uniform02(rng, config.M)
        u = 1.0 / float(weights.max())
    else:
        weights = np.ones(config.M)
        u = 1.0

    out = {}
    for variant in config.variants:
        weighted = variant in ("WU", "WA")
        report = run_procedure(
            variant,
            pvalues,
            weights=weights if weighted else None,
            alpha=config.alpha,
            lam=lam,
            u=u if weighted else 1.0,
        )
        fdp, cdp = evaluate(theta, report)
        out[variant] = (fdp, cdp, report.n_rejected)
    return True, warned, out


@dataclass
class SimSummary:
    """Aggregated Monte Carlo results for one configuration."""

    config: SimConfig
    n_completed: int
    n_skipped: int
    n_warned: int
    fdp: dict = field(default_factory=dict)   # variant -> per-rep array
    cdp: dict = field(default_factory=dict)

    def mean(self, variant, metric):
        return float(np.mean(self._metric(variant, metric)))

    def se(self, variant, metric):
        """Monte Carlo standard error (sample SD over sqrt of completed reps)."""
        x = self._metric(variant, metric)
        if x.size < 2:
            return None
        return float(np.std(x, ddof=1) / np.sqrt(x.size))

    def _metric(self, variant, metric):
        if metric not in ("fdp", "cdp"):
            raise ValueError("metric must be 'fdp' or 'cdp'")
        return (self.fdp if metric == "fdp" else self.cdp)[variant]

    def to_dict(self):
        out = {
            "M": self.config.M,
            "n_reps": self.config.n_reps,
            "n_completed": self.n_completed,
            "n_skipped": self.n_skipped,
            "n_warned": self.n_warned,
            "alpha": self.config.alpha,
            "seed": self.config.seed,
            "preset": self.config.preset,
            "gamma_a": self.config.gamma_a,
            "weight_mode": self.config.weight_mode,
            "variants": {},
        }
        for v in self.config.variants:
            out["variants"][v] = {
                "cdp_mean": self.mean(v, "cdp"),
                "cdp_se": self.se(v, "cdp"),
                "fdp_mean": self.mean(v, "fdp"),
                "fdp_se": self.se(v, "fdp"),
            }
        return out


def run_simulation(config, threads=1):
    """Run all replications of a configuration and aggregate.

    Replications failing the weight solve are skipped and counted;
    out-of-regime weight solves are counted as warnings.  Per-rep metrics
    are collected in replication order and reduced with numpy's pairwise
    mean, so results do not depend on ``threads``.
    """
    reps = range(config.n_reps)
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunk = max(1, config.n_reps // (threads * 8))
            results = list(pool.map(_replicate, [config] * config.n_reps, reps, chunksize=chunk))
    else:
        results = [_replicate(config, rep) for rep in reps]

    fdp = {v: [] for v in config.variants}
    cdp = {v: [] for v in config.variants}
    n_skipped = n_warned = 0
    for ok, warned, metrics in results:
        if not ok:
            n_skipped += 1
            continue
        if warned:
            n_warned += 1
        for v in config.variants:
            fdp[v].append(metrics[v][0])
            cdp[v].append(metrics[v][1])
    n_completed = config.n_reps - n_skipped
    if n_completed == 0:
        raise NoSolutionError("every replication failed the weight solve")
    return SimSummary(
        config=config,
        n_completed=n_completed,
        n_skipped=n_skipped,
        n_warned=n_warned,
        fdp={v: np.array(x) for v, x in fdp.items()},
        cdp={v: np.array(x) for v, x in cdp.items()},
    )


def write_summary_json(summary, path):
    with open(path, "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2)
        fh.write("\n")
