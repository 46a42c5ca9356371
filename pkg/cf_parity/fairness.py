"""
Demographic parity and counterfactual fairness gaps.

``dp_gap`` compares the score law across arms on sampled units.
``cf_gap`` compares, at one conditioning point (x, a), the factual score law
with the law of the score the same units would receive had A been 1 - a.
"""
import logging
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from cf_parity.causal_models import (
    AdditiveErrorModel,
    BinaryTreatmentGaussianModel,
    GpTreatmentModel,
    _check_binary,
    counterfactual_posterior,
    gp_observational_equivalence_check,
    rejection_pairs,
    sample_cross_world,
)
from cf_parity.errors import InputError
from cf_parity.predictors import CoinFlip, LinearAX, Predictor, PotentialOutcomeLinear, linear_cancellation_coefficients

logger = logging.getLogger(__name__)

MAX_RESAMPLE = 10


class DistanceKind(str, Enum):
    KS = "kolmogorov_smirnov"
    WASSERSTEIN = "wasserstein1"


class CfMethod(str, Enum):
    CLOSED_FORM = "closed_form"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class DistributionDistance:
    kind: DistanceKind
    value: float

    def __post_init__(self):
        object.__setattr__(self, "kind", DistanceKind(self.kind))
        if not math.isfinite(self.value) or self.value < 0:
            raise InputError(f"Distance must be finite and >= 0, got {self.value}")
        if self.kind is DistanceKind.KS and self.value > 1:
            raise InputError(f"KS distance must lie in [0, 1], got {self.value}")

    def to_record(self):
        return {"kind": self.kind.value, "value": self.value}


@dataclass(frozen=True)
class FairnessReport:
    """
    Both sides of one fairness audit. ``dp_gap`` is always sampled, from
    ``dp_n_samples`` draws with ``dp_seed`` (falling back to ``n_samples`` and
    ``seed``); ``method`` describes how ``cf_gap`` was computed.
    """

    dp_gap: Optional[DistributionDistance] = None
    cf_gap: Optional[DistributionDistance] = None
    method: CfMethod = CfMethod.CLOSED_FORM
    n_samples: Optional[int] = None
    seed: Optional[int] = None
    conditioning_point: Optional[Tuple[float, int]] = None
    aggregate_cf_gap: Optional[DistributionDistance] = None
    rho_profile: Optional[List[Tuple[float, float]]] = None
    dp_n_samples: Optional[int] = None
    dp_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "method", CfMethod(self.method))
        if self.method is CfMethod.MONTE_CARLO and (self.n_samples is None or self.n_samples < 1 or self.seed is None):
            raise InputError("monte_carlo reports need n_samples >= 1 and the seed used")

    def to_records(self) -> List[dict]:
        """One JSON-ready record per metric present."""
        common = {"method": self.method.value, "n_samples": self.n_samples, "seed": self.seed}
        records = []
        if self.dp_gap is not None:
            records.append({
                "metric": "dp_gap", "value": self.dp_gap.value, "distance": self.dp_gap.kind.value,
                "method": CfMethod.MONTE_CARLO.value,
                "n_samples": self.n_samples if self.dp_n_samples is None else self.dp_n_samples,
                "seed": self.seed if self.dp_seed is None else self.dp_seed,
                "conditioning_point": None,
            })
        point = None
        if self.conditioning_point is not None:
            point = {"x": self.conditioning_point[0], "a": self.conditioning_point[1]}
        if self.cf_gap is not None:
            record = {"metric": "cf_gap", "value": self.cf_gap.value, "distance": self.cf_gap.kind.value,
                      **common, "conditioning_point": point}
            if self.rho_profile is not None:
                record["rho_profile"] = [{"rho": r, "gap": g} for r, g in self.rho_profile]
            records.append(record)
        if self.aggregate_cf_gap is not None:
            records.append({"metric": "aggregate_cf_gap", "value": self.aggregate_cf_gap.value,
                            "distance": self.aggregate_cf_gap.kind.value, **common, "conditioning_point": None})
        return records


class AdversaryResult(NamedTuple):
    rho_star: float
    gap_star: float
    profile: List[Tuple[float, float]]


def distance_between(kind: DistanceKind, sample_a, sample_b) -> DistributionDistance:
    kind = DistanceKind(kind)
    if kind is DistanceKind.KS:
        value = stats.ks_2samp(sample_a, sample_b).statistic
    else:
        value = stats.wasserstein_distance(sample_a, sample_b)
    return DistributionDistance(kind, float(value))


def _factual_scores(predictor: Predictor, frame: pd.DataFrame, coin=None):
    if predictor.per_arm:
        return np.asarray(predictor.score(frame["a"].to_numpy(), frame["x"].to_numpy()), dtype=float)
    return predictor.score_world(frame, 0, coin)


def dp_gap(
    predictor: Predictor,
    model: BinaryTreatmentGaussianModel,
    n: int,
    seed: int,
    distance: DistanceKind = DistanceKind.KS,
) -> DistributionDistance:
    """
    Two-sample distance between the score given A = 0 and given A = 1.

    A sample missing one arm is redrawn from a child seed (with a warning);
    a model with p1 in {0, 1} can never fill both arms and is an error.
    """
    if model.p1 in (0.0, 1.0):
        raise InputError(f"p1={model.p1} leaves one arm empty; demographic parity is undefined")
    sample_seed, coin_seed = np.random.SeedSequence(seed).spawn(2)
    for attempt in range(MAX_RESAMPLE):
        frame = sample_cross_world(model, n, sample_seed)
        counts = frame["a"].value_counts()
        if counts.get(0, 0) > 0 and counts.get(1, 0) > 0:
            break
        logger.warning("draw %d left an arm empty (n=%d), resampling", attempt, n)
        sample_seed = sample_seed.spawn(1)[0]
    else:
        raise InputError(f"n={n} draws never filled both arms after {MAX_RESAMPLE} attempts")

    coin = predictor.draw(n, coin_seed) if isinstance(predictor, CoinFlip) else None
    scores = _factual_scores(predictor, frame, coin)
    arm = frame["a"].to_numpy()
    return distance_between(distance, scores[arm == 0], scores[arm == 1])


def _same(u, v):
    return math.isclose(u, v, rel_tol=1e-9, abs_tol=1e-12)


def _closed_form_cf(predictor, model, x, a, distance):
    if isinstance(predictor, (PotentialOutcomeLinear, CoinFlip)):
        # Same function of the unit (or the same coin) in every world.
        return DistributionDistance(distance, 0.0)
    if not predictor.per_arm:
        raise InputError(f"{predictor.kind.value} predictor is not defined per arm")

    other = 1 - a
    s = float(predictor.score(a, x))
    posterior = counterfactual_posterior(model, a, x)

    threshold = None if posterior.is_point_mass else predictor.threshold(other, s)
    if threshold is None:
        s_cf = float(predictor.score(other, posterior.mean))
        if distance is DistanceKind.KS:
            return DistributionDistance(distance, 0.0 if _same(s, s_cf) else 1.0)
        return DistributionDistance(distance, 0.0 if _same(s, s_cf) else abs(s_cf - s))

    if distance is DistanceKind.KS:
        t, increasing = threshold
        below = float(posterior.cdf(t))
        g = below if increasing else 1.0 - below
        return DistributionDistance(distance, max(g, 1.0 - g))

    expected = stats.norm.expect(
        lambda y: abs(float(predictor.score(other, y)) - s), loc=posterior.mean, scale=posterior.sd
    )
    return DistributionDistance(distance, float(expected))


def _monte_carlo_cf(predictor, model, x, a, distance, n, seed, window):
    if not predictor.per_arm and not isinstance(predictor, (PotentialOutcomeLinear, CoinFlip)):
        raise InputError(f"{predictor.kind.value} predictor is not defined per arm")
    pair_seed, coin_seed = np.random.SeedSequence(seed).spawn(2)
    observed, counterfactual = rejection_pairs(model, a, x, n, pair_seed, window)
    if observed.size == 0:
        raise InputError(f"No draws within {window} of x={x}; increase n or window")

    x0, x1 = (observed, counterfactual) if a == 0 else (counterfactual, observed)
    frame = pd.DataFrame({"a": np.full(observed.size, a), "x0": x0, "x1": x1, "x": observed})
    coin = predictor.draw(observed.size, coin_seed) if isinstance(predictor, CoinFlip) else None
    factual = predictor.score_world(frame, a, coin)
    counter = predictor.score_world(frame, 1 - a, coin)
    return distance_between(distance, factual, counter)


def cf_gap(
    predictor: Predictor,
    model: BinaryTreatmentGaussianModel,
    x: float,
    a: int,
    method: CfMethod = CfMethod.CLOSED_FORM,
    distance: DistanceKind = DistanceKind.KS,
    n: int = 1_000_000,
    seed: int = 0,
    window: float = 0.01,
) -> DistributionDistance:
    """
    Distance between P(Yhat_a | X = x, A = a) and P(Yhat_{1-a} | X = x, A = a).

    Parameters
    ----------
    predictor : Predictor
        Per-arm predictors, potential-outcome predictors and coin flips are accepted.
    model : BinaryTreatmentGaussianModel
        World supplying the counterfactual posterior; ``rho`` matters here.
    x, a : float, int
        Conditioning point.
    method : CfMethod
        ``closed_form`` pushes the Gaussian posterior through the predictor's
        preimage; ``monte_carlo`` rejection-samples units with X_a in
        ``x +/- window`` and scores each one in both worlds.
    n, seed, window
        Monte-Carlo only.

    Returns
    -------
    DistributionDistance
        0 iff the predictor is counterfactually fair at (x, a).
    """
    a = int(_check_binary(a))
    method, distance = CfMethod(method), DistanceKind(distance)
    if method is CfMethod.CLOSED_FORM:
        return _closed_form_cf(predictor, model, float(x), a, distance)
    return _monte_carlo_cf(predictor, model, float(x), a, distance, n, seed, window)


def aggregate_cf_gap(
    predictor: Predictor,
    model: BinaryTreatmentGaussianModel,
    n_probe: int,
    seed: int,
    distance: DistanceKind = DistanceKind.KS,
) -> DistributionDistance:
    """Closed-form cf gap averaged over ``n_probe`` factual (A, X) draws."""
    if n_probe < 1:
        raise InputError(f"n_probe must be >= 1, got {n_probe}")
    distance = DistanceKind(distance)
    probes = sample_cross_world(model, n_probe, seed)
    gaps = [cf_gap(predictor, model, row.x, int(row.a), distance=distance).value
            for row in probes.itertuples(index=False)]
    return DistributionDistance(distance, float(np.mean(gaps)))


def fairness_report(
    predictor: Predictor,
    model: BinaryTreatmentGaussianModel,
    x: float,
    a: int,
    n: int,
    seed: int,
    method: CfMethod = CfMethod.CLOSED_FORM,
    distance: DistanceKind = DistanceKind.KS,
    n_probe: int = 0,
    window: float = 0.01,
) -> FairnessReport:
    """dp_gap, cf_gap at (x, a) and, when ``n_probe`` > 0, the aggregate cf gap."""
    dp_seed, cf_seed, probe_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(3))
    aggregate = aggregate_cf_gap(predictor, model, n_probe, probe_seed, distance) if n_probe > 0 else None
    return FairnessReport(
        dp_gap=dp_gap(predictor, model, n, dp_seed, distance),
        cf_gap=cf_gap(predictor, model, x, a, method, distance, n, cf_seed, window),
        method=method,
        n_samples=n,
        seed=seed,
        conditioning_point=(float(x), int(a)),
        aggregate_cf_gap=aggregate,
        dp_n_samples=n,
        dp_seed=dp_seed,
    )


def _check_grid(grid):
    grid = [float(r) for r in grid]
    if not grid:
        raise InputError("rho grid is empty")
    outside = [r for r in grid if abs(r) > 1]
    if outside:
        raise InputError(f"rho grid values must lie in [-1, 1], got {outside}")
    return grid


def adversary_rho(
    predictor: Predictor,
    base_model: BinaryTreatmentGaussianModel,
    x: float,
    a: int,
    grid: Sequence[float],
    method: CfMethod = CfMethod.CLOSED_FORM,
    distance: DistanceKind = DistanceKind.KS,
    n: int = 1_000_000,
    seed: int = 0,
    window: float = 0.01,
) -> AdversaryResult:
    """
    Search the cross-world correlation for the world least fair to ``predictor``.

    ``base_model.rho`` is ignored; every grid value gives a world with the same
    observational and interventional laws. Ties go to the smallest ``|rho|``,
    then to the smaller value. Monte-Carlo grid points use independent child
    seeds of ``seed``.
    """
    grid = _check_grid(grid)
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(len(grid))]
    profile = []
    for rho, child in zip(grid, seeds):
        world = replace(base_model, rho=rho)
        gap = cf_gap(predictor, world, x, a, method, distance, n, child, window).value
        logger.debug("rho=%.4f gap=%.6f", rho, gap)
        profile.append((rho, gap))
    rho_star, gap_star = min(profile, key=lambda p: (-p[1], abs(p[0]), p[0]))
    return AdversaryResult(rho_star, gap_star, profile)


def observational_invariance(
    model: BinaryTreatmentGaussianModel,
    grid: Sequence[float],
    n: int,
    seed: int,
) -> dict:
    """
    Pairwise KS of X | A = a between the rho-worlds of ``grid``.

    All worlds are sampled with the same seed; the coupled sampler then makes
    the observational draws coincide, which is the strongest form of
    "explains the data equally well".
    """
    grid = _check_grid(grid)
    frames = [sample_cross_world(replace(model, rho=rho), n, seed) for rho in grid]
    pairs = []
    for i in range(len(grid)):
        for j in range(i + 1, len(grid)):
            for arm in (0, 1):
                xi = frames[i].loc[frames[i]["a"] == arm, "x"]
                xj = frames[j].loc[frames[j]["a"] == arm, "x"]
                if xi.empty or xj.empty:
                    continue
                ks = float(stats.ks_2samp(xi, xj).statistic)
                pairs.append({"rho_i": grid[i], "rho_j": grid[j], "arm": arm, "ks": ks})
    arm_counts_equal = all(frames[0]["a"].equals(f["a"]) for f in frames[1:])
    return {
        "n": n,
        "seed": seed,
        "grid": grid,
        "arm_draws_identical": arm_counts_equal,
        "max_ks": max((p["ks"] for p in pairs), default=0.0),
        "pairs": pairs,
    }


def _check(test, description, value, passed):
    return {"test": test, "description": description, "value": float(value), "passed": bool(passed)}


def strong_assumption_implication_check(n: int, seed: int, n_probe: int = 25) -> dict:
    """
    Contrast the one-dimensional-error world X = A + eps with a GP-error world.

    In the first, Yhat = X - A (the linear-cancellation predictor) is the error
    itself, so demographic parity and counterfactual fairness coincide. In
    the second the worlds agree observationally but eps_0 != eps_1, and the
    same predictor stops being invariant across worlds.

    Returns
    -------
    dict
        ``checks`` holds one record per test with ``test``, ``description``,
        ``value`` and ``passed``; ``passed`` at the top level is their conjunction.
    """
    if n < 2:
        raise InputError(f"n must be >= 2, got {n}")
    continuous_seed, dp_seed, probe_seed, gp_seed, coin_seed = np.random.SeedSequence(seed).spawn(5)

    world = AdditiveErrorModel(slope=1.0, error_sd=1.0, a_sd=1.0)
    lambda1, lambda2 = linear_cancellation_coefficients(world.cov_aa, world.cov_ax)
    predictor = LinearAX(lambda1, lambda2)
    checks = []

    draws = world.sample(n, continuous_seed)
    scores = predictor.score(draws["a"], draws["x"])
    cov = float(np.cov(draws["a"], scores)[0, 1])
    checks.append(_check("CancellationCovariance", "Sample cov(A, Yhat) in the continuous world is near 0.",
                         abs(cov), abs(cov) < 0.02))

    shifted = draws["a"] + 1.0
    moved = predictor.score(shifted, world.cross_world(shifted, draws["eps"]))
    deviation = float(np.max(np.abs(moved - scores)))
    checks.append(_check("ContinuousCrossWorldInvariance",
                         "Shifting A by one unit per unit leaves Yhat unchanged (shared error).",
                         deviation, deviation < 1e-9))

    binary = world.binary_world(p1=0.5)
    dp = dp_gap(predictor, binary, n, int(dp_seed.generate_state(1)[0])).value
    checks.append(_check("DemographicParity", "KS between Yhat | A=0 and Yhat | A=1 in the rho = 1 world.",
                         dp, dp < 0.01))

    probes = sample_cross_world(binary, n_probe, probe_seed)
    worst = max(cf_gap(predictor, binary, row.x, int(row.a)).value for row in probes.itertuples(index=False))
    checks.append(_check("CounterfactualFairness", "Largest closed-form cf gap over probe points is exactly 0.",
                         worst, worst == 0.0))

    gp = GpTreatmentModel(variance=1.0, length_scale=1.0, treatment_grid=(0.0, 1.0))
    equivalence = gp_observational_equivalence_check(gp, n, int(gp_seed.generate_state(1)[0]))
    max_ks = max(level["ks_statistic"] for level in equivalence["levels"])
    checks.append(_check("ObservationalEquivalence",
                         "Per-level KS between one-dimensional and GP errors is below 0.02.",
                         max_ks, max_ks < 0.02))
    corr = equivalence["cross_world_correlation"]["gaussian_process"][0][1]
    checks.append(_check("GpCrossWorldCorrelation", "Kernel correlation of eps_0 and eps_1 is exp(-1/2).",
                         corr, abs(corr - math.exp(-0.5)) < 0.01))

    errors = gp.sample_errors(n, gp_seed.spawn(1)[0])
    gp_deviation = float(np.mean(np.abs(errors[:, 1] - errors[:, 0])))
    checks.append(_check("GpCrossWorldDeviation", "Mean |Yhat_1 - Yhat_0| per unit is positive in the GP world.",
                         gp_deviation, gp_deviation > 0))

    gp_binary = gp.as_binary_model(p1=0.5)
    gp_worst = max(cf_gap(predictor, gp_binary, row.x, int(row.a)).value
                   for row in sample_cross_world(gp_binary, n_probe, probe_seed).itertuples(index=False))
    checks.append(_check("GpCounterfactualGap", "Largest closed-form cf gap over probe points is positive.",
                         gp_worst, gp_worst > 0))

    coin = CoinFlip(0.5, int(coin_seed.generate_state(1)[0]))
    coin_gap = max(cf_gap(coin, m, 0.0, 0).value for m in (binary, gp_binary))
    checks.append(_check("CoinFlipFairness", "A coin flip is counterfactually fair in either world.",
                         coin_gap, coin_gap == 0.0))

    failed = [c["test"] for c in checks if not c["passed"]]
    if failed:
        logger.warning("strong-assumption checks failed: %s", failed)
    return {
        "n": n,
        "seed": seed,
        "coefficients": {"lambda1": lambda1, "lambda2": lambda2},
        "continuous_world": asdict(world),
        "gp_world": {"variance": gp.variance, "length_scale": gp.length_scale,
                     "treatment_grid": list(gp.treatment_grid)},
        "checks": checks,
        "passed": not failed,
    }
