"""
Predictor constructions.

Per-arm predictors score a unit from its factual pair (a, x). Potential-outcome
predictors score it from (x0, x1) and never look at A. ``score_world`` gives
the score every unit would receive in the world where A is set to ``arm``,
which is what the fairness checks compare.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Tuple

import numpy as np
from scipy import stats

from cf_parity.causal_models import BinaryTreatmentGaussianModel, _as_float, _check_binary, parse_flat_config
from cf_parity.errors import InputError

logger = logging.getLogger(__name__)


class PredictorKind(str, Enum):
    STANDARDIZED = "standardized"
    LINEAR_AX = "linear_ax"
    PO_LINEAR = "po_linear"
    ROSENBLATT = "rosenblatt"
    COIN_FLIP = "coin_flip"
    PATH_SPECIFIC = "path_specific"


def standardized_score(model: BinaryTreatmentGaussianModel, a, x):
    """(x - mu_a) / sigma_a."""
    a = _check_binary(a)
    return (np.asarray(x, dtype=float) - model.mean(a)) / model.sd(a)


def linear_cancellation_coefficients(cov_aa: float, cov_ax: float) -> Tuple[float, float]:
    """
    Coefficients (lambda1, lambda2) of lambda1 * A + lambda2 * X uncorrelated with A.

    lambda2 is fixed to 1, so lambda1 = -cov_ax / cov_aa.
    """
    if not cov_aa > 0:
        raise InputError(f"cov_aa must be > 0, got {cov_aa}")
    return -cov_ax / cov_aa, 1.0


def rosenblatt_dp_score(cdf_family: Mapping[int, object], a, x, h: Optional[Callable] = None):
    """
    h(F_{x|a}(x)) for a family of per-arm continuous distributions.

    ``cdf_family`` maps each arm to a scipy frozen distribution. Inputs outside
    the support of their arm are clamped to the nearest endpoint of [0, 1]
    with a warning.
    """
    a = _check_binary(a)
    x = np.asarray(x, dtype=float)
    a_b, x_b = np.broadcast_arrays(a, x)
    u = np.empty(x_b.shape, dtype=float)
    outside = np.zeros(x_b.shape, dtype=bool)
    for arm in np.unique(a_b):
        if int(arm) not in cdf_family:
            raise InputError(f"No conditional cdf for arm {arm}")
        dist = cdf_family[int(arm)]
        mask = a_b == arm
        lo, hi = dist.support()
        outside[mask] = (x_b[mask] < lo) | (x_b[mask] > hi)
        u[mask] = dist.cdf(x_b[mask])
    if outside.any():
        warnings.warn(f"{int(outside.sum())} input(s) outside the support of F_x|a, clamped", UserWarning)
    u = np.clip(u, 0.0, 1.0)
    out = u if h is None else np.asarray(h(u), dtype=float)
    return float(out) if out.ndim == 0 else out


def potential_outcome_score(lambda1: float, lambda2: float, x0, x1):
    """lambda1 * x0 + lambda2 * x1; depends on the unit only through its potential outcomes."""
    return lambda1 * np.asarray(x0, dtype=float) + lambda2 * np.asarray(x1, dtype=float)


def coin_flip_score(p: float, seed, n: Optional[int] = None):
    """Bernoulli(p) draw(s) independent of all unit data."""
    if not 0 <= p <= 1:
        raise InputError(f"p must lie in [0, 1], got {p}")
    draws = np.random.default_rng(seed).binomial(1, p, size=n)
    return int(draws) if n is None else draws


def monotone_dominance(lambda1: float, lambda2: float, unit1, unit2) -> bool:
    """
    Check the ranking of two units with equal factual scores.

    ``unit1 = (x_a, x_a')`` was observed under a and ``unit2 = (x_a, x_a')``
    under a', with x_a' >= x_a for each unit and unit1's x_a equal to unit2's
    x_a'. With positive coefficients the potential-outcome score of unit 1 is
    never below that of unit 2.
    """
    if lambda1 <= 0 or lambda2 <= 0:
        raise InputError("monotone dominance needs positive coefficients")
    (a1, b1), (a2, b2) = unit1, unit2
    if b1 < a1 or b2 < a2:
        raise InputError("each unit must satisfy x_a' >= x_a")
    if a1 != b2:
        raise InputError("units must share the same factual score")
    return bool(potential_outcome_score(lambda1, lambda2, a1, b1) >= potential_outcome_score(lambda1, lambda2, a2, b2))


@dataclass(frozen=True)
class LinearEquation:
    """V = a * A + x * X + u * U + intercept."""

    a: float = 0.0
    x: float = 0.0
    u: float = 0.0
    intercept: float = 0.0

    def __call__(self, a_value, u_value, x_value=0.0):
        return (self.a * np.asarray(a_value, dtype=float) + self.x * np.asarray(x_value, dtype=float)
                + self.u * np.asarray(u_value, dtype=float) + self.intercept)


def path_specific_score(
    f_x: LinearEquation,
    f_z: LinearEquation,
    a,
    u_x,
    u_z,
    baseline=0,
    weights: Tuple[float, float] = (1.0, 1.0),
):
    """
    Score allowing A -> X -> Z but not A -> Z.

    X keeps its natural value f_X(a, u_x). Z is re-evaluated with its A input
    fixed at each baseline arm: z* = f_Z(baseline, x, u_z). The score is
    ``weights[0] * x + weights[1] * sum(z*)``.
    """
    baselines = np.atleast_1d(baseline)
    x = f_x(a, u_x)
    z_star = sum(f_z(b, u_z, x) for b in baselines)
    return weights[0] * x + weights[1] * z_star


class Predictor:
    """Common interface. Subclasses are frozen dataclasses."""

    kind: PredictorKind
    per_arm = True
    deterministic = True

    def score(self, a, x):
        raise InputError(f"{self.kind.value} predictor is not defined on (a, x)")

    def score_world(self, frame, arm, coin=None):
        x_arm = frame["x1"] if arm == 1 else frame["x0"]
        return np.asarray(self.score(np.full(len(frame), arm), x_arm.to_numpy()), dtype=float)

    def threshold(self, a, s):
        """
        ``(t, increasing)`` with {y : score(a, y) <= s} = {y <= t} (or {y >= t}
        when decreasing); ``None`` if the score does not depend on y.
        """
        raise InputError(f"{self.kind.value} predictor has no closed-form preimage")

    def config(self) -> dict:
        return {"predictor": self.kind.value}


@dataclass(frozen=True)
class Standardized(Predictor):
    model: BinaryTreatmentGaussianModel
    kind = PredictorKind.STANDARDIZED

    def score(self, a, x):
        return standardized_score(self.model, a, x)

    def threshold(self, a, s):
        return float(self.model.mean(a) + self.model.sd(a) * s), True


@dataclass(frozen=True)
class LinearAX(Predictor):
    lambda1: float
    lambda2: float
    lambda3: float = 0.0
    kind = PredictorKind.LINEAR_AX

    def score(self, a, x):
        return self.lambda1 * np.asarray(a, dtype=float) + self.lambda2 * np.asarray(x, dtype=float) + self.lambda3

    def threshold(self, a, s):
        if self.lambda2 == 0:
            return None
        return (s - self.lambda1 * a - self.lambda3) / self.lambda2, self.lambda2 > 0

    def config(self):
        return {"predictor": self.kind.value, "lambda1": self.lambda1,
                "lambda2": self.lambda2, "lambda3": self.lambda3}


@dataclass(frozen=True)
class PotentialOutcomeLinear(Predictor):
    lambda1: float
    lambda2: float
    positive: bool = False
    kind = PredictorKind.PO_LINEAR
    per_arm = False

    def __post_init__(self):
        if not (math.isfinite(self.lambda1) and math.isfinite(self.lambda2)):
            raise InputError("lambda1 and lambda2 must be finite")
        if self.positive and (self.lambda1 <= 0 or self.lambda2 <= 0):
            raise InputError("positive mode needs lambda1 > 0 and lambda2 > 0")

    def score_potential(self, x0, x1):
        return potential_outcome_score(self.lambda1, self.lambda2, x0, x1)

    def score_world(self, frame, arm, coin=None):
        return np.asarray(self.score_potential(frame["x0"].to_numpy(), frame["x1"].to_numpy()))

    def config(self):
        return {"predictor": self.kind.value, "lambda1": self.lambda1, "lambda2": self.lambda2}


@dataclass(frozen=True)
class RosenblattDp(Predictor):
    """
    h(F_{x|a}(x)). ``h_inverse`` is only needed for closed-form fairness gaps
    when ``h`` is not the identity.
    """

    cdf_family: Mapping[int, object]
    h: Optional[Callable] = None
    h_inverse: Optional[Callable] = None
    kind = PredictorKind.ROSENBLATT

    def __post_init__(self):
        for arm, dist in self.cdf_family.items():
            if not (hasattr(dist, "cdf") and hasattr(dist, "ppf") and hasattr(dist, "pdf")):
                raise InputError(f"Arm {arm}: conditional law must be a continuous scipy distribution")

    @classmethod
    def from_model(cls, model: BinaryTreatmentGaussianModel, h=None, h_inverse=None):
        family = {a: stats.norm(loc=float(model.mean(a)), scale=float(model.sd(a))) for a in (0, 1)}
        return cls(cdf_family=family, h=h, h_inverse=h_inverse)

    def score(self, a, x):
        return rosenblatt_dp_score(self.cdf_family, a, x, self.h)

    def threshold(self, a, s):
        if self.h is not None and self.h_inverse is None:
            raise InputError("closed form needs h_inverse for a non-identity h")
        u = s if self.h is None else float(self.h_inverse(s))
        return float(self.cdf_family[int(a)].ppf(np.clip(u, 0.0, 1.0))), True


@dataclass(frozen=True)
class CoinFlip(Predictor):
    p: float
    seed: int = 0
    kind = PredictorKind.COIN_FLIP
    per_arm = False
    deterministic = False

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise InputError(f"p must lie in [0, 1], got {self.p}")

    def draw(self, n, seed=None):
        return coin_flip_score(self.p, self.seed if seed is None else seed, n)

    def score_world(self, frame, arm, coin=None):
        # The coin is exogenous: a unit keeps its flip in every world.
        return np.asarray(self.draw(len(frame)) if coin is None else coin, dtype=float)

    def config(self):
        return {"predictor": self.kind.value, "p": self.p, "seed": self.seed}


@dataclass(frozen=True)
class PathSpecific(Predictor):
    f_x: LinearEquation = field(default_factory=lambda: LinearEquation(a=1.0, u=1.0))
    f_z: LinearEquation = field(default_factory=lambda: LinearEquation(a=1.0, x=1.0, u=1.0))
    baselines: Tuple = (0,)
    weights: Tuple[float, float] = (1.0, 1.0)
    kind = PredictorKind.PATH_SPECIFIC
    per_arm = False

    def score_exogenous(self, a, u_x, u_z):
        return path_specific_score(self.f_x, self.f_z, a, u_x, u_z, self.baselines, self.weights)

    def score_world(self, frame, arm, coin=None):
        raise InputError("path_specific predictor needs exogenous inputs (u_x, u_z), not potential outcomes")

    def config(self):
        return {"predictor": self.kind.value, "baselines": list(self.baselines), "weights": list(self.weights)}


def _probit_family(model):
    return RosenblattDp.from_model(model, h=stats.norm.ppf, h_inverse=stats.norm.cdf)


def predictor_from_config(text: str, model: Optional[BinaryTreatmentGaussianModel] = None) -> Predictor:
    """
    Build a predictor from a flat config, e.g. ``"predictor=po_linear lambda1=1 lambda2=1"``.

    ``identity`` is shorthand for ``linear_ax lambda1=0 lambda2=1``.
    ``rosenblatt`` takes ``h=identity|probit``.
    """
    config = parse_flat_config(text)
    name = config.pop("predictor", None) or config.pop("name", None)
    if name is None:
        raise InputError("Predictor config needs a predictor name")

    def num(key, default=None):
        if key not in config:
            if default is None:
                raise InputError(f"{name} predictor needs {key}")
            return default
        return _as_float(config, key)

    def needs_model():
        if model is None:
            raise InputError(f"{name} predictor needs a model")
        return model

    if name == "identity":
        return LinearAX(0.0, 1.0, 0.0)
    try:
        kind = PredictorKind(name)
    except ValueError:
        raise InputError(f"Invalid predictor: {name}. Must be one of: {[k.value for k in PredictorKind] + ['identity']}")

    if kind is PredictorKind.STANDARDIZED:
        return Standardized(needs_model())
    if kind is PredictorKind.LINEAR_AX:
        return LinearAX(num("lambda1"), num("lambda2"), num("lambda3", 0.0))
    if kind is PredictorKind.PO_LINEAR:
        return PotentialOutcomeLinear(num("lambda1"), num("lambda2"), bool(num("positive", 0.0)))
    if kind is PredictorKind.ROSENBLATT:
        h = config.get("h", "identity")
        if h == "identity":
            return RosenblattDp.from_model(needs_model())
        if h == "probit":
            return _probit_family(needs_model())
        raise InputError(f"Unknown output map h={h!r}; use identity or probit")
    if kind is PredictorKind.COIN_FLIP:
        return CoinFlip(num("p"), int(num("seed", 0.0)))
    return PathSpecific(
        f_x=LinearEquation(a=num("fx_a", 1.0), u=num("fx_u", 1.0), intercept=num("fx_0", 0.0)),
        f_z=LinearEquation(a=num("fz_a", 1.0), x=num("fz_x", 1.0), u=num("fz_u", 1.0), intercept=num("fz_0", 0.0)),
        baselines=(num("baseline", 0.0),),
        weights=(num("weight_x", 1.0), num("weight_z", 1.0)),
    )
