"""
Cross-world generative models.

* ``BinaryTreatmentGaussianModel``: potential outcomes (X0, X1) jointly Gaussian
  with an unidentifiable cross-world correlation ``rho``; A ~ Bernoulli(p1)
  independent of (X0, X1).
* ``AdditiveErrorModel``: X = slope * A + eps with a single shared error.
* ``GpTreatmentModel``: X = A + eps_A with eps_A a stationary Gaussian process,
  realised on a finite treatment grid.
* ``SalaryModel``: A = U_a, X = -A + U_x, Y = A + X + U_y.
"""
import logging
import math
from dataclasses import dataclass, fields
from typing import NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from cf_parity.errors import InputError, ModelError

logger = logging.getLogger(__name__)

DRAW_COLUMNS = ["a", "x0", "x1", "x"]
PSD_TOLERANCE = 1e-9


def parse_flat_config(text: str) -> dict:
    """
    Split ``"key=value key=value"`` into a dict of strings.

    A bare first token (``"standardized lambda1=1"``) is returned under the
    key ``"name"``.
    """
    config = {}
    for i, token in enumerate(text.split()):
        if "=" not in token:
            if i == 0:
                config["name"] = token
                continue
            raise InputError(f"Expected key=value, got {token!r}")
        key, value = token.split("=", 1)
        if not key or not value:
            raise InputError(f"Expected key=value, got {token!r}")
        config[key.strip()] = value.strip()
    return config


def _as_float(config, key):
    try:
        return float(config[key])
    except ValueError:
        raise InputError(f"Config value for {key!r} must be numeric, got {config[key]!r}")


def _check_binary(a):
    a = np.asarray(a)
    if not np.isin(a, (0, 1)).all():
        raise InputError("Treatment arm must be 0 or 1")
    return a


@dataclass(frozen=True)
class GaussianLaw:
    """Normal law; variance 0 is a right-continuous point mass at ``mean``."""

    mean: float
    variance: float

    def __post_init__(self):
        if not np.isfinite(self.mean) or not np.isfinite(self.variance) or self.variance < 0:
            raise ModelError(f"Invalid Gaussian law N({self.mean}, {self.variance})")

    @property
    def sd(self):
        return math.sqrt(self.variance)

    @property
    def is_point_mass(self):
        return self.variance == 0

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.is_point_mass:
            return (y >= self.mean).astype(float)
        return stats.norm.cdf(y, loc=self.mean, scale=self.sd)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if self.is_point_mass:
            return np.full_like(q, self.mean)
        return stats.norm.ppf(q, loc=self.mean, scale=self.sd)

    def sample(self, n, rng):
        return self.mean + self.sd * rng.standard_normal(n)


@dataclass(frozen=True)
class BinaryTreatmentGaussianModel:
    """
    Jointly Gaussian potential outcomes for a binary treatment.

    Args:
        mu0, mu1: means of X0 and X1.
        sigma0, sigma1: standard deviations, both > 0.
        rho: correlation of X0 and X1, in [-1, 1]. Not identified by any data.
        p1: P(A = 1).
    """

    mu0: float
    mu1: float
    sigma0: float
    sigma1: float
    rho: float
    p1: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value):
                raise ModelError(f"{f.name} must be finite, got {value}")
        if self.sigma0 <= 0 or self.sigma1 <= 0:
            raise ModelError(f"sigma0 and sigma1 must be > 0, got {self.sigma0}, {self.sigma1}")
        if abs(self.rho) > 1:
            raise ModelError(f"rho must lie in [-1, 1], got {self.rho}")
        if not 0 <= self.p1 <= 1:
            raise ModelError(f"p1 must lie in [0, 1], got {self.p1}")
        if np.linalg.eigvalsh(self.covariance()).min() < -PSD_TOLERANCE:
            raise ModelError("Covariance of (X0, X1) is not positive semi-definite")

    def mean(self, a):
        return np.where(np.asarray(a) == 1, self.mu1, self.mu0)

    def sd(self, a):
        return np.where(np.asarray(a) == 1, self.sigma1, self.sigma0)

    def covariance(self):
        off = self.rho * self.sigma0 * self.sigma1
        return np.array([[self.sigma0 ** 2, off], [off, self.sigma1 ** 2]])

    def marginal(self, a) -> GaussianLaw:
        """Law of X given A = a, which by ignorability is the law of X_a."""
        return GaussianLaw(float(self.mean(a)), float(self.sd(a)) ** 2)


class PotentialOutcomeDraw(NamedTuple):
    a: int
    x0: float
    x1: float
    x: float


def model_from_config(text: str) -> BinaryTreatmentGaussianModel:
    """Build a model from ``"mu0=1.0 mu1=1.0 sigma0=1.0 sigma1=1.0 rho=0.5 p1=0.5"``."""
    config = parse_flat_config(text)
    config.pop("name", None)
    names = [f.name for f in fields(BinaryTreatmentGaussianModel)]
    unknown = sorted(set(config) - set(names))
    if unknown:
        raise InputError(f"Unknown model keys {unknown}. Expected: {names}")
    missing = [k for k in names if k != "p1" and k not in config]
    if missing:
        raise InputError(f"Model config is missing {missing}")
    return BinaryTreatmentGaussianModel(**{k: _as_float(config, k) for k in config})


def model_to_config(model: BinaryTreatmentGaussianModel) -> str:
    return " ".join(f"{f.name}={getattr(model, f.name)!r}" for f in fields(model))


def sample_cross_world(model: BinaryTreatmentGaussianModel, n: int, seed: int) -> pd.DataFrame:
    """
    Draw units with both potential outcomes and the factual outcome.

    The factual arm's outcome comes from the first standard-normal draw and
    the other arm's from ``rho * z1 + sqrt(1 - rho**2) * z2``, so (X0, X1)
    has the specified joint law whichever arm is factual, and for a fixed
    seed the observed (a, x) columns do not depend on ``rho``.

    Returns
    -------
    pd.DataFrame
        Columns ``a, x0, x1, x``; one row per ``PotentialOutcomeDraw``.
    """
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    a = rng.binomial(1, model.p1, size=n)
    z = rng.standard_normal((n, 2))

    x_fact = model.mean(a) + model.sd(a) * z[:, 0]
    other = 1 - a
    x_other = model.mean(other) + model.sd(other) * (
        model.rho * z[:, 0] + math.sqrt(1 - model.rho ** 2) * z[:, 1]
    )
    x0 = np.where(a == 0, x_fact, x_other)
    x1 = np.where(a == 1, x_fact, x_other)
    return pd.DataFrame({"a": a, "x0": x0, "x1": x1, "x": x_fact})


def iter_draws(frame: pd.DataFrame):
    """Yield ``PotentialOutcomeDraw`` rows, checking consistency on each."""
    for row in frame[DRAW_COLUMNS].itertuples(index=False):
        draw = PotentialOutcomeDraw(int(row.a), float(row.x0), float(row.x1), float(row.x))
        if draw.x != (draw.x1 if draw.a == 1 else draw.x0):
            raise ModelError(f"Consistency violated for draw {draw}")
        yield draw


def save_draws(frame: pd.DataFrame, path) -> None:
    frame[DRAW_COLUMNS].to_csv(path, index=False)
    logger.info("Samples saved to %s", path)


def counterfactual_posterior(model: BinaryTreatmentGaussianModel, observed_arm: int, x: float) -> GaussianLaw:
    """
    Law of X_{1-a} given X_a = x (equivalently given A = a, X = x under ignorability).

    |rho| = 1 gives a point mass.
    """
    a = int(_check_binary(observed_arm))
    other = 1 - a
    mu_a, sd_a = float(model.mean(a)), float(model.sd(a))
    mu_c, sd_c = float(model.mean(other)), float(model.sd(other))
    mean = mu_c + model.rho * (sd_c / sd_a) * (x - mu_a)
    variance = sd_c ** 2 * (1 - model.rho ** 2)
    return GaussianLaw(mean, max(variance, 0.0))


def rejection_pairs(
    model: BinaryTreatmentGaussianModel,
    observed_arm: int,
    x: float,
    n: int,
    seed,
    window: float = 0.01,
    chunk_size: int = 1_000_000,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rejection-sample units whose factual outcome lies in ``x +/- window``.

    Draws ``n`` bivariate Gaussian pairs in chunks and returns the accepted
    ``(observed, counterfactual)`` coordinates.
    """
    a = int(_check_binary(observed_arm))
    if window <= 0:
        raise InputError(f"window must be > 0, got {window}")
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    other = 1 - a
    mu_a, sd_a = float(model.mean(a)), float(model.sd(a))
    mu_c, sd_c = float(model.mean(other)), float(model.sd(other))
    tail = math.sqrt(1 - model.rho ** 2)

    rng = np.random.default_rng(seed)
    observed, counterfactual = [], []
    remaining = n
    while remaining > 0:
        size = min(chunk_size, remaining)
        z = rng.standard_normal((size, 2))
        x_obs = mu_a + sd_a * z[:, 0]
        mask = np.abs(x_obs - x) <= window
        observed.append(x_obs[mask])
        counterfactual.append(mu_c + sd_c * (model.rho * z[mask, 0] + tail * z[mask, 1]))
        remaining -= size
    observed, counterfactual = np.concatenate(observed), np.concatenate(counterfactual)
    logger.debug("rejection sampler kept %d of %d draws", observed.size, n)
    return observed, counterfactual


def monte_carlo_posterior(
    model: BinaryTreatmentGaussianModel,
    observed_arm: int,
    x: float,
    n: int,
    seed,
    window: float = 0.01,
    chunk_size: int = 1_000_000,
) -> np.ndarray:
    """Rejection-sampling estimate of the counterfactual posterior: the accepted counterfactual draws."""
    return rejection_pairs(model, observed_arm, x, n, seed, window, chunk_size)[1]


@dataclass(frozen=True)
class AdditiveErrorModel:
    """
    X = slope * A + eps with A ~ N(0, a_sd**2) and one shared eps ~ N(0, error_sd**2).

    Every potential outcome shares eps: X_a = slope * a + eps.
    """

    slope: float = 1.0
    error_sd: float = 1.0
    a_sd: float = 1.0

    def __post_init__(self):
        if self.error_sd <= 0 or self.a_sd <= 0:
            raise ModelError("error_sd and a_sd must be > 0")

    @property
    def cov_aa(self):
        return self.a_sd ** 2

    @property
    def cov_ax(self):
        return self.slope * self.a_sd ** 2

    def cross_world(self, a_values, eps):
        return self.slope * np.asarray(a_values, dtype=float) + np.asarray(eps, dtype=float)

    def sample(self, n: int, seed: int) -> pd.DataFrame:
        rng = np.random.default_rng(seed)
        a = self.a_sd * rng.standard_normal(n)
        eps = self.error_sd * rng.standard_normal(n)
        return pd.DataFrame({"a": a, "eps": eps, "x": self.cross_world(a, eps)})

    def binary_world(self, p1: float = 0.5) -> BinaryTreatmentGaussianModel:
        """Restriction to A in {0, 1}: the rho = 1 member of the Gaussian family."""
        return BinaryTreatmentGaussianModel(
            mu0=0.0, mu1=self.slope, sigma0=self.error_sd, sigma1=self.error_sd, rho=1.0, p1=p1
        )


@dataclass(frozen=True)
class GpTreatmentModel:
    """
    Squared-exponential Gaussian-process error eps_a on a finite treatment grid.

    k(a, a') = variance * exp(-(a - a')**2 / (2 * length_scale**2))
    """

    variance: float
    length_scale: float
    treatment_grid: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "treatment_grid", tuple(float(a) for a in self.treatment_grid))
        if self.variance <= 0 or self.length_scale <= 0:
            raise ModelError("Kernel variance and length_scale must be > 0")
        grid = np.asarray(self.treatment_grid)
        if grid.size == 0 or not np.isfinite(grid).all():
            raise ModelError("treatment_grid must be a nonempty list of finite levels")
        if np.any(np.diff(grid) <= 0):
            raise ModelError(f"treatment_grid must be strictly increasing, got {self.treatment_grid}")
        gram = self.gram()
        if not np.allclose(gram, gram.T) or np.linalg.eigvalsh(gram).min() < -PSD_TOLERANCE:
            raise ModelError("Gram matrix over treatment_grid is not positive semi-definite")

    def kernel(self, a, a_prime):
        lag = np.subtract(a, a_prime)
        return self.variance * np.exp(-(lag ** 2) / (2 * self.length_scale ** 2))

    def gram(self):
        grid = np.asarray(self.treatment_grid)
        return self.kernel(grid[:, None], grid[None, :])

    def sample_errors(self, n: int, seed) -> np.ndarray:
        """(n, len(grid)) draws of (eps_a) over the grid."""
        rng = np.random.default_rng(seed)
        mean = np.zeros(len(self.treatment_grid))
        return rng.multivariate_normal(mean, self.gram(), size=n, method="eigh")

    def as_binary_model(self, p1: float = 0.5) -> BinaryTreatmentGaussianModel:
        """The first two grid levels as arms 0 and 1 of the Gaussian family."""
        if len(self.treatment_grid) < 2:
            raise ModelError("Need at least two grid levels for a binary restriction")
        lo, hi = self.treatment_grid[:2]
        sd = math.sqrt(self.variance)
        return BinaryTreatmentGaussianModel(
            mu0=lo, mu1=hi, sigma0=sd, sigma1=sd, rho=gp_cross_world_correlation(self, lo, hi), p1=p1
        )


def gp_cross_world_correlation(model: GpTreatmentModel, a: float, a_prime: float) -> float:
    """Correlation of eps_a and eps_a', k(a - a') / k(0)."""
    return float(model.kernel(a, a_prime) / model.variance)


def gp_observational_equivalence_check(gp: GpTreatmentModel, n: int, seed: int) -> dict:
    """
    Compare X = a + eps (one shared error) against X = a + eps_a (GP) level by level.

    Both worlds have the same law of X given each level, so every per-level
    two-sample KS statistic should stay below the 1% critical value. The
    cross-world correlation matrices are reported to expose where they differ.
    """
    if n < 2:
        raise InputError(f"n must be >= 2, got {n}")
    grid = np.asarray(gp.treatment_grid)
    one_dim_seed, gp_seed = np.random.SeedSequence(seed).spawn(2)

    eps = math.sqrt(gp.variance) * np.random.default_rng(one_dim_seed).standard_normal(n)
    one_dim = grid[None, :] + eps[:, None]
    gp_world = grid[None, :] + gp.sample_errors(n, gp_seed)

    critical = 1.63 * math.sqrt(2.0 / n)
    levels = []
    for j, level in enumerate(grid):
        result = stats.ks_2samp(one_dim[:, j], gp_world[:, j])
        levels.append({
            "level": float(level),
            "ks_statistic": float(result.statistic),
            "p_value": float(result.pvalue),
            "significant": bool(result.statistic > critical),
        })

    kernel_corr = gp.gram() / gp.variance
    if len(grid) > 1:
        sample_corr = np.corrcoef(gp_world, rowvar=False)
    else:
        sample_corr = np.ones((1, 1))
    report = {
        "n": n,
        "seed": seed,
        "variance": gp.variance,
        "length_scale": gp.length_scale,
        "critical_value_1pct": critical,
        "levels": levels,
        "cross_world_correlation": {
            "one_dimensional": np.ones_like(kernel_corr).tolist(),
            "gaussian_process": kernel_corr.tolist(),
            "gaussian_process_sample": np.atleast_2d(sample_corr).tolist(),
        },
    }
    if any(level["significant"] for level in levels):
        logger.warning("per-level KS exceeded the 1%% critical value %.4f", critical)
    return report


# X = -A + U_x and Y = A + X + U_y. Substituting X into Y, the coefficient
# on A is 1 + 1 * (-1) = 0, computed exactly.
_X_ON_A = -1.0
_Y_ON_A = 1.0
_Y_ON_X = 1.0
_Y_REDUCED_ON_A = _Y_ON_A + _Y_ON_X * _X_ON_A


def salary_cross_world(a, u_x, u_y):
    """
    Evaluate the salary example for one unit (or arrays of units).

    Returns
    -------
    tuple
        ``(y0, y1, x, y)`` with ``y == y_a`` and ``y0 == y1`` exactly.
    """
    a = _check_binary(a)
    u_x = np.asarray(u_x, dtype=float)
    u_y = np.asarray(u_y, dtype=float)

    def y_under(arm):
        return _Y_REDUCED_ON_A * arm + _Y_ON_X * u_x + u_y

    x = _X_ON_A * a + u_x
    y0, y1 = y_under(0), y_under(1)
    y = y_under(a)
    if np.ndim(y) == 0:
        return float(y0), float(y1), float(x), float(y)
    return y0, y1, x, y


def salary_fair_score(a, x):
    """The total-effect fair predictor g(U_x) = U_x, abducted from (A, X) as X + A."""
    return np.asarray(x, dtype=float) + _check_binary(a)


@dataclass(frozen=True)
class SalaryModel:
    """
    A = U_a with U_a uniform on {0, 1}; error laws for U_x and U_y are
    scipy frozen distributions, standard Gaussian by default.
    """

    ux_dist: Optional[object] = None
    uy_dist: Optional[object] = None

    def __post_init__(self):
        if self.ux_dist is None:
            object.__setattr__(self, "ux_dist", stats.norm())
        if self.uy_dist is None:
            object.__setattr__(self, "uy_dist", stats.norm())

    def sample(self, n: int, seed: int) -> pd.DataFrame:
        rng = np.random.default_rng(seed)
        u_a = rng.integers(0, 2, size=n)
        u_x = self.ux_dist.rvs(size=n, random_state=rng)
        u_y = self.uy_dist.rvs(size=n, random_state=rng)
        y0, y1, x, y = salary_cross_world(u_a, u_x, u_y)
        return pd.DataFrame({
            "u_a": u_a, "u_x": u_x, "u_y": u_y, "a": u_a, "x": x, "y": y, "y0": y0, "y1": y1,
        })
