"""
Quantile repair toward demographic parity.

Each score is mapped through its own arm's cdf and then through the inverse
of the pooled (marginal) cdf: y_hat = g(F^-1(F_a(y_bar))). The empirical mode
follows the index rule of the reference R code; the gaussian mode assumes
Gaussian per-arm laws.
"""
import logging
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Union

import numpy as np
import pandas as pd
from scipy import stats

from cf_parity.causal_models import GaussianLaw
from cf_parity.errors import FitError, InputError
from cf_parity.tools import read_checked_csv, write_csv

logger = logging.getLogger(__name__)

SCORE_COLUMNS = ["a", "y_bar"]


class RepairMode(str, Enum):
    EMPIRICAL = "empirical"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True, eq=False)
class EmpiricalCdf:
    """
    Right-continuous empirical cdf over a sorted multiset; ties are kept.
    """

    sorted_values: np.ndarray
    n: int

    def __post_init__(self):
        values = np.asarray(self.sorted_values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise FitError("An empirical cdf needs at least one value")
        if values.size != self.n:
            raise FitError(f"n={self.n} does not match {values.size} values")
        if not np.isfinite(values).all():
            raise FitError("Empirical cdf values must be finite")
        if np.any(np.diff(values) < 0):
            raise FitError("sorted_values must be nondecreasing")
        values.setflags(write=False)
        object.__setattr__(self, "sorted_values", values)

    @classmethod
    def from_values(cls, values):
        values = np.sort(np.asarray(values, dtype=float))
        return cls(values, int(values.size))

    def evaluate(self, v):
        """(# values <= v) / n."""
        counts = np.searchsorted(self.sorted_values, v, side="right")
        return counts / self.n

    def quantile(self, q):
        """
        Sorted value at index round(n * q), with index 0 moved to 1 and
        anything above n clamped to n (1-based). ``round`` is half-to-even.
        """
        index = np.rint(self.n * np.asarray(q, dtype=float)).astype(int)
        index = np.clip(np.where(index == 0, 1, index), 1, self.n)
        return self.sorted_values[index - 1]


@dataclass(frozen=True, eq=False)
class RepairModel:
    per_arm: Mapping[object, Union[EmpiricalCdf, GaussianLaw]]
    marginal: Union[EmpiricalCdf, GaussianLaw]
    mode: RepairMode
    n_train: int

    def __post_init__(self):
        object.__setattr__(self, "mode", RepairMode(self.mode))
        if not self.per_arm:
            raise FitError("A repair model needs at least one arm")

    @property
    def arms(self):
        return list(self.per_arm)

    def _law(self, arm):
        try:
            return self.per_arm[arm]
        except (KeyError, TypeError):
            raise InputError(f"Unknown arm {arm!r}; model was fit on {self.arms}")


def _as_frame(training_scores) -> pd.DataFrame:
    if isinstance(training_scores, pd.DataFrame):
        missing = [c for c in SCORE_COLUMNS if c not in training_scores.columns]
        if missing:
            raise InputError(f"Training scores are missing columns {missing}")
        return training_scores[SCORE_COLUMNS]
    return pd.DataFrame(list(training_scores), columns=SCORE_COLUMNS)


def _gaussian_law(scores, arm):
    if scores.size < 2:
        raise FitError(f"Arm {arm!r} needs >= 2 scores for a Gaussian fit", [str(arm)])
    sd = float(np.std(scores, ddof=1))
    if sd <= 0:
        raise FitError(f"Arm {arm!r} has constant scores; Gaussian fit is degenerate", [str(arm)])
    return GaussianLaw(float(np.mean(scores)), sd ** 2)


def fit_repair(
    training_scores,
    mode: RepairMode = RepairMode.EMPIRICAL,
    arms: Optional[Iterable] = None,
) -> RepairModel:
    """
    Fit per-arm cdfs and the pooled marginal.

    Parameters
    ----------
    training_scores : pd.DataFrame or iterable of (arm, score)
        A frame needs columns ``a`` and ``y_bar``.
    mode : RepairMode
        ``empirical`` keeps the sorted multisets; ``gaussian`` keeps fitted
        means and standard deviations.
    arms : iterable, optional
        Arms that must be present. An arm listed here without scores is a
        ``FitError`` naming it.
    """
    mode = RepairMode(mode)
    frame = _as_frame(training_scores)
    scores = pd.to_numeric(frame["y_bar"], errors="coerce").to_numpy(dtype=float)
    if not np.isfinite(scores).all():
        raise FitError("Training scores must be finite numbers")
    if scores.size < 2:
        raise FitError(f"Need >= 2 pooled training scores, got {scores.size}")

    groups = {arm: scores[(frame["a"] == arm).to_numpy()] for arm in pd.unique(frame["a"])}
    for arm in arms or ():
        if arm not in groups or groups[arm].size == 0:
            raise FitError(f"No training scores for arm {arm!r}", [str(arm)])

    if mode is RepairMode.EMPIRICAL:
        per_arm = {arm: EmpiricalCdf.from_values(s) for arm, s in groups.items()}
        marginal = EmpiricalCdf.from_values(scores)
    else:
        per_arm = {arm: _gaussian_law(s, arm) for arm, s in groups.items()}
        marginal = _gaussian_law(scores, "pooled")
    logger.debug("fit %s repair on %d scores over arms %s", mode.value, scores.size, list(groups))
    return RepairModel(per_arm=per_arm, marginal=marginal, mode=mode, n_train=int(scores.size))


def _repair_arm(model: RepairModel, arm, y_bar: np.ndarray) -> np.ndarray:
    law = model._law(arm)
    if model.mode is RepairMode.EMPIRICAL:
        return model.marginal.quantile(law.evaluate(y_bar))

    p = stats.norm.cdf((y_bar - law.mean) / law.sd)
    lo = 1.0 / (2 * model.n_train)
    clamped = (p < lo) | (p > 1 - lo)
    if clamped.any():
        warnings.warn(f"{int(clamped.sum())} probability(ies) clamped to [{lo}, {1 - lo}] before the marginal quantile",
                      UserWarning)
    return model.marginal.ppf(np.clip(p, lo, 1 - lo))


def repair_score(model: RepairModel, arm, y_bar: float, g: Optional[Callable] = None) -> float:
    """Repair a single score. ``g`` is an optional monotone map applied last."""
    out = float(_repair_arm(model, arm, np.asarray([y_bar], dtype=float))[0])
    return float(g(out)) if g is not None else out


def repair_batch(model: RepairModel, rows, g: Optional[Callable] = None) -> np.ndarray:
    """
    Element-wise ``repair_score`` over ``(arm, y_bar)`` rows (or a frame with
    ``a`` and ``y_bar``), vectorised per arm. Output order follows input order.
    """
    frame = _as_frame(rows)
    y_bar = frame["y_bar"].to_numpy(dtype=float)
    arms = frame["a"].to_numpy()
    out = np.empty(y_bar.size, dtype=float)
    for arm in pd.unique(arms):
        mask = arms == arm
        out[mask] = _repair_arm(model, arm, y_bar[mask])
    if g is not None:
        out = np.asarray(g(out), dtype=float)
    return out


def _maybe_numeric_arms(values: pd.Series) -> pd.Series:
    parsed = pd.to_numeric(values, errors="coerce")
    if parsed.notna().all() and (parsed == parsed.round()).all():
        return parsed.astype(int)
    return values


def load_scores(path) -> pd.DataFrame:
    """Read a CSV with header ``a,y_bar``. Integer-looking arms become ints."""
    df = read_checked_csv(path, required=SCORE_COLUMNS, numeric=["y_bar"])
    df["a"] = _maybe_numeric_arms(df["a"])
    return df


def save_repaired(frame: pd.DataFrame, path) -> None:
    """Write ``a,y_bar,y_hat``."""
    write_csv(frame[["a", "y_bar", "y_hat"]], path)
