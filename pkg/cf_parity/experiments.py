"""
Rank-stability experiment on law-school style data.

An OLS predictor ("Full") and the observed outcome ("True") are each repaired
toward demographic parity with the empirical quantile map, giving "Listing2F"
and "Listing2T". Their ranks over a small test subgroup are compared with
Spearman correlations and drawn as a rank grid.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas as pd
from matplotlib.collections import LineCollection
from scipy import stats

from cf_parity.errors import ExperimentError, FitError, InputError
from cf_parity.repair import RepairMode, fit_repair, repair_batch
from cf_parity.tools import read_checked_csv, write_csv

logger = logging.getLogger(__name__)

# Header names of the law-school file and the names used internally.
COLUMN_MAPPING = {"race": "race", "sex": "sex", "LSAT": "lsat", "UGPA": "ugpa", "ZFYA": "zfya"}
CATEGORICAL = ("race", "sex")
NUMERIC = ("lsat", "ugpa")
RESPONSE = "zfya"
METHODS = ("True", "Listing2T", "Listing2F", "Full")

RACES = ("Asian", "Black", "Hispanic", "White")
RACE_PROBABILITIES = (0.1, 0.1, 0.1, 0.7)
RACE_EFFECTS = {"Asian": 0.0, "Black": -0.35, "Hispanic": -0.2, "White": 0.05}
SEX_EFFECTS = {"F": 0.0, "M": 0.05}
INTERCEPT = -3.76
LSAT_COEFFICIENT = 0.06
UGPA_COEFFICIENT = 0.5
DEFAULT_NOISE_SD = 0.8

GENERATING_COEFFICIENTS = {
    "Intercept": INTERCEPT,
    "race[T.Black]": RACE_EFFECTS["Black"],
    "race[T.Hispanic]": RACE_EFFECTS["Hispanic"],
    "race[T.White]": RACE_EFFECTS["White"],
    "sex[T.M]": SEX_EFFECTS["M"],
    "lsat": LSAT_COEFFICIENT,
    "ugpa": UGPA_COEFFICIENT,
}


def _check_dataset(df: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in COLUMN_MAPPING.values() if c not in df.columns]
    if missing:
        raise InputError(f"Dataset is missing columns {missing}")
    df = df[list(COLUMN_MAPPING.values())]
    if df.isna().any().any():
        raise InputError("Dataset has missing values in used columns")
    for column in CATEGORICAL:
        if (df[column].astype(str).str.strip() == "").any():
            raise InputError(f"Empty category in column {column!r}")
    return df


def load_csv(path) -> pd.DataFrame:
    """
    Read a law-school CSV (header with race, sex, LSAT, UGPA, ZFYA; other
    columns are ignored) into the internal lowercase schema.
    """
    df = read_checked_csv(path, required=list(COLUMN_MAPPING), numeric=["LSAT", "UGPA", "ZFYA"])
    df = df.rename(columns=COLUMN_MAPPING)
    logger.info("Loaded %d rows from %s", len(df), path)
    return _check_dataset(df)


def save_csv(data: pd.DataFrame, path) -> None:
    """Write the dataset with the law-school header names."""
    inverse = {v: k for k, v in COLUMN_MAPPING.items()}
    write_csv(_check_dataset(data).rename(columns=inverse), path)


def synth_lawschool(n: int, seed: int, noise_sd: float = DEFAULT_NOISE_SD) -> pd.DataFrame:
    """
    Synthetic stand-in for the law-school data.

    LSAT and UGPA share a standard-normal factor; ZFYA is a small linear signal
    in race, sex, LSAT and UGPA plus Gaussian noise. The default noise level
    gives an in-sample R^2 near 0.25.
    """
    if n < 10:
        raise InputError(f"n must be >= 10, got {n}")
    if noise_sd < 0:
        raise InputError(f"noise_sd must be >= 0, got {noise_sd}")
    rng = np.random.default_rng(seed)
    race = rng.choice(RACES, size=n, p=RACE_PROBABILITIES)
    sex = rng.choice(tuple(SEX_EFFECTS), size=n)
    z = rng.standard_normal((2, n))
    lsat = 36.0 + 5.0 * z[0]
    ugpa = 3.2 + 0.4 * (0.5 * z[0] + math.sqrt(0.75) * z[1])
    signal = (
        INTERCEPT
        + pd.Series(race).map(RACE_EFFECTS).to_numpy()
        + pd.Series(sex).map(SEX_EFFECTS).to_numpy()
        + LSAT_COEFFICIENT * lsat
        + UGPA_COEFFICIENT * ugpa
    )
    zfya = signal + noise_sd * rng.standard_normal(n)
    return pd.DataFrame({"race": race, "sex": sex, "lsat": lsat, "ugpa": ugpa, "zfya": zfya})


@dataclass(frozen=True)
class DesignSpec:
    """
    One-hot encoding with the alphabetically first level of each categorical
    as reference, followed by the numeric columns.
    """

    categorical: Tuple[Tuple[str, Tuple[str, ...]], ...]
    numeric: Tuple[str, ...]

    @classmethod
    def from_data(cls, data: pd.DataFrame, categorical=CATEGORICAL, numeric=NUMERIC):
        levels = tuple((c, tuple(sorted(data[c].astype(str).unique()))) for c in categorical)
        return cls(levels, tuple(numeric))

    @property
    def columns(self) -> List[str]:
        names = ["Intercept"]
        for column, levels in self.categorical:
            names.extend(f"{column}[T.{level}]" for level in levels[1:])
        return names + list(self.numeric)

    def matrix(self, data: pd.DataFrame) -> np.ndarray:
        parts = [np.ones((len(data), 1))]
        for column, levels in self.categorical:
            values = data[column].astype(str)
            unknown = sorted(set(values) - set(levels))
            if unknown:
                raise InputError(f"Unseen level(s) {unknown} in column {column!r}")
            dummies = pd.get_dummies(pd.Categorical(values, categories=levels), dtype=float)
            parts.append(dummies.to_numpy()[:, 1:])
        parts.append(data[list(self.numeric)].to_numpy(dtype=float))
        return np.hstack(parts)


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coefficients: Dict[str, float]
    design_spec: DesignSpec
    standard_errors: Dict[str, float] = field(default_factory=dict)
    r_squared: float = float("nan")

    def predict(self, data: pd.DataFrame) -> np.ndarray:
        beta = np.array([self.intercept] + [self.coefficients[c] for c in self.design_spec.columns[1:]])
        return self.design_spec.matrix(data) @ beta


def _collinear_columns(design: np.ndarray, names: Sequence[str]) -> List[str]:
    kept, dropped = [], []
    for j, name in enumerate(names):
        trial = kept + [j]
        if np.linalg.matrix_rank(design[:, trial]) == len(trial):
            kept = trial
        else:
            dropped.append(name)
    return dropped


def ols_fit(
    data: pd.DataFrame,
    response: str = RESPONSE,
    categorical: Sequence[str] = CATEGORICAL,
    numeric: Sequence[str] = NUMERIC,
) -> LinearModel:
    """
    Least-squares fit of ``response`` on one-hot categoricals and numerics.

    Raises
    ------
    FitError
        Fewer rows than design columns + 1, or a rank-deficient design; the
        latter lists the columns that are linear combinations of earlier ones.
    """
    spec = DesignSpec.from_data(data, categorical, numeric)
    design = spec.matrix(data)
    y = data[response].to_numpy(dtype=float)
    n, p = design.shape
    if n < p + 1:
        raise FitError(f"Need at least {p + 1} rows for {p} design columns, got {n}")
    if np.linalg.matrix_rank(design) < p:
        collinear = _collinear_columns(design, spec.columns)
        raise FitError(f"Design matrix is rank deficient; collinear columns: {collinear}", collinear)

    beta, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    residuals = y - design @ beta
    rss = float(residuals @ residuals)
    sigma2 = rss / (n - p)
    se = np.sqrt(np.diag(sigma2 * np.linalg.inv(design.T @ design)))
    tss = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 - rss / tss if tss > 0 else 1.0

    names = spec.columns
    logger.debug("OLS on %d rows, %d columns, R^2=%.4f", n, p, r_squared)
    return LinearModel(
        intercept=float(beta[0]),
        coefficients={name: float(b) for name, b in zip(names[1:], beta[1:])},
        design_spec=spec,
        standard_errors={name: float(s) for name, s in zip(names, se)},
        r_squared=r_squared,
    )


def spearman(xs, ys) -> float:
    """Rank correlation with average ranks for ties."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise InputError(f"spearman needs two 1-d inputs of equal length, got {xs.shape} and {ys.shape}")
    if xs.size < 2:
        raise InputError("spearman needs at least 2 pairs")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise InputError("spearman is undefined for a constant input")
    return float(stats.spearmanr(xs, ys)[0])


def first_occurrence_ranks(values) -> np.ndarray:
    """Ranks 1..n; ties ordered by position."""
    return stats.rankdata(np.asarray(values, dtype=float), method="ordinal").astype(int)


@dataclass(frozen=True, eq=False)
class RankGrid:
    """Rank rows listed bottom to top; each row a permutation of 1..n."""

    method_names: Tuple[str, ...]
    ranks: Tuple[np.ndarray, ...]

    def __post_init__(self):
        ranks = tuple(np.asarray(r, dtype=int) for r in self.ranks)
        object.__setattr__(self, "method_names", tuple(self.method_names))
        object.__setattr__(self, "ranks", ranks)
        if len(ranks) != len(self.method_names) or len(ranks) < 1:
            raise InputError("RankGrid needs one rank row per method name")
        n = ranks[0].size
        expected = np.arange(1, n + 1)
        for name, row in zip(self.method_names, ranks):
            if row.size != n or not np.array_equal(np.sort(row), expected):
                raise InputError(f"Row {name!r} is not a permutation of 1..{n}")

    @property
    def n(self):
        return self.ranks[0].size

    @property
    def column_order(self) -> np.ndarray:
        """Unit order that sorts the bottom row."""
        return np.argsort(self.ranks[0], kind="stable")

    def to_frame(self, unit_ids=None) -> pd.DataFrame:
        order = self.column_order
        frame = pd.DataFrame({"column": np.arange(1, self.n + 1)})
        if unit_ids is not None:
            frame["unit"] = np.asarray(unit_ids)[order]
        for name, row in zip(self.method_names, self.ranks):
            frame[name] = row[order]
        return frame


def rank_segments(grid: RankGrid) -> List[List[Tuple[int, int]]]:
    """
    One ``[(rank, row), (rank, row + 1)]`` segment per unit and pair of
    consecutive rows, with rows numbered from 1 at the bottom.
    """
    rows = [row[grid.column_order] for row in grid.ranks]
    return [
        [(int(rows[i][k]), i + 1), (int(rows[i + 1][k]), i + 2)]
        for k in range(grid.n)
        for i in range(len(rows) - 1)
    ]


def emit_rank_plot(grid: RankGrid, out_path) -> dict:
    """
    Draw the rank grid as SVG: one row of points per method (bottom to top)
    and a segment between equal units in consecutive rows.

    Returns
    -------
    dict
        ``points``, ``segments`` and ``path``.
    """
    order = grid.column_order
    rows = [row[order] for row in grid.ranks]
    m, n = len(rows), grid.n
    segments = rank_segments(grid)
    with plt.rc_context({"svg.hashsalt": "cf_parity", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(max(6.0, n * 0.2), 1.0 + m))
        for i, row in enumerate(rows, start=1):
            ax.scatter(row, np.full(n, i), s=18, facecolors="none", edgecolors="black", zorder=2)
        ax.add_collection(LineCollection(segments, colors="black", linewidths=0.6, zorder=1))
        ax.set_xlim(0.5, n + 0.5)
        ax.set_ylim(0.5, m + 0.5)
        ax.set_xlabel("rank")
        ax.set_yticks(range(1, m + 1))
        ax.set_yticklabels(grid.method_names)
        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    logger.info("Rank plot saved to %s", out_path)
    return {"points": n * m, "segments": len(segments), "path": str(out_path)}


@dataclass(frozen=True, eq=False)
class RankExperimentResult:
    grid: RankGrid
    spearman: Dict[str, float]
    scores: pd.DataFrame
    counts: Dict[str, int]
    r_squared: float


def rank_experiment(
    data: pd.DataFrame,
    subgroup: Tuple[str, str] = ("race", "Black"),
    n_test: int = 40,
    seed: int = 0,
) -> RankExperimentResult:
    """
    Fit, repair and rank on a random half/half split.

    The arm of each row is its value in the subgroup column, so the subgroup's
    own cdf is used for its test rows while the marginal is pooled over every
    training row.

    Raises
    ------
    ExperimentError
        The subgroup has no training rows or fewer than ``n_test`` test rows.
    """
    data = _check_dataset(data).reset_index(drop=True)
    column, value = subgroup
    if column not in CATEGORICAL:
        raise InputError(f"Subgroup column must be one of {list(CATEGORICAL)}, got {column!r}")
    if n_test < 2:
        raise InputError(f"n_test must be >= 2, got {n_test}")
    data[column] = data[column].astype(str)

    rng = np.random.default_rng(seed)
    n = len(data)
    permutation = rng.permutation(n)
    n_train = int(np.rint(n / 2))
    train = data.iloc[np.sort(permutation[:n_train])]
    test = data.iloc[np.sort(permutation[n_train:])]

    in_train = int((train[column] == value).sum())
    candidates = test[test[column] == value]
    counts = {"rows": n, "train": len(train), "test": len(test),
              "subgroup_train": in_train, "subgroup_test": len(candidates), "n_test": n_test}
    if in_train == 0 or len(candidates) < n_test:
        raise ExperimentError(
            f"Subgroup {column}={value} has {in_train} training and {len(candidates)} test rows; "
            f"need >= 1 and >= {n_test}", counts)

    model = ols_fit(train)
    fitted = model.predict(train)
    repair_full = fit_repair(pd.DataFrame({"a": train[column].to_numpy(), "y_bar": fitted}), RepairMode.EMPIRICAL)
    repair_true = fit_repair(pd.DataFrame({"a": train[column].to_numpy(), "y_bar": train[RESPONSE].to_numpy()}),
                             RepairMode.EMPIRICAL)

    sample = candidates.iloc[rng.choice(len(candidates), size=n_test, replace=False)]
    arms = np.full(n_test, value, dtype=object)
    y_bar = model.predict(sample)
    y_true = sample[RESPONSE].to_numpy(dtype=float)
    y_hat = repair_batch(repair_full, pd.DataFrame({"a": arms, "y_bar": y_bar}))
    y_hat_true = repair_batch(repair_true, pd.DataFrame({"a": arms, "y_bar": y_true}))

    correlations = {
        "full_vs_true": spearman(y_bar, y_true),
        "listing2f_vs_true": spearman(y_hat, y_true),
        "listing2t_vs_true": spearman(y_hat_true, y_true),
        "listing2f_vs_full": spearman(y_hat, y_bar),
    }
    values = dict(zip(METHODS, (y_true, y_hat_true, y_hat, y_bar)))
    grid = RankGrid(METHODS, tuple(first_occurrence_ranks(values[m]) for m in METHODS))
    scores = pd.DataFrame({"unit": sample.index.to_numpy(), **values})
    logger.info("rank experiment: %s", correlations)
    return RankExperimentResult(grid, correlations, scores, counts, model.r_squared)
