import os
from pathlib import Path
from typing import Optional

import pandas as pd

from cf_parity.experiments import (
    COLUMN_MAPPING,
    emit_rank_plot,
    load_csv,
    rank_experiment,
    synth_lawschool,
)
from cf_parity.errors import InputError
from cf_parity.tools import get_version, write_csv, write_json

RANKS_FILENAME = "ranks.csv"
SPEARMAN_FILENAME = "spearman.json"
PLOT_FILENAME = "rankplot.svg"
DEFAULT_SYNTHETIC_ROWS = 10_000


class RankExperiment:

    def __init__(
        self,
        path_to_csv: Optional[str] = None,
        input_df: Optional[pd.DataFrame] = None,
        subgroup: tuple = ("race", "Black"),
        n_test: int = 40,
        seed: int = 0,
        synthetic_rows: int = DEFAULT_SYNTHETIC_ROWS,
    ):
        """
        Class for running the rank-stability experiment.

        Args:
            path_to_csv (Optional[str]): Path to a law-school CSV. When neither this nor
                input_df is given, a synthetic dataset is generated from ``seed``.
            input_df (Optional[pd.DataFrame]): Input dataset, law-school or internal column names.
            subgroup (tuple): (column, value) selecting the test subgroup.
            n_test (int): Number of subgroup test rows to rank.
            seed (int): Seed for the split, the subsample and any synthetic data.
            synthetic_rows (int): Size of the synthetic fallback dataset.
        """
        self.path_to_csv = path_to_csv
        self.input_df = input_df
        self.subgroup = tuple(subgroup)
        self.n_test = n_test
        self.seed = seed
        self.synthetic_rows = synthetic_rows

        self._validate_inputs()
        self.load_data()

        self.ExperimentReport = {
            "input_file": self.path_to_csv,
            "synthetic": self.path_to_csv is None and self.input_df is None,
            "CfParityVersion": get_version(),
            "subgroup": {"column": self.subgroup[0], "value": self.subgroup[1]},
            "n_test": self.n_test,
            "seed": self.seed,
        }
        self.result = None

    def _validate_inputs(self):
        """Validate the inputs."""
        if self.path_to_csv is not None and not isinstance(self.path_to_csv, (str, os.PathLike)):
            raise InputError(f"Expected path_to_csv to be a path, got {type(self.path_to_csv)}")

        if self.input_df is not None:
            if not isinstance(self.input_df, pd.DataFrame):
                raise InputError(f"Expected input_df to be a pandas DataFrame, got {type(self.input_df)}")
            self.input_df = self.input_df.rename(columns=COLUMN_MAPPING)

        if len(self.subgroup) != 2:
            raise InputError(f"subgroup must be a (column, value) pair, got {self.subgroup}")

        if not isinstance(self.n_test, int) or self.n_test < 2:
            raise InputError(f"n_test must be an integer >= 2, got {self.n_test}")

    def load_data(self):
        """Assign input data (from a CSV, the input df, or the synthetic generator) to self.data."""
        if self.path_to_csv:
            data = load_csv(self.path_to_csv)
        elif self.input_df is not None:
            data = self.input_df.copy()
        else:
            data = synth_lawschool(self.synthetic_rows, self.seed)

        if data.empty:
            raise InputError("Input dataset is empty.")
        self.data = data

    def run(self):
        """Run the experiment and fill in the report."""
        self.result = rank_experiment(self.data, self.subgroup, self.n_test, self.seed)
        self.ExperimentReport.update({
            "spearman": self.result.spearman,
            "counts": self.result.counts,
            "r_squared": self.result.r_squared,
        })
        return self.result

    def write_outputs(self, out_dir):
        """
        Write ranks.csv, spearman.json and rankplot.svg to ``out_dir``.

        Returns:
            dict: paths of the written files and the plot point/segment counts.
        """
        if self.result is None:
            self.run()
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        grid = self.result.grid
        write_csv(grid.to_frame(self.result.scores["unit"]), out_dir / RANKS_FILENAME)
        plot = emit_rank_plot(grid, out_dir / PLOT_FILENAME)
        self.ExperimentReport["plot"] = {"points": plot["points"], "segments": plot["segments"]}
        write_json(self.ExperimentReport, out_dir / SPEARMAN_FILENAME)
        return {
            "ranks": str(out_dir / RANKS_FILENAME),
            "spearman": str(out_dir / SPEARMAN_FILENAME),
            "plot": plot["path"],
            "points": plot["points"],
            "segments": plot["segments"],
        }
