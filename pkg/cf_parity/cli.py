"""
Command-line entry point: ``cf-parity <subcommand> [options]``.

Data goes to standard output or to the files named by ``--out`` options;
log messages and errors go to standard error. Exit status is 0 on success,
1 for input errors and usage problems, 2 for anything unexpected.
"""
import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from scipy import stats

from cf_parity.causal_models import (
    BinaryTreatmentGaussianModel,
    GpTreatmentModel,
    counterfactual_posterior,
    gp_observational_equivalence_check,
    model_from_config,
    model_to_config,
    monte_carlo_posterior,
    sample_cross_world,
    save_draws,
)
from cf_parity.errors import CfParityError, InputError
from cf_parity.fairness import (
    CfMethod,
    DistanceKind,
    DistributionDistance,
    FairnessReport,
    adversary_rho,
    aggregate_cf_gap,
    cf_gap,
    dp_gap,
    observational_invariance,
    strong_assumption_implication_check,
)
from cf_parity.graphs import REFERENCE_GRAPHS, d_separated, load_graph, reference_graph
from cf_parity.predictors import predictor_from_config
from cf_parity.RankExperiment import PLOT_FILENAME, RANKS_FILENAME, SPEARMAN_FILENAME, RankExperiment
from cf_parity.experiments import save_csv, synth_lawschool, ols_fit
from cf_parity.repair import RepairMode, fit_repair, load_scores, repair_batch, save_repaired
from cf_parity.tools import get_version, write_csv

logger = logging.getLogger(__name__)

MODEL_KEYS = ("mu0", "mu1", "sigma0", "sigma1", "rho", "p1")
RANGE_OPTIONS = ("--grid", "--levels")
DISTANCES = {"ks": DistanceKind.KS, "wasserstein1": DistanceKind.WASSERSTEIN}


@dataclass
class RunConfig:
    subcommand: str
    parameters: Dict[str, object]
    seed: Optional[int] = None
    outputs: Dict[str, str] = field(default_factory=dict)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_range(text: str) -> List[float]:
    """
    ``start:stop:step`` (inclusive of ``stop`` up to rounding) or a comma list.
    """
    try:
        if ":" not in text:
            return [float(v) for v in text.split(",") if v.strip()]
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise InputError(f"Expected start:stop:step or a comma list, got {text!r}")
    if step <= 0 or stop < start:
        raise InputError(f"Range {text!r} needs step > 0 and start <= stop")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(count)]


def _normalize_argv(argv):
    # "--grid -0.99:0.99:0.11" would otherwise read the range as an option.
    out = []
    i = 0
    while i < len(argv):
        token = argv[i]
        if token in RANGE_OPTIONS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{token}={argv[i + 1]}")
            i += 2
            continue
        out.append(token)
        i += 1
    return out


def _add_model_args(parser, rho_required=True):
    parser.add_argument("--model", help='flat config, e.g. "mu0=1 mu1=1 sigma0=1 sigma1=1 rho=0"')
    for key in MODEL_KEYS:
        parser.add_argument(f"--{key}", type=float)
    parser.set_defaults(rho_required=rho_required)


def _resolve_model(args) -> BinaryTreatmentGaussianModel:
    values = {}
    if args.model:
        values.update(asdict(model_from_config(args.model)))
    for key in MODEL_KEYS:
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if not args.rho_required:
        values.setdefault("rho", 0.0)
    missing = [k for k in MODEL_KEYS if k != "p1" and k not in values]
    if missing:
        raise InputError(f"Model is missing {missing}; pass --model or --{missing[0]}")
    return BinaryTreatmentGaussianModel(**values)


def _add_sampling_args(parser, n_default=100_000):
    parser.add_argument("--n", type=int, default=n_default)
    parser.add_argument("--seed", type=int, default=0)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Cannot serialise {type(value)}")


def _emit(record: dict, config: RunConfig) -> None:
    record = {"run_config": asdict(config), "version": get_version(), **record}
    sys.stdout.write(json.dumps(record, indent=4, default=_json_default) + "\n")


def _config(args, keys, outputs=None) -> RunConfig:
    parameters = {k: getattr(args, k) for k in keys}
    return RunConfig(args.command, parameters, getattr(args, "seed", None), outputs or {})


def cmd_dsep(args):
    graph = load_graph(args.graph) if args.graph else reference_graph(args.reference)
    separated = d_separated(graph, args.src, args.dst, args.given)
    if args.json:
        _emit({"separated": separated}, _config(args, ["graph", "reference", "src", "dst", "given"]))
    else:
        sys.stdout.write(("true" if separated else "false") + "\n")


def cmd_sample(args):
    model = _resolve_model(args)
    frame = sample_cross_world(model, args.n, args.seed)
    save_draws(frame, args.out)
    config = _config(args, ["n"], {"samples": args.out})
    config.parameters["model"] = model_to_config(model)
    counts = frame["a"].value_counts()
    _emit({"arm_counts": {"0": int(counts.get(0, 0)), "1": int(counts.get(1, 0))}}, config)


def cmd_posterior(args):
    model = _resolve_model(args)
    law = counterfactual_posterior(model, args.a, args.x)
    record = {"mean": law.mean, "variance": law.variance, "point_mass": law.is_point_mass}
    if args.mc_n > 0:
        draws = monte_carlo_posterior(model, args.a, args.x, args.mc_n, args.seed, args.window)
        mc = {"accepted": int(draws.size)}
        if draws.size > 1:
            mc.update({"mean": float(draws.mean()), "variance": float(draws.var(ddof=1))})
            if not law.is_point_mass:
                mc["ks_vs_closed_form"] = float(stats.kstest(draws, law.cdf).statistic)
        record["monte_carlo"] = mc
    config = _config(args, ["x", "a", "mc_n", "window"])
    config.parameters["model"] = model_to_config(model)
    _emit(record, config)


def cmd_dp_gap(args):
    model = _resolve_model(args)
    predictor = predictor_from_config(args.predictor, model)
    gap = dp_gap(predictor, model, args.n, args.seed, DISTANCES[args.distance])
    report = FairnessReport(dp_gap=gap, method=CfMethod.MONTE_CARLO, n_samples=args.n, seed=args.seed)
    config = _config(args, ["predictor", "n", "distance"])
    config.parameters["model"] = model_to_config(model)
    _emit({"records": report.to_records()}, config)


def cmd_cf_gap(args):
    model = _resolve_model(args)
    predictor = predictor_from_config(args.predictor, model)
    distance = DISTANCES[args.distance]
    gap = cf_gap(predictor, model, args.x, args.a, CfMethod(args.method), distance, args.n, args.seed, args.window)
    aggregate = aggregate_cf_gap(predictor, model, args.aggregate, args.seed, distance) if args.aggregate > 0 else None
    report = FairnessReport(cf_gap=gap, method=CfMethod(args.method), n_samples=args.n, seed=args.seed,
                            conditioning_point=(args.x, args.a), aggregate_cf_gap=aggregate)
    config = _config(args, ["predictor", "x", "a", "method", "distance", "n", "window", "aggregate"])
    config.parameters["model"] = model_to_config(model)
    _emit({"records": report.to_records()}, config)


def cmd_adversary(args):
    model = _resolve_model(args)
    predictor = predictor_from_config(args.predictor, model)
    grid = parse_range(args.grid)
    result = adversary_rho(predictor, model, args.x, args.a, grid, CfMethod(args.method),
                           DISTANCES[args.distance], args.n, args.seed, args.window)
    report = FairnessReport(cf_gap=DistributionDistance(DISTANCES[args.distance], result.gap_star), method=CfMethod(args.method),
                            n_samples=args.n, seed=args.seed, conditioning_point=(args.x, args.a),
                            rho_profile=result.profile)
    outputs = {}
    if args.profile_out:
        write_csv(pd.DataFrame(result.profile, columns=["rho", "gap"]), args.profile_out)
        outputs["profile"] = args.profile_out
    record = {"rho_star": result.rho_star, "gap_star": result.gap_star, "records": report.to_records()}
    if args.invariance_n > 0:
        invariance = observational_invariance(model, grid, args.invariance_n, args.seed)
        record["observational_invariance"] = {k: invariance[k] for k in ("n", "max_ks", "arm_draws_identical")}
    config = _config(args, ["predictor", "x", "a", "grid", "method", "distance", "n", "window", "invariance_n"],
                     outputs)
    config.parameters["model"] = model_to_config(model)
    _emit(record, config)


def cmd_strong_assumption(args):
    report = strong_assumption_implication_check(args.n, args.seed, args.probes)
    _emit(report, _config(args, ["n", "probes"]))


def cmd_gp_demo(args):
    gp = GpTreatmentModel(args.variance, args.length_scale, tuple(parse_range(args.levels)))
    report = gp_observational_equivalence_check(gp, args.n, args.seed)
    _emit(report, _config(args, ["variance", "length_scale", "levels", "n"]))


def cmd_repair(args):
    train = load_scores(args.train)
    model = fit_repair(train, RepairMode(args.mode))
    frame = load_scores(args.input) if args.input else train.copy()
    frame["y_hat"] = repair_batch(model, frame)
    save_repaired(frame, args.out)
    _emit(
        {"n_train": model.n_train, "arms": [str(a) for a in model.arms], "n_repaired": len(frame)},
        _config(args, ["train", "input", "mode"], {"repaired": args.out}),
    )


def _parse_subgroup(text):
    if "=" not in text:
        raise InputError(f"Expected column=value for --subgroup, got {text!r}")
    column, value = text.split("=", 1)
    return column.strip(), value.strip()


def cmd_rank_experiment(args):
    experiment = RankExperiment(
        path_to_csv=args.data,
        subgroup=_parse_subgroup(args.subgroup),
        n_test=args.n_test,
        seed=args.seed,
        synthetic_rows=args.synthetic_rows,
    )
    experiment.run()
    out_dir = Path(args.out_dir)
    outputs = {"ranks": str(out_dir / RANKS_FILENAME), "spearman": str(out_dir / SPEARMAN_FILENAME),
               "plot": str(out_dir / PLOT_FILENAME)}
    config = _config(args, ["data", "subgroup", "n_test", "synthetic_rows"], outputs)
    experiment.ExperimentReport["run_config"] = asdict(config)
    experiment.write_outputs(out_dir)
    _emit({k: v for k, v in experiment.ExperimentReport.items() if k != "run_config"}, config)


def cmd_synth_data(args):
    data = synth_lawschool(args.n, args.seed, args.noise_sd)
    save_csv(data, args.out)
    r_squared = ols_fit(data).r_squared
    _emit({"rows": len(data), "r_squared": r_squared}, _config(args, ["n", "noise_sd"], {"data": args.out}))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cf-parity", description="Demographic parity versus counterfactual fairness.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level to stderr")
    parser.add_argument("--version", action="version", version=get_version())
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("dsep", help="d-separation query on a mixed graph")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--graph", help="edge-list file")
    source.add_argument("--reference", choices=REFERENCE_GRAPHS)
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--given", nargs="*", default=[])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_dsep)

    p = sub.add_parser("sample", help="draw units with both potential outcomes")
    _add_model_args(p)
    _add_sampling_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("posterior", help="counterfactual posterior at (x, a)")
    _add_model_args(p)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--a", type=int, choices=(0, 1), required=True)
    p.add_argument("--mc-n", type=int, default=0, help="rejection-sampling draws (0 skips)")
    p.add_argument("--window", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_posterior)

    p = sub.add_parser("dp-gap", help="demographic parity gap")
    _add_model_args(p)
    _add_sampling_args(p)
    p.add_argument("--predictor", default="standardized")
    p.add_argument("--distance", choices=tuple(DISTANCES), default="ks")
    p.set_defaults(func=cmd_dp_gap)

    def add_cf_args(p):
        p.add_argument("--predictor", default="standardized")
        p.add_argument("--x", type=float, required=True)
        p.add_argument("--a", type=int, choices=(0, 1), required=True)
        p.add_argument("--method", choices=[m.value for m in CfMethod], default=CfMethod.CLOSED_FORM.value)
        p.add_argument("--distance", choices=tuple(DISTANCES), default="ks")
        p.add_argument("--window", type=float, default=0.01)
        _add_sampling_args(p, n_default=1_000_000)

    p = sub.add_parser("cf-gap", help="counterfactual fairness gap at (x, a)")
    _add_model_args(p)
    add_cf_args(p)
    p.add_argument("--aggregate", type=int, default=0, help="probe count for the aggregate gap (0 skips)")
    p.set_defaults(func=cmd_cf_gap)

    p = sub.add_parser("adversary", help="search rho for the least fair world")
    _add_model_args(p, rho_required=False)
    add_cf_args(p)
    p.add_argument("--grid", required=True, help="start:stop:step or comma list of rho values")
    p.add_argument("--profile-out", help="CSV for the rho profile")
    p.add_argument("--invariance-n", type=int, default=0, help="draws for the observational check (0 skips)")
    p.set_defaults(func=cmd_adversary)

    p = sub.add_parser("strong-assumption", help="one-dimensional error world versus GP world")
    _add_sampling_args(p)
    p.add_argument("--probes", type=int, default=25)
    p.set_defaults(func=cmd_strong_assumption)

    p = sub.add_parser("gp-demo", help="observational equivalence of shared and GP errors")
    p.add_argument("--variance", type=float, default=1.0)
    p.add_argument("--length-scale", type=float, default=1.0)
    p.add_argument("--levels", default="0,1")
    _add_sampling_args(p)
    p.set_defaults(func=cmd_gp_demo)

    p = sub.add_parser("repair", help="quantile repair of a,y_bar scores")
    p.add_argument("--train", required=True)
    p.add_argument("--input")
    p.add_argument("--mode", choices=[m.value for m in RepairMode], default=RepairMode.EMPIRICAL.value)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("rank-experiment", help="rank stability of repaired predictors")
    p.add_argument("--data", help="law-school CSV; synthetic data when omitted")
    p.add_argument("--subgroup", default="race=Black")
    p.add_argument("--n-test", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synthetic-rows", type=int, default=10_000)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_rank_experiment)

    p = sub.add_parser("synth-data", help="write a synthetic law-school CSV")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sd", type=float, default=0.8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    return parser


def run(argv=None) -> int:
    argv = _normalize_argv(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except CfParityError as exc:
        sys.stderr.write(f"cf-parity {args.command}: error: {exc}\n")
        return 1
    except Exception:
        logger.exception("internal error in %s", args.command)
        return 2
    return 0


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
