"""Command-line pipeline: synth, fit, bootstrap, rank, report, compare.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
Every subcommand needs ``--seed``. Output goes to ``--out``, else to
``$PEERBENCH_OUTPUT_DIR``, else to ``./peerbench_out``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .exceptions import DataError, NumericError

ENV_OUTPUT = "PEERBENCH_OUTPUT_DIR"
DEFAULT_OUTPUT = "peerbench_out"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {p}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(ENV_OUTPUT) or DEFAULT_OUTPUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _positive(name):
    def conv(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {text!r}") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be at least 1")
        return v
    return conv


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be a non-negative integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return v


def _mtry(text):
    if text == "tune":
        return "tune"
    return _positive("--mtry")(text)


def _load(args):
    from .data import load_config, load_dataset

    inp = _require_file(args.input, "input file")
    cfg_path = _require_file(args.config, "config file")
    cfg = load_config(cfg_path)
    data = load_dataset(inp, cfg)
    return data, inp, cfg_path


def _apply_threads(args) -> int:
    import numba

    if args.threads is None:
        return 1
    numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    return args.threads


# subcommands

def cmd_synth(args) -> int:
    from .synth import Scenario, generate, write_scenario

    sc = Scenario(args.scenario, n=args.n, J=args.J, noise_sd=args.noise_sd, noise=args.noise,
                  peer_rule=args.peer_rule, seed=args.seed, response=args.response)
    out = _out_dir(args)
    cohort = generate(sc)
    paths = write_scenario(cohort, out)
    _log(f"wrote {sc.name} scenario (n={sc.n}, J={sc.J}) to {out}")
    for p in paths.values():
        print(p)
    return EXIT_OK


def cmd_fit(args) -> int:
    from .forest import BenchmarkForest, oob_error
    from .importance import cluster_variables, group_importance, partial_dependence, permutation_importance
    from .report import render_model_figure
    from .serialization import save_forest
    from .tuning import ntree_curve, tune_m_try

    data, inp, _ = _load(args)
    out = _out_dir(args)
    n_jobs = _apply_threads(args)
    _log(data.ingestion_report.rstrip())
    tuning = None
    m_try = args.mtry
    if m_try == "tune":
        # grid spans the contextual covariates; peer dummies do not widen it
        top = max(1, len(data.covariate_columns))
        _log(f"tuning m_try over 1..{top} ({args.k_folds}-fold x {args.repeats})")
        tuning = tune_m_try(data, grid=range(1, top + 1), k_folds=args.k_folds, repeats=args.repeats, n_tree=args.ntree,
                            min_node_size=args.min_node_size, seed=args.seed, n_jobs=n_jobs)
        m_try = tuning.selected
    elif m_try is not None and m_try > data.p:
        raise DataError(f"--mtry {m_try} exceeds the {data.p} encoded covariates")
    forest = BenchmarkForest(m_try=m_try, n_tree=args.ntree, min_node_size=args.min_node_size,
                             random_state=args.seed).fit(data.X, data.y)
    save_forest(forest, out / "forest.pbf")
    curve = ntree_curve(data, forest)
    report = {"oob": oob_error(forest, data), "params": forest.params_,
              "fingerprint": forest.fingerprint(), "ntree_curve": curve.to_dict(),
              "input_sha256": _sha256(inp)}
    if tuning is not None:
        report["tuning"] = tuning.to_dict()
    _write_json(out / "tuning.json", report)
    _log("computing importance and partial dependence")
    imp = permutation_importance(forest, data, n_permutations=args.permutations, seed=args.seed)
    groups = cluster_variables(data)
    gimp = group_importance(forest, data, groups, n_permutations=args.permutations, seed=args.seed)
    pdps = [partial_dependence(forest, data, j, grid_size=args.grid_size) for j in data.covariate_columns]
    _write_json(out / "model.json", {"importance": imp.to_dict(), "group_importance": gimp.to_dict(),
                                     "groups": groups, "pdp": [p.to_dict() for p in pdps]})
    render_model_figure(imp, gimp, pdps, out / "model_figure.svg")
    _log(f"forest written to {out / 'forest.pbf'} (m_try={forest.m_try_}, OOB RMSE "
         f"{report['oob']['rmse']:.4f})")
    return EXIT_OK


def _bootstrap_state(data, args, m_try, inp):
    from .bootstrap import params_hash

    params = {"m_try": m_try, "n_tree": int(args.bootstrap_ntree),
              "min_node_size": int(args.min_node_size), "mode": "oor"}
    return params_hash({**params, "seed": int(args.seed), "B": int(args.B), "n": data.n}), _sha256(inp)


def cmd_bootstrap(args) -> int:
    from .bootstrap import oor_bootstrap, pooled_predictive, residual_summary, write_replicates
    from .serialization import load_forest

    data, inp, _ = _load(args)
    out = _out_dir(args)
    n_jobs = _apply_threads(args)
    m_try = args.mtry
    if m_try is None and (out / "forest.pbf").is_file():
        m_try = int(load_forest(out / "forest.pbf").m_try_)
    if m_try is not None and m_try > data.p:
        raise DataError(f"--mtry {m_try} exceeds the {data.p} encoded covariates")
    want_hash, data_hash = _bootstrap_state(data, args, m_try, inp)
    summary_path = out / "bootstrap_summary.json"
    rep_path = out / "replicates.csv"
    if not args.force and rep_path.is_file() and summary_path.is_file():
        prev = _read_json(summary_path)
        if prev.get("params_hash") == want_hash and prev.get("input_sha256") == data_hash:
            _log("bootstrap outputs are up to date; use --force to recompute")
            return EXIT_OK
    _log(f"running {args.B} out-of-resample bootstrap fits (n={data.n})")
    rm = oor_bootstrap(data, m_try=m_try, n_tree=args.bootstrap_ntree, min_node_size=args.min_node_size,
                       B=args.B, seed=args.seed, n_jobs=n_jobs)
    write_replicates(rep_path, rm)
    dist_dir = out / "distributions"
    dist_dir.mkdir(exist_ok=True)
    scopes = ["cohort"] + (data.peer_labels if data.peer_group is not None else [])
    for s in scopes:
        name = "cohort" if s == "cohort" else f"peer_{s}"
        _write_json(dist_dir / f"{name}.json", pooled_predictive(rm, s).to_dict())
    summ = residual_summary(rm)
    with open(out / "residual_summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["org_id", "mean", "median", "sd", "iqr", "count"])
        for row in summ.to_rows():
            w.writerow([row["org_id"], repr(row["mean"]), repr(row["median"]), repr(row["sd"]),
                        repr(row["iqr"]), row["count"]])
    _write_json(summary_path, {
        "B": rm.B, "n": rm.n, "seed": int(rm.seed), "params": rm.params, "params_hash": rm.params_hash,
        "presence_fraction": rm.presence_fraction, "expected_presence_fraction": rm.expected_presence_fraction,
        "min_count": int(rm.counts.min()), "input_sha256": data_hash,
    })
    _log(f"presence fraction {rm.presence_fraction:.5f} (expected {rm.expected_presence_fraction:.5f})")
    return EXIT_OK


def _scopes(arg, data):
    if arg == "cohort":
        return ["cohort"]
    if data.peer_group is None:
        raise DataError("--scope peer-group needs a peer_group_column in the config")
    labels = data.peer_labels
    return labels if arg == "peer-group" else ["cohort"] + labels


def cmd_rank(args) -> int:
    from .bootstrap import read_replicates, residual_summary
    from .ranking import NormalApprox, approx_diagnostics, mvn_sample, rank_distribution, rank_uncertainty_explainers

    data, _, _ = _load(args)
    out = _out_dir(args)
    rep_path = _require_file(out / "replicates.csv", "replicate file (run bootstrap first)")
    scopes = _scopes(args.scope, data)
    rm = read_replicates(rep_path)
    if rm.n != data.n or list(rm.org_ids) != list(data.org_ids):
        raise DataError("replicate file does not match the input data")
    _log(f"normal approximation over {rm.n} organisations, S={args.S}")
    approx = NormalApprox.from_replicates(rm)
    samples = mvn_sample(approx, args.S, args.seed)
    _write_json(out / "repair.json", approx.repair.to_dict())
    summ = residual_summary(rm)
    explain = {}
    written = []
    for s in scopes:
        rs = rank_distribution(samples, approx.members(s), args.level, approx.org_ids, s)
        name = "ranks_cohort.json" if s == "cohort" else f"ranks_peer_{s}.json"
        _write_json(out / name, rs.to_dict())
        written.append(name)
        explain[s] = rank_uncertainty_explainers(rs, summ, data)
    _write_json(out / "explainers.json", explain)
    diag = approx_diagnostics(approx, samples, rm, seed=args.seed)
    _write_json(out / "diagnostics.json", diag.to_dict())
    with open(out / "diagnostics_scatter.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["panel", "org_a", "org_b", "normal", "bootstrap"])
        for row in diag.scatter_rows():
            w.writerow(row[:3] + [repr(float(row[3])), repr(float(row[4]))])
    _write_json(out / "rank_summary.json", {"scopes": scopes, "files": written, "S": args.S,
                                            "level": args.level, "seed": args.seed,
                                            "replicates_params_hash": rm.params_hash})
    return EXIT_OK


def cmd_report(args) -> int:
    from .bootstrap import read_replicates
    from .importance import ImportanceReport, PartialDependence
    from .report import ReportContext, build_report_bundle
    from .serialization import load_forest

    data, _, _ = _load(args)
    out = _out_dir(args)
    forest = load_forest(_require_file(out / "forest.pbf", "forest file (run fit first)"))
    model = _read_json(_require_file(out / "model.json", "model summary (run fit first)"))
    rm = read_replicates(_require_file(out / "replicates.csv", "replicate file (run bootstrap first)"))
    rank_meta = _read_json(_require_file(out / "rank_summary.json", "rank summary (run rank first)"))
    if args.org:
        for o in args.org:
            if o not in data.org_ids:
                raise DataError(f"unknown organisation id {o!r}")
    ranks = {}
    for name in rank_meta["files"]:
        ranks[name[len("ranks_"):-len(".json")]] = _read_json(out / name)
    ctx = ReportContext(
        data=data, predicted=forest.predict(data.X), replicates=rm,
        importance=ImportanceReport.from_dict(model["importance"]),
        group_importance=ImportanceReport.from_dict(model["group_importance"]),
        pdps=[PartialDependence.from_dict(p) for p in model["pdp"]],
        rank_summaries=ranks, diagnostics=_read_json(out / "diagnostics.json"),
        provenance={"seed": int(args.seed), "B": rm.B, "S": int(rank_meta["S"]),
                    "forest": forest.params_, "replicates_params_hash": rm.params_hash},
    )
    manifest = build_report_bundle(ctx, org_ids=args.org or None, out_dir=out / "report")
    _log(f"report bundle: {len(manifest['files'])} files in {out / 'report'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .forest import BenchmarkForest
    from .importance import permutation_importance
    from .linear import LinearBaseline, cv_compare, residual_trend

    data, _, _ = _load(args)
    out = _out_dir(args)
    m_try = None if args.mtry in (None, "tune") else args.mtry
    rf = BenchmarkForest(m_try=m_try, n_tree=args.ntree, min_node_size=args.min_node_size)
    res = cv_compare(data, LinearBaseline(), rf, k_folds=args.k_folds, repeats=args.repeats,
                     B_boot=args.B_boot, seed=args.seed, names=("linear", "forest"))
    doc = res.to_dict()
    _write_json(out / "comparison.json", doc)
    (out / "comparison.txt").write_text(res.summary_table(), encoding="utf-8")
    full = rf.set_params(random_state=args.seed).fit(data.X, data.y)
    imp = permutation_importance(full, data, seed=args.seed, columns=data.covariate_columns)
    top = [imp.groups[k][0] for k in imp.ranking()[:4]]
    resid = res.residuals(data.y)
    for j in top:
        name = data.feature_names[j]
        with open(out / f"residual_trend_{name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "grid", "mean", "se"])
            for k, model in enumerate(res.names):
                tr = residual_trend(resid[k], data.X[:, j])
                for g, m, s in zip(tr.grid, tr.mean, tr.se):
                    w.writerow([model, repr(float(g)), repr(float(m)), repr(float(s))])
    _log(res.summary_table().rstrip())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="peerbench", description="Adjusted benchmarking with bootstrap uncertainty.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--seed", type=_seed, required=True)
        sp.add_argument("--out", default=None, help=f"output directory (default ${ENV_OUTPUT} or ./{DEFAULT_OUTPUT})")
        sp.add_argument("--threads", type=_positive("--threads"), default=None)
        if data:
            sp.add_argument("--input", required=True, help="cohort CSV")
            sp.add_argument("--config", required=True, help="JSON column/transform config")

    sp = sub.add_parser("synth", help="write a synthetic cohort with its truth file")
    common(sp, data=False)
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--n", type=_positive("--n"), default=200)
    sp.add_argument("--J", type=_positive("--J"), default=None)
    sp.add_argument("--noise-sd", type=float, default=None)
    sp.add_argument("--noise", choices=["gaussian", "lognormal"], default="gaussian")
    sp.add_argument("--peer-rule", choices=["tercile", "none"], default="tercile")
    sp.add_argument("--response", choices=["identity", "log"], default="log")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("fit", help="tune and fit the forest, importance and model figure")
    common(sp)
    sp.add_argument("--mtry", type=_mtry, default=None, help="integer or 'tune'")
    sp.add_argument("--ntree", type=_positive("--ntree"), default=300)
    sp.add_argument("--min-node-size", type=_positive("--min-node-size"), default=5)
    sp.add_argument("--k-folds", type=_positive("--k-folds"), default=5)
    sp.add_argument("--repeats", type=_positive("--repeats"), default=2)
    sp.add_argument("--permutations", type=_positive("--permutations"), default=10)
    sp.add_argument("--grid-size", type=_positive("--grid-size"), default=25)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("bootstrap", help="out-of-resample residual replicates")
    common(sp)
    sp.add_argument("--B", type=_positive("--B"), default=1000)
    sp.add_argument("--mtry", type=_positive("--mtry"), default=None)
    sp.add_argument("--bootstrap-ntree", type=_positive("--bootstrap-ntree"), default=100)
    sp.add_argument("--min-node-size", type=_positive("--min-node-size"), default=5)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_bootstrap)

    sp = sub.add_parser("rank", help="rank distributions and approximation diagnostics")
    common(sp)
    sp.add_argument("--S", type=_positive("--S"), default=10_000)
    sp.add_argument("--scope", choices=["cohort", "peer-group", "all"], default="all")
    sp.add_argument("--level", type=float, default=0.90)
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("report", help="render the report bundle")
    common(sp)
    sp.add_argument("--org", action="append", default=None, help="organisation id (repeatable)")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("compare", help="paired CV comparison of linear and forest models")
    common(sp)
    sp.add_argument("--mtry", type=_mtry, default=None)
    sp.add_argument("--ntree", type=_positive("--ntree"), default=300)
    sp.add_argument("--min-node-size", type=_positive("--min-node-size"), default=5)
    sp.add_argument("--k-folds", type=_positive("--k-folds"), default=5)
    sp.add_argument("--repeats", type=_positive("--repeats"), default=2)
    sp.add_argument("--B-boot", type=_positive("--B-boot"), default=1000)
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("peerbench: a subcommand is required (synth, fit, bootstrap, rank, report, compare)")
        if getattr(args, "level", 0.5) is not None and not 0 < getattr(args, "level", 0.5) < 1:
            raise UsageError("--level must lie in (0, 1)")
        return args.func(args)
    except UsageError as exc:
        _log(f"usage error: {exc}")
        return EXIT_USAGE
    except NumericError as exc:
        _log(f"numeric error: {exc}")
        return EXIT_NUMERIC
    except (DataError, ValueError) as exc:
        _log(f"data error: {exc}")
        return EXIT_DATA
    except OSError as exc:
        _log(f"data error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
