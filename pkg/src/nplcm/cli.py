"""Command-line interface: simulate, fit, summarize, check, predict.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
validation errors (bad documents, missing files).  The environment
variable ``NPLCM_OUT_ROOT`` supplies a default parent directory for fit
outputs when neither ``--out`` nor the MCMC document names one.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import runio
from .core import InputError, validate_dataset
from .datagen import combine_and_reorder, simulate
from .posterior import individual_predictions, ppc_slord, ppc_top_patterns, summarize_cscf
from .sampler import DataInconsistencyError, run as run_sampler

OUT_ROOT_ENV = "NPLCM_OUT_ROOT"


def _read_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise InputError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"{p}: invalid document ({e})") from e


def cmd_simulate(args) -> int:
    doc = _read_json(args.recipe)
    if args.seed is not None:
        doc["seed"] = args.seed
    parsed = runio.recipe_from_json(doc)
    if isinstance(parsed, tuple):
        strata, stratum_col = parsed
        pieces, labels = [], []
        truth_class, truth_sub = [], None
        for label, recipe in strata:
            d, truth = simulate(recipe)
            pieces.append(d)
            labels.append(label)
            truth_class.append(truth["class"])
            if truth_sub is None:
                truth_sub = {k: [v] for k, v in truth["subclass"].items()}
            else:
                for k, v in truth["subclass"].items():
                    truth_sub[k].append(v)
        dataset = combine_and_reorder(pieces, strata_labels=labels, stratum_col=stratum_col)
        y = np.concatenate([d.y for d in pieces])
        order = np.argsort(-y, kind="stable")
        truth = {
            "class": np.concatenate(truth_class)[order],
            "subclass": {k: np.concatenate(v)[order] for k, v in (truth_sub or {}).items()},
        }
    else:
        dataset, truth = simulate(parsed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "data.json").write_text(
        json.dumps(runio.dataset_to_json(dataset), indent=1) + "\n"
    )
    (out / "truth.json").write_text(
        json.dumps(runio.truth_to_json(truth), indent=1) + "\n"
    )
    print(f"wrote {dataset.n_subjects}-row dataset ({dataset.n_cases} cases) to {out}")
    return 0


def cmd_fit(args) -> int:
    data = runio.dataset_from_json(_read_json(args.data))
    spec = runio.modelspec_from_json(
        _read_json(args.model), brs_slice_names=[s.name for s in data.mbs]
    )
    mcmc = runio.mcmc_from_json(_read_json(args.mcmc))
    out_dir = args.out or mcmc.out_dir
    if out_dir is None:
        root = os.environ.get(OUT_ROOT_ENV)
        if root:
            out_dir = str(Path(root) / time.strftime("run-%Y%m%d-%H%M%S"))
    mcmc.out_dir = out_dir
    result = run_sampler(data, spec, mcmc)
    summary = summarize_cscf(result)
    table = summary.marginal if summary.marginal is not None else summary.tables["all"]
    top = table["mean"].idxmax()
    where = f" -> {out_dir}" if out_dir else ""
    print(
        f"fit complete: {mcmc.n_chains} chain(s) x {result.chains[0].samples.shape[0]} "
        f"retained draws; top cause {top} "
        f"(posterior mean {table.loc[top, 'mean']:.3f}){where}"
    )
    return 0


def _load_fit(args):
    return runio.load_run(args.fit)


def _structure_block(run) -> str:
    report = validate_dataset(run.data, run.spec)
    fitted = "reg" if (report.do_reg_eti or any(report.do_reg_fpr.values())) else "no_reg"
    lines = [
        f"           fitted type:  {fitted}",
        "---",
        "     name measurements:  MBS MSS",
        f"slices of measurements:  {report.num_slice['MBS']} {report.num_slice['MSS']}",
        f"                nested:  {str(report.nested).upper()}",
        "---",
        "            regression:",
        f"                  etiology:  {str(report.do_reg_eti).upper()}",
    ]
    for name, flag in report.do_reg_fpr.items():
        lines.append(f"                  name FPR:  {name}")
        lines.append(f"                       FPR:  {str(flag).upper()}")
    lines.append("")
    lines.append("------- posterior summary -----------")
    return "\n".join(lines)


def _table_text(df) -> str:
    out = df[["mean", "sd", "q0.025", "q0.975"]].copy()
    out.columns = ["post.mean", "post.sd", "CrI_025", "CrI_0975"]
    return out.to_string()


def cmd_summarize(args) -> int:
    run = _load_fit(args)
    weights = None
    if args.weights:
        weights = [float(w) for w in args.weights.split(",")]
    summary = summarize_cscf(run, stratum_weights=weights)
    print(_structure_block(run))
    doc = {"fitted_type": summary.fitted_type, "strata": {}}
    if summary.fitted_type == "no_reg":
        print(_table_text(summary.tables["all"]))
        doc["strata"]["all"] = summary.tables["all"].to_dict(orient="index")
    else:
        wanted = list(summary.tables)
        if args.stratum:
            if args.stratum not in summary.tables:
                raise InputError(
                    f"unknown stratum {args.stratum!r}; have {wanted}"
                )
            wanted = [args.stratum]
        if args.show_levels:
            print(f"strata: {list(summary.tables)}")
        for lab in wanted:
            print(f"\n[stratum {lab}] (n_cases={summary.counts.get(lab, '?')})")
            print(_table_text(summary.tables[lab]))
            doc["strata"][lab] = summary.tables[lab].to_dict(orient="index")
        print(f"\n[marginal] (weights {np.round(summary.weights, 4).tolist()})")
        print(_table_text(summary.marginal))
        doc["marginal"] = summary.marginal.to_dict(orient="index")
        doc["weights"] = summary.weights.tolist()
    fit_dir = Path(args.fit)
    (fit_dir / "summary_cscf.json").write_text(json.dumps(doc, indent=1) + "\n")
    return 0


def cmd_check(args) -> int:
    run = _load_fit(args)
    names = [s.name for s in run.data.mbs]
    slices = [args.slice] if args.slice else names
    fit_dir = Path(args.fit)
    for name in slices:
        if args.stat == "slord":
            table = ppc_slord(run, name)
            path = fit_dir / f"check_slord_{name}.csv"
        else:
            table = ppc_top_patterns(run, name, n_pat=args.npat)
            path = fit_dir / f"check_patterns_{name}.csv"
        table.to_csv(path, index=False)
        print(f"[{name}] {args.stat}")
        print(table.to_string(index=False))
        print(f"wrote {path}")
    return 0


def cmd_predict(args) -> int:
    run = _load_fit(args)
    table = individual_predictions(run)
    path = Path(args.out) if args.out else Path(args.fit) / "individual_predictions.csv"
    table.to_csv(path)
    print(f"wrote per-case membership table ({len(table)} cases) to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nplcm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a dataset from a recipe document")
    s.add_argument("--recipe", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="fit the model and persist the run")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--mcmc", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("summarize", help="print and save the CSCF summary")
    s.add_argument("--fit", required=True)
    s.add_argument("--stratum", default=None)
    s.add_argument("--show-levels", action="store_true")
    s.add_argument("--weights", default=None, help="comma-separated stratum weights")
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("check", help="posterior predictive check tables")
    s.add_argument("--fit", required=True)
    s.add_argument("--stat", choices=["slord", "patterns"], default="slord")
    s.add_argument("--slice", default=None)
    s.add_argument("--npat", type=int, default=10)
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("predict", help="per-case posterior cause probabilities")
    s.add_argument("--fit", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataInconsistencyError as e:
        print(f"sampler error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
