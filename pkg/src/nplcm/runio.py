"""File formats and results-folder layout.

All configuration documents are JSON with strict unknown-key rejection.
A fit's output directory holds snapshots of the model specification and
the data, per-chain sample tables (CSV, one row per retained iteration),
optional individual class draws and posterior-predictive statistic
tables, an acceptance log, and a manifest.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .core import (
    BRS,
    SS,
    CauseList,
    CovariateTable,
    Dataset,
    InputError,
    McmcSettings,
    MeasurementSlice,
    ModelSpec,
    TprPriorSpec,
)
from .datagen import BrsSliceRecipe, SimulationRecipe, SsSliceRecipe
from .sampler import ChainOutput

MANIFEST_NAME = "manifest.json"

# Raw subclass-level rate and weight draws are not identified (subclass
# labels can switch within a chain); identified functionals are the CSCF
# columns and individual predictions.
NON_IDENTIFIED_PREFIXES = ("thetaBS", "psiBS", "eta[", "nu[", "betaNu", "betaEta", "muK0")


def _take(doc: dict, allowed: set, required: set, what: str) -> dict:
    unknown = set(doc) - allowed
    if unknown:
        raise InputError(f"{what}: unknown keys {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise InputError(f"{what}: missing keys {sorted(missing)}")
    return doc


def _matrix_to_lists(m: np.ndarray) -> list:
    return [[None if np.isnan(v) else int(v) for v in row] for row in m]


def _matrix_from_lists(rows) -> np.ndarray:
    return np.array(
        [[np.nan if v is None else float(v) for v in row] for row in rows], dtype=float
    )


# ---------- dataset ----------

def dataset_to_json(d: Dataset) -> dict:
    def slice_doc(s):
        return {"name": s.name, "items": list(s.items), "data": _matrix_to_lists(s.data)}

    x_doc = {}
    for name in d.x.names:
        col = d.x[name]
        if d.x.is_factor(name):
            x_doc[name] = {
                "type": "factor",
                "levels": list(col.levels),
                "values": [col.levels[c] for c in col.codes],
            }
        else:
            x_doc[name] = {"type": "continuous", "values": col.values.tolist()}
    return {
        "mobs": {
            "mbs": [slice_doc(s) for s in d.mbs],
            "mss": [slice_doc(s) for s in d.mss],
        },
        "y": d.y.tolist(),
        "x": x_doc,
    }


def dataset_from_json(doc: dict) -> Dataset:
    _take(doc, {"mobs", "y", "x"}, {"mobs", "y"}, "dataset")
    mobs = _take(doc["mobs"], {"mbs", "mss"}, set(), "dataset.mobs")

    def parse_slices(entries, quality):
        out = []
        for e in entries:
            _take(e, {"name", "items", "data"}, {"name", "items", "data"}, "slice")
            out.append(
                MeasurementSlice(
                    name=e["name"], quality=quality, items=list(e["items"]),
                    data=_matrix_from_lists(e["data"]),
                )
            )
        return out

    columns = {}
    factor_levels = {}
    raw = {}
    for name, col in (doc.get("x") or {}).items():
        _take(col, {"type", "levels", "values"}, {"type", "values"}, f"x.{name}")
        raw[name] = col["values"]
        if col["type"] == "factor":
            factor_levels[name] = col.get("levels") or sorted(set(col["values"]))
        elif col["type"] != "continuous":
            raise InputError(f"x.{name}: unknown column type {col['type']!r}")
    x = CovariateTable.from_dict(raw, factor_levels=factor_levels)
    return Dataset(
        mbs=parse_slices(mobs.get("mbs", []), BRS),
        mss=parse_slices(mobs.get("mss", []), SS),
        y=np.asarray(doc["y"], dtype=int),
        x=x,
    )


# ---------- model spec ----------

def modelspec_to_json(m: ModelSpec) -> dict:
    tpr = {}
    for name, p in m.tpr_prior.items():
        if p.kind == "range":
            tpr[name] = {"input": "range", "low": p.a.tolist(), "up": p.b.tolist()}
        else:
            tpr[name] = {"input": "beta", "c1": p.a.tolist(), "c2": p.b.tolist()}
    return {
        "use_measurements": list(m.use_measurements),
        "cause_list": list(m.cause_list.causes),
        "k_subclass": dict(m.k_subclass),
        "eti_formula": m.eti_formula,
        "fpr_formula": dict(m.fpr_formula),
        "eti_prior": np.asarray(m.eti_prior).tolist(),
        "tpr_prior": tpr,
        "fpr_prior": list(m.fpr_prior),
        "stick_hyper": {"shape": m.stick_shape, "rate": m.stick_rate},
    }


def modelspec_from_json(doc: dict, brs_slice_names=None) -> ModelSpec:
    allowed = {
        "use_measurements", "cause_list", "k_subclass", "eti_formula",
        "fpr_formula", "eti_prior", "tpr_prior", "fpr_prior", "stick_hyper",
    }
    _take(doc, allowed, {"use_measurements", "cause_list", "k_subclass"}, "model spec")
    k = doc["k_subclass"]
    if isinstance(k, int):
        if brs_slice_names is None:
            raise InputError(
                "scalar k_subclass needs known BrS slice names; pass a dataset"
            )
        k = {name: k for name in brs_slice_names}
    tpr = {}
    for name, p in (doc.get("tpr_prior") or {}).items():
        _take(p, {"input", "low", "up", "c1", "c2"}, {"input"}, f"tpr_prior.{name}")
        if p["input"] == "range":
            tpr[name] = TprPriorSpec(kind="range", a=p["low"], b=p["up"])
        elif p["input"] == "beta":
            tpr[name] = TprPriorSpec(kind="beta", a=p["c1"], b=p["c2"])
        else:
            raise InputError(f"tpr_prior.{name}: unknown input {p['input']!r}")
    stick = doc.get("stick_hyper") or {}
    _take(stick, {"shape", "rate"}, set(), "stick_hyper")
    return ModelSpec(
        use_measurements=tuple(doc["use_measurements"]),
        cause_list=CauseList(list(doc["cause_list"])),
        k_subclass=k,
        eti_formula=doc.get("eti_formula"),
        fpr_formula=doc.get("fpr_formula") or {},
        eti_prior=doc.get("eti_prior", 1.0),
        tpr_prior=tpr,
        fpr_prior=tuple(doc.get("fpr_prior", (1.0, 1.0))),
        stick_shape=float(stick.get("shape", 0.25)),
        stick_rate=float(stick.get("rate", 0.25)),
    )


# ---------- MCMC settings ----------

def mcmc_to_json(m: McmcSettings) -> dict:
    return {
        "n_chains": m.n_chains, "n_iter": m.n_iter, "n_burnin": m.n_burnin,
        "n_thin": m.n_thin, "individual_pred": m.individual_pred, "ppd": m.ppd,
        "seed": m.seed, "out_dir": m.out_dir,
    }


def mcmc_from_json(doc: dict) -> McmcSettings:
    allowed = {
        "n_chains", "n_iter", "n_burnin", "n_thin", "individual_pred",
        "ppd", "seed", "out_dir",
    }
    _take(doc, allowed, {"n_iter", "n_burnin"}, "mcmc settings")
    return McmcSettings(**doc)


# ---------- simulation recipes ----------

def recipe_from_json(doc: dict):
    """Parse a recipe document.  Returns a single
    :class:`SimulationRecipe`, or a list of (label, recipe) pairs plus a
    stratum column name when the document has a ``strata`` section."""
    allowed = {
        "n_cases", "n_controls", "cause_list", "etiology", "bronze", "silver",
        "control_subclass", "case_subclass", "seed", "strata", "stratum_column",
    }
    _take(doc, allowed, {"cause_list", "bronze"}, "recipe")
    cause_list = CauseList(list(doc["cause_list"]))
    bronze = []
    for e in doc.get("bronze", []):
        _take(e, {"name", "items", "theta", "psi"}, {"name", "items", "theta", "psi"}, "bronze slice")
        bronze.append(BrsSliceRecipe(name=e["name"], items=list(e["items"]),
                                     theta=e["theta"], psi=e["psi"]))
    silver = []
    for e in doc.get("silver", []):
        _take(e, {"name", "items", "theta"}, {"name", "items", "theta"}, "silver slice")
        silver.append(SsSliceRecipe(name=e["name"], items=list(e["items"]), theta=e["theta"]))

    def one(etiology, n_cases, n_controls, seed):
        return SimulationRecipe(
            n_cases=int(n_cases), n_controls=int(n_controls),
            cause_list=cause_list, etiology=etiology, bronze=bronze, silver=silver,
            control_subclass=doc.get("control_subclass"),
            case_subclass=doc.get("case_subclass"),
            seed=seed,
        )

    if "strata" in doc:
        out = []
        for i, st in enumerate(doc["strata"]):
            _take(st, {"label", "etiology", "n_cases", "n_controls"},
                  {"etiology", "n_cases", "n_controls"}, "stratum")
            label = st.get("label", i + 1)
            seed = doc.get("seed")
            out.append((label, one(st["etiology"], st["n_cases"], st["n_controls"],
                                   None if seed is None else int(seed) + i)))
        return out, doc.get("stratum_column", "SITE")
    for key in ("etiology", "n_cases", "n_controls"):
        if key not in doc:
            raise InputError(f"recipe: missing key {key!r}")
    return one(doc["etiology"], doc["n_cases"], doc["n_controls"], doc.get("seed"))


def truth_to_json(truth: dict) -> dict:
    return {
        "class": np.asarray(truth["class"]).tolist(),
        "subclass": {k: np.asarray(v).tolist() for k, v in truth["subclass"].items()},
    }


# ---------- posterior runs ----------

@dataclass
class PosteriorRun:
    """Retained draws per chain plus provenance (spec, settings, data
    snapshot) and any recorded posterior-predictive statistics."""

    spec: ModelSpec
    settings: McmcSettings
    data: Dataset
    chains: list
    eti_strata: dict | None = None
    out_dir: str | None = None
    manifest: dict = field(default_factory=dict)

    def pooled(self) -> pd.DataFrame:
        return pd.concat([c.samples for c in self.chains], ignore_index=True)

    @property
    def has_ppd(self) -> bool:
        return bool(self.chains and self.chains[0].ppc)

    @property
    def has_individual(self) -> bool:
        return bool(self.chains and self.chains[0].individual is not None)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def write_run(out_dir, run: PosteriorRun) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    _write_json(out / "model_spec.json", modelspec_to_json(run.spec))
    files["model_spec"] = "model_spec.json"
    _write_json(out / "data.json", dataset_to_json(run.data))
    files["data"] = "data.json"
    _write_json(out / "mcmc.json", mcmc_to_json(run.settings))
    files["mcmc"] = "mcmc.json"
    if run.eti_strata is not None:
        _write_json(
            out / "eti_strata.json",
            {
                "labels": run.eti_strata["labels"],
                "counts": np.asarray(run.eti_strata["counts"]).tolist(),
                "rows": np.asarray(run.eti_strata["rows"]).tolist(),
            },
        )
        files["eti_strata"] = "eti_strata.json"

    accept = {}
    sample_files, individual_files, ppc_files = [], [], []
    for c in run.chains:
        name = f"chain{c.chain + 1}_samples.csv"
        c.samples.to_csv(out / name, index=False)
        sample_files.append(name)
        accept[f"chain{c.chain + 1}"] = c.accept
        if c.individual is not None:
            iname = f"chain{c.chain + 1}_individual.csv"
            df = pd.DataFrame(
                c.individual, columns=[f"case[{i}]" for i in c.case_index]
            )
            df.to_csv(out / iname, index=False)
            individual_files.append(iname)
        for sname, entry in c.ppc.items():
            rows = []
            for g in ("case", "control"):
                lor = entry["lor"][g]
                for p_idx, (a, b) in enumerate(entry["pairs"]):
                    for it in range(lor.shape[0]):
                        rows.append((it, g, a + 1, b + 1, lor[it, p_idx]))
            lname = f"chain{c.chain + 1}_ppc_lor_{sname}.csv"
            pd.DataFrame(
                rows, columns=["iter", "group", "item1", "item2", "lor"]
            ).to_csv(out / lname, index=False)
            ppc_files.append(lname)
            rows = []
            for g in ("case", "control"):
                labels = entry["groups"][g]["labels"]
                counts = entry["pattern_counts"][g]
                for q, lab in enumerate(labels):
                    for it in range(counts.shape[0]):
                        rows.append((it, g, lab, counts[it, q]))
            pname = f"chain{c.chain + 1}_ppc_patterns_{sname}.csv"
            pd.DataFrame(
                rows, columns=["iter", "group", "pattern", "count"]
            ).to_csv(out / pname, index=False)
            ppc_files.append(pname)
    if run.chains and run.chains[0].ppc:
        layout = {
            sname: {
                "pairs": [list(p) for p in entry["pairs"]],
                "groups": entry["groups"],
            }
            for sname, entry in run.chains[0].ppc.items()
        }
        _write_json(out / "ppc_layout.json", layout)
        files["ppc_layout"] = "ppc_layout.json"
    _write_json(out / "accept.json", accept)
    files["accept"] = "accept.json"

    manifest = {
        "engine_version": __version__,
        "seed": run.settings.seed,
        "n_chains": run.settings.n_chains,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "status": "complete",
        "files": files,
        "samples": sample_files,
        "individual": individual_files,
        "ppc": ppc_files,
        "note": "columns prefixed by any of "
        + ", ".join(NON_IDENTIFIED_PREFIXES)
        + " are subclass-label dependent and not individually identified",
    }
    _write_json(out / MANIFEST_NAME, manifest)
    run.out_dir = str(out)
    run.manifest = manifest
    return manifest


def load_run(out_dir) -> PosteriorRun:
    out = Path(out_dir)
    mpath = out / MANIFEST_NAME
    if not mpath.exists():
        raise InputError(f"no run manifest found in {out}")
    manifest = json.loads(mpath.read_text())
    data = dataset_from_json(json.loads((out / "data.json").read_text()))
    spec = modelspec_from_json(
        json.loads((out / "model_spec.json").read_text()),
        brs_slice_names=[s.name for s in data.mbs],
    )
    settings = mcmc_from_json(json.loads((out / "mcmc.json").read_text()))
    eti_strata = None
    if "eti_strata" in manifest["files"]:
        raw = json.loads((out / "eti_strata.json").read_text())
        eti_strata = {
            "labels": raw["labels"],
            "counts": np.asarray(raw["counts"]),
            "rows": np.asarray(raw["rows"]),
        }
    layout = None
    if "ppc_layout" in manifest["files"]:
        layout = json.loads((out / "ppc_layout.json").read_text())
    accept = json.loads((out / "accept.json").read_text())

    chains = []
    for idx, name in enumerate(manifest["samples"]):
        samples = pd.read_csv(out / name)
        individual = case_index = None
        iname = f"chain{idx + 1}_individual.csv"
        if iname in manifest["individual"]:
            df = pd.read_csv(out / iname)
            individual = df.to_numpy(dtype=np.int32)
            case_index = np.array([int(c[5:-1]) for c in df.columns])
        ppc = {}
        if layout:
            for sname, lay in layout.items():
                pairs = [tuple(p) for p in lay["pairs"]]
                lor_df = pd.read_csv(out / f"chain{idx + 1}_ppc_lor_{sname}.csv")
                pat_df = pd.read_csv(
                    out / f"chain{idx + 1}_ppc_patterns_{sname}.csv",
                    dtype={"pattern": str},
                )
                n_ret = int(lor_df["iter"].max()) + 1 if len(lor_df) else 0
                entry = {
                    "pairs": pairs,
                    "groups": lay["groups"],
                    "lor": {},
                    "pattern_counts": {},
                }
                for g in ("case", "control"):
                    sub = lor_df[lor_df["group"] == g]
                    lor = np.zeros((n_ret, len(pairs)))
                    pair_pos = {(a + 1, b + 1): i for i, (a, b) in enumerate(pairs)}
                    for (i1, i2), grp in sub.groupby(["item1", "item2"]):
                        lor[grp["iter"].to_numpy(), pair_pos[(i1, i2)]] = grp[
                            "lor"
                        ].to_numpy()
                    entry["lor"][g] = lor
                    labels = lay["groups"][g]["labels"]
                    counts = np.zeros((n_ret, len(labels)))
                    subp = pat_df[pat_df["group"] == g]
                    lab_pos = {lab: i for i, lab in enumerate(labels)}
                    for lab, grp in subp.groupby("pattern"):
                        counts[grp["iter"].to_numpy(), lab_pos[lab]] = grp[
                            "count"
                        ].to_numpy()
                    entry["pattern_counts"][g] = counts
                ppc[sname] = entry
        chains.append(
            ChainOutput(
                samples=samples,
                seed=settings.seed,
                chain=idx,
                accept=accept.get(f"chain{idx + 1}", {}),
                individual=individual,
                case_index=case_index,
                ppc=ppc,
            )
        )
    return PosteriorRun(
        spec=spec, settings=settings, data=data, chains=chains,
        eti_strata=eti_strata, out_dir=str(out), manifest=manifest,
    )
