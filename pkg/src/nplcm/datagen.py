"""Forward simulation from the generative process, plus dataset
combination utilities for multi-stratum recipes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    BRS,
    SS,
    CauseList,
    CovariateTable,
    Dataset,
    FactorColumn,
    InputError,
    MeasurementSlice,
    make_template,
)


@dataclass
class BrsSliceRecipe:
    name: str
    items: list[str]
    theta: np.ndarray  # J x K TPRs
    psi: np.ndarray  # J x K FPRs

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        self.psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        if self.theta.shape != self.psi.shape or self.theta.shape[0] != len(self.items):
            raise InputError(f"slice {self.name!r}: theta/psi must be J x K")


@dataclass
class SsSliceRecipe:
    name: str
    items: list[str]
    theta: np.ndarray  # length-J TPRs; FPR is structurally zero

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if self.theta.size != len(self.items):
            raise InputError(f"slice {self.name!r}: theta length must match items")


def _as_subclass_weights(w, what) -> np.ndarray:
    """Accept a length-K simplex, or a J x K matrix whose rows are all
    identical (a per-item input form); reject non-identical rows."""
    w = np.asarray(w, dtype=float)
    if w.ndim == 2:
        if not np.all(w == w[0]):
            raise InputError(
                f"{what}: per-item subclass weight rows differ; the model "
                "defines a single weight vector shared across items"
            )
        w = w[0]
    if (w < 0).any() or abs(w.sum() - 1.0) > 1e-8:
        raise InputError(f"{what} must be a probability simplex")
    return w / w.sum()


@dataclass
class SimulationRecipe:
    n_cases: int
    n_controls: int
    cause_list: CauseList
    etiology: np.ndarray
    bronze: list = field(default_factory=list)  # BrsSliceRecipe
    silver: list = field(default_factory=list)  # SsSliceRecipe
    control_subclass: np.ndarray = None  # Lambda, length K
    case_subclass: np.ndarray = None  # Eta, length K (or J x K identical rows)
    seed: int | None = None

    def __post_init__(self):
        self.etiology = np.asarray(self.etiology, dtype=float)
        if self.etiology.size != len(self.cause_list):
            raise InputError("etiology length must equal the number of causes")
        if (self.etiology < 0).any() or abs(self.etiology.sum() - 1.0) > 1e-8:
            raise InputError("etiology must be a probability simplex")
        if not self.bronze and not self.silver:
            raise InputError("recipe needs at least one measurement slice")
        k = self.bronze[0].theta.shape[1] if self.bronze else 1
        for b in self.bronze:
            if b.theta.shape[1] != k:
                raise InputError("all BrS slices must share the same K in a recipe")
        self.control_subclass = _as_subclass_weights(
            self.control_subclass if self.control_subclass is not None else np.ones(k) / k,
            "control_subclass",
        )
        self.case_subclass = _as_subclass_weights(
            self.case_subclass if self.case_subclass is not None else np.ones(k) / k,
            "case_subclass",
        )
        if self.control_subclass.size != k or self.case_subclass.size != k:
            raise InputError("subclass weight length must equal K")

    @property
    def k_subclass(self) -> int:
        return self.control_subclass.size


def simulate(recipe: SimulationRecipe, rng=None) -> tuple:
    """Draw one dataset from the generative process.

    Returns ``(dataset, truth)`` where ``truth`` records the latent
    class per subject (0 for controls, 1..L for cases) and the latent
    subclass per BrS slice.  Cases are emitted first, but nothing
    downstream relies on that ordering.
    """
    if rng is None:
        rng = np.random.default_rng(recipe.seed)
    nd, nu = recipe.n_cases, recipe.n_controls
    n = nd + nu
    L = len(recipe.cause_list)
    k = recipe.k_subclass
    y = np.concatenate([np.ones(nd, dtype=int), np.zeros(nu, dtype=int)])

    classes = np.zeros(n, dtype=int)
    classes[:nd] = rng.choice(L, size=nd, p=recipe.etiology) + 1

    mbs, mss = [], []
    subclass_truth = {}
    for b in recipe.bronze:
        template = make_template(b.items, recipe.cause_list, slice_name=b.name)
        z = np.where(
            y == 1,
            rng.choice(k, size=n, p=recipe.case_subclass),
            rng.choice(k, size=n, p=recipe.control_subclass),
        )
        row_idx = np.where(classes == 0, L, classes - 1)
        causative = template.matrix[row_idx]  # n x J
        p = np.where(causative == 1, b.theta[:, z].T, b.psi[:, z].T)
        data = (rng.random((n, len(b.items))) < p).astype(float)
        mbs.append(MeasurementSlice(name=b.name, quality=BRS, items=list(b.items), data=data))
        subclass_truth[b.name] = z
    for s in recipe.silver:
        template = make_template(s.items, recipe.cause_list, slice_name=s.name)
        data = np.full((n, len(s.items)), np.nan)
        case_rows = np.where(y == 1)[0]
        causative = template.matrix[classes[case_rows] - 1]
        p = causative * s.theta[None, :]
        data[case_rows] = (rng.random((nd, len(s.items))) < p).astype(float)
        mss.append(MeasurementSlice(name=s.name, quality=SS, items=list(s.items), data=data))

    dataset = Dataset(mbs=mbs, mss=mss, y=y)
    truth = {"class": classes, "subclass": subclass_truth}
    return dataset, truth


def combine_and_reorder(
    datasets: list,
    strata_labels: list | None = None,
    stratum_col: str = "SITE",
    cases_first: bool = True,
) -> Dataset:
    """Row-concatenate datasets sharing a slice schema, adding a stratum
    factor column; optionally reorder cases before controls.

    The engine itself is order-agnostic; reordering only mirrors the
    conventional presentation.
    """
    if not datasets:
        raise InputError("no datasets to combine")
    first = datasets[0]
    schema = [(s.name, tuple(s.items)) for s in first.mbs + first.mss]
    for d in datasets[1:]:
        if [(s.name, tuple(s.items)) for s in d.mbs + d.mss] != schema:
            raise InputError("datasets have mismatched slice schemas")
        if not d.x.is_empty() or not first.x.is_empty():
            if set(d.x.names) != set(first.x.names):
                raise InputError("datasets have mismatched covariate columns")
    if strata_labels is None:
        strata_labels = list(range(1, len(datasets) + 1))
    if len(strata_labels) != len(datasets):
        raise InputError("one stratum label per dataset required")

    y = np.concatenate([d.y for d in datasets])
    order = np.argsort(-y, kind="stable") if cases_first else np.arange(len(y))

    mbs, mss = [], []
    for slot, pool in (("mbs", mbs), ("mss", mss)):
        for idx in range(len(getattr(first, slot))):
            ref = getattr(first, slot)[idx]
            data = np.concatenate([getattr(d, slot)[idx].data for d in datasets])[order]
            pool.append(
                MeasurementSlice(
                    name=ref.name, quality=ref.quality, items=list(ref.items), data=data
                )
            )

    site = np.concatenate(
        [np.full(d.n_subjects, i) for i, d in enumerate(datasets)]
    )[order]
    levels = tuple(strata_labels)
    columns = {stratum_col: FactorColumn(levels=levels, codes=site)}
    for name in first.x.names:
        if name == stratum_col:
            continue
        col0 = first.x[name]
        if isinstance(col0, FactorColumn):
            codes = np.concatenate([d.x[name].codes for d in datasets])[order]
            columns[name] = FactorColumn(levels=col0.levels, codes=codes)
        else:
            values = np.concatenate([d.x[name].values for d in datasets])[order]
            columns[name] = type(col0)(values=values)
    return Dataset(mbs=mbs, mss=mss, y=y[order], x=CovariateTable(columns=columns))
