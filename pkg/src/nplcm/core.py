"""Domain types shared by all modules.

Measurements are organized in "slices": one named source of binary
diagnostic results with its own items and error rates.  Bronze-standard
(BrS) slices are case-control with imperfect sensitivity and specificity;
silver-standard (SS) slices are case-only with perfect specificity.
Missing entries are first-class (NaN), handled as missing-at-random.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NOS_LABEL = "NoS"

BRS = "BrS"
SS = "SS"


class InputError(ValueError):
    """Invalid user-supplied data, model options, or configuration."""


def _as_meas_matrix(data) -> np.ndarray:
    m = np.asarray(data, dtype=float)
    if m.ndim != 2:
        raise InputError(f"measurement data must be 2-D, got shape {m.shape}")
    ok = np.isnan(m) | (m == 0.0) | (m == 1.0)
    if not ok.all():
        bad = m[~ok].ravel()[0]
        raise InputError(f"measurement entries must be 0, 1, or missing; found {bad!r}")
    return m


@dataclass
class MeasurementSlice:
    """One source of binary measurements (N subjects x J items).

    ``data`` entries are 0.0, 1.0, or NaN for missing.  SS slices carry
    case-only information; their control rows must be entirely missing.
    """

    name: str
    quality: str
    items: list[str]
    data: np.ndarray

    def __post_init__(self):
        if self.quality not in (BRS, SS):
            raise InputError(f"unknown slice quality {self.quality!r}")
        if len(set(self.items)) != len(self.items):
            raise InputError(f"duplicate item names in slice {self.name!r}")
        self.data = _as_meas_matrix(self.data)
        if self.data.shape[1] != len(self.items):
            raise InputError(
                f"slice {self.name!r}: {len(self.items)} items but "
                f"data has {self.data.shape[1]} columns"
            )
        self.data.flags.writeable = False

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_subjects(self) -> int:
        return self.data.shape[0]


@dataclass
class CauseList:
    """Ordered list of the L pre-specified latent-state patterns.

    A label is an item name, a "+"-joined set of item names for a
    multi-agent cause, or the reserved Not-Specified label ``"NoS"``
    (all-zero latent state).
    """

    causes: list[str]

    def __post_init__(self):
        if len(self.causes) < 1:
            raise InputError("cause list must be non-empty")
        if len(set(self.causes)) != len(self.causes):
            raise InputError("cause labels must be unique")

    def __len__(self) -> int:
        return len(self.causes)

    def components(self, label: str) -> list[str]:
        """Item names making up one cause (empty for NoS)."""
        if label == NOS_LABEL:
            return []
        return label.split("+")


@dataclass
class Template:
    """(L+1) x J causative-item indicator matrix for one slice.

    Row l (1-based, l <= L) marks which of the slice's items are
    causative under cause l; the final row is all zeros and represents
    class 0 (controls).
    """

    slice_name: str
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=int)
        if not np.isin(self.matrix, (0, 1)).all():
            raise InputError("template entries must be 0/1")
        if self.matrix[-1].any():
            raise InputError("last template row (controls) must be all zero")
        self.matrix.flags.writeable = False

    @property
    def n_causes(self) -> int:
        return self.matrix.shape[0] - 1


def make_template(items: list[str], cause_list: CauseList, slice_name: str = "") -> Template:
    """Build the causative-item template for a slice.

    Matching is exact by name component; components of a cause that are
    absent from ``items`` yield zero columns (the cause is unobservable
    in this slice).
    """
    if not items:
        raise InputError("items must be non-empty")
    if len(set(items)) != len(items):
        raise InputError("duplicate item names")
    col = {name: j for j, name in enumerate(items)}
    L = len(cause_list)
    matrix = np.zeros((L + 1, len(items)), dtype=int)
    for ell, label in enumerate(cause_list.causes):
        for comp in cause_list.components(label):
            if comp in col:
                matrix[ell, col[comp]] = 1
    return Template(slice_name=slice_name, matrix=matrix)


@dataclass
class FactorColumn:
    levels: tuple
    codes: np.ndarray  # int codes into levels

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=int)
        if self.codes.size and (self.codes.min() < 0 or self.codes.max() >= len(self.levels)):
            raise InputError("factor codes out of range of declared levels")


@dataclass
class ContinuousColumn:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


@dataclass
class CovariateTable:
    """Named covariate columns over N subjects (continuous or factor)."""

    columns: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, factor_levels: dict | None = None) -> "CovariateTable":
        """Build from plain arrays; columns listed in ``factor_levels``
        (or with non-numeric values) become factors."""
        factor_levels = factor_levels or {}
        cols = {}
        for name, values in raw.items():
            arr = np.asarray(values)
            if name in factor_levels:
                levels = tuple(factor_levels[name])
                lookup = {lv: i for i, lv in enumerate(levels)}
                try:
                    codes = np.array([lookup[v] for v in arr.tolist()])
                except KeyError as e:
                    raise InputError(f"column {name!r}: value {e.args[0]!r} not in levels")
                cols[name] = FactorColumn(levels=levels, codes=codes)
            elif arr.dtype.kind in "fiu":
                cols[name] = ContinuousColumn(values=arr)
            else:
                levels = tuple(sorted(set(arr.tolist())))
                lookup = {lv: i for i, lv in enumerate(levels)}
                cols[name] = FactorColumn(
                    levels=levels, codes=np.array([lookup[v] for v in arr.tolist()])
                )
        return cls(columns=cols)

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    @property
    def n_rows(self) -> int:
        for c in self.columns.values():
            return len(c.codes) if isinstance(c, FactorColumn) else len(c.values)
        return 0

    def __contains__(self, name) -> bool:
        return name in self.columns

    def __getitem__(self, name):
        return self.columns[name]

    def is_factor(self, name) -> bool:
        return isinstance(self.columns[name], FactorColumn)

    def is_empty(self) -> bool:
        return not self.columns


@dataclass
class Dataset:
    """Measurements, case-control indicators, and covariates.

    No ordering of cases versus controls is assumed anywhere in the
    engine.
    """

    mbs: list[MeasurementSlice]
    mss: list[MeasurementSlice]
    y: np.ndarray
    x: CovariateTable = field(default_factory=CovariateTable)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=int)
        if not np.isin(self.y, (0, 1)).all():
            raise InputError("y must contain only 0 (control) and 1 (case)")
        n = len(self.y)
        for s in self.mbs + self.mss:
            if s.n_subjects != n:
                raise InputError(
                    f"slice {s.name!r} has {s.n_subjects} rows but y has length {n}"
                )
        for s in self.mbs:
            if s.quality != BRS:
                raise InputError(f"slice {s.name!r} in mbs is not BrS")
        for s in self.mss:
            if s.quality != SS:
                raise InputError(f"slice {s.name!r} in mss is not SS")
        if not self.x.is_empty() and self.x.n_rows != n:
            raise InputError("covariate table length does not match y")

    @property
    def n_subjects(self) -> int:
        return len(self.y)

    @property
    def n_cases(self) -> int:
        return int(self.y.sum())

    @property
    def n_controls(self) -> int:
        return int((1 - self.y).sum())


@dataclass
class TprPriorSpec:
    """Per-slice TPR prior: either raw Beta (c1, c2) vectors per item or
    a quantile range (low, up) per item to be matched (see priors)."""

    kind: str  # "beta" | "range"
    a: np.ndarray  # c1 vector, or low vector
    b: np.ndarray  # c2 vector, or up vector

    def __post_init__(self):
        if self.kind not in ("beta", "range"):
            raise InputError(f"unknown TPR prior kind {self.kind!r}")
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.a.shape != self.b.shape:
            raise InputError("TPR prior vectors must have equal length")
        if self.kind == "range" and not ((0 < self.a) & (self.a < self.b) & (self.b < 1)).all():
            raise InputError("TPR ranges require 0 < low < up < 1")
        if self.kind == "beta" and not ((self.a > 0) & (self.b > 0)).all():
            raise InputError("Beta hyperparameters must be positive")


@dataclass
class ModelSpec:
    """Which measurements to use, the likelihood structure, and priors."""

    use_measurements: tuple
    cause_list: CauseList
    k_subclass: dict  # BrS slice name -> K >= 1
    eti_formula: str | None = None
    fpr_formula: dict = field(default_factory=dict)  # BrS slice name -> formula or None
    eti_prior: np.ndarray | float = 1.0
    tpr_prior: dict = field(default_factory=dict)  # slice name -> TprPriorSpec
    fpr_prior: tuple = (1.0, 1.0)
    stick_shape: float = 0.25
    stick_rate: float = 0.25

    def __post_init__(self):
        self.use_measurements = tuple(self.use_measurements)
        for u in self.use_measurements:
            if u not in (BRS, SS):
                raise InputError(f"unknown measurement quality {u!r}")
        if not self.use_measurements:
            raise InputError("use_measurements must not be empty")
        L = len(self.cause_list)
        a = np.atleast_1d(np.asarray(self.eti_prior, dtype=float))
        if a.size == 1:
            a = np.full(L, float(a[0]))
        if a.size != L:
            raise InputError(
                f"eti_prior must be scalar or length {L}, got length {a.size}"
            )
        if (a <= 0).any():
            raise InputError("eti_prior entries must be positive")
        self.eti_prior = a
        for name, k in self.k_subclass.items():
            if int(k) < 1:
                raise InputError(f"k_subclass for {name!r} must be >= 1")
        if self.stick_shape <= 0 or self.stick_rate <= 0:
            raise InputError("stick-breaking Gamma hyperparameters must be positive")

    def k_for(self, slice_name: str) -> int:
        return int(self.k_subclass.get(slice_name, 1))

    @property
    def nested(self) -> bool:
        return any(int(k) > 1 for k in self.k_subclass.values())

    def do_reg_eti(self) -> bool:
        return _formula_active(self.eti_formula)

    def do_reg_fpr(self, slice_name: str) -> bool:
        return _formula_active(self.fpr_formula.get(slice_name))


def _formula_active(formula: str | None) -> bool:
    """A formula triggers regression unless it is absent or the
    conventional empty form "~ -1" (no intercept, no terms)."""
    if formula is None:
        return False
    body = formula.strip().lstrip("~").strip()
    terms = [t.strip() for t in body.split("+") if t.strip()]
    terms = [t for t in terms if t not in ("-1", "0")]
    return bool(terms)


@dataclass
class McmcSettings:
    n_chains: int = 1
    n_iter: int = 2000
    n_burnin: int = 1000
    n_thin: int = 1
    individual_pred: bool = False
    ppd: bool = False
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        for name in ("n_chains", "n_iter", "n_burnin", "n_thin"):
            if int(getattr(self, name)) < (0 if name == "n_burnin" else 1):
                raise InputError(f"{name} must be positive")
        if self.n_burnin >= self.n_iter:
            raise InputError("n_burnin must be smaller than n_iter")

    @property
    def n_retained(self) -> int:
        return (self.n_iter - self.n_burnin) // self.n_thin


@dataclass
class SliceSummary:
    name: str
    quality: str
    n_cases: int
    n_controls: int
    items: list[str]
    case_rate: np.ndarray
    control_rate: np.ndarray | None  # None for SS slices
    undefined_items: list[str]


def summarize_slice(s: MeasurementSlice, y) -> SliceSummary:
    """Per-item marginal positive rates among cases and controls.

    Missing entries are excluded from denominators; an item with no
    observed entries in a group gets a NaN rate and is flagged.
    """
    y = np.asarray(y, dtype=int)
    if len(y) != s.n_subjects:
        raise InputError("y length does not match slice rows")
    undefined = set()

    def rates(mask):
        sub = s.data[mask]
        obs = ~np.isnan(sub)
        denom = obs.sum(axis=0)
        with np.errstate(invalid="ignore"):
            r = np.nansum(sub, axis=0) / denom
        for j in np.where(denom == 0)[0]:
            r[j] = np.nan
            undefined.add(s.items[j])
        return r

    case_rate = rates(y == 1)
    control_rate = None if s.quality == SS else rates(y == 0)
    return SliceSummary(
        name=s.name,
        quality=s.quality,
        n_cases=int((y == 1).sum()),
        n_controls=int((y == 0).sum()),
        items=list(s.items),
        case_rate=case_rate,
        control_rate=control_rate,
        undefined_items=sorted(undefined),
    )


@dataclass
class ValidationReport:
    num_slice: dict
    nested: bool
    do_reg_eti: bool
    do_reg_fpr: dict
    is_discrete_eti: bool
    is_discrete_fpr: dict


def validate_dataset(d: Dataset, m: ModelSpec) -> ValidationReport:
    """Cross-check a dataset against a model specification.

    Raises :class:`InputError` on dimension mismatches, SS slices with
    control positives (perfect-specificity violation), or formulas that
    reference missing covariate columns.
    """
    from .regression import parse_formula  # local import to avoid a cycle

    for s in d.mss:
        ctrl = s.data[d.y == 0]
        if np.nansum(ctrl) > 0:
            raise InputError(
                f"SS slice {s.name!r} has positive control entries; "
                "SS measurements have perfect specificity and are case-only"
            )
    for name in m.k_subclass:
        if name not in {s.name for s in d.mbs}:
            raise InputError(f"k_subclass refers to unknown BrS slice {name!r}")

    def check_formula(formula):
        parsed = parse_formula(formula)
        discrete = True
        for term in parsed.terms:
            if term.column not in d.x:
                raise InputError(f"formula references missing column {term.column!r}")
            if term.kind == "factor":
                if not d.x.is_factor(term.column):
                    raise InputError(f"factor() applied to continuous column {term.column!r}")
            else:
                discrete = False
        return discrete

    is_discrete_eti = check_formula(m.eti_formula) if m.do_reg_eti() else False
    do_reg_fpr, is_discrete_fpr = {}, {}
    for s in d.mbs:
        active = m.do_reg_fpr(s.name)
        do_reg_fpr[s.name] = active
        is_discrete_fpr[s.name] = check_formula(m.fpr_formula[s.name]) if active else False

    return ValidationReport(
        num_slice={"MBS": len(d.mbs), "MSS": len(d.mss)},
        nested=m.nested,
        do_reg_eti=m.do_reg_eti(),
        do_reg_fpr=do_reg_fpr,
        is_discrete_eti=is_discrete_eti,
        is_discrete_fpr=is_discrete_fpr,
    )
