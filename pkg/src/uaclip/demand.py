"""Quadratic visual-demand regressions with controls and fixed effects.

The outcome is regressed on ``x`` and ``x**2`` for each normalized visual
attribute, plus controls and one-hot fixed-effect dummies. The fitted
attribute coefficients define a visual index; ``orientation`` records whether
a larger outcome means more demand (log occupancy) or less (log sales rank).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    InsufficientObservations,
    InvalidConfig,
    IOFailure,
    MissingField,
    NoCurvature,
    RankDeficientDesign,
)
from .imaging import AttributeScaler, apply_scaler, fit_scaler

log = logging.getLogger(__name__)

HIGHER_IS_DEMAND = "higher_outcome_is_demand"
LOWER_IS_DEMAND = "lower_outcome_is_demand"
ORIENTATIONS = (HIGHER_IS_DEMAND, LOWER_IS_DEMAND)

RANK_TOL = 1e-10

# Reference coefficient presets, as (linear, quadratic) per attribute.
PRESETS = {
    "amazon": {
        "orientation": LOWER_IS_DEMAND,
        "coefficients": {
            "colorfulness": (-2.249, 2.118),
            "brightness": (-0.281, 0.588),
            "symmetry": (-1.074, 1.664),
            "aesthetic": (-2.885, 2.951),
        },
    },
    "airbnb": {
        "orientation": HIGHER_IS_DEMAND,
        "coefficients": {
            "uniqueness": (0.288, -0.241),
            "aesthetic": (0.978, -1.013),
        },
    },
}


@dataclass(frozen=True)
class Observation:
    id: str
    attributes: dict
    outcome: float
    controls: dict = field(default_factory=dict)
    fixed_effects: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DemandSpec:
    attributes: tuple
    controls: tuple = ()
    fixed_effects: tuple = ()


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    columns: list
    fe_levels: dict


@dataclass(frozen=True)
class OLSResult:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    r2: float
    rss: float


def _field(ob, kind, name):
    source = getattr(ob, kind)
    if name not in source:
        raise MissingField(f"observation {ob.id!r} lacks {kind[:-1]} {name!r}")
    return source[name]


def build_design(obs, spec):
    """Columns: intercept, ``x`` and ``x^2`` per attribute, controls, FE dummies.

    The reference level of each fixed-effect category is its lexicographically
    smallest label. Categories with a single level are dropped with a warning.
    """
    if not obs:
        raise InsufficientObservations("no observations")
    cols = [np.ones(len(obs))]
    names = ["intercept"]
    for attr in spec.attributes:
        x = np.array([float(_field(o, "attributes", attr)) for o in obs])
        cols += [x, x * x]
        names += [attr, f"{attr}^2"]
    for ctrl in spec.controls:
        cols.append(np.array([float(_field(o, "controls", ctrl)) for o in obs]))
        names.append(ctrl)
    fe_levels = {}
    for cat in spec.fixed_effects:
        labels = [str(_field(o, "fixed_effects", cat)) for o in obs]
        levels = sorted(set(labels))
        if len(levels) < 2:
            log.warning("fixed effect %r has a single level; dropped", cat)
            continue
        fe_levels[cat] = levels
        for level in levels[1:]:
            cols.append(np.array([1.0 if lab == level else 0.0 for lab in labels]))
            names.append(f"{cat}={level}")
    if len(set(names)) != len(names):
        raise InvalidConfig("duplicate design column names")
    return DesignMatrix(np.column_stack(cols), names, fe_levels)


def fit_ols(X, y):
    """Least squares via column-pivoted QR with classical standard errors."""
    X = np.asarray(X.X if isinstance(X, DesignMatrix) else X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    if len(y) != n:
        raise InvalidConfig("outcome length does not match design rows")
    if n <= p:
        raise InsufficientObservations(f"{n} observations for {p} columns")
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0 or diag[-1] / diag[0] <= RANK_TOL:
        raise RankDeficientDesign(f"design is rank deficient (|r_pp|/|r_11| = {diag[-1] / max(diag[0], 1e-300):.3g})")
    beta = np.empty(p)
    beta[piv] = scipy.linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    s2 = rss / (n - p)
    Rinv = scipy.linalg.solve_triangular(R, np.eye(p))
    cov = np.empty((p, p))
    cov[np.ix_(piv, piv)] = Rinv @ Rinv.T
    se = np.sqrt(s2 * np.diag(cov))
    centered = y - y.mean()
    tss = float(centered @ centered)
    r2 = 0.0 if tss == 0 else min(max(1.0 - rss / tss, 0.0), 1.0)
    return OLSResult(beta, se, r2, rss)


@dataclass(frozen=True)
class Vertex:
    location: float
    outcome_extremum: str
    demand_maximum: bool
    in_unit_interval: bool


@dataclass(frozen=True)
class DemandModel:
    attributes: tuple
    linear: dict
    quadratic: dict
    orientation: str
    intercept: float = 0.0
    controls: dict = field(default_factory=dict)
    fixed_effects: dict = field(default_factory=dict)
    scaler: AttributeScaler = None
    r2: float = 0.0
    columns: tuple = ()
    coefficients: tuple = ()
    standard_errors: tuple = ()
    n_obs: int = 0

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise InvalidConfig(f"orientation must be one of {ORIENTATIONS}")

    def se(self, column):
        return dict(zip(self.columns, self.standard_errors))[column]

    def to_json(self):
        return {
            "attributes": list(self.attributes),
            "linear": self.linear,
            "quadratic": self.quadratic,
            "orientation": self.orientation,
            "intercept": self.intercept,
            "controls": self.controls,
            "fixed_effects": self.fixed_effects,
            "scaler": None if self.scaler is None else self.scaler.to_json(),
            "r2": self.r2,
            "columns": list(self.columns),
            "coefficients": list(self.coefficients),
            "standard_errors": list(self.standard_errors),
            "n_obs": self.n_obs,
        }

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        scaler = obj.pop("scaler", None)
        return cls(
            attributes=tuple(obj.pop("attributes")),
            columns=tuple(obj.pop("columns", ())),
            coefficients=tuple(obj.pop("coefficients", ())),
            standard_errors=tuple(obj.pop("standard_errors", ())),
            scaler=None if scaler is None else AttributeScaler.from_json(scaler),
            **obj,
        )

    def save(self, path):
        try:
            with open(path, "w") as fh:
                json.dump(self.to_json(), fh, indent=2)
        except OSError as exc:
            raise IOFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_json(json.load(fh))
        except OSError as exc:
            raise IOFailure(f"cannot read {path}: {exc}") from exc


def preset_model(name, scaler=None):
    """A model carrying preset coefficients (attributes assumed pre-scaled)."""
    preset = PRESETS[name]
    coefs = preset["coefficients"]
    return DemandModel(
        attributes=tuple(coefs),
        linear={a: c[0] for a, c in coefs.items()},
        quadratic={a: c[1] for a, c in coefs.items()},
        orientation=preset["orientation"],
        scaler=scaler,
    )


def fit_demand(obs, spec, orientation, scaler=None):
    design = build_design(obs, spec)
    y = np.array([float(o.outcome) for o in obs])
    res = fit_ols(design, y)
    coef = dict(zip(design.columns, res.coefficients.tolist()))
    return DemandModel(
        attributes=tuple(spec.attributes),
        linear={a: coef[a] for a in spec.attributes},
        quadratic={a: coef[f"{a}^2"] for a in spec.attributes},
        orientation=orientation,
        intercept=coef["intercept"],
        controls={c: coef[c] for c in spec.controls},
        fixed_effects={k: v for k, v in coef.items() if "=" in k},
        scaler=scaler,
        r2=res.r2,
        columns=tuple(design.columns),
        coefficients=tuple(res.coefficients.tolist()),
        standard_errors=tuple(res.standard_errors.tolist()),
        n_obs=len(obs),
    )


def visual_index(model, a):
    """Attribute-only part of the fitted outcome; controls and FE excluded."""
    total = 0.0
    for attr in model.attributes:
        x = float(a[attr])
        total += model.linear[attr] * x + model.quadratic[attr] * x * x
    return total


def demand_score(model, a):
    idx = visual_index(model, a)
    return -idx if model.orientation == LOWER_IS_DEMAND else idx


def vertex(model, attribute):
    b1 = model.linear[attribute]
    b2 = model.quadratic[attribute]
    if abs(b2) <= 1e-12:
        raise NoCurvature(f"{attribute}: quadratic coefficient is zero")
    x = -b1 / (2.0 * b2)
    kind = "min" if b2 > 0 else "max"
    demand_max = (kind == "min") == (model.orientation == LOWER_IS_DEMAND)
    return Vertex(x, kind, demand_max, 0.0 <= x <= 1.0)


# ---------------------------------------------------------------------------
# CSV ingestion


def load_schema(path):
    try:
        with open(path) as fh:
            schema = json.load(fh)
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    for key in ("attributes", "outcome"):
        if key not in schema:
            raise MissingField(f"schema lacks {key!r}")
    schema.setdefault("id", "id")
    schema.setdefault("controls", [])
    schema.setdefault("fixed_effects", [])
    return schema


def observations_from_rows(rows, schema, scaler=None):
    """Build observations from dict rows holding raw attribute values.

    Returns ``(observations, scaler)``; the scaler is fitted on these rows
    unless one is given.
    """
    attrs = list(schema["attributes"])
    for key in [schema["id"], schema["outcome"], *attrs, *schema["controls"], *schema["fixed_effects"]]:
        for row in rows:
            if key not in row or row[key] in ("", None):
                raise MissingField(f"row {row.get(schema['id'], '?')!r} lacks column {key!r}")
    raw = [{a: float(row[a]) for a in attrs} for row in rows]
    if scaler is None:
        scaler = fit_scaler(raw)
    obs = [
        Observation(
            id=str(row[schema["id"]]),
            attributes=apply_scaler(r, scaler),
            outcome=float(row[schema["outcome"]]),
            controls={c: float(row[c]) for c in schema["controls"]},
            fixed_effects={f: str(row[f]) for f in schema["fixed_effects"]},
        )
        for row, r in zip(rows, raw)
    ]
    return obs, scaler


def read_csv_rows(path):
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc


def spec_from_schema(schema):
    return DemandSpec(tuple(schema["attributes"]), tuple(schema["controls"]), tuple(schema["fixed_effects"]))
