"""The epsilon-indexed scaling-parameter table and its JSON form."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

SCHEMA_VERSION = 1

TABLE_FIELDS = (
    "gamma_breve",
    "tau_start_breve",
    "tau_start_tilde",
    "tau_end_tilde",
    "v_pd",
    "v_bp",
    "i_start",
    "i_end",
    "gamma_bp",
    "c_f",
)

SCALAR_FIELDS = (
    "epsilon_star",
    "nu_breve",
    "theta_breve",
    "nu_bp",
    "theta_bp",
    "nu_bp_sw",
    "theta_bp_sw",
    "sigma2",
)


class RangeError(ValueError):
    """Query outside the tabulated epsilon range."""


class SchemaError(ValueError):
    pass


@dataclass
class ScalingParams:
    dv: int
    dc: int
    L: int
    grid: np.ndarray
    tables: dict = field(default_factory=dict)
    scalars: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 1 or len(self.grid) == 0:
            raise ValueError("grid must be a non-empty vector")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        for k, v in list(self.tables.items()):
            v = np.asarray(v, dtype=float)
            if v.shape != self.grid.shape:
                raise ValueError(f"table {k} does not match the grid")
            self.tables[k] = v

    def lookup(self, name, epsilon):
        lo, hi = self.grid[0], self.grid[-1]
        tol = 1e-12
        if not lo - tol <= epsilon <= hi + tol:
            raise RangeError(f"epsilon={epsilon} outside table range [{lo}, {hi}]")
        if name not in self.tables:
            raise KeyError(f"table {name!r} has not been estimated")
        return float(np.interp(epsilon, self.grid, self.tables[name]))

    def scalar(self, name):
        if name not in self.scalars:
            raise KeyError(f"scalar {name!r} has not been estimated")
        return float(self.scalars[name])

    def at(self, epsilon):
        """All tabulated values interpolated at ``epsilon`` plus the scalars."""
        vals = {k: self.lookup(k, epsilon) for k in self.tables}
        vals.update({k: float(v) for k, v in self.scalars.items()})
        vals["epsilon"] = float(epsilon)
        return SimpleNamespace(**vals)

    def covers(self, epsilon):
        return self.grid[0] - 1e-12 <= epsilon <= self.grid[-1] + 1e-12

    def to_json(self):
        doc = {
            "schema_version": SCHEMA_VERSION,
            "dv": self.dv,
            "dc": self.dc,
            "L": self.L,
            "meta": self.meta,
            "grid": self.grid.tolist(),
            "tables": {k: self.tables[k].tolist() for k in sorted(self.tables)},
            "scalars": {k: float(self.scalars[k]) for k in sorted(self.scalars)},
            "provenance": self.provenance,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        version = doc.get("schema_version")
        if version is None or version > SCHEMA_VERSION:
            raise SchemaError(f"unsupported params schema version {version!r}")
        return cls(
            doc["dv"], doc["dc"], doc["L"], doc["grid"],
            {k: np.asarray(v) for k, v in doc.get("tables", {}).items()},
            dict(doc.get("scalars", {})),
            dict(doc.get("provenance", {})),
            dict(doc.get("meta", {})),
        )

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())

    def __eq__(self, other):
        if not isinstance(other, ScalingParams):
            return NotImplemented
        return (
            (self.dv, self.dc, self.L) == (other.dv, other.dc, other.L)
            and np.array_equal(self.grid, other.grid)
            and self.tables.keys() == other.tables.keys()
            and all(np.array_equal(self.tables[k], other.tables[k]) for k in self.tables)
            and self.scalars == other.scalars
            and self.provenance == other.provenance
            and self.meta == other.meta
        )
