"""Flat ``key = value`` run configuration.

A config file holds one ``key = value`` pair per line; blank lines and
lines starting with ``#`` are ignored. Command-line overrides use the same
``key=value`` syntax and win over the file. Every key is listed in
:data:`SCHEMA` with its type and default; unknown keys are rejected.

Keys
----
measure.kind          point_mass | scaled_gaussian | alpha_stable | finite_discrete
measure.lam           intensity for point_mass / scaled_gaussian
measure.alpha         stability index for alpha_stable
measure.theta         probability of a positive sign for alpha_stable
measure.atoms         finite_discrete atoms as ``loc:mass,loc:mass``
ensemble.kind         erdos_renyi | sparse_gaussian | levy_pareto
ensemble.n            matrix dimension
ensemble.lam          sparsity for erdos_renyi / sparse_gaussian
ensemble.alpha        tail index for levy_pareto
ensemble.theta        positive-sign probability for levy_pareto
ensemble.diagonal     dependent (L = A - D) | independent (A - D~, D~ drawn apart from A)
samples               number of matrices (sample-spectrum, row-sums)
grid.points           explicit comma-separated complex points, e.g. ``0.5j,1+1j``
grid.re_min ...       rectangle: grid.re_min, grid.re_max, grid.re_step, grid.im
grid.eta_min          lower bound on Im z
rde.*                 n_pop, iterations, burn_in, damping, delta, max_points,
                      variant, tail_drift, tol
tree.*                depth, branching, delta, count, batch_size
fc.*                  tol, nodes, damping, max_iter
fit.*                 b (drift of the limit law; none means ∫ x/(1+x²) dm),
                      t_points, tol_cf, tol_tv
compare.*             a, b (run directories), tol
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Dict

import numpy as np

from .ensembles import spec_from_dict
from .point_processes import measure_from_dict
from .rde import RdeConfig
from .pwitl import TruncationParams, default_params
from .stieltjes import ZGrid


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none", "default") else float(text)


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none", "default") else int(text)


def _floats(text: str):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _complexes(text: str):
    return tuple(complex(x.strip().replace(" ", "")) for x in text.split(",") if x.strip())


def _atoms(text: str):
    out = []
    for item in text.split(","):
        if item.strip():
            loc, mass = item.split(":")
            out.append((float(loc), float(mass)))
    return tuple(out)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any


SCHEMA: Dict[str, Key] = {
    "measure.kind": Key(str, "point_mass"),
    "measure.lam": Key(float, 2.0),
    "measure.alpha": Key(float, 0.5),
    "measure.theta": Key(float, 0.5),
    "measure.atoms": Key(_atoms, ()),
    "ensemble.kind": Key(str, "erdos_renyi"),
    "ensemble.n": Key(int, 2000),
    "ensemble.lam": Key(float, 2.0),
    "ensemble.alpha": Key(float, 0.5),
    "ensemble.theta": Key(float, 0.5),
    "ensemble.diagonal": Key(str, "dependent"),
    "samples": Key(int, 20),
    "grid.points": Key(_complexes, ()),
    "grid.re_min": Key(float, -8.0),
    "grid.re_max": Key(float, 4.0),
    "grid.re_step": Key(float, 0.25),
    "grid.im": Key(_floats, (0.5, 1.0)),
    "grid.eta_min": Key(float, 0.25),
    "rde.n_pop": Key(int, 100_000),
    "rde.iterations": Key(int, 200),
    "rde.burn_in": Key(int, 100),
    "rde.damping": Key(float, 0.0),
    "rde.delta": Key(_opt_float, None),
    "rde.max_points": Key(_opt_int, None),
    "rde.variant": Key(str, "dependent"),
    "rde.tail_drift": Key(_bool, True),
    "rde.tol": Key(float, 1e-3),
    "tree.depth": Key(int, 8),
    "tree.branching": Key(_opt_int, None),
    "tree.delta": Key(_opt_float, None),
    "tree.count": Key(int, 100_000),
    "tree.batch_size": Key(int, 1000),
    "fc.tol": Key(float, 1e-12),
    "fc.nodes": Key(int, 64),
    "fc.damping": Key(float, 0.5),
    "fc.max_iter": Key(int, 10_000),
    "fit.b": Key(_opt_float, None),
    "fit.t_points": Key(int, 33),
    "fit.tol_cf": Key(float, 0.03),
    "fit.tol_tv": Key(float, 0.02),
    "compare.a": Key(str, ""),
    "compare.b": Key(str, ""),
    "compare.tol": Key(float, 0.03),
}


def parse_pairs(lines, source: str = "config") -> Dict[str, str]:
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


@dataclass
class RunConfig:
    """Resolved configuration: raw text per key (for echoing) plus parsed values."""

    raw: Dict[str, str]
    values: Dict[str, Any]

    @classmethod
    def build(cls, file_pairs: Dict[str, str], overrides: Dict[str, str]) -> "RunConfig":
        merged = {**file_pairs, **overrides}
        unknown = sorted(set(merged) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values, raw = {}, {}
        for key, spec in SCHEMA.items():
            if key in merged:
                try:
                    values[key] = spec.parse(merged[key])
                except ValueError as exc:
                    raise ConfigError(f"{key}: {exc}") from None
                raw[key] = merged[key]
            else:
                values[key] = spec.default
                raw[key] = _echo(spec.default)
        return cls(raw, values)

    def __getitem__(self, key):
        return self.values[key]

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.raw.items()))

    # -- domain objects ---------------------------------------------------

    def measure(self):
        kind = self["measure.kind"]
        doc = {"kind": kind}
        if kind in ("point_mass", "scaled_gaussian"):
            doc["lam"] = self["measure.lam"]
        elif kind == "alpha_stable":
            doc.update(alpha=self["measure.alpha"], theta=self["measure.theta"])
        elif kind == "finite_discrete":
            doc["atoms"] = self["measure.atoms"]
        try:
            return measure_from_dict(doc)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"measure: {exc}") from None

    def ensemble(self):
        kind = self["ensemble.kind"]
        doc = {"kind": kind, "n": self["ensemble.n"]}
        if kind in ("erdos_renyi", "sparse_gaussian"):
            doc["lam"] = self["ensemble.lam"]
        elif kind == "levy_pareto":
            doc.update(alpha=self["ensemble.alpha"], theta=self["ensemble.theta"])
        try:
            spec = spec_from_dict(doc)
        except ValueError as exc:
            raise ConfigError(f"ensemble: {exc}") from None
        if self["ensemble.diagonal"] not in ("dependent", "independent"):
            raise ConfigError("ensemble.diagonal must be 'dependent' or 'independent'")
        return spec

    def grid(self) -> ZGrid:
        try:
            if self["grid.points"]:
                pts = np.array(self["grid.points"])
                return ZGrid(pts, eta_min=min(self["grid.eta_min"], float(pts.imag.min())))
            return ZGrid.rectangle(self["grid.re_min"], self["grid.re_max"], self["grid.re_step"],
                                   self["grid.im"], eta_min=self["grid.eta_min"])
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None

    def rde(self) -> RdeConfig:
        try:
            return RdeConfig(
                n_pop=self["rde.n_pop"], iterations=self["rde.iterations"], burn_in=self["rde.burn_in"],
                damping=self["rde.damping"], delta=self["rde.delta"], max_points=self["rde.max_points"],
                variant=self["rde.variant"], tail_drift=self["rde.tail_drift"], tol=self["rde.tol"],
            )
        except ValueError as exc:
            raise ConfigError(f"rde: {exc}") from None

    def tree(self, m) -> TruncationParams:
        base = default_params(m, self["tree.depth"])
        try:
            params = TruncationParams(
                self["tree.depth"],
                base.branching if self["tree.branching"] is None else self["tree.branching"],
                base.delta if self["tree.delta"] is None else self["tree.delta"],
            )
            params.check_for(m)
        except ValueError as exc:
            raise ConfigError(f"tree: {exc}") from None
        return params


def _echo(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{a!r}:{b!r}" for a, b in value)
        return ",".join(repr(v) for v in value)
    return str(value)
