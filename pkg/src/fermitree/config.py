"""Run configuration: a TOML file plus ``KEY=VALUE`` overrides, flattened to dotted keys."""
from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigurationError
from .estimator import Mode, RunConfig
from .greens import build_provider
from .model import InteractionSet, InteractionTerm, QuadraticHamiltonian, build_hubbard

__all__ = ["KEYS", "Config", "load_config", "parse_override"]


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _bool(v):
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _int_list(v):
    if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise TypeError("expected a list of integers")
    return list(v)


def _optional(f):
    return lambda v: None if v is None else f(v)


def _terms(v):
    if not isinstance(v, list):
        raise TypeError("expected a list of tables with p_plus, p_minus and v")
    out = []
    for item in v:
        if not isinstance(item, dict) or set(item) != {"p_plus", "p_minus", "v"}:
            raise TypeError("each term needs exactly the fields p_plus, p_minus, v")
        out.append({"p_plus": _int_list(item["p_plus"]), "p_minus": _int_list(item["p_minus"]), "v": _float(item["v"])})
    return out


@dataclass(frozen=True)
class Key:
    parse: Callable[[Any], Any]
    default: Any
    help: str


KEYS: dict[str, Key] = {
    "lattice.dims": Key(_int_list, [3], "lattice extent in each direction"),
    "lattice.periodic": Key(_bool, False, "wrap around in every direction"),
    "model.t": Key(_float, 1.0, "nearest-neighbour hopping amplitude"),
    "model.mu": Key(_float, 0.0, "chemical potential"),
    "model.U": Key(_float, 0.2, "on-site interaction U (n_up - 1/2)(n_dn - 1/2)"),
    "model.terms": Key(_optional(_terms), None, "explicit interaction list replacing the Hubbard U terms"),
    "model.range_r1": Key(_optional(_int), None, "declared hopping range (selects the Chebyshev backend under auto)"),
    "run.beta": Key(_float, 1.0, "inverse temperature"),
    "run.S": Key(_int, 6, "truncation order"),
    "run.L": Key(_int, 200_000, "number of samples"),
    "run.seed": Key(_int, 0, "64-bit random seed"),
    "run.mode": Key(_str, "general", "general, local_truncated or translation_invariant"),
    "run.R": Key(_optional(_int), None, "truncation radius for local_truncated mode"),
    "run.target_eps": Key(_optional(_float), None, "accuracy target used to suggest S"),
    "run.threads": Key(_int, 1, "worker threads"),
    "run.backend": Key(_str, "auto", "Green's function backend: auto, dense or chebyshev"),
    "run.eps_g": Key(_float, 1e-10, "Chebyshev accuracy"),
    "run.diagnostic_threshold": Key(_float, 0.5, "warn when the convergence ratio exceeds this"),
    "run.tau_grid": Key(_int, 64, "time grid size for L_g and the decay profile"),
    "observable.p_plus": Key(_int_list, [0], "creation modes of the observable monomial"),
    "observable.p_minus": Key(_int_list, [0], "annihilation modes of the observable monomial"),
    "verify.samples": Key(_int, 20_000, "samples for the end-to-end verify check"),
}


def _flatten(tree: Mapping, prefix: str = "") -> dict[str, Any]:
    flat = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key not in KEYS:
            flat.update(_flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def parse_override(text: str) -> tuple[str, Any]:
    """``KEY=VALUE`` with ``VALUE`` read as a TOML value, or as a bare string if that fails."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form KEY=VALUE")
    key, raw = (s.strip() for s in text.split("=", 1))
    try:
        value = tomllib.loads(f"x = {raw}")["x"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


@dataclass(frozen=True)
class Config:
    values: Mapping[str, Any]

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> "Config":
        unknown = sorted(set(flat) - set(KEYS))
        if unknown:
            raise ConfigurationError(
                f"unknown configuration key(s) {', '.join(unknown)}; valid keys: {', '.join(KEYS)}"
            )
        values = {k: spec.default for k, spec in KEYS.items()}
        for k, v in flat.items():
            try:
                values[k] = KEYS[k].parse(v)
            except TypeError as exc:
                raise ConfigurationError(f"bad value {v!r} for {k}: {exc}") from None
        return cls(values)

    def __getitem__(self, key: str):
        return self.values[key]

    def echo(self) -> dict[str, Any]:
        return dict(self.values)

    def with_overrides(self, **flat) -> "Config":
        merged = dict(self.values)
        merged.update(flat)
        return Config.from_flat(merged)

    def build_model(self):
        h, V = build_hubbard(self["lattice.dims"], self["model.t"], self["model.mu"],
                             0.0 if self["model.terms"] is not None else self["model.U"],
                             self["lattice.periodic"])
        if self["model.terms"] is not None:
            if self["model.U"] not in (0.0, KEYS["model.U"].default):
                raise ConfigurationError("model.U must be 0 or left at its default when model.terms is given")
            terms = tuple(InteractionTerm(t["p_plus"], t["p_minus"], t["v"]) for t in self["model.terms"])
            V = InteractionSet(terms, 0.0)
            V.validate_modes(h.n_modes)
        if self["model.range_r1"] is not None:
            h = QuadraticHamiltonian(h.h, h.lattice, self["model.range_r1"])
        return h, V

    def run_config(self) -> RunConfig:
        try:
            mode = Mode(self["run.mode"])
        except ValueError:
            raise ConfigurationError(
                f"run.mode must be one of {', '.join(m.value for m in Mode)}"
            ) from None
        return RunConfig(
            beta=self["run.beta"], S=self["run.S"], L=self["run.L"], seed=self["run.seed"],
            mode=mode, R=self["run.R"], target_eps=self["run.target_eps"], threads=self["run.threads"],
            diagnostic_threshold=self["run.diagnostic_threshold"], tau_grid=self["run.tau_grid"],
        )

    def provider(self, h):
        if self["run.backend"] not in ("auto", "dense", "chebyshev"):
            raise ConfigurationError("run.backend must be auto, dense or chebyshev")
        return build_provider(h, self["run.beta"], self["run.backend"], self["run.eps_g"])

    def observable(self) -> InteractionTerm:
        return InteractionTerm(self["observable.p_plus"], self["observable.p_minus"], 1.0)


def load_config(path: str | Path | None, overrides=()) -> Config:
    flat: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                flat = _flatten(tomllib.load(fh))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"cannot parse config {path}: {exc}") from None
    for item in overrides:
        key, value = parse_override(item)
        flat[key] = value
    return Config.from_flat(flat)
