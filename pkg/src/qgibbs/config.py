"""Strict TOML experiment configuration.

Every section and key is declared in ``SCHEMA``; anything else is rejected.
Defaults are filled in so the canonical echo fully determines a run.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib
import tomli_w

from .classical import KRONECKER, MULTILINEAR, ClassicalModel, CouplingTerm, ThermalPoint
from .errors import ConfigError, QGibbsError

REQUIRED = object()


@dataclass(frozen=True)
class Field:
    kind: type
    default: Any = None
    check: Optional[Callable[[Any], Optional[str]]] = None


def _positive(v):
    return None if v > 0 else "must be positive"


def _non_negative(v):
    return None if v >= 0 else "must be non-negative"


def _at_least(n):
    return lambda v: None if v >= n else f"must be >= {n}"


def _one_of(*choices):
    return lambda v: None if v in choices else f"must be one of {', '.join(map(repr, choices))}"


def _u64(v):
    return None if 0 <= v < 2 ** 64 else "must be an unsigned 64-bit integer"


def _spin(v):
    return None if v > 0 and float(2 * v).is_integer() else "must be a positive half-integer"


def _formats(v):
    bad = [f for f in v if f not in ("csv", "json")]
    if bad or not v:
        return "must be a non-empty subset of ['csv', 'json']"
    return None


def _times(v):
    if any(not isinstance(t, (int, float)) or isinstance(t, bool) or t < 0 for t in v):
        return "must be a list of non-negative numbers"
    return None


SCHEMA: Dict[str, Dict[str, Field]] = {
    "run": {
        "seed": Field(int, 0, _u64),
    },
    "model": {
        "sites": Field(int, REQUIRED, _at_least(1)),
        "spin": Field(float, 0.5, _spin),
        "topology": Field(str, "chain", _one_of("chain", "ring", "explicit")),
        "J": Field(float, 1.0),
        "field": Field(float, 0.0),
        "energy": Field(str, MULTILINEAR, _one_of(MULTILINEAR, KRONECKER)),
        "terms": Field(list, None),
    },
    "thermal": {
        "T": Field(float, None, _positive),
        "beta": Field(float, None, _positive),
    },
    "anneal": {
        "family": Field(str, "SA", _one_of("SA", "EQA", "QA", "POLY")),
        "epsilon": Field(float, 0.01, _positive),
        "T_final": Field(float, None, _positive),
        "T_max_cap": Field(float, None, _positive),
        "gamma_0": Field(float, None, _positive),
        "gamma_final": Field(float, None, _positive),
        "c": Field(float, None, _positive),
        "refined": Field(bool, False),
        "matrix_element_bound": Field(float, None, _positive),
        "q": Field(float, 1.0, _non_negative),
        "p": Field(float, None, _positive),
        "compression": Field(float, 1.0, _positive),
        "tol": Field(float, 1e-8, _positive),
        "n_samples": Field(int, 500, _at_least(1)),
    },
    "pimc": {
        "slices": Field(int, 64, _at_least(2)),
        "beta_tilde": Field(float, 20.0, _positive),
        "sweeps": Field(int, 200000, _at_least(1)),
        "burn_in": Field(int, 2000, _non_negative),
        "chains": Field(int, 1, _at_least(1)),
        "workers": Field(int, 1, _at_least(1)),
        "field_includes_chi": Field(bool, False),
        "mode": Field(str, "fixed", _one_of("fixed", "annealed")),
        "order": Field(str, "shuffled", _one_of("shuffled", "raster")),
        "time_per_sweep": Field(float, None, _positive),
        "checkpoint_every": Field(int, 0, _non_negative),
    },
    "schedule": {
        "n_points": Field(int, 201, _at_least(2)),
        "extra_times": Field(list, [], _times),
    },
    "output": {
        "formats": Field(list, ["csv", "json"], _formats),
        "precision": Field(int, 17, lambda v: None if 1 <= v <= 17 else "must be in 1..17"),
    },
}


def _coerce(path: str, spec: Field, value: Any) -> Any:
    kind = spec.kind
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {type(value).__name__}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{path}: must be finite")
    elif kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {type(value).__name__}")
    elif not isinstance(value, kind):
        raise ConfigError(f"{path}: expected {kind.__name__}, got {type(value).__name__}")
    if spec.check is not None:
        msg = spec.check(value)
        if msg:
            raise ConfigError(f"{path}: {msg} (got {value!r})")
    return value


def _parse_terms(raw: list) -> Tuple[CouplingTerm, ...]:
    terms = []
    for n, item in enumerate(raw):
        path = f"model.terms[{n}]"
        if not isinstance(item, dict):
            raise ConfigError(f"{path}: expected an inline table {{sites=[...], coeff=...}}")
        extra = set(item) - {"sites", "coeff"}
        if extra:
            raise ConfigError(f"{path}: unknown key(s) {sorted(extra)}")
        if "sites" not in item or "coeff" not in item:
            raise ConfigError(f"{path}: needs both 'sites' and 'coeff'")
        sites = item["sites"]
        if not isinstance(sites, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in sites):
            raise ConfigError(f"{path}.sites: expected a list of integers")
        coeff = _coerce(f"{path}.coeff", Field(float), item["coeff"])
        terms.append((tuple(sorted(sites)), coeff, path))
    out = []
    for sites, coeff, path in terms:
        if len(set(sites)) != len(sites) or not sites:
            raise ConfigError(f"{path}.sites: sites must be distinct and non-empty")
        out.append(CouplingTerm(sites, coeff))
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration; ``sections`` includes every default."""

    sections: Mapping[str, Mapping[str, Any]]

    def __getitem__(self, section: str) -> Mapping[str, Any]:
        return self.sections[section]

    @property
    def seed(self) -> int:
        return self.sections["run"]["seed"]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        _coerce("run.seed", SCHEMA["run"]["seed"], seed)
        secs = {k: dict(v) for k, v in self.sections.items()}
        secs["run"]["seed"] = seed
        return ExperimentConfig(secs)

    def model(self) -> ClassicalModel:
        m = self.sections["model"]
        if m["topology"] == "explicit":
            return ClassicalModel(m["sites"], _parse_terms(m["terms"]), m["spin"], m["energy"])
        return ClassicalModel.chain(m["sites"], m["J"], periodic=m["topology"] == "ring",
                                    spin=m["spin"], energy_kind=m["energy"], field=m["field"])

    def point(self) -> Optional[ThermalPoint]:
        t = self.sections["thermal"]
        if t.get("beta") is not None:
            return ThermalPoint(t["beta"])
        if t.get("T") is not None:
            return ThermalPoint.from_temperature(t["T"])
        return None

    def require_point(self) -> ThermalPoint:
        pt = self.point()
        if pt is None:
            raise ConfigError("thermal: this subcommand needs T or beta")
        return pt

    def echo(self) -> str:
        """Canonical TOML (sorted keys, defaults included, unset optionals omitted)."""
        clean = {s: {k: v for k, v in sorted(vals.items()) if v is not None}
                 for s, vals in sorted(self.sections.items())}
        return tomli_w.dumps(clean)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    sections: Dict[str, Dict[str, Any]] = {}
    for name, fields in SCHEMA.items():
        given = raw.get(name, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{name}: expected a table")
        extra = set(given) - set(fields)
        if extra:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(extra))}")
        vals = {}
        for key, spec in fields.items():
            path = f"{name}.{key}"
            if key in given:
                vals[key] = _coerce(path, spec, given[key])
            elif spec.default is REQUIRED:
                raise ConfigError(f"{path}: required key missing")
            else:
                vals[key] = list(spec.default) if isinstance(spec.default, list) else spec.default
        sections[name] = vals

    thermal = sections["thermal"]
    if thermal["T"] is not None and thermal["beta"] is not None:
        raise ConfigError("thermal.T and thermal.beta are mutually exclusive; give one")
    model = sections["model"]
    if model["topology"] == "explicit":
        if model["terms"] is None:
            raise ConfigError("model.terms: required for topology 'explicit'")
    elif model["terms"] is not None:
        raise ConfigError("model.terms: only allowed with topology 'explicit'")
    cfg = ExperimentConfig(sections)
    try:
        cfg.model()
    except QGibbsError as exc:
        raise ConfigError(f"model: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return parse_config(data.decode("utf-8"))
    except UnicodeDecodeError:
        raise ConfigError(f"{path}: not valid UTF-8") from None
