"""INI experiment files: fleet, field, solver, stability, mission and bench sections."""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .density import DensityParams
from .lti import ContractError
from .swarm import BACKENDS, SwarmConfig


class ConfigError(ValueError):
    """Malformed experiment file; the message carries ``path:line:`` when known."""


@dataclass
class BenchConfig:
    horizons: tuple = (10, 20, 30, 40, 50, 60)
    reps: int = 50
    backends: tuple = ("full_kkt", "condensed")
    model: str = "quadrotor8"
    seed: int = 0


@dataclass
class Experiment:
    swarm: SwarmConfig
    bench: BenchConfig = field(default_factory=BenchConfig)


# section -> key -> (target, parser); target names a SwarmConfig/DensityParams/BenchConfig field
_floats = lambda s: tuple(float(v) for v in s.split())
_ints = lambda s: tuple(int(v) for v in s.split())
_words = lambda s: tuple(s.split())

_SCHEMA = {
    "fleet": {"n_agents": ("n_agents", int), "model": ("model", str), "dt": ("dt", float),
              "comm_range": ("comm_range", float), "domain": ("domain", _floats)},
    "field": {"n_sp": ("n_sp", int), "seed": ("field_seed", int)},
    "density": {"sense_range": ("d.sense_range", float), "eta": ("d.eta", float),
                "sigma_c": ("d.sigma_c", float), "r_c": ("d.r_c", float), "k_min": ("d.k_min", int)},
    "solver": {"backend": ("solver_backend", str), "horizon": ("horizon", int),
               "r_weight": ("r_weight", float), "q_derivative": ("q_derivative", float),
               "u_bound": ("u_bound", float)},
    "stability": {"contraction": ("contraction", lambda s: None if s.strip() == "auto" else float(s)),
                  "rho": ("rho", float)},
    "mission": {"coverage_target": ("coverage_target", float), "max_steps": ("max_steps", int),
                "seed": ("seed", int), "exchange_every": ("exchange_every", int)},
    "bench": {"horizons": ("b.horizons", _ints), "reps": ("b.reps", int),
              "backends": ("b.backends", _words), "model": ("b.model", str), "seed": ("b.seed", int)},
}
_GMM = {"mean": _floats, "cov": _floats, "weight": float}


def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number, for diagnostics."""
    where, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = i
        elif section and s and s[0] not in "#;":
            key = re.split(r"[=:]", s, 1)[0].strip().lower()
            where.setdefault((section, key), i)
    return where


def parse_config(text: str, source: str = "<config>") -> Experiment:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        if lineno is None and getattr(exc, "errors", None):
            lineno = exc.errors[0][0]
        prefix = f"{source}:{lineno}: " if lineno else f"{source}: "
        raise ConfigError(prefix + str(exc).splitlines()[0]) from exc
    where = _line_index(text)

    def fail(section, key, msg):
        line = where.get((section, key)) or where.get((section, None))
        raise ConfigError(f"{source}:{line}: [{section}] {key or ''}: {msg}".replace(" : ", ": "))

    swarm, dens, bench = {}, {}, {}
    gmm = []
    field_seed = None
    for section in parser.sections():
        if section.startswith("gmm."):
            comp = {}
            for key, raw in parser.items(section):
                if key not in _GMM:
                    fail(section, key, f"unknown key; valid: {', '.join(_GMM)}")
                try:
                    comp[key] = _GMM[key](raw)
                except ValueError:
                    fail(section, key, f"cannot parse {raw!r}")
            missing = set(_GMM) - set(comp)
            if missing:
                fail(section, None, f"missing {', '.join(sorted(missing))}")
            if len(comp["mean"]) != 2 or len(comp["cov"]) != 4:
                fail(section, "cov" if len(comp["mean"]) == 2 else "mean",
                     "mean needs 2 numbers and cov 4 (row-major 2x2)")
            c = comp["cov"]
            gmm.append((section, (comp["mean"], ((c[0], c[1]), (c[2], c[3])), comp["weight"])))
            continue
        if section not in _SCHEMA:
            fail(section, None, f"unknown section; valid: {', '.join(_SCHEMA)}, gmm.<name>")
        for key, raw in parser.items(section):
            spec = _SCHEMA[section].get(key)
            if spec is None:
                fail(section, key, f"unknown key; valid: {', '.join(_SCHEMA[section])}")
            target, conv = spec
            try:
                value = conv(raw)
            except ValueError:
                fail(section, key, f"cannot parse {raw!r}")
            if target == "domain":
                if len(value) != 4:
                    fail(section, key, "domain needs 4 numbers: xmin ymin xmax ymax")
                swarm["lo"], swarm["hi"] = value[:2], value[2:]
            elif target == "field_seed":
                field_seed = value
            elif target.startswith("d."):
                dens[target[2:]] = value
            elif target.startswith("b."):
                bench[target[2:]] = value
            else:
                swarm[target] = value

    if gmm:
        gmm.sort(key=lambda item: item[0])
        swarm["gmm"] = tuple(c for _, c in gmm)
    base = SwarmConfig()
    swarm["density"] = DensityParams(**{**base.density.__dict__, **dens})
    cfg = SwarmConfig(**swarm, field_seed=field_seed)
    try:
        cfg.validate()
    except ContractError as exc:
        section, key = _key_for(str(exc))
        fail(section, key, str(exc))
    if gmm and abs(sum(c[2] for c in cfg.gmm) - 1.0) > 1e-9:
        fail(gmm[0][0], "weight", "mixture weights must sum to 1")
    b = BenchConfig(**bench)
    if b.reps < 1 or not b.horizons or any(T < 1 for T in b.horizons):
        fail("bench", "reps" if b.reps < 1 else "horizons", "need reps >= 1 and positive horizons")
    for name in b.backends:
        if name not in BACKENDS:
            fail("bench", "backends", f"unknown backend {name!r}; valid: {', '.join(BACKENDS)}")
    return Experiment(cfg, b)


def _key_for(message: str):
    """Best guess at the offending entry from a validation message."""
    for section, keys in _SCHEMA.items():
        for key, (target, _) in keys.items():
            if re.search(rf"\b{re.escape(target.split('.')[-1])}\b", message):
                return section, key
    return "mission", None


def load_config(path) -> Experiment:
    """Read an experiment file; the name ``default`` selects the bundled setup."""
    if str(path) == "default":
        return default_experiment()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def default_config_text() -> str:
    return resources.files("d2oc").joinpath("default.cfg").read_text()


def default_experiment() -> Experiment:
    return parse_config(default_config_text(), "default.cfg")
