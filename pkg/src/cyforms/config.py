"""TOML run configuration with strict validation.

Example::

    n = 2
    sizes = 16            # or one entry per axis
    seed = 7

    [[density.terms]]
    amplitude = 0.2
    wavevector = [1, 0, 0, 1]
    phase = 0.0

    [ma]
    tol_residual = 1e-10

    [pipeline]
    outer_tol = 1e-7
    moser_steps = 64

Unknown keys are rejected.  Structural problems (bad TOML, malformed
density terms) raise :class:`ParseError`; out-of-range values raise
:class:`ValidationError`.  Both carry the line number when it can be found.
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .errors import ParseError, ValidationError
from .monge_ampere import MASolveConfig
from .pipeline import NewEqSolveConfig

SUBCOMMANDS = ("selftest", "solve-ma", "solve-new", "verify", "moser")

_TOP_KEYS = {"subcommand", "n", "sizes", "seed", "density", "ma", "pipeline", "moser", "output", "selftest"}
_MA_KEYS = {f.name for f in dataclasses.fields(MASolveConfig)}
_PIPE_KEYS = {f.name for f in dataclasses.fields(NewEqSolveConfig)} - {"ma"}
_SECTION_KEYS = {
    "density": {"terms", "reference"},
    "ma": _MA_KEYS,
    "pipeline": _PIPE_KEYS,
    "moser": {"steps", "method", "direction"},
    "output": {"out", "dump", "dump_phi"},
    "selftest": {"level"},
}
_TERM_KEYS = {"amplitude", "wavevector", "phase"}


@dataclass
class DensityTerm:
    amplitude: float
    wavevector: tuple
    phase: float = 0.0


@dataclass
class RunConfig:
    subcommand: str = None
    n: int = 2
    sizes: tuple = None
    seed: int = 0
    terms: list = field(default_factory=list)
    ma: MASolveConfig = field(default_factory=MASolveConfig)
    pipeline: NewEqSolveConfig = field(default_factory=NewEqSolveConfig)
    moser_steps: int = 64
    moser_method: str = "transport"
    moser_direction: str = "forward"
    out: str = None
    dump: list = field(default_factory=list)
    dump_phi: str = None
    selftest_level: str = "quick"

    def echo(self):
        """Plain dictionary of the effective configuration."""
        return {
            "subcommand": self.subcommand,
            "n": self.n,
            "sizes": list(self.sizes),
            "seed": self.seed,
            "density": [dataclasses.asdict(t) for t in self.terms],
            "ma": dataclasses.asdict(self.ma),
            "pipeline": {k: v for k, v in dataclasses.asdict(self.pipeline).items() if k != "ma"},
            "moser": {"steps": self.moser_steps, "method": self.moser_method, "direction": self.moser_direction},
        }

    def density_field(self, grid):
        from .torus_calculus import trig_field

        return trig_field(grid, [(t.amplitude, t.wavevector, t.phase) for t in self.terms])


def _line_of(text, key, section=None):
    """Best-effort 1-based line number of ``key`` (inside ``[section]`` when given)."""
    lines = text.splitlines()
    in_section = section is None
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    head = re.compile(r"^\s*\[\[?\s*([A-Za-z0-9_.\-]+)\s*\]\]?")
    for i, line in enumerate(lines, 1):
        h = head.match(line)
        if h:
            name = h.group(1)
            in_section = section is None or name == section or name.startswith(section + ".")
            if name == key or (section is not None and name == f"{section}.{key}"):
                return i
            continue
        if in_section and pat.match(line):
            return i
    return None


def _where(text, key, section=None):
    ln = _line_of(text, key, section)
    return f" (line {ln})" if ln else ""


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def parse_config(text, subcommand=None):
    """Parse and validate TOML ``text`` into a :class:`RunConfig`."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"invalid TOML: {exc}") from exc
    for key in raw:
        if key not in _TOP_KEYS:
            raise ValidationError(f"unknown key {key!r}{_where(text, key)}")
    for sec, allowed in _SECTION_KEYS.items():
        if sec in raw:
            if not isinstance(raw[sec], dict):
                raise ParseError(f"{sec!r} must be a table{_where(text, sec)}")
            for key in raw[sec]:
                if key not in allowed:
                    raise ValidationError(f"unknown key {sec}.{key}{_where(text, key, sec)}")

    cfg = RunConfig()
    cfg.subcommand = subcommand or raw.get("subcommand")
    if cfg.subcommand is not None and cfg.subcommand not in SUBCOMMANDS:
        raise ValidationError(f"unknown subcommand {cfg.subcommand!r}{_where(text, 'subcommand')}")

    n = raw.get("n", 2)
    if not _is_int(n):
        raise ParseError(f"n must be an integer{_where(text, 'n')}")
    if n not in (2, 3):
        raise ValidationError(f"n = {n}: the equation is only solved for complex dimension 2 or 3{_where(text, 'n')}")
    cfg.n = n
    m = 2 * n
    sizes = raw.get("sizes", 16 if n == 2 else 8)
    if _is_int(sizes):
        sizes = [sizes] * m
    if not isinstance(sizes, list) or not all(_is_int(s) for s in sizes):
        raise ParseError(f"sizes must be an integer or a list of integers{_where(text, 'sizes')}")
    if len(sizes) != m:
        raise ValidationError(f"sizes needs {m} entries for n = {n}{_where(text, 'sizes')}")
    for s in sizes:
        if s < 8 or s % 2:
            raise ValidationError(f"grid size {s} must be even and >= 8{_where(text, 'sizes')}")
    cfg.sizes = tuple(sizes)
    seed = raw.get("seed", 0)
    if not _is_int(seed) or not 0 <= seed < 2 ** 64:
        raise ValidationError(f"seed must be an unsigned 64-bit integer{_where(text, 'seed')}")
    cfg.seed = seed

    dens = raw.get("density", {})
    terms = dens.get("terms", [])
    if not isinstance(terms, list):
        raise ParseError(f"density.terms must be an array of tables{_where(text, 'terms', 'density')}")
    for i, t in enumerate(terms):
        loc = _where(text, "terms", "density")
        if not isinstance(t, dict):
            raise ParseError(f"density term {i} is not a table{loc}")
        extra = set(t) - _TERM_KEYS
        if extra:
            raise ParseError(f"density term {i} has unknown fields {sorted(extra)}{loc}")
        if "amplitude" not in t or "wavevector" not in t:
            raise ParseError(f"density term {i} needs amplitude and wavevector{loc}")
        amp, wv, ph = t["amplitude"], t["wavevector"], t.get("phase", 0.0)
        if not _is_num(amp) or not _is_num(ph):
            raise ParseError(f"density term {i}: amplitude and phase must be numbers{loc}")
        if not isinstance(wv, list) or not all(_is_int(k) for k in wv):
            raise ParseError(f"density term {i}: wavevector must be a list of integers{loc}")
        if len(wv) != m:
            raise ParseError(f"density term {i}: wavevector needs {m} entries{loc}")
        for a, k in enumerate(wv):
            if 2 * abs(k) >= sizes[a]:
                raise ValidationError(f"density term {i}: wavenumber {k} is not resolved by size {sizes[a]}{loc}")
        cfg.terms.append(DensityTerm(float(amp), tuple(wv), float(ph)))

    try:
        cfg.ma = MASolveConfig(**raw.get("ma", {}))
        pipe = dict(raw.get("pipeline", {}))
        pipe_ma = dict(raw.get("ma", {}))
        pipe_ma.setdefault("dealias", "band")
        cfg.pipeline = NewEqSolveConfig(ma=MASolveConfig(**pipe_ma), **pipe)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"solver settings: {exc}") from exc

    mos = raw.get("moser", {})
    steps = mos.get("steps", 64)
    if not _is_int(steps) or steps < 16:
        raise ValidationError(f"moser.steps must be an integer >= 16{_where(text, 'steps', 'moser')}")
    cfg.moser_steps = steps
    cfg.moser_method = mos.get("method", "transport")
    if cfg.moser_method not in ("transport", "particles"):
        raise ValidationError(f"moser.method must be transport or particles{_where(text, 'method', 'moser')}")
    cfg.moser_direction = mos.get("direction", "forward")
    if cfg.moser_direction not in ("forward", "inverse"):
        raise ValidationError(f"moser.direction must be forward or inverse{_where(text, 'direction', 'moser')}")

    out = raw.get("output", {})
    cfg.out = out.get("out")
    dump = out.get("dump", [])
    cfg.dump = [dump] if isinstance(dump, str) else list(dump)
    cfg.dump_phi = out.get("dump_phi")
    level = raw.get("selftest", {}).get("level", "quick")
    if level not in ("quick", "full"):
        raise ValidationError(f"selftest.level must be quick or full{_where(text, 'level', 'selftest')}")
    cfg.selftest_level = level
    return cfg


def load_config(path, subcommand=None):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path} is not UTF-8") from exc
    return parse_config(text, subcommand)
