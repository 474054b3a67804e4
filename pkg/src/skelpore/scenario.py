"""Scenario files: versioned INI text describing a simulation run.

Example::

    [scenario]
    version = 1
    seed = 42

    [diffusion]
    D_c = 6.73e-6
    D_units = cm2/s        ; or um2/h
    dt = 0.24              ; hours
    duration = 120         ; hours
    alpha = 0.35           ; or "calibrate"
    output_interval = 2.4  ; hours

    [profile]
    axis = z
    n_planes = 50
    output = false

    [initial]
    dom = uniform 289.5            ; ug C
    biomass = random-spots 1000 0.18
    pom = none
    som = none

    [biology]
    enabled = true
    mu_max = 9.6                   ; per day
    ...

Placement directives are ``none``, ``uniform M``, ``planes P0,P1,... M``,
``regions R1,R2,... M`` (1-based ids), ``random-spots N M`` and
``largest-regions N M``, with M the total mass in ug C.

Every validation error names the offending line.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .biology import BioParams, SimState, place_largest, place_random_spots, place_regions, place_uniform
from .errors import InputOutputError, ScenarioError
from .simulate import DEFAULT_ALPHA, DiffusionParams, PlaneScenario, cm2_per_s_to_um2_per_h, plane_initial_field

SCENARIO_VERSION = 1
PLACEMENT_KINDS = ("none", "uniform", "planes", "regions", "random-spots", "largest-regions")
POOL_KEYS = ("dom", "biomass", "pom", "som")
D_UNITS = ("cm2/s", "um2/h")
TIME_UNITS = {"h": 1.0, "d": 24.0}


@dataclass(frozen=True)
class Placement:
    kind: str = "none"
    mass: float = 0.0
    ids: tuple[int, ...] = ()  # planes or region ids
    count: int = 0  # spots

    def describe(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "uniform":
            return f"uniform {self.mass!r}"
        if self.kind in ("planes", "regions"):
            return f"{self.kind} {','.join(map(str, self.ids))} {self.mass!r}"
        return f"{self.kind} {self.count} {self.mass!r}"


@dataclass(frozen=True)
class Scenario:
    D_c: float  # um^2/h
    dt: float  # h
    duration: float  # h
    alpha: float | None = DEFAULT_ALPHA  # None means calibrate first
    output_interval: float | None = None
    seed: int = 0
    axis: str = "z"
    n_planes: int = 50
    profile_output: bool = False
    placements: dict = field(default_factory=dict)
    biology: BioParams = field(default_factory=BioParams)
    biology_enabled: bool = False
    version: int = SCENARIO_VERSION

    @property
    def calibrate(self) -> bool:
        return self.alpha is None

    def placement(self, pool: str) -> Placement:
        return self.placements.get(pool, Placement())

    def diffusion(self, alpha: float | None = None) -> DiffusionParams:
        a = self.alpha if alpha is None else alpha
        if a is None:
            raise ScenarioError("alpha is 'calibrate'; run the calibration first")
        return DiffusionParams(self.D_c, self.dt, a)

    def plane_scenario(self) -> PlaneScenario:
        dom = self.placement("dom")
        if dom.kind != "planes":
            raise ScenarioError("calibration needs the DOM placement to be 'planes P0,P1,... M'")
        return PlaneScenario(self.D_c, self.dt, self.duration, self.axis, self.n_planes, dom.ids, dom.mass)

    def as_dict(self) -> dict:
        """Plain, JSON-ready view used for manifests."""
        out = {
            "version": self.version,
            "D_c_um2_per_h": self.D_c,
            "dt_h": self.dt,
            "duration_h": self.duration,
            "alpha": "calibrate" if self.alpha is None else self.alpha,
            "output_interval_h": self.output_interval,
            "seed": self.seed,
            "axis": self.axis,
            "n_planes": self.n_planes,
            "profile_output": self.profile_output,
            "placements": {k: v.describe() for k, v in sorted(self.placements.items())},
            "biology_enabled": self.biology_enabled,
            "biology": asdict(self.biology),
        }
        return out


class _Reader:
    """configparser wrapper that remembers the line of every key."""

    def __init__(self, text: str, source: str):
        self.source = source
        self.cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        self.cp.optionxform = str
        try:
            self.cp.read_string(text, source=source)
        except configparser.MissingSectionHeaderError as exc:
            raise ScenarioError(f"{source}: content before the first [section]", exc.lineno) from None
        except configparser.ParsingError as exc:
            line = exc.errors[0][0] if exc.errors else None
            raise ScenarioError(f"{source}: cannot parse {exc.errors[0][1].strip()!r}", line) from None
        except configparser.DuplicateOptionError as exc:
            raise ScenarioError(f"{source}: duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
        except configparser.DuplicateSectionError as exc:
            raise ScenarioError(f"{source}: duplicate section [{exc.section}]", exc.lineno) from None
        self.lines: dict[tuple[str, str], int] = {}
        self.section_lines: dict[str, int] = {}
        section = None
        for no, raw in enumerate(text.splitlines(), start=1):
            s = raw.strip()
            m = re.match(r"^\[([^\]]+)\]", s)
            if m:
                section = m.group(1).strip()
                self.section_lines[section] = no
                continue
            m = re.match(r"^([^=:;#\s][^=:]*?)\s*[=:]", s)
            if m and section is not None:
                self.lines[(section, m.group(1).strip())] = no
        self.used: set[tuple[str, str]] = set()

    def line(self, section, key=None):
        if key is None:
            return self.section_lines.get(section)
        return self.lines.get((section, key))

    def has(self, section, key) -> bool:
        return self.cp.has_option(section, key)

    def raw(self, section, key, default=None, required=False):
        if not self.cp.has_option(section, key):
            if required:
                raise ScenarioError(f"{self.source}: missing required key {key!r} in [{section}]",
                                    self.line(section))
            return default
        self.used.add((section, key))
        return self.cp.get(section, key).strip()

    def fail(self, section, key, msg):
        raise ScenarioError(f"{self.source}: [{section}] {key}: {msg}", self.line(section, key))

    def number(self, section, key, default=None, required=False, positive=False, nonneg=False):
        text = self.raw(section, key, None, required)
        if text is None:
            return default
        try:
            value = float(text)
        except ValueError:
            self.fail(section, key, f"expected a number, got {text!r}")
        if not np.isfinite(value):
            self.fail(section, key, "must be finite")
        if positive and not value > 0:
            self.fail(section, key, f"must be > 0, got {text}")
        if nonneg and value < 0:
            self.fail(section, key, f"must be >= 0, got {text}")
        return value

    def integer(self, section, key, default=None, minimum=None):
        text = self.raw(section, key)
        if text is None:
            return default
        try:
            value = int(text)
        except ValueError:
            self.fail(section, key, f"expected an integer, got {text!r}")
        if minimum is not None and value < minimum:
            self.fail(section, key, f"must be >= {minimum}, got {value}")
        return value

    def boolean(self, section, key, default=False):
        text = self.raw(section, key)
        if text is None:
            return default
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        self.fail(section, key, f"expected true or false, got {text!r}")


def _int_list(reader, section, key, text):
    try:
        vals = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        reader.fail(section, key, f"expected comma-separated integers, got {text!r}")
    if not vals:
        reader.fail(section, key, "empty id list")
    return vals


def _placement(reader: _Reader, key: str) -> Placement:
    text = reader.raw("initial", key)
    if text is None:
        return Placement()
    parts = text.split()
    kind = parts[0].lower()
    if kind not in PLACEMENT_KINDS:
        reader.fail("initial", key, f"unknown placement {parts[0]!r}; choose from {', '.join(PLACEMENT_KINDS)}")
    if kind == "none":
        if len(parts) != 1:
            reader.fail("initial", key, "'none' takes no arguments")
        return Placement()
    want = 2 if kind == "uniform" else 3
    if len(parts) != want:
        reader.fail("initial", key, f"'{kind}' expects {want - 1} argument(s), got {len(parts) - 1}")
    try:
        mass = float(parts[-1])
    except ValueError:
        reader.fail("initial", key, f"mass must be a number, got {parts[-1]!r}")
    if not mass >= 0 or not np.isfinite(mass):
        reader.fail("initial", key, f"mass must be finite and >= 0, got {parts[-1]}")
    if kind == "uniform":
        return Placement(kind, mass)
    if kind in ("planes", "regions"):
        ids = _int_list(reader, "initial", key, parts[1])
        lowest = 0 if kind == "planes" else 1
        if min(ids) < lowest:
            reader.fail("initial", key, f"{kind} ids start at {lowest}")
        return Placement(kind, mass, ids=ids)
    try:
        count = int(parts[1])
    except ValueError:
        reader.fail("initial", key, f"spot count must be an integer, got {parts[1]!r}")
    if count < 1:
        reader.fail("initial", key, "spot count must be >= 1")
    return Placement(kind, mass, count=count)


_KNOWN = {
    "scenario": {"version", "seed"},
    "diffusion": {"D_c", "D_units", "dt", "duration", "alpha", "output_interval", "time_units"},
    "profile": {"axis", "n_planes", "output"},
    "initial": set(POOL_KEYS),
    "biology": {"enabled"} | {f.name for f in fields(BioParams)},
}


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    r = _Reader(text, source)
    for section in r.cp.sections():
        if section not in _KNOWN:
            raise ScenarioError(f"{source}: unknown section [{section}]", r.line(section))
        for key in r.cp.options(section):
            if key not in _KNOWN[section]:
                r.fail(section, key, "unknown key")
    if not r.cp.has_section("scenario"):
        raise ScenarioError(f"{source}: missing [scenario] section")
    version = r.integer("scenario", "version", None)
    if version is None:
        raise ScenarioError(f"{source}: missing required key 'version' in [scenario]", r.line("scenario"))
    if version != SCENARIO_VERSION:
        r.fail("scenario", "version", f"unsupported version {version}; this build reads version {SCENARIO_VERSION}")
    seed = r.integer("scenario", "seed", 0, minimum=0)

    if not r.cp.has_section("diffusion"):
        raise ScenarioError(f"{source}: missing [diffusion] section")
    units = r.raw("diffusion", "D_units", "um2/h")
    if units not in D_UNITS:
        r.fail("diffusion", "D_units", f"expected one of {', '.join(D_UNITS)}, got {units!r}")
    d_c = r.number("diffusion", "D_c", required=True, positive=True)
    if units == "cm2/s":
        d_c = cm2_per_s_to_um2_per_h(d_c)
    tu = r.raw("diffusion", "time_units", "h")
    if tu not in TIME_UNITS:
        r.fail("diffusion", "time_units", f"expected h or d, got {tu!r}")
    scale = TIME_UNITS[tu]
    dt = r.number("diffusion", "dt", required=True, positive=True) * scale
    duration = r.number("diffusion", "duration", required=True, positive=True) * scale
    if duration < dt:
        r.fail("diffusion", "duration", "shorter than one step")
    interval = r.number("diffusion", "output_interval", None, positive=True)
    interval = None if interval is None else interval * scale
    alpha_text = r.raw("diffusion", "alpha", None)
    if alpha_text is None:
        alpha = DEFAULT_ALPHA
    elif alpha_text.lower() == "calibrate":
        alpha = None
    else:
        alpha = r.number("diffusion", "alpha")
        if not 0 <= alpha <= 1:
            r.fail("diffusion", "alpha", f"must be in [0, 1] or 'calibrate', got {alpha_text}")

    axis = (r.raw("profile", "axis", "z") or "z").lower()
    if axis not in ("x", "y", "z"):
        r.fail("profile", "axis", f"expected x, y or z, got {axis!r}")
    n_planes = r.integer("profile", "n_planes", 50, minimum=1)
    profile_output = r.boolean("profile", "output", False)

    placements = {k: _placement(r, k) for k in POOL_KEYS if r.has("initial", k)}
    for key, pl in placements.items():
        if pl.kind == "planes" and max(pl.ids) >= n_planes:
            r.fail("initial", key, f"plane {max(pl.ids)} outside 0..{n_planes - 1}")

    enabled = r.boolean("biology", "enabled", False)
    kwargs = {}
    for f in fields(BioParams):
        value = r.number("biology", f.name, None)
        if value is not None:
            kwargs[f.name] = value
    try:
        bio = BioParams(**kwargs)
    except ValueError as exc:
        bad = next((k for k in kwargs if k in str(exc)), None)
        raise ScenarioError(f"{source}: [biology] {exc}", r.line("biology", bad) if bad else r.line("biology")) from None

    return Scenario(
        D_c=d_c, dt=dt, duration=duration, alpha=alpha, output_interval=interval, seed=seed,
        axis=axis, n_planes=n_planes, profile_output=profile_output, placements=placements,
        biology=bio, biology_enabled=enabled, version=version,
    )


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            text = fh.read()
    except FileNotFoundError:
        raise InputOutputError(f"scenario file not found: {path}") from None
    return parse_scenario(text, str(path))


def default_scenario_text(biology: bool = True) -> str:
    """A ready-to-edit scenario with the standard biological parameters filled in."""
    b = BioParams()
    spots = "biomass = random-spots 1000 0.18\n" if biology else ""
    bio_lines = "\n".join(f"{f.name} = {getattr(b, f.name)!r}" for f in fields(BioParams))
    return (
        "[scenario]\n"
        f"version = {SCENARIO_VERSION}\n"
        "seed = 42\n\n"
        "[diffusion]\n"
        "D_c = 6.73e-6\n"
        "D_units = cm2/s\n"
        "dt = 0.24          ; hours\n"
        "duration = 120     ; hours\n"
        f"alpha = {DEFAULT_ALPHA}\n"
        "output_interval = 2.4\n\n"
        "[profile]\n"
        "axis = z\n"
        "n_planes = 50\n"
        "output = false\n\n"
        "[initial]\n"
        "dom = uniform 289.5\n"
        f"{spots}\n"
        "[biology]\n"
        f"enabled = {'true' if biology else 'false'}\n"
        f"{bio_lines}\n"
    )


# ---------------------------------------------------------------------------
# Initial state
# ---------------------------------------------------------------------------


def _place(pl: Placement, pool: str, volume: np.ndarray, partition, scenario: Scenario, seed_offset: int):
    n = volume.size
    if pl.kind == "none":
        return np.zeros(n)
    if pl.kind == "uniform":
        return place_uniform(volume, pl.mass)
    if pl.kind == "regions":
        return place_regions(n, pl.ids, pl.mass)
    if pl.kind == "random-spots":
        return place_random_spots(n, pl.count, pl.mass, scenario.seed + seed_offset)
    if pl.kind == "largest-regions":
        return place_largest(volume, pl.count, pl.mass)
    if pl.kind == "planes":
        if partition is None:
            raise ScenarioError(f"{pool}: plane placement needs the label image")
        c = plane_initial_field(partition, scenario.axis, scenario.n_planes, pl.ids, pl.mass)
        return c * volume
    raise ScenarioError(f"unknown placement {pl.kind!r}")


def initial_state(scenario: Scenario, volume: np.ndarray, partition=None) -> SimState:
    """Pools (ug C per node) from the scenario's placement directives."""
    volume = np.asarray(volume, dtype=float)
    pools = {
        pool: _place(scenario.placement(pool), pool, volume, partition, scenario, offset)
        for offset, pool in enumerate(POOL_KEYS)
    }
    return SimState(dom=pools["dom"], som=pools["som"], pom=pools["pom"], bio=pools["biomass"])
