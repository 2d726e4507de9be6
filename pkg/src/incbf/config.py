"""Scenario configuration: dataclasses, the flat ``key = value`` format and presets.

File format: one ``section.key = value`` per line, ``#`` starts a comment,
blank lines are ignored. Sections are ``plant``, ``filter``, ``sensor``,
``barrier.N``, ``controller``, ``limits``, ``timing``, ``reference`` and
``run``. Unknown keys are errors; missing keys keep their defaults.

For the pitch plant every angle-valued key is in degrees (deg, deg/s,
deg/s^2); they are converted to radians on load.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import ConfigError

DEG = math.pi / 180.0

PLANT_KINDS = ("siso", "pitch")
FILTER_KINDS = ("none", "standard_cbf", "icbf", "ricbf", "mricbf")
BARRIER_KINDS = ("upper", "lower", "ball")
REFERENCE_KINDS = ("sine", "step", "constant")
MARGIN_FORMS = ("additive", "product")


@dataclass
class PlantConfig:
    kind: str = "siso"
    # siso
    a_p: float = -1.0
    b_p: float = 1.0
    c_p: float = 1.0
    lam: float = 0.6
    x0: float = 0.0
    # pitch
    iyy: float = 500.0
    qbar: float = 5e4
    s_ref: float = 1.0
    l_ref: float = 2.0
    v: float = 2000.0
    mach: float = 6.0
    alpha: float = 2.0 * DEG
    cm0_slope: float = -0.005
    cmq: float = -0.2
    bp: tuple[float, ...] = (-50.0, -50.0, 30.0, 30.0)
    mismatch: float = 0.0
    q0: float = 0.0


@dataclass
class FilterConfig:
    kind: str = "none"
    sigma_bar: float = 0.005
    eps: float = 0.1
    theta: float = 0.1
    kappa1: float | None = None
    kappa2: float | None = None
    kappa3: float | None = None
    kappa4: float | None = None
    margin_form: str = "additive"
    slack_weight: float = 1e6
    max_fp_iter: int = 10
    fp_tol: float = 1e-6
    grad_norm_sup: float | None = None

    def kappa(self) -> tuple[float, float, float, float]:
        return tuple(0.0 if k is None else k
                     for k in (self.kappa1, self.kappa2, self.kappa3, self.kappa4))


@dataclass
class SensorConfig:
    gamma: float = 0.1
    xi: float = 1.0
    w_gamma: float | None = None
    w_phase: float = 0.0
    noise: float = 0.0
    lpf: bool = False
    cutoff: float = 2.0

    def derivative_amplitude(self) -> float:
        return self.gamma if self.w_gamma is None else self.w_gamma


@dataclass
class BarrierConfig:
    kind: str = "upper"
    limit: float = 0.5
    gamma: float = 1.0


@dataclass
class ControllerConfig:
    q: float = 3.0
    r: float = 0.2
    k_y: float | None = None
    k_r: float | None = None
    rate_gain: float = 5.0


@dataclass
class LimitsConfig:
    u_min: float = -0.8
    u_max: float = 0.8


@dataclass
class TimingConfig:
    dt: float = 1e-3
    t_end: float = 30.0
    transient: float = 5.0


@dataclass
class ReferenceConfig:
    kind: str = "sine"
    amplitude: float = 0.7
    omega: float = 0.2
    value: float = 0.0
    t_step: float = 0.0


@dataclass
class RunConfig:
    strict: bool = False
    seed: int = 0


def _default_barriers() -> list[BarrierConfig]:
    return [BarrierConfig("upper", 0.5, 1.0), BarrierConfig("lower", -0.5, 1.0)]


@dataclass
class ScenarioConfig:
    name: str = "custom"
    plant: PlantConfig = field(default_factory=PlantConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    barriers: list[BarrierConfig] = field(default_factory=_default_barriers)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> "ScenarioConfig":
        validate(self)
        return self


_SECTIONS = {
    "plant": PlantConfig,
    "filter": FilterConfig,
    "sensor": SensorConfig,
    "controller": ControllerConfig,
    "limits": LimitsConfig,
    "timing": TimingConfig,
    "reference": ReferenceConfig,
    "run": RunConfig,
}

# keys given in degrees when plant.kind = pitch
_ANGLE_KEYS = {
    "plant.alpha", "plant.q0",
    "filter.sigma_bar", "filter.eps", "filter.theta",
    "sensor.gamma", "sensor.w_gamma", "sensor.noise",
    "limits.u_min", "limits.u_max",
    "reference.amplitude", "reference.value",
    "barrier.limit",
}

_LINE = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*=\s*(.*?)\s*$")
_BARRIER_KEY = re.compile(r"^barrier\.(\d+)\.(\w+)$")


def _field_types(cls) -> dict[str, str]:
    return {f.name: str(f.type) for f in dataclasses.fields(cls)}


def _convert(raw: str, type_name: str, key: str):
    text = raw.strip()
    try:
        if "tuple" in type_name:
            return tuple(float(v) for v in text.replace(",", " ").split())
        if type_name.startswith("bool"):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if type_name.startswith("int"):
            return int(text)
        if type_name.startswith("float"):
            if "None" in type_name and text.lower() in ("none", ""):
                return None
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(f"value must be finite: {text!r}")
            return value
        if type_name.startswith("str"):
            return text
    except ValueError as exc:
        raise ConfigError(str(exc), key=key) from exc
    raise ConfigError(f"unsupported field type {type_name}", key=key)  # pragma: no cover


def parse_pairs(text: str) -> list[tuple[str, str, int]]:
    """Split config text into (key, raw value, line number) triples."""
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        m = _LINE.match(stripped)
        if m is None:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", line=lineno)
        pairs.append((m.group(1), m.group(2), lineno))
    return pairs


# public key -> dataclass attribute where the two differ (``lambda`` is reserved)
_ALIASES = {"plant.lambda": "plant.lam"}


def apply_pairs(cfg: ScenarioConfig, pairs: Iterable[tuple[str, str, int | None]],
                _present: set[str] | None = None) -> ScenarioConfig:
    """Apply raw key/value pairs on top of ``cfg`` (values still in file units)."""
    barriers: dict[int, dict[str, str]] = {}
    present = _present if _present is not None else set()
    for key, raw, lineno in pairs:
        where = {"line": lineno} if lineno is not None else {"key": key}
        if key == "name":
            cfg.name = raw.strip()
            continue
        m = _BARRIER_KEY.match(key)
        if m:
            idx, attr = int(m.group(1)), m.group(2)
            if attr not in _field_types(BarrierConfig):
                raise ConfigError(f"unknown key {key!r}", **where)
            if idx < 1:
                raise ConfigError("barrier numbering starts at 1", **where)
            barriers.setdefault(idx, {})[attr] = raw
            present.add(key)
            continue
        key = _ALIASES.get(key, key)
        section, _, attr = key.partition(".")
        cls = _SECTIONS.get(section)
        if cls is None or attr not in _field_types(cls):
            raise ConfigError(f"unknown key {key!r}", **where)
        try:
            value = _convert(raw, _field_types(cls)[attr], key)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], **where) from exc
        setattr(getattr(cfg, section), attr, value)
        present.add(key)
    if barriers:
        expected = list(range(1, max(barriers) + 1))
        if sorted(barriers) != expected:
            raise ConfigError(f"barrier indices must be contiguous from 1, got {sorted(barriers)}",
                              key="barrier")
        items = []
        for idx in expected:
            entry = BarrierConfig()
            for attr, raw in barriers[idx].items():
                key = f"barrier.{idx}.{attr}"
                setattr(entry, attr, _convert(raw, _field_types(BarrierConfig)[attr], key))
            items.append(entry)
        cfg.barriers = items
    return cfg


def _to_radians(cfg: ScenarioConfig, present: set[str]) -> None:
    for key in present:
        generic = "barrier.limit" if _BARRIER_KEY.match(key) and key.endswith(".limit") else key
        if generic not in _ANGLE_KEYS:
            continue
        if generic == "barrier.limit":
            idx = int(_BARRIER_KEY.match(key).group(1))
            cfg.barriers[idx - 1].limit *= DEG
            continue
        section, attr = key.split(".", 1)
        obj = getattr(cfg, section)
        value = getattr(obj, attr)
        if value is not None:
            setattr(obj, attr, value * DEG)


# defaults that replace the SISO ones when plant.kind = pitch (file units: degrees)
PITCH_DEFAULTS: dict[str, str] = {
    "barrier.1.kind": "upper", "barrier.1.limit": "10", "barrier.1.gamma": "1",
    "barrier.2.kind": "lower", "barrier.2.limit": "-10", "barrier.2.gamma": "1",
    "limits.u_min": "-30", "limits.u_max": "30",
    "sensor.gamma": "0", "filter.eps": "0", "filter.theta": "0", "filter.sigma_bar": "0.01",
    "reference.kind": "step", "reference.value": "5", "reference.t_step": "0.5",
    "timing.t_end": "10",
}


def build_config(layers: Iterable[Iterable[tuple[str, str, int | None]]]) -> ScenarioConfig:
    """Merge key/value layers (later layers win per key) and validate."""
    raw: dict[str, tuple[str, int | None]] = {}
    for layer in layers:
        for key, value, lineno in layer:
            raw.pop(key, None)
            raw[key] = (value, lineno)
    if raw.get("plant.kind", ("",))[0].strip() == "pitch":
        user_barriers = any(k.startswith("barrier.") for k in raw)
        defaults = {k: (v, None) for k, v in PITCH_DEFAULTS.items()
                    if k not in raw and not (user_barriers and k.startswith("barrier."))}
        raw = {**defaults, **raw}
    cfg = ScenarioConfig()
    present: set[str] = set()
    apply_pairs(cfg, [(k, v, line) for k, (v, line) in raw.items()], present)
    if cfg.plant.kind == "pitch":
        _to_radians(cfg, present)
    validate(cfg)
    return cfg


def parse_config(text: str, overrides: Mapping[str, str] | Iterable[str] = (),
                 preset: str | None = None) -> ScenarioConfig:
    """Parse a config file body, optionally on top of a preset, then overrides.

    Precedence: overrides > file > preset > defaults.
    """
    layers = []
    if preset is not None:
        layers.append(parse_pairs(preset_text(preset)))
    layers.append(parse_pairs(text))
    layers.append(parse_overrides(overrides))
    return build_config(layers)


def parse_overrides(overrides: Mapping[str, str] | Iterable[str]) -> list[tuple[str, str, None]]:
    if isinstance(overrides, Mapping):
        return [(k, str(v), None) for k, v in overrides.items()]
    out = []
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        out.append((key.strip(), value.strip(), None))
    return out


def validate(cfg: ScenarioConfig) -> None:
    p, f, s, t = cfg.plant, cfg.filter, cfg.sensor, cfg.timing
    if p.kind not in PLANT_KINDS:
        raise ConfigError(f"must be one of {PLANT_KINDS}, got {p.kind!r}", key="plant.kind")
    if f.kind not in FILTER_KINDS:
        raise ConfigError(f"must be one of {FILTER_KINDS}, got {f.kind!r}", key="filter.kind")
    if f.margin_form not in MARGIN_FORMS:
        raise ConfigError(f"must be one of {MARGIN_FORMS}", key="filter.margin_form")
    if cfg.reference.kind not in REFERENCE_KINDS:
        raise ConfigError(f"must be one of {REFERENCE_KINDS}", key="reference.kind")
    if f.kind == "mricbf":
        missing = [f"filter.kappa{i}" for i, k in enumerate(
            (f.kappa1, f.kappa2, f.kappa3, f.kappa4), start=1) if k is None]
        if missing:
            raise ConfigError("mricbf needs Lipschitz constants: missing " + ", ".join(missing),
                              key="filter.kappa")
    for name in ("sigma_bar", "eps", "theta"):
        if getattr(f, name) < 0:
            raise ConfigError("must be non-negative", key=f"filter.{name}")
    for i, k in enumerate(f.kappa(), start=1):
        if k < 0:
            raise ConfigError("must be non-negative", key=f"filter.kappa{i}")
    if f.slack_weight <= 0:
        raise ConfigError("must be positive", key="filter.slack_weight")
    if t.dt <= 0:
        raise ConfigError("must be positive", key="timing.dt")
    if t.t_end <= t.dt:
        raise ConfigError("must exceed timing.dt", key="timing.t_end")
    if t.transient < 0:
        raise ConfigError("must be non-negative", key="timing.transient")
    if cfg.limits.u_min >= cfg.limits.u_max:
        raise ConfigError("u_min must be below u_max", key="limits.u_min")
    if s.gamma < 0 or s.derivative_amplitude() < 0 or s.noise < 0:
        raise ConfigError("amplitudes must be non-negative", key="sensor.gamma")
    if s.xi <= 0:
        raise ConfigError("must be positive", key="sensor.xi")
    if s.cutoff <= 0:
        raise ConfigError("must be positive", key="sensor.cutoff")
    if s.gamma + s.noise > f.eps + 1e-15:
        raise ConfigError(
            f"output error amplitude {s.gamma + s.noise:g} exceeds declared eps {f.eps:g}",
            key="filter.eps")
    if s.derivative_amplitude() + s.noise > f.theta + 1e-15:
        raise ConfigError(
            f"derivative error amplitude {s.derivative_amplitude() + s.noise:g} exceeds "
            f"declared theta {f.theta:g}", key="filter.theta")
    if not cfg.barriers and f.kind != "none":
        raise ConfigError("at least one barrier is required for a safety filter", key="barrier")
    for i, b in enumerate(cfg.barriers, start=1):
        if b.kind not in BARRIER_KINDS:
            raise ConfigError(f"must be one of {BARRIER_KINDS}", key=f"barrier.{i}.kind")
        if b.gamma <= 0:
            raise ConfigError("must be positive", key=f"barrier.{i}.gamma")
    if p.kind == "siso":
        if p.b_p == 0 or p.c_p == 0:
            raise ConfigError("b_p and c_p must be non-zero", key="plant.b_p")
        if cfg.controller.r <= 0 or cfg.controller.q < 0:
            raise ConfigError("need r > 0 and q >= 0", key="controller.r")
    else:
        if len(p.bp) != 4:
            raise ConfigError("pitch effectiveness needs four entries", key="plant.bp")
        if p.iyy <= 0 or p.v <= 0:
            raise ConfigError("iyy and v must be positive", key="plant.iyy")


# --------------------------------------------------------------------------
# bundled presets

PRESETS: dict[str, str] = {
    "siso-paper": """\
name = siso-paper
# uncertain first-order plant with sinusoidal sensor bias
plant.kind = siso
plant.a_p = -1
plant.b_p = 1
plant.c_p = 1
plant.lambda = 0.6
filter.kind = mricbf
filter.sigma_bar = 0.005
filter.eps = 0.1
filter.theta = 0.1
# kappa1 covers the derivative channel (w = e), kappa4 = gamma for a box barrier
filter.kappa1 = 1
filter.kappa2 = 0
filter.kappa3 = 0
filter.kappa4 = 1
sensor.gamma = 0.1
# bias frequency is not given; 5 rad/s sits above the LPF cutoff so the
# bias-driven oscillation the LPF variant removes is actually present
sensor.xi = 5
barrier.1.kind = upper
barrier.1.limit = 0.5
barrier.1.gamma = 1
barrier.2.kind = lower
barrier.2.limit = -0.5
barrier.2.gamma = 1
controller.q = 3
controller.r = 0.2
limits.u_min = -0.8
limits.u_max = 0.8
timing.dt = 0.001
timing.t_end = 30
reference.kind = sine
reference.amplitude = 0.7
reference.omega = 0.2
""",
    "pitch-hgv": """\
name = pitch-hgv
# isolated pitch-rate loop, four flaps, 30% aerodynamic mismatch (angles in degrees)
plant.kind = pitch
plant.mismatch = 0.3
plant.alpha = 2
filter.kind = mricbf
filter.sigma_bar = 0.01
filter.eps = 0.1
filter.theta = 0.1
filter.kappa1 = 1
filter.kappa2 = 0
filter.kappa3 = 0
filter.kappa4 = 1
sensor.gamma = 0.1
sensor.xi = 1
barrier.1.kind = upper
barrier.1.limit = 10
barrier.1.gamma = 1
barrier.2.kind = lower
barrier.2.limit = -10
barrier.2.gamma = 1
controller.rate_gain = 5
limits.u_min = -30
limits.u_max = 30
timing.dt = 0.001
timing.t_end = 10
timing.transient = 5
reference.kind = step
reference.value = 15
reference.t_step = 0.5
""",
}
PRESETS["siso-paper-lpf"] = PRESETS["siso-paper"].replace(
    "name = siso-paper\n", "name = siso-paper-lpf\n") + "sensor.lpf = on\nsensor.cutoff = 2\n"

PRESET_DESCRIPTIONS = {
    "siso-paper": "1D SISO plant, Lambda=0.6, sinusoidal sensor bias, MRICBF filter",
    "siso-paper-lpf": "siso-paper with a first-order low-pass filter on the measurements",
    "pitch-hgv": "isolated pitch-rate loop with four flaps, 30% mismatch, CA-MRICBF",
}


def preset_text(name: str) -> str:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_preset(name: str, overrides: Mapping[str, str] | Iterable[str] = ()) -> ScenarioConfig:
    return parse_config("", overrides, preset=name)
