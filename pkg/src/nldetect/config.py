"""Experiment configuration: TOML files with unit-annotated physical values.

Physical quantities are written as strings such as ``"1 kN/mm"`` or
``"0.01 g"`` and converted to SI on load; the unit's dimension is checked
against the field. A config may start from a shipped preset with
``preset = "duffing1"`` and override individual keys.
"""

from __future__ import annotations

import copy
import math
import re
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .autoencoder import AEConfig
from .dynamics import GRAVITY, MODELS
from .errors import ConfigError, DomainError, NLDetectError
from .excitation import AmplitudeRange
from .gan import GANConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

PRESETS = ("duffing1", "duffing2", "isolator", "magnetoelastic")

# --------------------------------------------------------------------------
# units

# name -> (SI factor, (kg, m, s) exponents); factors are exact fractions so
# that e.g. "0.001 kN/mm^3" converts to exactly 1e9
UNITS = {
    "kg": (Fraction(1), (1, 0, 0)),
    "t": (Fraction(1000), (1, 0, 0)),
    "m": (Fraction(1), (0, 1, 0)),
    "cm": (Fraction(1, 100), (0, 1, 0)),
    "mm": (Fraction(1, 1000), (0, 1, 0)),
    "um": (Fraction(1, 10**6), (0, 1, 0)),
    "s": (Fraction(1), (0, 0, 1)),
    "ms": (Fraction(1, 1000), (0, 0, 1)),
    "min": (Fraction(60), (0, 0, 1)),
    "Hz": (Fraction(1), (0, 0, -1)),
    "kHz": (Fraction(1000), (0, 0, -1)),
    "N": (Fraction(1), (1, 1, -2)),
    "kN": (Fraction(1000), (1, 1, -2)),
    "MN": (Fraction(10**6), (1, 1, -2)),
    "g": (Fraction(str(GRAVITY)), (0, 1, -2)),
    "%": (Fraction(1, 100), (0, 0, 0)),
}

DIMENSIONLESS = (0, 0, 0)
MASS = (1, 0, 0)
LENGTH = (0, 1, 0)
TIME = (0, 0, 1)
FREQUENCY = (0, 0, -1)
FORCE = (1, 1, -2)
ACCEL = (0, 1, -2)
DAMPING = (1, 0, -1)
STIFFNESS = (1, 0, -2)
CUBIC_STIFFNESS = (1, -2, -2)
INV_LENGTH = (0, -1, 0)

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QUANTITY = re.compile(rf"^\s*({_NUMBER})\s*(.*?)\s*$")
_FACTOR = re.compile(r"^([A-Za-z%]+|1)(?:\^([-+]?\d+))?$")


def parse_unit(expr: str):
    """Return ``(factor, dims)`` for a unit expression like ``"kN*s/mm^2"``."""
    expr = expr.replace(" ", "")
    if expr in ("", "1", "-"):
        return Fraction(1), DIMENSIONLESS
    factor = Fraction(1)
    dims = np.zeros(3, dtype=int)
    for i, (op, tok) in enumerate(re.findall(r"([*/]?)([^*/]+)", expr)):
        if i == 0 and op:
            raise DomainError(f"malformed unit {expr!r}")
        m = _FACTOR.match(tok)
        if not m:
            raise DomainError(f"malformed unit term {tok!r} in {expr!r}")
        name, power = m.group(1), int(m.group(2) or 1)
        if name == "1":
            f, d = Fraction(1), DIMENSIONLESS
        elif name in UNITS:
            f, d = UNITS[name]
        else:
            raise DomainError(f"unknown unit {name!r} in {expr!r}")
        sign = -1 if op == "/" else 1
        factor *= f ** (sign * power)
        dims += sign * power * np.asarray(d)
    return factor, tuple(int(v) for v in dims)


def quantity(value, dims, path: str, allow_bare: bool = False) -> float:
    """Convert a unit-annotated value to SI, checking its dimension."""
    if isinstance(value, bool):
        raise ConfigError("expected a quantity, got a boolean", field=path)
    if isinstance(value, (int, float)):
        if allow_bare or dims == DIMENSIONLESS:
            return float(value)
        raise ConfigError(f"physical value needs a unit (e.g. \"{value} ...\")", field=path)
    if not isinstance(value, str):
        raise ConfigError(f"expected a quantity string, got {type(value).__name__}", field=path)
    m = _QUANTITY.match(value)
    if not m:
        raise ConfigError(f"cannot parse quantity {value!r}", field=path)
    try:
        factor, got = parse_unit(m.group(2))
    except DomainError as exc:
        raise ConfigError(str(exc), field=path) from None
    if got != tuple(dims):
        raise ConfigError(f"unit of {value!r} has dimension {got} (kg, m, s), expected {tuple(dims)}",
                          field=path)
    out = float(Fraction(m.group(1)) * factor)
    if not math.isfinite(out):
        raise ConfigError(f"non-finite value {value!r}", field=path)
    return out


PARAM_DIMS = {
    "duffing1": {"M": MASS, "C": DAMPING, "K1": STIFFNESS, "K3": CUBIC_STIFFNESS},
    "duffing2": {
        "M1": MASS, "M2": MASS, "C1": DAMPING, "C2": DAMPING,
        "K11": STIFFNESS, "K21": STIFFNESS, "K13": CUBIC_STIFFNESS, "K23": CUBIC_STIFFNESS,
    },
    "isolator": {
        "M": MASS, "C": DAMPING, "Ki": STIFFNESS, "Kn": STIFFNESS, "K3": CUBIC_STIFFNESS,
        "xu": LENGTH, "xm": LENGTH, "xf": LENGTH,
        "bw_alpha": DIMENSIONLESS, "bw_beta": INV_LENGTH, "bw_gamma": INV_LENGTH, "bw_n": DIMENSIONLESS,
        "Ks": STIFFNESS, "Km": STIFFNESS, "Y": FORCE, "alpha_s": DIMENSIONLESS, "ys": DIMENSIONLESS,
        "a_tilde": DIMENSIONLESS, "cs": INV_LENGTH, "ns": DIMENSIONLESS,
    },
}


# --------------------------------------------------------------------------
# experiment config


@dataclass
class DataSettings:
    window_len: int = 500
    rate: float = 250.0
    dt_int: float = 4e-4
    noise_level: float = 0.1
    train_fraction: float = 0.8
    n_train: int = 2000
    n_score: int = 2000
    levels: list = field(default_factory=lambda: [0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30])
    amplitude: AmplitudeRange | None = None
    external: dict = field(default_factory=dict)  # level -> path, measured data only


@dataclass
class FRCSettings:
    amplitudes: list = field(default_factory=list)  # m/s^2
    f_lo: float = 6.0
    f_hi: float = 10.0
    f_step: float = 0.02
    damage: list = field(default_factory=lambda: [0.0])
    directions: list = field(default_factory=lambda: ["up"])
    settle_cycles: int = 100
    measure_cycles: int = 20
    dof: int = 0

    def freqs(self):
        if not (0 < self.f_lo <= self.f_hi):
            raise ConfigError("need 0 < f_lo <= f_hi", field="frc")
        if self.f_step <= 0:
            raise ConfigError("f_step must be > 0", field="frc.f_step")
        n = int(math.floor((self.f_hi - self.f_lo) / self.f_step + 1e-9)) + 1
        return [round(self.f_lo + i * self.f_step, 12) for i in range(n)]


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    system: str | None
    params: dict
    data: DataSettings
    ae: AEConfig
    gan: GANConfig
    frc: FRCSettings
    out: str = "runs"
    source: str | None = None
    raw: dict = field(default_factory=dict)

    def model(self):
        if self.system is None:
            raise ConfigError("this configuration has no simulated system (measured data only)", field="system")
        return MODELS[self.system](**self.params)

    def derived_seed(self, tag: str) -> int:
        codes = {"data": 0, "split": 1, "ae": 2, "gan": 3, "ae_train": 4, "gan_train": 5}
        return int(np.random.SeedSequence([int(self.seed), codes[tag]]).generate_state(1)[0])

    def seeds(self):
        return {"root": int(self.seed), **{t: self.derived_seed(t) for t in
                ("data", "split", "ae", "gan", "ae_train", "gan_train")}}

    def summary(self):
        """Resolved values (SI) for manifests."""
        data = {k: getattr(self.data, k) for k in self.data.__dataclass_fields__ if k != "amplitude"}
        if self.data.amplitude is not None:
            data["amplitude_lo_g"] = self.data.amplitude.lo
            data["amplitude_hi_g"] = self.data.amplitude.hi
        return {
            "name": self.name,
            "seed": int(self.seed),
            "seeds": self.seeds(),
            "system": self.system,
            "params": dict(self.params),
            "data": data,
            "ae": self.ae.to_dict(),
            "gan": self.gan.to_dict(),
            "frc": {k: getattr(self.frc, k) for k in self.frc.__dataclass_fields__},
            "source": self.source,
        }


def _deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}", field="preset")
    return resources.files("nldetect.presets").joinpath(f"{name}.toml").read_text()


def _parse_toml(text, origin):
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{origin}: invalid TOML ({exc})") from None


def _resolve(raw, origin):
    if "preset" in raw:
        base = _parse_toml(preset_text(raw["preset"]), f"preset {raw['preset']}")
        raw = _deep_merge(base, {k: v for k, v in raw.items() if k != "preset"})
    return raw


def _int(d, key, path, default=None, lo=None):
    v = d.get(key, default)
    if v is None:
        raise ConfigError("missing required value", field=f"{path}.{key}")
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"expected an integer, got {v!r}", field=f"{path}.{key}")
    if lo is not None and v < lo:
        raise ConfigError(f"must be >= {lo}", field=f"{path}.{key}")
    return v


def _fraction(v, path):
    try:
        return quantity(v, DIMENSIONLESS, path)
    except ConfigError:
        raise
    except Exception:  # pragma: no cover
        raise ConfigError(f"invalid fraction {v!r}", field=path) from None


def _check_keys(d, allowed, path):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", field=path)


def _build_params(system, raw_params):
    if system not in PARAM_DIMS:
        raise ConfigError(f"unknown system {system!r}; available: {sorted(PARAM_DIMS)}", field="system.model")
    dims = PARAM_DIMS[system]
    _check_keys(raw_params, dims, "system")
    params = {}
    for key, d in dims.items():
        if key not in raw_params:
            raise ConfigError("missing parameter", field=f"system.{key}")
        params[key] = quantity(raw_params[key], d, f"system.{key}")
    try:
        MODELS[system](**params)
    except DomainError as exc:
        raise ConfigError(str(exc), field="system") from None
    return params


def _net_config(cls, raw, path, window_len):
    raw = dict(raw)
    for k in ("learning_rate", "lr_generator", "lr_discriminator", "l2", "dropout"):
        if k in raw:
            raw[k] = quantity(raw[k], DIMENSIONLESS, f"{path}.{k}")
    try:
        return cls.from_dict(raw, window_len=window_len)
    except ConfigError as exc:
        raise ConfigError(str(exc), field=path) from None
    except TypeError as exc:
        raise ConfigError(str(exc), field=path) from None


def from_dict(raw: dict, origin="<config>", base_dir=None) -> ExperimentConfig:
    raw = _resolve(raw, origin)
    _check_keys(raw, ("name", "seed", "system", "data", "ae", "gan", "frc", "output"), "<root>")
    seed = _int(raw, "seed", "<root>", lo=0)
    system_raw = dict(raw.get("system", {}))
    system = system_raw.pop("model", None)
    params = _build_params(system, system_raw) if system is not None else {}

    d = raw.get("data", {})
    _check_keys(d, ("window_len", "rate", "dt_int", "noise_level", "train_fraction", "n_train", "n_score",
                    "levels", "amplitude", "external"), "data")
    data = DataSettings()
    data.window_len = _int(d, "window_len", "data", 500, lo=2)
    if "rate" in d:
        data.rate = quantity(d["rate"], FREQUENCY, "data.rate")
    if "dt_int" in d:
        data.dt_int = quantity(d["dt_int"], TIME, "data.dt_int")
    data.noise_level = _fraction(d.get("noise_level", 0.1), "data.noise_level")
    data.train_fraction = _fraction(d.get("train_fraction", 0.8), "data.train_fraction")
    if not (0 < data.train_fraction <= 1):
        raise ConfigError("must lie in (0, 1]", field="data.train_fraction")
    if data.noise_level < 0:
        raise ConfigError("must be >= 0", field="data.noise_level")
    data.n_train = _int(d, "n_train", "data", 2000, lo=1)
    data.n_score = _int(d, "n_score", "data", 2000, lo=1)
    if "levels" in d:
        data.levels = [_fraction(v, f"data.levels[{i}]") for i, v in enumerate(d["levels"])]
    for i, lv in enumerate(data.levels):
        if not (0 <= lv < 1):
            raise ConfigError("damage levels must lie in [0, 1)", field=f"data.levels[{i}]")
    if "amplitude" in d:
        amp = d["amplitude"]
        if not (isinstance(amp, list) and len(amp) == 2):
            raise ConfigError("expected [lo, hi]", field="data.amplitude")
        lo, hi = (quantity(a, ACCEL, f"data.amplitude[{i}]") / GRAVITY for i, a in enumerate(amp))
        try:
            data.amplitude = AmplitudeRange(lo, hi)
        except DomainError as exc:
            raise ConfigError(str(exc), field="data.amplitude") from None
    elif system is not None:
        raise ConfigError("simulated systems need an excitation amplitude range", field="data.amplitude")
    if "external" in d:
        ext = {}
        for key, p in d["external"].items():
            lv = _fraction(float(key) if re.fullmatch(_NUMBER, key) else key, f"data.external.{key}")
            path = Path(p)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            ext[lv] = str(path)
        data.external = ext
    if system is None and not data.external and "rate" not in d:
        raise ConfigError("measured-data configs need data.rate", field="data.rate")

    ae = _net_config(AEConfig, raw.get("ae", {}), "ae", data.window_len)
    gan = _net_config(GANConfig, raw.get("gan", {}), "gan", data.window_len)

    f = raw.get("frc", {})
    _check_keys(f, ("amplitudes", "f_lo", "f_hi", "f_step", "damage", "directions", "settle_cycles",
                    "measure_cycles", "dof"), "frc")
    frc = FRCSettings()
    frc.amplitudes = [quantity(a, ACCEL, f"frc.amplitudes[{i}]") for i, a in enumerate(f.get("amplitudes", []))]
    for key in ("f_lo", "f_hi", "f_step"):
        if key in f:
            setattr(frc, key, quantity(f[key], FREQUENCY, f"frc.{key}"))
    if "damage" in f:
        frc.damage = [_fraction(v, f"frc.damage[{i}]") for i, v in enumerate(f["damage"])]
    if "directions" in f:
        frc.directions = list(f["directions"])
        for i, dname in enumerate(frc.directions):
            if dname not in ("up", "down"):
                raise ConfigError("direction must be 'up' or 'down'", field=f"frc.directions[{i}]")
    frc.settle_cycles = _int(f, "settle_cycles", "frc", 100, lo=1)
    frc.measure_cycles = _int(f, "measure_cycles", "frc", 20, lo=1)
    frc.dof = _int(f, "dof", "frc", 0, lo=0)
    if f:
        frc.freqs()  # validates the range

    out = raw.get("output", {}).get("dir", "runs")
    return ExperimentConfig(
        name=str(raw.get("name", system or "experiment")),
        seed=seed,
        system=system,
        params=params,
        data=data,
        ae=ae,
        gan=gan,
        frc=frc,
        out=out,
        source=origin,
        raw=raw,
    )


def load(path_or_preset) -> ExperimentConfig:
    """Load a TOML config file, or a shipped preset by name."""
    if str(path_or_preset) in PRESETS and not Path(str(path_or_preset)).exists():
        return from_dict(_parse_toml(preset_text(str(path_or_preset)), path_or_preset), origin=str(path_or_preset))
    path = Path(path_or_preset)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise NLDetectError(f"cannot read config {path}: {exc}") from None
    return from_dict(_parse_toml(text, path), origin=str(path), base_dir=path.parent)
