"""Run configuration and its flat dotted-key TOML representation."""
from __future__ import annotations

import hashlib
import json
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .hierarchy import COST_MODELS
from .models import MODELS
from .risk import STAT_KINDS


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source file when known."""

    def __init__(self, message, key=None, line=None, path=None):
        self.key, self.line, self.path = key, line, path
        where = ""
        if path is not None or line is not None:
            where = f"{path or '<config>'}:{line if line is not None else '?'}: "
        super().__init__(where + message)


@dataclass
class CmlmcConfig:
    model: str = "poisson"
    model_params: dict = field(default_factory=dict)
    tau: float = 0.7
    theta_min: float = 1.5
    theta_max: float = 2.5
    eps: float = 0.05
    w_i: float = 0.1
    w_b: float = 0.3
    w_s: float = 0.6
    d: int = 3
    lam: float = 1.5
    kappa: float = 1.1
    screen_levels: int = 3
    screen_samples: int = 25
    seed: int = 0
    bs_init: int = 100
    bs_cap: int = 12800
    n_fine: int = 1000
    n_init: int = 10
    statistic: str = "cvar"
    stat_m: int = 0
    L_cap: int = 10
    max_iter: int = 25
    cost_model: str = "theoretical"
    var_theta_min: Optional[float] = None
    var_theta_max: Optional[float] = None

    def validate(self):
        def bad(key, msg):
            raise ConfigError(f"{key}: {msg}", key=key)

        if self.model not in MODELS:
            bad("model.name", f"unknown model {self.model!r}; choose from {sorted(MODELS)}")
        if not 0.0 < self.tau < 1.0:
            bad("stat.tau", "must lie in (0, 1)")
        if not self.theta_min < self.theta_max:
            bad("theta.min", "theta.min must be smaller than theta.max")
        if not self.eps > 0:
            bad("cmlmc.eps", "must be > 0")
        w = (self.w_i, self.w_b, self.w_s)
        if any(x <= 0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
            bad("cmlmc.weights", f"w_i, w_b, w_s must be positive and sum to 1, got {w}")
        if self.d < 0:
            bad("cmlmc.d", "must be >= 0")
        if not self.lam > self.kappa > 1.0:
            bad("cmlmc.lambda", "need lambda > kappa > 1")
        if self.screen_levels < 3:
            bad("screening.levels", "need >= 3 levels so decay rates can be fitted")
        if self.screen_samples < 2:
            bad("screening.samples", "need >= 2 samples per level")
        if not 0 <= self.seed < 2**64:
            bad("run.seed", "must be a 64-bit unsigned integer")
        if not 1 <= self.bs_init <= self.bs_cap:
            bad("bootstrap.initial", "need 1 <= initial <= cap")
        if self.n_fine < 7:
            bad("grid.n_fine", "must be >= 7")
        if self.n_init < 4:
            bad("grid.n_init", "must be >= 4")
        if self.statistic not in STAT_KINDS:
            bad("stat.kind", f"must be one of {STAT_KINDS}")
        if self.stat_m not in (0, 1, 2):
            bad("stat.m", "must be 0, 1 or 2")
        if self.L_cap < self.screen_levels - 1:
            bad("cmlmc.L_cap", "must be >= screening.levels - 1")
        if self.max_iter < 1:
            bad("cmlmc.max_iter", "must be >= 1")
        if self.cost_model not in COST_MODELS:
            bad("cost.model", f"must be one of {COST_MODELS}")
        if (self.var_theta_min is None) != (self.var_theta_max is None):
            bad("var.theta_min", "var.theta_min and var.theta_max must be given together")
        if self.var_theta_min is not None and not (
            self.theta_min <= self.var_theta_min < self.var_theta_max <= self.theta_max
        ):
            bad("var.theta_min", "VaR interval must be a sub-interval of theta")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class StudyConfig:
    repetitions: int = 20
    tolerances: tuple = ()
    reference: str = "exact"
    reference_value: Optional[float] = None
    n_ref: int = 1000

    def validate(self):
        if self.repetitions < 1:
            raise ConfigError("study.repetitions: must be >= 1", key="study.repetitions")
        if any(t <= 0 for t in self.tolerances):
            raise ConfigError("study.tolerances: must be positive", key="study.tolerances")
        if self.reference not in ("exact", "value"):
            raise ConfigError("study.reference: must be 'exact' or 'value'", key="study.reference")
        if self.reference == "value" and self.reference_value is None:
            raise ConfigError("study.reference_value: required when study.reference = 'value'", key="study.reference")
        if self.n_ref < 2:
            raise ConfigError("study.n_ref: must be >= 2", key="study.n_ref")
        return self


# dotted key -> (section, attribute)
_KEYS = {
    "model.name": ("run", "model"),
    "stat.tau": ("run", "tau"),
    "stat.kind": ("run", "statistic"),
    "stat.m": ("run", "stat_m"),
    "theta.min": ("run", "theta_min"),
    "theta.max": ("run", "theta_max"),
    "var.theta_min": ("run", "var_theta_min"),
    "var.theta_max": ("run", "var_theta_max"),
    "cmlmc.eps": ("run", "eps"),
    "cmlmc.weights": ("run", None),
    "cmlmc.d": ("run", "d"),
    "cmlmc.lambda": ("run", "lam"),
    "cmlmc.kappa": ("run", "kappa"),
    "cmlmc.L_cap": ("run", "L_cap"),
    "cmlmc.max_iter": ("run", "max_iter"),
    "screening.levels": ("run", "screen_levels"),
    "screening.samples": ("run", "screen_samples"),
    "run.seed": ("run", "seed"),
    "bootstrap.initial": ("run", "bs_init"),
    "bootstrap.cap": ("run", "bs_cap"),
    "grid.n_fine": ("run", "n_fine"),
    "grid.n_init": ("run", "n_init"),
    "cost.model": ("run", "cost_model"),
    "study.repetitions": ("study", "repetitions"),
    "study.tolerances": ("study", "tolerances"),
    "study.reference": ("study", "reference"),
    "study.reference_value": ("study", "reference_value"),
    "study.n_ref": ("study", "n_ref"),
}


def _flatten(tree, prefix=""):
    for key, val in tree.items():
        full = f"{prefix}{key}"
        if isinstance(val, dict) and not full.startswith("model.params"):
            yield from _flatten(val, full + ".")
        else:
            yield full, val


def _line_of(text: str, key: str) -> Optional[int]:
    """Best-effort line number of a dotted key in the TOML source."""
    leaf = re.escape(key.split(".")[-1])
    full = re.escape(key)
    for pattern in (rf"^\s*[\"']?{full}[\"']?\s*=", rf"^\s*[\"']?{leaf}[\"']?\s*="):
        for i, line in enumerate(text.splitlines(), start=1):
            if re.match(pattern, line):
                return i
    return None


def _coerce(attr_type, val, key):
    try:
        if attr_type in ("int", int):
            if isinstance(val, bool) or (isinstance(val, float) and not val.is_integer()):
                raise TypeError
            return int(val)
        if attr_type in ("float", float, "Optional[float]"):
            if isinstance(val, bool):
                raise TypeError
            return float(val)
        if attr_type in ("str", str):
            if not isinstance(val, str):
                raise TypeError
            return val
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: wrong type {type(val).__name__}", key=key) from None
    return val


def parse_config(text: str, path=None):
    """Parse flat dotted-key TOML into ``(CmlmcConfig, StudyConfig)``."""
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        m = re.search(r"line (\d+)", str(exc))
        if line is None and m:
            line = int(m.group(1))
        raise ConfigError(f"TOML syntax error: {exc}", line=line, path=path) from None

    run, study = CmlmcConfig(), StudyConfig()
    types = {f.name: f.type for f in fields(CmlmcConfig)} | {f.name: f.type for f in fields(StudyConfig)}
    try:
        for key, val in _flatten(tree):
            if key.startswith("model.params"):
                params = val if isinstance(val, dict) else {key.split(".", 2)[2]: val}
                run.model_params.update(params)
                continue
            if key not in _KEYS:
                raise ConfigError(f"unknown key {key!r}", key=key)
            section, attr = _KEYS[key]
            if attr is None:  # cmlmc.weights = [w_i, w_b, w_s]
                if not isinstance(val, list) or len(val) != 3:
                    raise ConfigError(f"{key}: expected a list of three numbers", key=key)
                run.w_i, run.w_b, run.w_s = (_coerce(float, v, key) for v in val)
                continue
            target = run if section == "run" else study
            if attr == "tolerances":
                if not isinstance(val, list):
                    raise ConfigError(f"{key}: expected a list", key=key)
                val = tuple(_coerce(float, v, key) for v in val)
            else:
                val = _coerce(types[attr], val, key)
            setattr(target, attr, val)
        run.validate()
        study.validate()
    except ConfigError as exc:
        line = _line_of(text, exc.key) if exc.key else None
        raise ConfigError(str(exc), key=exc.key, line=line, path=path) from None
    return run, study


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), path=str(path))
