"""Flat ``key = value`` experiment configs.

Blank lines and ``#`` comments are ignored.  Unknown or repeated keys are
errors, and every error names the offending key.
"""

from dataclasses import replace

from .engine import ExperimentConfig
from .tasks import TASK_NAMES


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


def _int(key, s):
    try:
        return int(s)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {s!r}") from None


def _float(key, s):
    try:
        return float(s)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {s!r}") from None


def _task(key, s):
    if s not in TASK_NAMES:
        raise ConfigError(key, f"unknown task {s!r}")
    return s


def _layers(key, s):
    widths = [_int(key, w.strip()) for w in s.split(",") if w.strip()]
    if not widths or min(widths) < 1:
        raise ConfigError(key, "expected comma-separated positive widths")
    return tuple(widths)


# config key -> (ExperimentConfig field, parser)
KEYS = {
    "task.source": ("source", _task),
    "task.target": ("target", _task),
    "n_critics": ("n_critics", _int),
    "critic_iters": ("critic_iters", _int),
    "batch_size": ("batch_size", _int),
    "lambda": ("lam", _float),
    "theta": ("theta", _float),
    "eps_c": ("eps_c", _float),
    "beta1": ("beta1", _float),
    "beta2": ("beta2", _float),
    "seed": ("seed", _int),
    "layers": ("hidden", _layers),
    "sigma": ("sigma", _float),
}
FIELD_TO_KEY = {f: k for k, (f, _) in KEYS.items()}


def parse_config(text, base=None):
    """Parse config text on top of ``base`` (defaults if omitted); validated."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(key, "unknown key")
        if key in values:
            raise ConfigError(key, "given twice")
        name, parse = KEYS[key]
        values[name] = parse(key, value)
    cfg = replace(base or ExperimentConfig(), **values)
    validate(cfg)
    return cfg


def validate(cfg):
    try:
        cfg.validate()
    except ValueError as exc:
        msg = str(exc)
        field = msg.split(":", 1)[0]
        if field in KEYS:
            raise ConfigError(field, msg.split(":", 1)[1].strip()) from None
        raise ConfigError(FIELD_TO_KEY.get(field, field), msg) from None
    for name in ("beta1", "beta2"):
        if not 0 <= getattr(cfg, name) < 1:
            raise ConfigError(name, "must lie in [0, 1)")
    if cfg.eps_c <= 0:
        raise ConfigError("eps_c", "must be positive")
    if cfg.seed < 0:
        raise ConfigError("seed", "must be non-negative")
    return cfg


def load_config(path, base=None):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), base)
