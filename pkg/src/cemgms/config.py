"""Experiment configuration: plain ``key = value`` lines with ``#`` comments."""
from dataclasses import dataclass, fields, replace


class ConfigError(ValueError):
    pass


EXPORT_CHOICES = ("fields", "bases", "indicators")


@dataclass(frozen=True)
class ExperimentConfig:
    coarse_nx: int = 10
    coarse_ny: int = 10
    fine_per_coarse: int = 20
    num_aux: int = 3
    layers: int = 2
    theta: float = 0.0
    max_iters: int = 2
    tol_abs: float = 0.0
    source: str = "f1"
    medium: str = "default"
    contrast: float = 1e4
    out_dir: str = ""
    exports: tuple = ()

    def __post_init__(self):
        for key in ("coarse_nx", "coarse_ny", "fine_per_coarse", "num_aux", "layers"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if not 0 <= self.theta < 1:
            raise ConfigError("theta must lie in [0, 1)")
        if self.tol_abs < 0:
            raise ConfigError("tol_abs must be >= 0")
        if not self.contrast >= 1:
            raise ConfigError("contrast must be >= 1")
        if self.source not in ("f1", "f2", "f3") and not self.source.startswith("file:"):
            raise ConfigError(f"source must be f1, f2, f3 or file:<path>, got {self.source!r}")
        if self.medium != "default" and not self.medium.startswith("file:"):
            raise ConfigError(f"medium must be default or file:<path>, got {self.medium!r}")
        bad = set(self.exports) - set(EXPORT_CHOICES)
        if bad:
            raise ConfigError(f"unknown exports {sorted(bad)}")

    def serialize(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "exports":
                v = ",".join(v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, pairs):
        values = {}
        for item in pairs:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, value = item.split("=", 1)
            values[key.strip()] = value.strip()
        return replace(self, **_convert(values))


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(raw):
    out = {}
    for key, value in raw.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}")
        kind = _TYPES[key]
        try:
            if kind in (int, "int"):
                out[key] = int(value)
            elif kind in (float, "float"):
                out[key] = float(value)
            elif kind in (tuple, "tuple"):
                out[key] = tuple(t.strip() for t in value.split(",") if t.strip())
            else:
                out[key] = value
        except ValueError:
            raise ConfigError(f"key {key!r}: cannot parse {value!r}") from None
    return out


def parse_config(text):
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        raw[key] = value
    return ExperimentConfig(**_convert(raw))


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())
