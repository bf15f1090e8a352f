"""Training hyper-parameters and the flat key=value config file format.

Defaults follow the training protocol this package targets: Adam at a fixed
learning rate of 0.005, batch 4, 6000 iterations, patches at 0.3x the image
size, flip-only augmentation, 5x5 adaptive filters. The erasure count k and
the consistency weight lambda are dataset-tuned; the defaults here (k = 1%
of the patch area, lambda = 0.1) are this artifact's own choices.
"""

from dataclasses import dataclass, fields
from pathlib import Path

from .backbone import UNetConfig
from .errors import ParameterError

SUPPORTED_D = (3, 5, 7, 9)


@dataclass
class TrainConfig:
    lr: float = 0.005
    batch: int = 4
    max_iters: int = 6000
    patch_ratio: float = 0.3
    d_filter: int = 5
    k: int = -1              # absolute erasure count; -1 means use k_fraction
    k_fraction: float = 0.01
    lam: float = 0.1
    seed: int = 0
    precision: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    depth: int = 5
    base_width: int = 8
    use_pa: bool = True
    use_rce: bool = True
    erase_radius: int = 0
    eval_every: int = 500
    pa_normalize: str = "sum"

    def __post_init__(self):
        if self.pa_normalize not in ("sum", "sigmoid", "clamp"):
            raise ParameterError(f"pa_normalize must be sum/sigmoid/clamp, "
                                 f"got {self.pa_normalize!r}")
        if not (0.0 < self.patch_ratio <= 1.0):
            raise ParameterError(f"patch_ratio must be in (0, 1], got {self.patch_ratio}")
        if self.d_filter not in SUPPORTED_D:
            raise ParameterError(f"d_filter must be one of {SUPPORTED_D}, got {self.d_filter}")
        if self.precision not in (32, 64):
            raise ParameterError(f"precision must be 32 or 64, got {self.precision}")
        if self.lam < 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")

    def unet_config(self) -> UNetConfig:
        return UNetConfig(depth=self.depth, base_width=self.base_width)

    def resolve_k(self, h: int, w: int) -> int:
        """Erasure count for an HxW patch: absolute if set, else a fraction
        of the patch area, rounded."""
        if not self.use_rce:
            return 0
        if self.k >= 0:
            return self.k
        return int(round(self.k_fraction * h * w))


# --------------------------------------------------------------------------
# key=value files: one pair per line, # comments, blank lines ignored.
# --------------------------------------------------------------------------

def parse_kv_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_kv_file(path) -> dict[str, str]:
    return parse_kv_text(Path(path).read_text())


def _coerce(value: str, target_type):
    if target_type is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ParameterError(f"cannot parse boolean from {value!r}")
    return target_type(value)


def config_from_kv(kv: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    values = {f.name: getattr(base, f.name) for f in fields(TrainConfig)} if base \
        else {f.name: f.default for f in fields(TrainConfig)}
    types = {f.name: type(f.default) for f in fields(TrainConfig)}
    for key, raw in kv.items():
        if key not in values:
            raise ParameterError(f"unknown config key {key!r}")
        try:
            values[key] = _coerce(raw, types[key])
        except (ValueError, TypeError) as exc:
            raise ParameterError(f"bad value for {key}: {raw!r} ({exc})") from exc
    return TrainConfig(**values)


def config_to_kv_text(cfg: TrainConfig) -> str:
    """Canonical serialization: declaration order, repr round-trips floats."""
    lines = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = int(v)
        lines.append(f"{f.name}={v!r}" if isinstance(v, float) else f"{f.name}={v}")
    return "\n".join(lines) + "\n"
