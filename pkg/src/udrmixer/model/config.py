from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``n1``/``n2``/``n3`` count spatial mixing blocks at the first encoder
    level, the bottleneck level and the decoder.  ``aux_blocks`` counts the
    frequency mixing blocks of the full-resolution auxiliary branch (``0``
    drops the branch).  ``c_level2`` is the width after the 2x downsample.
    ``sfrl_size`` must be ``None`` (cube side equals the
    block width) or equal to the width of every block it is used in.
    """

    n1: int = 2
    n2: int = 2
    n3: int = 4
    c_main: int = 48
    c_aux: int = 64
    r: int = 4
    sfrl_size: int | None = None
    sfrl_stages: int = 3
    ffl_expand: int = 2
    c_level2: int = 224
    aux_blocks: int = 1
    global_residual: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("n1", "n2", "n3", "c_main", "c_aux", "ffl_expand", "c_level2"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.aux_blocks < 0:
            raise ConfigError(f"aux_blocks must be >= 0, got {self.aux_blocks}")
        if self.r not in (2, 4):
            raise ConfigError(f"r must be 2 or 4, got {self.r}")
        if self.sfrl_stages not in (1, 2, 3):
            raise ConfigError(f"sfrl_stages must be 1, 2 or 3, got {self.sfrl_stages}")
        if self.ln_eps <= 0:
            raise ConfigError("ln_eps must be positive")
        if self.sfrl_size is not None:
            for width in (self.c_main, self.c_level2):
                if width != self.sfrl_size:
                    raise ConfigError(
                        f"sfrl_size={self.sfrl_size} differs from block width {width}; the "
                        "gated sum of rotated paths needs a cube whose side equals the width")

    @property
    def divisor(self) -> int:
        """Input height and width must be multiples of this."""
        return 2 * self.r

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def toy_config(width: int = 16, blocks=(1, 1, 2), r: int = 2, **kw) -> ModelConfig:
    """Small configuration for desk-scale runs and tests."""
    n1, n2, n3 = blocks
    kw.setdefault("c_level2", 2 * width)
    return ModelConfig(n1=n1, n2=n2, n3=n3, c_main=width, c_aux=width, r=r, **kw)
