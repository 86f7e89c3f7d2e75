from __future__ import annotations

import enum
from dataclasses import dataclass

from licpipe.entropy.cdf import DEFAULT_SUPPORT


class CodecKind(enum.IntEnum):
    FACTORIZED = 0
    HYPERPRIOR = 1

    @classmethod
    def parse(cls, text: str) -> "CodecKind":
        names = {"factorized": cls.FACTORIZED, "factor": cls.FACTORIZED,
                 "hyper": cls.HYPERPRIOR, "hyperprior": cls.HYPERPRIOR}
        try:
            return names[text.lower()]
        except KeyError:
            raise ValueError(f"unknown codec {text!r} (factorized | hyper)") from None

    @property
    def label(self) -> str:
        return "factorized" if self is CodecKind.FACTORIZED else "hyper"


class Activation(enum.IntEnum):
    GDN = 0
    ONEDN = 1

    @classmethod
    def parse(cls, text: str) -> "Activation":
        names = {"gdn": cls.GDN, "1dn": cls.ONEDN, "onedn": cls.ONEDN}
        try:
            return names[text.lower()]
        except KeyError:
            raise ValueError(f"unknown activation {text!r} (gdn | 1dn)") from None

    @property
    def label(self) -> str:
        return "gdn" if self is Activation.GDN else "1dn"


DEFAULT_N = 128
DEFAULT_M = 192


@dataclass(frozen=True)
class CodecConfig:
    """Model shape plus input geometry.

    Heights and widths must be divisible by 16 (analysis transform) or 64
    (analysis plus hyper-analysis).
    """

    kind: CodecKind = CodecKind.FACTORIZED
    activation: Activation = Activation.GDN
    N: int = DEFAULT_N
    M: int = DEFAULT_M
    height: int = 256
    width: int = 256
    support: int = DEFAULT_SUPPORT

    def __post_init__(self):
        object.__setattr__(self, "kind", CodecKind(self.kind))
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.N < 1 or self.M < 1:
            raise ValueError("channel counts must be positive")
        if not 1 <= self.support <= 32767:
            raise ValueError("support bound must lie in [1, 32767]")
        f = self.downsampling
        if self.height <= 0 or self.width <= 0 or self.height % f or self.width % f:
            raise ValueError(
                f"{self.kind.label} codec needs height and width divisible by {f}; "
                f"got {self.height}x{self.width}")

    @property
    def downsampling(self) -> int:
        return 64 if self.kind is CodecKind.HYPERPRIOR else 16

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return self.M, self.height // 16, self.width // 16

    @property
    def hyper_shape(self) -> tuple[int, int, int]:
        return self.N, self.height // 64, self.width // 64

    def with_geometry(self, height: int, width: int) -> "CodecConfig":
        return CodecConfig(self.kind, self.activation, self.N, self.M, height, width, self.support)
