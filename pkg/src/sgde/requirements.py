"""Generator requirements a registry hands out at subscription time."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import ConfigurationError
from .schema import TabularSchema

DELTA_RULE = "min(1e-5, 1/(10*class_size))"
PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class ArchConstraints:
    max_layers: Optional[int] = None
    max_width: Optional[int] = None
    dense_only: bool = True

    def to_dict(self) -> dict:
        return {"max_layers": self.max_layers, "max_width": self.max_width,
                "dense_only": self.dense_only}

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> Optional["ArchConstraints"]:
        return None if d is None else cls(d.get("max_layers"), d.get("max_width"),
                                          d.get("dense_only", True))


@dataclass(frozen=True)
class ServerRequirements:
    max_epsilon: float = 1.5
    delta_rule: str = DELTA_RULE
    allowed_arch: Optional[ArchConstraints] = None  # None: no architecture checks
    schema: Optional[TabularSchema] = None
    protocol_version: int = PROTOCOL_VERSION
    require_push: bool = True
    min_optimal_order: Optional[int] = None  # None: no gate on the conversion order

    def __post_init__(self):
        if not self.max_epsilon > 0:
            raise ConfigurationError("max_epsilon must be positive")

    def to_dict(self) -> dict:
        return {
            "max_epsilon": self.max_epsilon,
            "delta_rule": self.delta_rule,
            "allowed_arch": None if self.allowed_arch is None else self.allowed_arch.to_dict(),
            "schema": None if self.schema is None else self.schema.to_dict(),
            "protocol_version": self.protocol_version,
            "require_push": self.require_push,
            "min_optimal_order": self.min_optimal_order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ServerRequirements":
        return cls(
            float(d.get("max_epsilon", 1.5)), d.get("delta_rule", DELTA_RULE),
            ArchConstraints.from_dict(d.get("allowed_arch")),
            None if d.get("schema") is None else TabularSchema.from_dict(d["schema"]),
            int(d.get("protocol_version", PROTOCOL_VERSION)),
            bool(d.get("require_push", True)), d.get("min_optimal_order"),
        )
