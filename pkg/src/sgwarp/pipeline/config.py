"""Pipeline configuration and its JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from ..errors import SgwarpError
from ..geometry import DEFAULT_LANDMARKS, DEFAULT_TPS_GRID, DEFAULT_TPS_LAMBDA
from ..losses import LossConfig
from ..tensor_core import NUM_JOINTS, NUM_LABELS
from ..warp import BORDERS


@dataclass(frozen=True)
class PartSpec:
    """A body part drawn as a capsule around the segment between two joints."""

    label: int
    joints: tuple[int, int]
    half_width: float


# Narrow limbs first so the wide torso pieces and the face land on top;
# every overlap is then a disc around a shared joint.
DEFAULT_PARTS = (
    PartSpec(15, (2, 4), 11.25),   # right arm: shoulder -> wrist
    PartSpec(14, (5, 7), 11.25),   # left arm
    PartSpec(17, (8, 10), 12.5),   # right leg: hip -> ankle
    PartSpec(16, (11, 13), 12.5),  # left leg
    PartSpec(9, (8, 11), 20.0),    # pants: hip bar
    PartSpec(5, (2, 5), 22.5),     # upper clothes: shoulder bar
    PartSpec(13, (0, 1), 15.0),    # face: nose -> neck
)


@dataclass(frozen=True)
class PipelineConfig:
    parts: tuple = DEFAULT_PARTS
    height: int = 320
    width: int = 280
    tps_grid: tuple[int, int] = DEFAULT_TPS_GRID
    tps_lambda: float = DEFAULT_TPS_LAMBDA
    landmarks: int = DEFAULT_LANDMARKS
    gate_mode: str = "overlap"
    gate_constant: float = 1.0
    border: str = "zeros"
    losses: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        labels = [p.label for p in self.parts]
        if len(set(labels)) != len(labels):
            raise SgwarpError("part labels must be distinct")
        for p in self.parts:
            if not 0 < p.label < NUM_LABELS:
                raise SgwarpError(f"part label {p.label} must lie in 1..{NUM_LABELS - 1}")
            if p.half_width <= 0:
                raise SgwarpError(f"part {p.label} needs a positive half-width")
            if not all(0 <= j < NUM_JOINTS for j in p.joints):
                raise SgwarpError(f"part {p.label} refers to a joint outside 0..{NUM_JOINTS - 1}")
        if self.gate_mode not in ("overlap", "constant"):
            raise SgwarpError("gate_mode must be 'overlap' or 'constant'")
        if not 0.0 <= self.gate_constant <= 1.0:
            raise SgwarpError("gate constant must lie in [0, 1]")
        if self.border not in BORDERS:
            raise SgwarpError(f"border must be one of {BORDERS}")
        if self.height < 2 or self.width < 2:
            raise SgwarpError("canvas must be at least 2 x 2")

    @property
    def part_labels(self) -> list[int]:
        return [p.label for p in self.parts]

    def with_gate(self, constant: float | None) -> "PipelineConfig":
        if constant is None:
            return replace(self, gate_mode="overlap")
        return replace(self, gate_mode="constant", gate_constant=float(constant))

    def to_dict(self) -> dict:
        gate = "overlap" if self.gate_mode == "overlap" else {"constant": self.gate_constant}
        out = {
            "height": self.height,
            "width": self.width,
            "parts": [
                {"label": p.label, "joints": list(p.joints), "half_width": p.half_width} for p in self.parts
            ],
            "tps_grid": list(self.tps_grid),
            "tps_lambda": self.tps_lambda,
            "landmarks": self.landmarks,
            "gate_mode": gate,
            "border": self.border,
        }
        out.update(self.losses.to_dict())
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        kwargs = {}
        if "parts" in d:
            kwargs["parts"] = tuple(
                PartSpec(int(p["label"]), (int(p["joints"][0]), int(p["joints"][1])), float(p["half_width"]))
                for p in d["parts"]
            )
        for key in ("height", "width", "landmarks"):
            if key in d:
                kwargs[key] = int(d[key])
        if "tps_grid" in d:
            kwargs["tps_grid"] = (int(d["tps_grid"][0]), int(d["tps_grid"][1]))
        if "tps_lambda" in d:
            kwargs["tps_lambda"] = float(d["tps_lambda"])
        if "border" in d:
            kwargs["border"] = d["border"]
        gate = d.get("gate_mode", "overlap")
        if isinstance(gate, dict):
            kwargs["gate_mode"] = "constant"
            kwargs["gate_constant"] = float(gate["constant"])
        else:
            kwargs["gate_mode"] = gate
        kwargs["losses"] = LossConfig.from_dict(d)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
