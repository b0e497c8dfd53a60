"""Architecture schedules: stage records, JSON format, and named presets."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Union


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Downsample:
    out_channels: int


@dataclass(frozen=True)
class EdaBlock:
    name: str
    growth: int
    dilations: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(self.dilations))


@dataclass(frozen=True)
class Head:
    upsample_factor: int


Stage = Union[Downsample, EdaBlock, Head]


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    stages: tuple[Stage, ...]
    input_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def depth(self) -> int:
        """Number of downsampling stages."""
        return sum(isinstance(s, Downsample) for s in self.stages)

    @property
    def head(self) -> Head:
        return self.stages[-1]

    def blocks(self):
        return [s for s in self.stages if isinstance(s, EdaBlock)]

    def block(self, name) -> EdaBlock:
        for s in self.blocks():
            if s.name == name:
                return s
        raise KeyError(name)

    def max_dilation(self) -> int:
        return max((max(b.dilations) for b in self.blocks()), default=1)

    def channel_plan(self):
        """Channels after every stage (head excluded)."""
        c = self.input_channels
        plan = []
        for s in self.stages:
            if isinstance(s, Downsample):
                c = s.out_channels
            elif isinstance(s, EdaBlock):
                c += len(s.dilations) * s.growth
            else:
                break
            plan.append(c)
        return plan


def _is_pos_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v > 0


def validate(spec: ArchitectureSpec) -> ArchitectureSpec:
    if not isinstance(spec.name, str) or not spec.name:
        raise SpecError("spec name must be a non-empty string")
    if not _is_pos_int(spec.input_channels):
        raise SpecError(f"input_channels must be a positive integer, got {spec.input_channels!r}")
    if not spec.stages:
        raise SpecError("spec has no stages")
    heads = [i for i, s in enumerate(spec.stages) if isinstance(s, Head)]
    if len(heads) != 1:
        raise SpecError(f"spec must contain exactly one head, found {len(heads)}")
    if heads[0] != len(spec.stages) - 1:
        raise SpecError("the head must be the last stage")
    names = set()
    for i, s in enumerate(spec.stages):
        if isinstance(s, Downsample):
            if not _is_pos_int(s.out_channels):
                raise SpecError(f"stage {i}: out_channels must be a positive integer")
        elif isinstance(s, EdaBlock):
            if not isinstance(s.name, str) or not s.name:
                raise SpecError(f"stage {i}: block name must be a non-empty string")
            if s.name in names:
                raise SpecError(f"stage {i}: duplicate block name {s.name!r}")
            names.add(s.name)
            if not _is_pos_int(s.growth):
                raise SpecError(f"block {s.name!r}: growth must be a positive integer")
            if not s.dilations or not all(_is_pos_int(d) for d in s.dilations):
                raise SpecError(f"block {s.name!r}: dilations must be a non-empty list "
                                "of positive integers")
        elif isinstance(s, Head):
            if not _is_pos_int(s.upsample_factor):
                raise SpecError("head upsample_factor must be a positive integer")
        else:
            raise SpecError(f"stage {i}: unknown stage {s!r}")
    down = 2 ** spec.depth
    if spec.head.upsample_factor != down:
        raise SpecError(f"resolution not restored: 1/{down} · ×{spec.head.upsample_factor}")
    return spec


# ---------------------------------------------------------------------------
# JSON format
# ---------------------------------------------------------------------------

_STAGE_KEYS = {
    "downsample": {"type", "out_channels"},
    "eda_block": {"type", "name", "growth", "dilations"},
    "head": {"type", "upsample_factor"},
}


def spec_to_dict(spec: ArchitectureSpec) -> dict:
    stages = []
    for s in spec.stages:
        if isinstance(s, Downsample):
            stages.append({"type": "downsample", "out_channels": s.out_channels})
        elif isinstance(s, EdaBlock):
            stages.append({"type": "eda_block", "name": s.name, "growth": s.growth,
                           "dilations": list(s.dilations)})
        else:
            stages.append({"type": "head", "upsample_factor": s.upsample_factor})
    return {"name": spec.name, "input_channels": spec.input_channels, "stages": stages}


def spec_from_dict(d) -> ArchitectureSpec:
    if not isinstance(d, dict):
        raise SpecError("spec must be a JSON object")
    extra = set(d) - {"name", "input_channels", "stages"}
    if extra:
        raise SpecError(f"unknown spec keys: {sorted(extra)}")
    for key in ("name", "input_channels", "stages"):
        if key not in d:
            raise SpecError(f"missing spec key {key!r}")
    if not isinstance(d["stages"], list):
        raise SpecError("'stages' must be an array")
    stages = []
    for i, st in enumerate(d["stages"]):
        if not isinstance(st, dict) or "type" not in st:
            raise SpecError(f"stage {i}: expected an object with a 'type' key")
        kind = st["type"]
        if kind not in _STAGE_KEYS:
            raise SpecError(f"stage {i}: unknown stage type {kind!r}")
        keys = set(st)
        if keys != _STAGE_KEYS[kind]:
            extra, missing = keys - _STAGE_KEYS[kind], _STAGE_KEYS[kind] - keys
            raise SpecError(f"stage {i} ({kind}): unknown keys {sorted(extra)}, "
                            f"missing keys {sorted(missing)}")
        if kind == "downsample":
            stages.append(Downsample(st["out_channels"]))
        elif kind == "eda_block":
            if not isinstance(st["dilations"], list):
                raise SpecError(f"stage {i}: 'dilations' must be an array")
            stages.append(EdaBlock(st["name"], st["growth"], tuple(st["dilations"])))
        else:
            stages.append(Head(st["upsample_factor"]))
    return validate(ArchitectureSpec(d["name"], tuple(stages), d["input_channels"]))


def serialize_spec(spec: ArchitectureSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2) + "\n"


def parse_spec(text: str) -> ArchitectureSpec:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecError(f"syntax error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return spec_from_dict(d)


def load_spec(path) -> ArchitectureSpec:
    with open(path, encoding="utf-8") as f:
        return parse_spec(f.read())


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

EDANET_BLOCK1 = (1, 1, 1, 2, 2)
EDANET_BLOCK2 = (2, 2, 4, 4, 8, 8, 16, 16)
DD_RATES = (8, 4, 2, 1)


def _edanet_with(tail, name="edanet", block1=EDANET_BLOCK1):
    return ArchitectureSpec(name, (
        Downsample(15), Downsample(60),
        EdaBlock("block1", 40, block1),
        Downsample(130),
        *tail,
        Head(8),
    ))


def _full_presets():
    full_block2 = EdaBlock("block2", 40, EDANET_BLOCK2)
    return {
        "edanet": _edanet_with([full_block2]),
        "eda-fss": ArchitectureSpec("eda-fss", (
            Downsample(15),
            EdaBlock("block0", 30, (1, 1)),
            Downsample(60),
            EdaBlock("block1", 30, (1, 1, 2, 2)),
            Downsample(130),
            EdaBlock("block2", 30, (2, 4, 8, 16, 16)),
            Head(8),
        )),
        "network-a": ArchitectureSpec("network-a", (
            Downsample(15),
            EdaBlock("block0", 30, (1, 1, 1, 1)),
            Downsample(60),
            EdaBlock("block1", 30, (2, 4, 8, 16)),
            Head(4),
        )),
        "network-b": ArchitectureSpec("network-b", (
            EdaBlock("block-1", 30, (1, 1)),
            Downsample(15),
            EdaBlock("block0", 30, (1,)),
            Downsample(60),
            Head(4),
        )),
        "eda-ddb": _edanet_with([EdaBlock("block2", 40, (2, 4, 8, 16)),
                                 EdaBlock("dd", 40, DD_RATES)], "eda-ddb"),
        "eda-wo-di": _edanet_with([EdaBlock("block2", 40, (1,) * 8)], "eda-wo-di",
                                  block1=(1,) * 5),
        "eda-ddb-l": _edanet_with([full_block2, EdaBlock("dd", 40, DD_RATES)], "eda-ddb-l"),
        "eda-large-1": _edanet_with([full_block2, EdaBlock("extra", 40, (1, 1, 1, 1))],
                                    "eda-large-1"),
        "eda-large-16": _edanet_with([full_block2, EdaBlock("extra", 40, (16, 16, 16, 16))],
                                     "eda-large-16"),
    }


TINY_GROWTH = 8
TINY_DOWNSAMPLE_CHANNELS = (16, 32)


def tiny_variant(spec: ArchitectureSpec) -> ArchitectureSpec:
    """Desk-scale counterpart: growth 8, about half the modules, at most two downsamples.

    Each block keeps the dilations at positions n-1, n-3, ... so the final rate
    of every block survives; downsamples beyond the second are dropped, which
    makes the head x4 (or less).
    """
    stages = []
    n_down = 0
    for s in spec.stages:
        if isinstance(s, Downsample):
            if n_down < len(TINY_DOWNSAMPLE_CHANNELS):
                stages.append(Downsample(TINY_DOWNSAMPLE_CHANNELS[n_down]))
            n_down += 1
        elif isinstance(s, EdaBlock):
            n = len(s.dilations)
            stages.append(EdaBlock(s.name, TINY_GROWTH, s.dilations[(n - 1) % 2::2]))
    kept = min(n_down, len(TINY_DOWNSAMPLE_CHANNELS))
    stages.append(Head(2 ** kept))
    return validate(ArchitectureSpec(f"tiny-{spec.name}", tuple(stages), spec.input_channels))


FULL_PRESETS = tuple(_full_presets())
_PRESETS = _full_presets()
_PRESETS.update({f"tiny-{k}": tiny_variant(v) for k, v in list(_PRESETS.items())})
for _spec in _PRESETS.values():
    validate(_spec)


def preset_names():
    return list(_PRESETS)


def preset(name: str) -> ArchitectureSpec:
    try:
        return _PRESETS[name]
    except KeyError:
        raise SpecError(f"unknown preset {name!r}; valid names: {', '.join(_PRESETS)}") from None


def renamed(spec: ArchitectureSpec, name: str) -> ArchitectureSpec:
    return replace(spec, name=name)
