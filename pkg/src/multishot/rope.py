"""Rotation-angle tables for multi-shot video attention.

Three flavors share one mechanism:

* vanilla 3D rotary tables (temporal, height, width axes),
* shot-aware video tables, where the temporal position of a token in shot i
  is offset by i * phase_shift so the angle jumps by an extra phase at every
  shot boundary while frame order is preserved,
* box-sampled reference tables, where a copy of a reference token grid takes
  its spatial positions from inside its target bounding box and its temporal
  position from the box frame (with the owning shot's phase offset).

A table stores, per token, the rotation angle of every channel pair in axis
order (temporal, height, width). Positions may be fractional; they are used
directly as real angles. Tables are immutable and safe to share.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import LayoutError
from .layout import CopyBlock, ShotPlan, TokenLayout, video_token_positions
from .tensor import read_msmt, write_msmt

DEFAULT_BASE = 10000.0


@dataclass(frozen=True)
class FreqVec:
    """Per-pair frequencies, strictly decreasing from f[0] = 1."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        if v.size == 0:
            return
        if v[0] != 1.0 or (v <= 0).any() or (v > 1).any():
            raise ValueError("frequencies must start at 1 and stay in (0, 1]")
        if v.size > 1 and not (np.diff(v) < 0).all():
            raise ValueError("frequencies must be strictly decreasing")

    @property
    def pairs(self) -> int:
        return int(self.values.size)


def freq_vector(pairs: int, base: float = DEFAULT_BASE) -> FreqVec:
    """Geometric frequency schedule f[p] = base ** (-p / pairs)."""
    if pairs < 1:
        raise ValueError(f"need at least one pair, got {pairs}")
    if not base > 1:
        raise ValueError(f"base must be > 1, got {base}")
    p = np.arange(pairs, dtype=np.float64)
    return FreqVec(base ** (-p / pairs))


def _freqs_or_empty(pairs: int, base: float) -> FreqVec:
    if pairs == 0:
        return FreqVec(np.empty(0, dtype=np.float64))
    return freq_vector(pairs, base)


@dataclass(frozen=True)
class RopeSpec:
    """Channel-pair split across the (t, h, w) axes plus the frequency base.

    The temporal axis needs at least one pair (it carries the shot-boundary
    signal); spatial axes may be empty for tiny head dims.
    """

    pairs_t: int
    pairs_h: int
    pairs_w: int
    base: float = DEFAULT_BASE

    def __post_init__(self):
        if self.pairs_t < 1 or self.pairs_h < 0 or self.pairs_w < 0:
            raise ValueError(
                f"bad pair split ({self.pairs_t}, {self.pairs_h}, "
                f"{self.pairs_w})"
            )
        if not self.base > 1:
            raise ValueError(f"base must be > 1, got {self.base}")

    @classmethod
    def for_head_dim(cls, head_dim: int, base: float = DEFAULT_BASE) -> "RopeSpec":
        """Default split of head_dim/2 pairs in ratio t:h:w = 2:1:1.

        Spatial counts are floored; the remainder goes to the temporal axis.
        """
        if head_dim < 2 or head_dim % 2:
            raise ValueError(f"head_dim must be even and >= 2, got {head_dim}")
        pairs = head_dim // 2
        ph = pairs // 4
        pw = pairs // 4
        return cls(pairs_t=pairs - ph - pw, pairs_h=ph, pairs_w=pw, base=base)

    @property
    def pairs(self) -> int:
        return self.pairs_t + self.pairs_h + self.pairs_w

    def freqs(self) -> tuple[FreqVec, FreqVec, FreqVec]:
        return (
            _freqs_or_empty(self.pairs_t, self.base),
            _freqs_or_empty(self.pairs_h, self.base),
            _freqs_or_empty(self.pairs_w, self.base),
        )


@dataclass(frozen=True)
class RopeTable:
    """Per-token rotation angles, channel pairs ordered (t, h, w)."""

    spec: RopeSpec
    phase_shift: float
    angles: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(self.angles, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.spec.pairs:
            raise ValueError(
                f"angle table shape {a.shape} inconsistent with "
                f"{self.spec.pairs} pairs"
            )
        a.flags.writeable = False
        object.__setattr__(self, "angles", a)

    @property
    def n_tokens(self) -> int:
        return self.angles.shape[0]

    def temporal(self) -> np.ndarray:
        return self.angles[:, : self.spec.pairs_t]

    def height(self) -> np.ndarray:
        pt = self.spec.pairs_t
        return self.angles[:, pt: pt + self.spec.pairs_h]

    def width(self) -> np.ndarray:
        return self.angles[:, self.spec.pairs_t + self.spec.pairs_h:]


def _angles_from_positions(t, h, w, spec: RopeSpec) -> np.ndarray:
    """Outer products position x frequency, concatenated in (t, h, w) order."""
    ft, fh, fw = spec.freqs()
    cols = [
        np.asarray(t, dtype=np.float64)[:, None] * ft.values[None, :],
        np.asarray(h, dtype=np.float64)[:, None] * fh.values[None, :],
        np.asarray(w, dtype=np.float64)[:, None] * fw.values[None, :],
    ]
    return np.concatenate(cols, axis=1)


def video_rope_angles(layout: TokenLayout, spec: RopeSpec) -> RopeTable:
    """Shot-aware table over the video tokens.

    A token at global frame t in shot i and spatial (h, w) gets temporal
    angles (t + i * phase_shift) * f_t, height angles h * f_h and width
    angles w * f_w.
    """
    plan = layout.plan
    pos = video_token_positions(layout)
    t_eff = pos[:, 0] + pos[:, 1] * plan.phase_shift
    angles = _angles_from_positions(t_eff, pos[:, 2], pos[:, 3], spec)
    return RopeTable(spec=spec, phase_shift=plan.phase_shift, angles=angles)


def box_grid_positions(box, grid_h: int, grid_w: int):
    """Box-sampled (h, w) positions of a reference token grid.

    Row j of an H x W reference grid maps to y1 + (y2 - y1) / H * j, and
    column k to x1 + (x2 - x1) / W * k; positions are fractional and sweep
    [y1, y2) x [x1, x2).
    """
    j = np.arange(grid_h, dtype=np.float64)
    k = np.arange(grid_w, dtype=np.float64)
    h = box.y1 + (box.y2 - box.y1) / grid_h * j
    w = box.x1 + (box.x2 - box.x1) / grid_w * k
    return h, w


def reference_rope_angles(copy: CopyBlock, plan: ShotPlan,
                          spec: RopeSpec) -> RopeTable:
    """Box-sampled table for one reference copy.

    All tokens of the copy share the temporal position of the box frame with
    the owning shot's phase offset; spatial positions are sampled inside the
    box via box_grid_positions.
    """
    h, w = box_grid_positions(copy.box, copy.grid_h, copy.grid_w)
    hh = np.repeat(h, copy.grid_w)
    ww = np.tile(w, copy.grid_h)
    t_eff = np.full(copy.grid_h * copy.grid_w,
                    copy.box.frame + copy.shot * plan.phase_shift)
    angles = _angles_from_positions(t_eff, hh, ww, spec)
    return RopeTable(spec=spec, phase_shift=plan.phase_shift, angles=angles)


def sequence_rope_angles(layout: TokenLayout, spec: RopeSpec) -> RopeTable:
    """Table over the full token sequence: video tokens then all copies."""
    parts = [video_rope_angles(layout, spec).angles]
    for copy in layout.copies:
        parts.append(reference_rope_angles(copy, layout.plan, spec).angles)
    return RopeTable(spec=spec, phase_shift=layout.plan.phase_shift,
                     angles=np.concatenate(parts, axis=0))


def save_rope_table(basepath, table: RopeTable) -> tuple[Path, Path]:
    """Write `<base>.msmt` (angles) plus `<base>.json` (descriptor)."""
    base = Path(basepath)
    msmt = base.with_suffix(".msmt")
    desc = base.with_suffix(".json")
    write_msmt(msmt, table.angles)
    desc.write_text(json.dumps({
        "P_t": table.spec.pairs_t,
        "P_h": table.spec.pairs_h,
        "P_w": table.spec.pairs_w,
        "base": table.spec.base,
        "phase_shift": table.phase_shift,
    }, indent=2, sort_keys=True) + "\n")
    return msmt, desc


def load_rope_table(basepath) -> RopeTable:
    base = Path(basepath)
    doc = json.loads(base.with_suffix(".json").read_text())
    spec = RopeSpec(pairs_t=doc["P_t"], pairs_h=doc["P_h"],
                    pairs_w=doc["P_w"], base=doc["base"])
    angles = read_msmt(base.with_suffix(".msmt"))
    return RopeTable(spec=spec, phase_shift=doc["phase_shift"], angles=angles)
