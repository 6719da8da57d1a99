"""Token layout compilation for multi-shot sequences with reference copies.

A :class:`ShotPlan` describes the latent video: an ordered list of per-shot
frame counts on a fixed H x W token grid, plus the angular phase shift
applied at shot boundaries. References (subject or background images) come
with grounded bounding boxes; each box produces one copy block of reference
tokens appended after the video tokens.

Token order is deterministic: video tokens first (shot, then frame, then
row-major spatial), then one copy block per box in (ref_id, box order).
Every token carries a shot assignment, which is what the attention mask and
the rotation tables key on.

Box coordinates live on the latent token grid, are real-valued, and are
validated strictly inside the grid; out-of-bounds is an error, never a
clamp. Frame indices are global across the concatenated shots.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LayoutError

CONFIG_VERSION = 1
DEFAULT_PHASE_SHIFT = 0.5

ROLE_VIDEO = 0
ROLE_COPY = 1


@dataclass(frozen=True)
class ShotPlan:
    """Ordered shot frame counts plus grid extents and boundary phase shift."""

    frames: tuple[int, ...]
    height: int
    width: int
    phase_shift: float = DEFAULT_PHASE_SHIFT

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(int(f) for f in self.frames))
        if len(self.frames) < 1:
            raise LayoutError("plan needs at least one shot")
        if any(f < 1 for f in self.frames):
            raise LayoutError(f"frame counts must be >= 1, got {self.frames}")
        if self.height < 1 or self.width < 1:
            raise LayoutError(f"grid extents must be >= 1, got "
                              f"{self.height}x{self.width}")
        if not self.phase_shift >= 0.0:
            raise LayoutError(f"phase shift must be >= 0, got "
                              f"{self.phase_shift}")

    @property
    def n_shots(self) -> int:
        return len(self.frames)

    @property
    def total_frames(self) -> int:
        return sum(self.frames)

    def frame_offsets(self) -> tuple[int, ...]:
        """Global frame index of each shot's first frame, plus the total."""
        offsets = [0]
        for f in self.frames:
            offsets.append(offsets[-1] + f)
        return tuple(offsets)


def shot_of_frame(plan: ShotPlan, t: int) -> int:
    """Index of the shot whose half-open global frame range contains t."""
    if not 0 <= t < plan.total_frames:
        raise LayoutError(
            f"frame {t} outside plan range [0, {plan.total_frames})"
        )
    offsets = plan.frame_offsets()
    for i in range(plan.n_shots):
        if t < offsets[i + 1]:
            return i
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class Box:
    """Grounded bounding box of reference `ref_id` at global frame `frame`.

    Coordinates are token-grid units with x along width and y along height;
    (x1, y1) inclusive-corner, (x2, y2) exclusive-corner, x1 < x2, y1 < y2.
    """

    ref_id: int
    frame: int
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.ref_id < 0:
            raise LayoutError(f"ref_id must be >= 0, got {self.ref_id}")
        if self.frame < 0:
            raise LayoutError(f"frame must be >= 0, got {self.frame}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise LayoutError(f"degenerate box {self.coords()}")
        if self.x1 < 0 or self.y1 < 0:
            raise LayoutError(f"box {self.coords()} has negative corner")

    def coords(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def as_row(self) -> list:
        return [self.ref_id, self.frame, self.x1, self.y1, self.x2, self.y2]

    def validate_in(self, plan: ShotPlan) -> None:
        if self.frame >= plan.total_frames:
            raise LayoutError(
                f"box {self.as_row()} references frame {self.frame} outside "
                f"the plan's {plan.total_frames} frames"
            )
        if self.x2 > plan.width or self.y2 > plan.height:
            raise LayoutError(
                f"box {self.as_row()} exceeds the {plan.height}x{plan.width} "
                f"grid"
            )


SUBJECT = "subject"
BACKGROUND = "background"


@dataclass(frozen=True)
class ReferenceSpec:
    """A reference image latent (subject or background) plus its boxes."""

    kind: str
    height: int
    width: int
    boxes: tuple[Box, ...]

    def __post_init__(self):
        if self.kind not in (SUBJECT, BACKGROUND):
            raise LayoutError(f"reference kind must be '{SUBJECT}' or "
                              f"'{BACKGROUND}', got {self.kind!r}")
        if self.height < 1 or self.width < 1:
            raise LayoutError(f"reference grid must be >= 1x1, got "
                              f"{self.height}x{self.width}")
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.boxes:
            raise LayoutError("reference has no boxes; omit the reference "
                              "instead of passing an empty grounding")

    @property
    def n_tokens(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class CopyBlock:
    """One reference copy: the token range realizing a single box."""

    ref_id: int
    box_index: int
    box: Box
    shot: int
    start: int
    stop: int
    grid_h: int
    grid_w: int


@dataclass(frozen=True)
class TokenLayout:
    """Compiled index space over video tokens and expanded reference copies."""

    plan: ShotPlan
    refs: tuple[ReferenceSpec, ...]
    video_ranges: tuple[tuple[int, int], ...]
    copies: tuple[CopyBlock, ...]
    total: int
    token_shot: np.ndarray = field(repr=False)
    token_role: np.ndarray = field(repr=False)

    @property
    def n_video(self) -> int:
        return self.video_ranges[-1][1]

    @property
    def n_ref_tokens(self) -> int:
        return sum(r.n_tokens for r in self.refs)

    def copies_of_ref(self, ref_id: int) -> tuple[CopyBlock, ...]:
        return tuple(c for c in self.copies if c.ref_id == ref_id)

    def copies_of_shot(self, shot: int) -> tuple[CopyBlock, ...]:
        return tuple(c for c in self.copies if c.shot == shot)

    def to_json_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "plan": {
                "shots": [{"frames": f} for f in self.plan.frames],
                "grid": {"H": self.plan.height, "W": self.plan.width},
                "phase_shift": self.plan.phase_shift,
            },
            "refs": [
                {
                    "kind": r.kind,
                    "grid": {"H": r.height, "W": r.width},
                    "boxes": [b.as_row() for b in r.boxes],
                }
                for r in self.refs
            ],
            "video_ranges": [list(r) for r in self.video_ranges],
            "copies": [
                {
                    "ref_id": c.ref_id,
                    "box_index": c.box_index,
                    "box": c.box.as_row(),
                    "shot": c.shot,
                    "range": [c.start, c.stop],
                }
                for c in self.copies
            ],
            "total": self.total,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def _validate_refs(plan: ShotPlan, refs) -> None:
    offsets = plan.frame_offsets()
    for m, ref in enumerate(refs):
        for box in ref.boxes:
            if box.ref_id != m:
                raise LayoutError(
                    f"box {box.as_row()} carries ref_id {box.ref_id} but "
                    f"belongs to reference {m}"
                )
            box.validate_in(plan)
        if ref.kind == BACKGROUND:
            seen_shots = set()
            for box in ref.boxes:
                shot = shot_of_frame(plan, box.frame)
                if shot in seen_shots:
                    raise LayoutError(
                        f"background reference {m} has two boxes in shot "
                        f"{shot}"
                    )
                seen_shots.add(shot)
                if box.frame != offsets[shot]:
                    raise LayoutError(
                        f"background box {box.as_row()} must sit on shot "
                        f"{shot}'s first frame {offsets[shot]}"
                    )
                if box.coords() != (0.0, 0.0, float(plan.width),
                                    float(plan.height)):
                    raise LayoutError(
                        f"background box {box.as_row()} must be full-frame "
                        f"(0, 0, {plan.width}, {plan.height})"
                    )


def build_token_layout(plan: ShotPlan, refs=()) -> TokenLayout:
    """Compile plan + references into the deterministic token index space."""
    refs = tuple(refs)
    _validate_refs(plan, refs)

    hw = plan.height * plan.width
    video_ranges = []
    cursor = 0
    for f in plan.frames:
        video_ranges.append((cursor, cursor + f * hw))
        cursor += f * hw

    copies = []
    for m, ref in enumerate(refs):
        for b, box in enumerate(ref.boxes):
            shot = shot_of_frame(plan, box.frame)
            copies.append(CopyBlock(
                ref_id=m, box_index=b, box=box, shot=shot,
                start=cursor, stop=cursor + ref.n_tokens,
                grid_h=ref.height, grid_w=ref.width,
            ))
            cursor += ref.n_tokens

    total = cursor
    token_shot = np.empty(total, dtype=np.int32)
    token_role = np.empty(total, dtype=np.uint8)
    for i, (start, stop) in enumerate(video_ranges):
        token_shot[start:stop] = i
        token_role[start:stop] = ROLE_VIDEO
    for c in copies:
        token_shot[c.start:c.stop] = c.shot
        token_role[c.start:c.stop] = ROLE_COPY
    token_shot.flags.writeable = False
    token_role.flags.writeable = False

    return TokenLayout(
        plan=plan, refs=refs, video_ranges=tuple(video_ranges),
        copies=tuple(copies), total=total,
        token_shot=token_shot, token_role=token_role,
    )


def video_token_positions(layout: TokenLayout) -> np.ndarray:
    """(t, i, h, w) per video token: global frame, shot, row, column."""
    plan = layout.plan
    hw = plan.height * plan.width
    t = np.repeat(np.arange(plan.total_frames, dtype=np.int64), hw)
    i = np.repeat(
        np.repeat(np.arange(plan.n_shots, dtype=np.int64), plan.frames), hw
    )
    h = np.tile(np.repeat(np.arange(plan.height, dtype=np.int64),
                          plan.width), plan.total_frames)
    w = np.tile(np.arange(plan.width, dtype=np.int64),
                plan.total_frames * plan.height)
    return np.stack([t, i, h, w], axis=1)


def replicate_text_embeddings(per_shot_text, plan: ShotPlan):
    """Tile per-shot text embeddings along that shot's frames.

    Args:
        per_shot_text: one [L_i, D] array per shot.
        plan: the shot plan providing frame counts.

    Returns:
        (embeddings, valid): embeddings [total_frames, L_max, D] with frame f
        of shot i carrying shot i's rows zero-padded to L_max, and a boolean
        validity mask [total_frames, L_max] marking real rows.
    """
    texts = [np.asarray(t, dtype=np.float64) for t in per_shot_text]
    if len(texts) != plan.n_shots:
        raise LayoutError(
            f"{len(texts)} text embeddings for {plan.n_shots} shots"
        )
    for t in texts:
        if t.ndim != 2:
            raise LayoutError("text embeddings must be [length, dim]")
    dims = {t.shape[1] for t in texts}
    if len(dims) > 1:
        raise LayoutError(f"inconsistent text embedding dims {sorted(dims)}")
    d = dims.pop()
    l_max = max(t.shape[0] for t in texts)

    out = np.zeros((plan.total_frames, l_max, d), dtype=np.float64)
    valid = np.zeros((plan.total_frames, l_max), dtype=bool)
    frame = 0
    for text, f in zip(texts, plan.frames):
        for _ in range(f):
            out[frame, : text.shape[0]] = text
            valid[frame, : text.shape[0]] = True
            frame += 1
    return out, valid


def _require(cond, message):
    if not cond:
        raise LayoutError(message)


def plan_and_refs_from_dict(doc: dict) -> tuple[ShotPlan, tuple[ReferenceSpec, ...]]:
    """Parse and validate the shot-plan config document."""
    _require(isinstance(doc, dict), "config root must be a JSON object")
    version = doc.get("version", CONFIG_VERSION)
    _require(version == CONFIG_VERSION,
             f"unsupported config version {version}")
    _require("shots" in doc, "config is missing 'shots'")
    _require(isinstance(doc["shots"], list) and doc["shots"],
             "'shots' must be a non-empty list")
    frames = []
    for s, shot in enumerate(doc["shots"]):
        _require(isinstance(shot, dict) and "frames" in shot,
                 f"shots[{s}] must be an object with a 'frames' field")
        _require(isinstance(shot["frames"], int),
                 f"shots[{s}].frames must be an integer")
        frames.append(shot["frames"])
    _require("grid" in doc and isinstance(doc["grid"], dict),
             "config is missing 'grid' {H, W}")
    grid = doc["grid"]
    _require("H" in grid and "W" in grid, "grid needs integer fields H and W")
    phase = doc.get("phase_shift", DEFAULT_PHASE_SHIFT)
    _require(isinstance(phase, (int, float)),
             "phase_shift must be a number")
    plan = ShotPlan(frames=tuple(frames), height=int(grid["H"]),
                    width=int(grid["W"]), phase_shift=float(phase))

    refs = []
    for m, rdoc in enumerate(doc.get("refs", [])):
        _require(isinstance(rdoc, dict), f"refs[{m}] must be an object")
        _require("kind" in rdoc, f"refs[{m}] is missing 'kind'")
        _require("grid" in rdoc and isinstance(rdoc["grid"], dict)
                 and "H" in rdoc["grid"] and "W" in rdoc["grid"],
                 f"refs[{m}] needs grid {{H, W}}")
        _require(isinstance(rdoc.get("boxes"), list) and rdoc["boxes"],
                 f"refs[{m}] needs a non-empty 'boxes' list")
        boxes = []
        for b, row in enumerate(rdoc["boxes"]):
            _require(isinstance(row, list) and len(row) == 6,
                     f"refs[{m}].boxes[{b}] must be [m, t, x1, y1, x2, y2]")
            boxes.append(Box(ref_id=int(row[0]), frame=int(row[1]),
                             x1=float(row[2]), y1=float(row[3]),
                             x2=float(row[4]), y2=float(row[5])))
        refs.append(ReferenceSpec(kind=rdoc["kind"],
                                  height=int(rdoc["grid"]["H"]),
                                  width=int(rdoc["grid"]["W"]),
                                  boxes=tuple(boxes)))
    return plan, tuple(refs)


def load_plan_config(path) -> tuple[ShotPlan, tuple[ReferenceSpec, ...]]:
    """Load a shot-plan JSON config file; see plan_and_refs_from_dict."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LayoutError(f"{path}: invalid JSON at line {exc.lineno}: "
                          f"{exc.msg}") from None
    return plan_and_refs_from_dict(doc)


def plan_config_dict(plan: ShotPlan, refs=()) -> dict:
    """Inverse of plan_and_refs_from_dict, for writing config files."""
    return {
        "version": CONFIG_VERSION,
        "shots": [{"frames": f} for f in plan.frames],
        "grid": {"H": plan.height, "W": plan.width},
        "phase_shift": plan.phase_shift,
        "refs": [
            {
                "kind": r.kind,
                "grid": {"H": r.height, "W": r.width},
                "boxes": [b.as_row() for b in r.boxes],
            }
            for r in refs
        ],
    }
