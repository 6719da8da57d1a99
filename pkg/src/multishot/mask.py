"""Multi-shot / multi-reference attention mask.

Video tokens attend to every video token regardless of shot, which is what
keeps the shots globally consistent. Reference copies are fenced per shot:
a copy assigned to shot i exchanges attention only with shot i's video
tokens and with the other copies of shot i. The resulting mask is symmetric
and every row keeps at least one admissible key.

:func:`mask_rule` is the single-pair rule and serves as the oracle;
:func:`build_mask` materializes the dense boolean matrix in blocks and is
checked against the rule exhaustively. A block-descriptor JSON form is also
emitted so kernels can skip fenced regions without reading the dense mask.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layout import ROLE_COPY, ROLE_VIDEO, TokenLayout
from .tensor import write_msmt

BLOCKS_VERSION = 1


def mask_rule(layout: TokenLayout, q: int, k: int) -> bool:
    """May token q attend to token k?

    True iff both are video tokens, or both are copies of the same shot, or
    one is a video token and the other a copy of the same shot.
    """
    if not (0 <= q < layout.total and 0 <= k < layout.total):
        raise IndexError(f"token pair ({q}, {k}) outside [0, {layout.total})")
    q_video = layout.token_role[q] == ROLE_VIDEO
    k_video = layout.token_role[k] == ROLE_VIDEO
    if q_video and k_video:
        return True
    return layout.token_shot[q] == layout.token_shot[k]


def build_mask(layout: TokenLayout) -> np.ndarray:
    """Dense boolean mask over the full token sequence, block by block."""
    n = layout.total
    nv = layout.n_video
    mask = np.zeros((n, n), dtype=bool)
    mask[:nv, :nv] = True
    for c in layout.copies:
        for start, stop in _shot_ranges(layout, c.shot):
            mask[c.start:c.stop, start:stop] = True
            mask[start:stop, c.start:c.stop] = True
    return mask


def _shot_ranges(layout: TokenLayout, shot: int):
    """Video range of a shot followed by its copy ranges."""
    yield layout.video_ranges[shot]
    for c in layout.copies:
        if c.shot == shot:
            yield (c.start, c.stop)


def mask_blocks(layout: TokenLayout) -> dict:
    """Block-descriptor form of the mask (per-shot extents)."""
    return {
        "version": BLOCKS_VERSION,
        "total": layout.total,
        "n_video": layout.n_video,
        "video_blocks": [
            {"shot": i, "start": start, "stop": stop}
            for i, (start, stop) in enumerate(layout.video_ranges)
        ],
        "copy_blocks": [
            {
                "shot": c.shot,
                "ref_id": c.ref_id,
                "box_index": c.box_index,
                "start": c.start,
                "stop": c.stop,
            }
            for c in layout.copies
        ],
    }


def mask_from_blocks(blocks: dict) -> np.ndarray:
    """Reconstruct the dense mask from its block descriptor."""
    n = blocks["total"]
    nv = blocks["n_video"]
    mask = np.zeros((n, n), dtype=bool)
    mask[:nv, :nv] = True
    video_of_shot = {b["shot"]: (b["start"], b["stop"])
                     for b in blocks["video_blocks"]}
    for c in blocks["copy_blocks"]:
        peers = [video_of_shot[c["shot"]]]
        peers += [(o["start"], o["stop"]) for o in blocks["copy_blocks"]
                  if o["shot"] == c["shot"]]
        for start, stop in peers:
            mask[c["start"]:c["stop"], start:stop] = True
            mask[start:stop, c["start"]:c["stop"]] = True
    return mask


def write_mask_msmt(path, mask: np.ndarray) -> None:
    """Interchange export: float32 MSMT tensor with 1.0 = may attend."""
    write_msmt(path, mask.astype(np.float32))


def write_mask_pbm(path, mask: np.ndarray) -> None:
    """Visualization export, plain PBM (P1). Black (1) marks blocked pairs."""
    rows, cols = mask.shape
    lines = [f"P1\n{cols} {rows}\n"]
    blocked = ~mask
    for r in range(rows):
        lines.append(" ".join("1" if b else "0" for b in blocked[r]) + "\n")
    Path(path).write_text("".join(lines))


def write_mask_blocks(path, layout: TokenLayout) -> None:
    Path(path).write_text(
        json.dumps(mask_blocks(layout), indent=2, sort_keys=True) + "\n"
    )
