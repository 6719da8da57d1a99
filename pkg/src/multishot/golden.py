"""Golden attention vectors: frozen (config, inputs, outputs) triplets.

Each case directory holds a config JSON, the input tensors (context blocks
and projection weights) and the forward outputs, all in the MSMT format.
Verification re-runs the forward pass on the stored inputs and compares
against the stored outputs, so any tampered or bit-rotted file surfaces as
a named mismatch. Regeneration is guarded behind an explicit CLI flag.
"""

from __future__ import annotations

import json
import shutil
from pathlib import Path

import numpy as np

from .attention import AttnWeights, InContext, temporal_attention_forward
from .layout import build_token_layout, plan_and_refs_from_dict
from .rope import RopeSpec
from .tensor import max_relative_error, read_msmt, write_msmt

GOLDEN_VERSION = "v1"
VERIFY_TOLERANCE = 1e-9


class GoldenMismatch(AssertionError):
    """A golden vector no longer matches a recomputed forward pass."""


CASES = {
    "single_shot_plain": {
        "plan": {
            "shots": [{"frames": 2}],
            "grid": {"H": 2, "W": 2},
            "phase_shift": 0.5,
            "refs": [],
        },
        "d_model": 8,
        "heads": 2,
        "seed": 11,
    },
    "two_shot_refs": {
        "plan": {
            "shots": [{"frames": 2}, {"frames": 2}],
            "grid": {"H": 2, "W": 2},
            "phase_shift": 0.5,
            "refs": [
                {"kind": "subject", "grid": {"H": 2, "W": 2},
                 "boxes": [[0, 0, 0.0, 0.0, 1.0, 1.0],
                           [0, 2, 1.0, 1.0, 2.0, 2.0]]},
                {"kind": "background", "grid": {"H": 2, "W": 2},
                 "boxes": [[1, 2, 0.0, 0.0, 2.0, 2.0]]},
            ],
        },
        "d_model": 8,
        "heads": 1,
        "seed": 23,
    },
    "three_shot_multihead": {
        "plan": {
            "shots": [{"frames": 1}, {"frames": 2}, {"frames": 1}],
            "grid": {"H": 1, "W": 2},
            "phase_shift": 0.25,
            "refs": [
                {"kind": "subject", "grid": {"H": 1, "W": 1},
                 "boxes": [[0, 1, 0.5, 0.0, 1.5, 1.0],
                           [0, 3, 1.0, 0.0, 2.0, 1.0]]},
            ],
        },
        "d_model": 16,
        "heads": 4,
        "seed": 37,
    },
}


def golden_root() -> Path:
    return Path(__file__).parent / "goldens" / GOLDEN_VERSION


def _case_setup(spec: dict):
    plan, refs = plan_and_refs_from_dict(spec["plan"])
    layout = build_token_layout(plan, refs)
    rope_spec = RopeSpec.for_head_dim(spec["d_model"] // spec["heads"])
    return layout, rope_spec


def generate_case(name: str, case_dir: Path) -> None:
    """Draw inputs from the case seed, run the forward, write everything."""
    spec = CASES[name]
    layout, rope_spec = _case_setup(spec)
    rng = np.random.default_rng(spec["seed"])
    weights = AttnWeights.random(spec["d_model"], spec["heads"], rng)
    ctx = InContext.random(layout, spec["d_model"], rng)
    out, _ = temporal_attention_forward(ctx, layout, weights, rope_spec)

    case_dir.mkdir(parents=True, exist_ok=True)
    (case_dir / "config.json").write_text(
        json.dumps(spec, indent=2, sort_keys=True) + "\n"
    )
    write_msmt(case_dir / "video.msmt", ctx.video)
    for m, block in enumerate(ctx.refs):
        write_msmt(case_dir / f"ref_{m:02d}.msmt", block)
    for wname in ("w_q", "w_k", "w_v", "w_o"):
        write_msmt(case_dir / f"{wname}.msmt", getattr(weights, wname))
    write_msmt(case_dir / "out_video.msmt", out.video)
    for m, block in enumerate(out.refs):
        write_msmt(case_dir / f"out_ref_{m:02d}.msmt", block)


def regenerate_all(root: Path | None = None) -> list[str]:
    root = Path(root) if root is not None else golden_root()
    if root.exists():
        shutil.rmtree(root)
    for name in sorted(CASES):
        generate_case(name, root / name)
    return sorted(CASES)


def verify_case(name: str, case_dir: Path) -> None:
    """Recompute the forward pass from stored inputs and compare outputs."""
    if not case_dir.is_dir():
        raise GoldenMismatch(f"golden case {name}: directory missing")
    try:
        spec = json.loads((case_dir / "config.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise GoldenMismatch(f"golden case {name}: unreadable config "
                             f"({exc})") from None

    def load(fname):
        try:
            return read_msmt(case_dir / fname)
        except (OSError, ValueError) as exc:
            raise GoldenMismatch(
                f"golden case {name}: vector {fname} unreadable ({exc})"
            ) from None

    try:
        layout, rope_spec = _case_setup(spec)
        weights = AttnWeights(w_q=load("w_q.msmt"), w_k=load("w_k.msmt"),
                              w_v=load("w_v.msmt"), w_o=load("w_o.msmt"),
                              heads=spec["heads"])
        ctx = InContext(
            video=load("video.msmt"),
            refs=tuple(load(f"ref_{m:02d}.msmt")
                       for m in range(len(layout.refs))),
        )
        out, _ = temporal_attention_forward(ctx, layout, weights, rope_spec)
    except GoldenMismatch:
        raise
    except (ValueError, KeyError) as exc:
        raise GoldenMismatch(f"golden case {name}: stale inputs "
                             f"({exc})") from None

    checks = [("out_video.msmt", out.video)]
    checks += [(f"out_ref_{m:02d}.msmt", block)
               for m, block in enumerate(out.refs)]
    for fname, recomputed in checks:
        stored = load(fname)
        if stored.shape != recomputed.shape:
            raise GoldenMismatch(
                f"golden case {name}: vector {fname} shape {stored.shape} "
                f"!= recomputed {recomputed.shape}"
            )
        err = max_relative_error(stored, recomputed)
        if err > VERIFY_TOLERANCE:
            raise GoldenMismatch(
                f"golden case {name}: vector {fname} drifted "
                f"(rel err {err:.3e} > {VERIFY_TOLERANCE})"
            )


def verify_all(root: Path | None = None) -> list[str]:
    """Verify every case; returns the verified names, raises on mismatch."""
    root = Path(root) if root is not None else golden_root()
    for name in sorted(CASES):
        verify_case(name, root / name)
    return sorted(CASES)
