"""Temporal attention over multi-shot video tokens and reference copies.

The forward pass projects the in-context sequence (video latents plus one
block per reference), rotates video queries/keys with the shot-aware table
and each reference copy with its box-sampled table, runs masked multi-head
attention with 1/sqrt(head_dim) scaling, averages the copies of every
reference back into a single block, and applies the output projection. The
output extents equal the input extents.

Values are never rotated. Copies share their reference's content; only
their rotation tables differ, which is what binds each copy to one box.

`temporal_attention_naive` is the sequential oracle: the same map computed
token by token with explicit loops, its own inline angle formulas, and the
pairwise mask rule instead of the materialized mask. The optimized forward
is validated against it under tolerance, never bitwise.

`temporal_attention_backward` is the analytic adjoint used by the gradient
checks: rotation backward is rotation by the negated angles, and the
copy-mean backward scatters 1/N_box of each reference gradient to every
copy before summing into the shared content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .layout import TokenLayout, video_token_positions
from .mask import build_mask, mask_rule
from .rope import RopeSpec, sequence_rope_angles
from .tensor import as_tensor, resolve_dtype


def _float_tensor(x) -> np.ndarray:
    """Validated float tensor; non-float inputs are promoted to double."""
    arr = np.asarray(x)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return as_tensor(arr, arr.dtype)


@dataclass(frozen=True)
class AttnWeights:
    """Projection weights for one temporal-attention block."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    heads: int = 1

    def __post_init__(self):
        mats = {"w_q": self.w_q, "w_k": self.w_k,
                "w_v": self.w_v, "w_o": self.w_o}
        d = None
        for name, m in mats.items():
            arr = _float_tensor(m)
            object.__setattr__(self, name, arr)
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise ValueError(f"{name} must be square, got {arr.shape}")
            d = d or arr.shape[0]
            if arr.shape[0] != d or arr.dtype != self.w_q.dtype:
                raise ValueError("projection weights disagree in shape/dtype")
        if self.heads < 1 or d % self.heads:
            raise ValueError(
                f"model dim {d} not divisible into {self.heads} heads"
            )
        if (d // self.heads) % 2:
            raise ValueError(f"head_dim {d // self.heads} must be even")

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @classmethod
    def random(cls, d_model: int, heads: int, rng: np.random.Generator,
               precision="double") -> "AttnWeights":
        """Gaussian weights scaled by 1/sqrt(d_model)."""
        dtype = resolve_dtype(precision)
        scale = 1.0 / math.sqrt(d_model)

        def draw():
            return (rng.standard_normal((d_model, d_model)) * scale).astype(dtype)

        return cls(w_q=draw(), w_k=draw(), w_v=draw(), w_o=draw(), heads=heads)


@dataclass(frozen=True)
class InContext:
    """In-context sequence: video latents plus one block per reference."""

    video: np.ndarray
    refs: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "video", _float_tensor(self.video))
        object.__setattr__(self, "refs",
                           tuple(_float_tensor(r) for r in self.refs))

    @property
    def d_model(self) -> int:
        return self.video.shape[1]

    def concat(self) -> np.ndarray:
        """Stacked [video, ref blocks] rows, the pre-copy sequence."""
        return np.concatenate([self.video, *self.refs], axis=0) \
            if self.refs else self.video.copy()

    @classmethod
    def random(cls, layout: TokenLayout, d_model: int,
               rng: np.random.Generator, precision="double") -> "InContext":
        dtype = resolve_dtype(precision)
        video = rng.standard_normal((layout.n_video, d_model)).astype(dtype)
        refs = tuple(
            rng.standard_normal((r.n_tokens, d_model)).astype(dtype)
            for r in layout.refs
        )
        return cls(video=video, refs=refs)


def _check_ctx(ctx: InContext, layout: TokenLayout) -> None:
    if ctx.video.ndim != 2 or ctx.video.shape[0] != layout.n_video:
        raise ValueError(
            f"video block {ctx.video.shape} != ({layout.n_video}, D)"
        )
    if len(ctx.refs) != len(layout.refs):
        raise ValueError(
            f"{len(ctx.refs)} reference blocks for {len(layout.refs)} refs"
        )
    for m, (block, ref) in enumerate(zip(ctx.refs, layout.refs)):
        if block.shape != (ref.n_tokens, ctx.d_model):
            raise ValueError(
                f"reference {m} block {block.shape} != "
                f"({ref.n_tokens}, {ctx.d_model})"
            )
        if block.dtype != ctx.video.dtype:
            raise ValueError("mixed precisions in one context")


def expand_copies(ctx: InContext, layout: TokenLayout) -> np.ndarray:
    """Expanded [total, D] sequence: video rows, then one block per box."""
    _check_ctx(ctx, layout)
    x = np.empty((layout.total, ctx.d_model), dtype=ctx.video.dtype)
    x[: layout.n_video] = ctx.video
    for c in layout.copies:
        x[c.start: c.stop] = ctx.refs[c.ref_id]
    return x


def aggregate_copies(attn_out: np.ndarray, layout: TokenLayout) -> np.ndarray:
    """Collapse copies back to one block per reference by element-wise mean.

    Video rows pass through; the result has n_video + n_ref_tokens rows.
    """
    if attn_out.ndim != 2 or attn_out.shape[0] != layout.total:
        raise ValueError(
            f"attention output {attn_out.shape} != ({layout.total}, D)"
        )
    nv = layout.n_video
    rows = [attn_out[:nv]]
    for m, ref in enumerate(layout.refs):
        copies = layout.copies_of_ref(m)
        acc = np.zeros((ref.n_tokens, attn_out.shape[1]),
                       dtype=np.result_type(attn_out.dtype, np.float64))
        for c in copies:
            acc += attn_out[c.start: c.stop]
        rows.append((acc / len(copies)).astype(attn_out.dtype))
    return np.concatenate(rows, axis=0)


@dataclass(frozen=True)
class AttnCache:
    """Intermediates of one forward call, consumed by the backward pass."""

    layout: TokenLayout
    weights: AttnWeights
    rope_spec: RopeSpec
    x: np.ndarray            # expanded input [total, D]
    q_rot: np.ndarray        # rotated queries [total, D]
    k_rot: np.ndarray        # rotated keys [total, D]
    v: np.ndarray            # values [total, D]
    probs: np.ndarray        # attention weights [heads, total, total]
    aggregated: np.ndarray   # post-aggregation sequence [N0, D]
    angles: np.ndarray       # rotation table [total, head_dim/2]


def _check_rope_spec(weights: AttnWeights, rope_spec: RopeSpec) -> None:
    if rope_spec.pairs != weights.head_dim // 2:
        raise ValueError(
            f"rotation spec covers {rope_spec.pairs} pairs but head_dim "
            f"{weights.head_dim} needs {weights.head_dim // 2}"
        )


def _split_outputs(seq: np.ndarray, layout: TokenLayout) -> InContext:
    nv = layout.n_video
    refs = []
    row = nv
    for ref in layout.refs:
        refs.append(seq[row: row + ref.n_tokens])
        row += ref.n_tokens
    return InContext(video=seq[:nv], refs=tuple(refs))


def temporal_attention_forward(ctx: InContext, layout: TokenLayout,
                               weights: AttnWeights, rope_spec: RopeSpec):
    """Masked multi-head temporal attention with rotary position tables.

    Returns (out, cache) where out is an InContext with the same extents as
    ctx and cache feeds temporal_attention_backward.
    """
    _check_ctx(ctx, layout)
    _check_rope_spec(weights, rope_spec)
    if weights.w_q.dtype != ctx.video.dtype:
        raise ValueError(
            f"weights are {weights.w_q.dtype} but context is "
            f"{ctx.video.dtype}"
        )

    x = expand_copies(ctx, layout)
    q = kernels.matmul(x, weights.w_q)
    k = kernels.matmul(x, weights.w_k)
    v = kernels.matmul(x, weights.w_v)

    angles = sequence_rope_angles(layout, rope_spec).angles
    heads, dh = weights.heads, weights.head_dim
    scale = 1.0 / math.sqrt(dh)
    mask = build_mask(layout)

    q_rot = np.empty_like(q)
    k_rot = np.empty_like(k)
    attn = np.empty_like(q)
    probs = np.empty((heads, layout.total, layout.total), dtype=q.dtype)
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        q_rot[:, cols] = kernels.rotate_pairs(q[:, cols], angles)
        k_rot[:, cols] = kernels.rotate_pairs(k[:, cols], angles)
        attn[:, cols], probs[h] = kernels.masked_attention(
            q_rot[:, cols], k_rot[:, cols], v[:, cols], mask, scale
        )

    aggregated = aggregate_copies(attn, layout)
    out_seq = kernels.matmul(aggregated, weights.w_o)
    cache = AttnCache(layout=layout, weights=weights, rope_spec=rope_spec,
                      x=x, q_rot=q_rot, k_rot=k_rot, v=v, probs=probs,
                      aggregated=aggregated, angles=angles)
    return _split_outputs(out_seq, layout), cache


@dataclass(frozen=True)
class AttnGrads:
    """Gradients w.r.t. the forward inputs and projection weights."""

    video: np.ndarray
    refs: tuple[np.ndarray, ...]
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray


def temporal_attention_backward(cache: AttnCache,
                                upstream: InContext) -> AttnGrads:
    """Analytic gradients of temporal_attention_forward.

    `upstream` carries the gradient of a scalar loss w.r.t. the forward
    output, in the same (video, refs) shape as the output.
    """
    layout = cache.layout
    weights = cache.weights
    _check_ctx(upstream, layout)
    if upstream.d_model != weights.d_model:
        raise ValueError("upstream gradient dim != model dim")

    d_out = upstream.concat().astype(np.float64)
    x = cache.x.astype(np.float64)
    aggregated = cache.aggregated.astype(np.float64)
    w_o = weights.w_o.astype(np.float64)

    d_w_o = aggregated.T @ d_out
    d_agg = d_out @ w_o.T

    # copy-mean backward: each copy receives 1/N_box of its reference's grad
    nv = layout.n_video
    d_attn = np.zeros((layout.total, weights.d_model))
    d_attn[:nv] = d_agg[:nv]
    row = nv
    for m, ref in enumerate(layout.refs):
        copies = layout.copies_of_ref(m)
        share = d_agg[row: row + ref.n_tokens] / len(copies)
        for c in copies:
            d_attn[c.start: c.stop] = share
        row += ref.n_tokens

    heads, dh = weights.heads, weights.head_dim
    scale = 1.0 / math.sqrt(dh)
    d_q_rot = np.empty_like(d_attn)
    d_k_rot = np.empty_like(d_attn)
    d_v = np.empty_like(d_attn)
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        p = cache.probs[h].astype(np.float64)
        v_h = cache.v[:, cols].astype(np.float64)
        d_o_h = d_attn[:, cols]
        d_p = d_o_h @ v_h.T
        d_v[:, cols] = p.T @ d_o_h
        d_s = p * (d_p - (d_p * p).sum(axis=1, keepdims=True))
        d_q_rot[:, cols] = scale * (d_s @ cache.k_rot[:, cols].astype(np.float64))
        d_k_rot[:, cols] = scale * (d_s.T @ cache.q_rot[:, cols].astype(np.float64))

    # rotation backward: rotate by the negated angles
    d_q = np.empty_like(d_q_rot)
    d_k = np.empty_like(d_k_rot)
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        d_q[:, cols] = kernels.rotate_pairs(d_q_rot[:, cols], -cache.angles)
        d_k[:, cols] = kernels.rotate_pairs(d_k_rot[:, cols], -cache.angles)

    w_q = weights.w_q.astype(np.float64)
    w_k = weights.w_k.astype(np.float64)
    w_v = weights.w_v.astype(np.float64)
    d_w_q = x.T @ d_q
    d_w_k = x.T @ d_k
    d_w_v = x.T @ d_v
    d_x = d_q @ w_q.T + d_k @ w_k.T + d_v @ w_v.T

    # expansion backward: copies sum into the shared reference content
    d_video = d_x[:nv].copy()
    d_refs = []
    for m, ref in enumerate(layout.refs):
        acc = np.zeros((ref.n_tokens, weights.d_model))
        for c in layout.copies_of_ref(m):
            acc += d_x[c.start: c.stop]
        d_refs.append(acc)

    return AttnGrads(video=d_video, refs=tuple(d_refs),
                     w_q=d_w_q, w_k=d_w_k, w_v=d_w_v, w_o=d_w_o)


def temporal_attention_naive(ctx: InContext, layout: TokenLayout,
                             weights: AttnWeights,
                             rope_spec: RopeSpec) -> InContext:
    """Sequential transcription of the attention map, used as the oracle.

    Token-by-token loops with fixed summation order; angles are recomputed
    inline from the plan and boxes, and admissibility comes from the
    pairwise mask rule rather than the materialized mask.
    """
    _check_ctx(ctx, layout)
    _check_rope_spec(weights, rope_spec)
    plan = layout.plan
    d = weights.d_model
    heads, dh = weights.heads, weights.head_dim
    scale = 1.0 / math.sqrt(dh)

    w_q = weights.w_q.astype(np.float64).tolist()
    w_k = weights.w_k.astype(np.float64).tolist()
    w_v = weights.w_v.astype(np.float64).tolist()
    w_o = weights.w_o.astype(np.float64).tolist()
    video = ctx.video.astype(np.float64).tolist()
    refs = [r.astype(np.float64).tolist() for r in ctx.refs]

    def project(rows, w):
        out = []
        for row in rows:
            proj = []
            for j in range(d):
                acc = 0.0
                for i in range(d):
                    acc += row[i] * w[i][j]
                proj.append(acc)
            out.append(proj)
        return out

    q_video, k_video, v_video = (project(video, w) for w in (w_q, w_k, w_v))
    q_refs = [project(r, w_q) for r in refs]
    k_refs = [project(r, w_k) for r in refs]
    v_refs = [project(r, w_v) for r in refs]

    def freqs(pairs):
        return [rope_spec.base ** (-p / pairs) for p in range(pairs)]

    f_t = freqs(rope_spec.pairs_t) if rope_spec.pairs_t else []
    f_h = freqs(rope_spec.pairs_h) if rope_spec.pairs_h else []
    f_w = freqs(rope_spec.pairs_w) if rope_spec.pairs_w else []

    def pair_angles(t_eff, h_pos, w_pos):
        return ([t_eff * f for f in f_t] + [h_pos * f for f in f_h]
                + [w_pos * f for f in f_w])

    def rotate_token(vec, ang):
        out = [0.0] * d
        for h in range(heads):
            base = h * dh
            for p in range(dh // 2):
                c = math.cos(ang[p])
                s = math.sin(ang[p])
                e = vec[base + 2 * p]
                o = vec[base + 2 * p + 1]
                out[base + 2 * p] = e * c - o * s
                out[base + 2 * p + 1] = e * s + o * c
        return out

    # assemble the expanded, rotated sequence in layout order
    q_seq, k_seq, v_seq = [], [], []
    for t, i, h_pos, w_pos in video_token_positions(layout).tolist():
        ang = pair_angles(t + i * plan.phase_shift, h_pos, w_pos)
        idx = len(q_seq)
        q_seq.append(rotate_token(q_video[idx], ang))
        k_seq.append(rotate_token(k_video[idx], ang))
        v_seq.append(v_video[idx])
    for c in layout.copies:
        box = c.box
        t_eff = box.frame + c.shot * plan.phase_shift
        for j in range(c.grid_h):
            h_pos = box.y1 + (box.y2 - box.y1) / c.grid_h * j
            for kcol in range(c.grid_w):
                w_pos = box.x1 + (box.x2 - box.x1) / c.grid_w * kcol
                ang = pair_angles(t_eff, h_pos, w_pos)
                r = j * c.grid_w + kcol
                q_seq.append(rotate_token(q_refs[c.ref_id][r], ang))
                k_seq.append(rotate_token(k_refs[c.ref_id][r], ang))
                v_seq.append(v_refs[c.ref_id][r])

    total = layout.total
    attn = [[0.0] * d for _ in range(total)]
    for h in range(heads):
        lo = h * dh
        for qi in range(total):
            keys = [ki for ki in range(total) if mask_rule(layout, qi, ki)]
            logits = []
            for ki in keys:
                acc = 0.0
                for dd in range(lo, lo + dh):
                    acc += q_seq[qi][dd] * k_seq[ki][dd]
                logits.append(acc * scale)
            top = max(logits)
            exps = [math.exp(l - top) for l in logits]
            denom = 0.0
            for e in exps:
                denom += e
            for ki, e in zip(keys, exps):
                p = e / denom
                for dd in range(lo, lo + dh):
                    attn[qi][dd] += p * v_seq[ki][dd]

    # per-reference mean over copies, then the output projection
    nv = layout.n_video
    agg = [row[:] for row in attn[:nv]]
    for m, ref in enumerate(layout.refs):
        copies = layout.copies_of_ref(m)
        for r in range(ref.n_tokens):
            mean_row = [0.0] * d
            for c in copies:
                row = attn[c.start + r]
                for dd in range(d):
                    mean_row[dd] += row[dd]
            agg.append([val / len(copies) for val in mean_row])

    out = project(agg, w_o)
    seq = np.asarray(out, dtype=np.float64)
    return _split_outputs(seq, layout)
