"""Procedural stylized image/video generator with exact labels and flow.

Scenes are simple shapes over patterned backgrounds on a 64x64 canvas. Styles
control palette, background pattern and texture; contents control shape kind,
coarse position and (for video) a constant integer velocity. Shape velocities
are even so frames stay exact translations after the 0.5x downscale, which is
what makes the ground-truth flow reproduce frames bit-for-bit off occlusions.

Training pairs follow a decoupled-crop scheme: the target is the canvas at
scale 0.5 (center crop), the style reference a random 32x32 window of the
canvas at scale 0.75, so the reference shares the style but not the exact
content framing of the target.
"""

from __future__ import annotations

import colorsys
import os
from dataclasses import dataclass, field

import numpy as np

from .io import read_json, save_tensor, write_json
from .seeding import rng_for

CANVAS = 64
CROP = 32
REF_SCALE_SIZE = 48  # canvas * 0.75
MAX_REF_OFFSET = REF_SCALE_SIZE - CROP  # style crop offsets range over [0, 16]^2

KINDS = ("circle", "square", "triangle", "star")
N_KINDS = len(KINDS)
N_QUAD = 4  # 2x2 coarse position grid

# token vocabulary: kind ids, then quadrant x/y, then velocity buckets
TOK_KIND = 0                      # 4 ids
TOK_QX = N_KINDS                  # 2 ids
TOK_QY = TOK_QX + 2               # 2 ids
TOK_VX = TOK_QY + 2               # 3 ids (-2, 0, +2 canvas px/frame)
TOK_VY = TOK_VX + 3               # 3 ids
VOCAB_SIZE = TOK_VY + 3
TOKENS_PER_SAMPLE = 5
VELOCITIES = (-2, 0, 2)


class GenerationError(RuntimeError):
    pass


@dataclass
class StyleSpec:
    """Deterministic rendering style: palette plus background pattern."""

    style_id: int
    palette: list  # list of RGB triples in [0,1]; [0] is the background base
    texture_freq: float
    stroke_noise: float
    background_mode: str  # flat | gradient | hatched
    angle: float = 0.0

    def to_json(self):
        return {
            "style_id": self.style_id,
            "palette": [[float(c) for c in rgb] for rgb in self.palette],
            "texture_freq": float(self.texture_freq),
            "stroke_noise": float(self.stroke_noise),
            "background_mode": self.background_mode,
            "angle": float(self.angle),
        }

    @staticmethod
    def from_json(d):
        return StyleSpec(
            style_id=d["style_id"],
            palette=[tuple(rgb) for rgb in d["palette"]],
            texture_freq=d["texture_freq"],
            stroke_noise=d["stroke_noise"],
            background_mode=d["background_mode"],
            angle=d["angle"],
        )


@dataclass
class Shape:
    kind: str
    center: tuple  # (x, y) canvas coords
    size: float
    velocity: tuple = (0, 0)  # canvas px/frame, even integers


@dataclass
class ContentSpec:
    """Concrete scene: shapes with positions/velocities plus the class id."""

    content_id: int
    shapes: list = field(default_factory=list)

    def tokens(self):
        """Integer token sequence encoding kind, quadrant and velocity buckets."""
        s = self.shapes[0]
        kind = KINDS.index(s.kind)
        qx, qy = quadrant_of(self.content_id)
        vx = VELOCITIES.index(int(s.velocity[0]))
        vy = VELOCITIES.index(int(s.velocity[1]))
        return np.array(
            [TOK_KIND + kind, TOK_QX + qx, TOK_QY + qy, TOK_VX + vx, TOK_VY + vy],
            dtype=np.int64,
        )


def quadrant_of(content_id):
    q = content_id % N_QUAD
    return q % 2, q // 2


def kind_of(content_id):
    return KINDS[content_id // N_QUAD]


def tokens_for(content_id, velocity=(0, 0)):
    kind = content_id // N_QUAD
    qx, qy = quadrant_of(content_id)
    vx = VELOCITIES.index(int(velocity[0]))
    vy = VELOCITIES.index(int(velocity[1]))
    return np.array(
        [TOK_KIND + kind, TOK_QX + qx, TOK_QY + qy, TOK_VX + vx, TOK_VY + vy],
        dtype=np.int64,
    )


# -- style derivation --------------------------------------------------------

def _hsv(h, s, v):
    return tuple(colorsys.hsv_to_rgb(h % 1.0, s, v))


def derive_style(style_id, seed):
    """StyleSpec as a pure function of (style_id, seed).

    style_id 0 is the plain flat "photoreal" style used for base-model
    pretraining and all video data.
    """
    rng = rng_for(seed, "style", style_id)
    if style_id == 0:
        palette = [
            (0.86, 0.86, 0.88),
            (0.85, 0.18, 0.16),
            (0.16, 0.55, 0.82),
            (0.18, 0.65, 0.30),
            (0.93, 0.62, 0.12),
        ]
        return StyleSpec(0, palette, texture_freq=0.0, stroke_noise=0.0,
                         background_mode="flat", angle=0.0)

    # hue = the style's signature; fills stay in the same hue family so any
    # crop (background- or shape-dominated) carries the signature
    hue = (0.05 + 0.618034 * style_id + rng.uniform(-0.015, 0.015)) % 1.0
    dark_bg = style_id % 2 == 1
    bg_v = rng.uniform(0.16, 0.26) if dark_bg else rng.uniform(0.78, 0.9)
    bg_s = rng.uniform(0.5, 0.7)
    bg = _hsv(hue, bg_s, bg_v)
    bg2 = _hsv(hue + 0.07, min(1.0, bg_s + 0.2), bg_v * 0.72 + 0.08)
    fill_v = rng.uniform(0.85, 0.98) if dark_bg else rng.uniform(0.3, 0.45)
    fills = [
        _hsv(hue + 0.10, rng.uniform(0.75, 0.95), fill_v),
        _hsv(hue - 0.08, rng.uniform(0.7, 0.9), fill_v),
        _hsv(hue + 0.16, rng.uniform(0.65, 0.9), min(1.0, fill_v + 0.1)),
        _hsv(hue - 0.14, rng.uniform(0.6, 0.85), fill_v),
    ]
    mode = ("flat", "gradient", "hatched")[style_id % 3]
    freq = float(rng.choice([2.0, 3.0, 4.0, 6.0])) if mode != "flat" else float(
        rng.choice([3.0, 5.0])
    )
    return StyleSpec(
        style_id=style_id,
        palette=[bg, bg2] + fills,
        texture_freq=freq,
        stroke_noise=float(rng.uniform(0.03, 0.09)),
        background_mode=mode,
        angle=float(rng.uniform(0, np.pi)),
    )


def derive_contents(n_contents):
    if n_contents > N_KINDS * N_QUAD:
        raise GenerationError(
            f"content vocabulary supports up to {N_KINDS * N_QUAD} classes, got {n_contents}"
        )
    return list(range(n_contents))


# -- rasterization -----------------------------------------------------------

_SS = 2  # supersampling factor for coverage maps


def _coverage(shape, frame_offset=(0.0, 0.0)):
    """Antialiased coverage map of a shape on the canvas, in [0,1]."""
    n = CANVAS * _SS
    c = (np.arange(n) + 0.5) / _SS
    xs, ys = np.meshgrid(c, c)
    cx = shape.center[0] + frame_offset[0]
    cy = shape.center[1] + frame_offset[1]
    dx = xs - cx
    dy = ys - cy
    r = shape.size
    if shape.kind == "circle":
        inside = dx * dx + dy * dy <= r * r
    elif shape.kind == "square":
        inside = np.maximum(np.abs(dx), np.abs(dy)) <= r
    elif shape.kind == "triangle":
        # upward equilateral triangle with circumradius r
        inside = (dy <= 0.5 * r) & (np.sqrt(3.0) * np.abs(dx) - dy <= r)
    elif shape.kind == "star":
        rho = np.sqrt(dx * dx + dy * dy)
        phi = np.arctan2(dy, dx)
        spikes = 0.5 + 0.5 * np.cos(5.0 * phi)
        radius = r * (0.45 + 0.55 * spikes)
        inside = rho <= radius
    else:
        raise GenerationError(f"unknown shape kind {shape.kind!r}")
    cov = inside.astype(np.float32).reshape(CANVAS, _SS, CANVAS, _SS).mean(axis=(1, 3))
    return cov


def _background(style):
    n = CANVAS
    xs, ys = np.meshgrid(np.arange(n, dtype=np.float32), np.arange(n, dtype=np.float32))
    a = np.asarray(style.palette[0], dtype=np.float32)
    if style.background_mode == "flat":
        return np.broadcast_to(a, (n, n, 3)).copy()
    b = np.asarray(style.palette[1], dtype=np.float32)
    proj = (np.cos(style.angle) * xs + np.sin(style.angle) * ys) / n
    if style.background_mode == "gradient":
        w = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-6)
    else:  # hatched: soft stripes, sharpened
        w = 0.5 + 0.5 * np.sin(2.0 * np.pi * style.texture_freq * proj)
        w = w**3
    return a * (1.0 - w[..., None]) + b * w[..., None]


def _shape_texture(shape, style, frame_offset):
    """Multiplicative texture in shape-local coords so it translates rigidly.

    Evaluated analytically per frame (never rolled) to keep translated frames
    bitwise-equal off occlusions.
    """
    if style.stroke_noise == 0.0:
        return None
    n = CANVAS
    xs, ys = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64))
    xl = xs - (shape.center[0] + frame_offset[0])
    yl = ys - (shape.center[1] + frame_offset[1])
    f = max(style.texture_freq, 2.0)
    tex = np.sin(2.0 * np.pi * f * xl / n) * np.sin(2.0 * np.pi * f * yl / n)
    return (1.0 + style.stroke_noise * 4.0 * tex).astype(np.float32)


def render(style, content, frames=1):
    """Rasterize a scene.

    Returns (stack, flows, valids):
      stack  (T, 64, 64, 3) float32 in [0,1]
      flows  (T-1, 64, 64, 2) exact (dx, dy) from frame t to t+1, None if T == 1
      valids (T-1, 64, 64) bool mask of exact-correspondence pixels
    """
    if frames < 1:
        raise GenerationError("frames must be >= 1")
    for s in content.shapes:
        for t in (0, frames - 1):
            cx = s.center[0] + s.velocity[0] * t
            cy = s.center[1] + s.velocity[1] * t
            if not (s.size <= cx <= CANVAS - s.size and s.size <= cy <= CANVAS - s.size):
                raise GenerationError(
                    f"shape {s.kind} leaves the canvas at frame {t}: center=({cx},{cy})"
                )

    bg = _background(style)
    stack = np.empty((frames, CANVAS, CANVAS, 3), dtype=np.float32)
    covs = np.empty((frames, len(content.shapes), CANVAS, CANVAS), dtype=np.float32)
    fills = []
    for k, s in enumerate(content.shapes):
        fills.append(np.asarray(style.palette[2 + k % (len(style.palette) - 2)],
                                dtype=np.float32))

    for t in range(frames):
        canvas = bg.copy()
        for k, s in enumerate(content.shapes):
            off = (s.velocity[0] * t, s.velocity[1] * t)
            cov = _coverage(s, off)
            covs[t, k] = cov
            color = np.broadcast_to(fills[k], (CANVAS, CANVAS, 3)).copy()
            tex = _shape_texture(s, style, off)
            if tex is not None:
                color = np.clip(color * tex[..., None], 0.0, 1.0)
            canvas = canvas * (1.0 - cov[..., None]) + color * cov[..., None]
        stack[t] = np.clip(canvas, 0.0, 1.0)

    if frames == 1:
        return stack, None, None

    flows = np.zeros((frames - 1, CANVAS, CANVAS, 2), dtype=np.float32)
    valids = np.ones((frames - 1, CANVAS, CANVAS), dtype=bool)
    for t in range(frames - 1):
        total_t = covs[t].sum(axis=0)
        total_t1 = covs[t + 1].sum(axis=0)
        for k, s in enumerate(content.shapes):
            on = covs[t, k] > 0
            flows[t, :, :, 0][on] = s.velocity[0]
            flows[t, :, :, 1][on] = s.velocity[1]
        boundary = (total_t > 0) & (total_t < 1)
        newly_covered = (total_t == 0) & (total_t1 > 0)
        valids[t] = ~(boundary | newly_covered)
    return stack, flows, valids


# -- crops ---------------------------------------------------------------------

def _area_resize(img, out_side):
    """Exact area-average resize of a square image (rational scale factors)."""
    in_side = img.shape[0]
    w = _area_weights(in_side, out_side)
    tmp = np.tensordot(w, img, axes=(1, 0))
    out = np.tensordot(w, tmp, axes=(1, 1)).transpose(1, 0, 2)
    return out.astype(np.float32)


def _area_weights(n_in, n_out):
    scale = n_in / n_out
    w = np.zeros((n_out, n_in), dtype=np.float64)
    for k in range(n_out):
        lo = k * scale
        hi = (k + 1) * scale
        i0 = int(np.floor(lo))
        i1 = int(np.ceil(hi))
        for i in range(i0, min(i1, n_in)):
            w[k, i] = min(hi, i + 1) - max(lo, i)
    return w / scale


def decoupled_crops(canvas, rng):
    """(target 32x32, style_ref 32x32) from one canvas.

    Target path: scale by 0.5 (shorter side 32) and center-crop. Style path:
    scale by 0.75 (shorter side 48) and random-crop with offsets in [0,16]^2.
    """
    if canvas.shape[:2] != (CANVAS, CANVAS):
        raise GenerationError(f"decoupled_crops expects 64x64 canvas, got {canvas.shape}")
    target = _area_resize(canvas, CROP)
    scaled = _area_resize(canvas, REF_SCALE_SIZE)
    ox, oy = rng.integers(0, MAX_REF_OFFSET + 1, size=2)
    ref = scaled[oy : oy + CROP, ox : ox + CROP]
    return target, np.ascontiguousarray(ref), (int(ox), int(oy))


def crop_overlap(ox, oy):
    """IoU in canvas coordinates of the two crop footprints for a ref offset.

    Footprints are the sets of canvas pixels contributing to each crop: the
    whole canvas for the target path, a ~42.7px window for the style path.
    """
    scale = CANVAS / REF_SCALE_SIZE
    x0, x1 = ox * scale, (ox + CROP) * scale
    y0, y1 = oy * scale, (oy + CROP) * scale
    cols = np.arange(CANVAS)
    touched_x = (np.minimum(x1, cols + 1) - np.maximum(x0, cols)) > 1e-12
    touched_y = (np.minimum(y1, cols + 1) - np.maximum(y0, cols)) > 1e-12
    inter = touched_x.sum() * touched_y.sum()
    union = CANVAS * CANVAS
    return inter / union


def downscale_flow(flows, valids):
    """Map canvas flow/validity to target-crop resolution (scale 0.5).

    A crop pixel is valid only when all four source pixels are valid and agree
    on the flow; velocities are even so valid flow halves exactly.
    """
    t, n, _, _ = flows.shape
    f = flows.reshape(t, n // 2, 2, n // 2, 2, 2)
    v = valids.reshape(t, n // 2, 2, n // 2, 2)
    agree = (f.max(axis=(2, 4)) == f.min(axis=(2, 4))).all(axis=-1)
    out_valid = v.all(axis=(2, 4)) & agree
    out_flow = f[:, :, 0, :, 0, :] * 0.5
    return out_flow.astype(np.float32), out_valid


# -- dataset build -------------------------------------------------------------

def holdout_pairs(n_styles, n_contents):
    """(style, content) pairs excluded from training; each content misses one style."""
    return {(c % n_styles, c) for c in range(n_contents)}


@dataclass
class SampleRecord:
    id: int
    kind: str  # image | video
    style_id: int
    content_id: int
    split: str
    files: dict


def _content_instance(content_id, rng, moving, frames):
    kind = kind_of(content_id)
    qx, qy = quadrant_of(content_id)
    base = np.array([20.0 + 24.0 * qx, 20.0 + 24.0 * qy])
    for _ in range(100):
        jitter = rng.uniform(-4, 4, size=2)
        size = rng.uniform(9.0, 12.0)
        if moving:
            vx, vy = rng.choice(VELOCITIES), rng.choice(VELOCITIES)
            if vx == 0 and vy == 0:
                continue
        else:
            vx = vy = 0
        c = base + jitter
        ok = True
        for t in (0, frames - 1):
            x, y = c[0] + vx * t, c[1] + vy * t
            if not (size + 1 <= x <= CANVAS - size - 1 and size + 1 <= y <= CANVAS - size - 1):
                ok = False
                break
        if ok:
            shape = Shape(kind, (float(c[0]), float(c[1])), float(size), (int(vx), int(vy)))
            return ContentSpec(content_id, [shape])
    raise GenerationError(f"could not place content {content_id} inside the canvas")


def build_dataset(out_dir, n_styles, n_contents, n_images, n_videos, frames, seed):
    """Render a labeled dataset bundle to disk; returns the manifest dict.

    Images are drawn uniformly over the allowed (style, content) pairs (the
    held-out pairs are excluded from the train split); videos use style 0 only.
    The split is 90/10 by sample id.
    """
    if n_styles < 2 or n_contents < 2:
        raise GenerationError("need at least 2 styles and 2 contents")
    os.makedirs(out_dir, exist_ok=True)
    tdir = os.path.join(out_dir, "tensors")
    os.makedirs(tdir, exist_ok=True)

    styles = [derive_style(s, seed) for s in range(n_styles)]
    held_out = holdout_pairs(n_styles, n_contents)
    allowed = [
        (s, c)
        for s in range(n_styles)
        for c in range(n_contents)
        if (s, c) not in held_out
    ]

    records = []
    split_rng = rng_for(seed, "split")
    order = split_rng.permutation(n_images + n_videos)
    val_ids = set(order[: (n_images + n_videos) // 10].tolist())

    # balanced round-robin over allowed pairs keeps marginals uniform by construction
    pair_rng = rng_for(seed, "pairs")
    reps = -(-n_images // len(allowed))
    pair_plan = np.tile(np.arange(len(allowed)), reps)
    pair_plan = pair_plan[pair_rng.permutation(len(pair_plan))][:n_images]
    for i in range(n_images):
        sid = i
        s, c = allowed[int(pair_plan[i])]
        rng = rng_for(seed, "sample", sid)
        content = _content_instance(c, rng, moving=False, frames=1)
        stack, _, _ = render(styles[s], content, frames=1)
        target, ref, _ = decoupled_crops(stack[0], rng)
        pixels = np.stack([target, ref])
        files = {
            "tokens": f"tensors/{sid:06d}_tokens.sct",
            "pixels": f"tensors/{sid:06d}_pixels.sct",
        }
        save_tensor(os.path.join(out_dir, files["tokens"]), f"tokens/{sid}",
                    content.tokens().astype(np.float32))
        save_tensor(os.path.join(out_dir, files["pixels"]), f"pixels/{sid}", pixels)
        records.append(SampleRecord(sid, "image", s, c,
                                    "val" if sid in val_ids else "train", files))

    video_contents = [c for c in range(n_contents) if (0, c) not in held_out]
    for j in range(n_videos):
        sid = n_images + j
        c = video_contents[int(rng_for(seed, "vidpair", sid).integers(len(video_contents)))]
        rng = rng_for(seed, "sample", sid)
        content = _content_instance(c, rng, moving=True, frames=frames)
        stack, flows, valids = render(styles[0], content, frames=frames)
        tgt_frames = np.stack([_area_resize(f, CROP) for f in stack])
        _, ref, _ = decoupled_crops(stack[0], rng)
        crop_flow, crop_valid = downscale_flow(flows, valids)
        flow_pack = np.concatenate(
            [crop_flow, crop_valid[..., None].astype(np.float32)], axis=-1
        )
        pixels = np.concatenate([tgt_frames, ref[None]], axis=0)
        files = {
            "tokens": f"tensors/{sid:06d}_tokens.sct",
            "pixels": f"tensors/{sid:06d}_pixels.sct",
            "flow": f"tensors/{sid:06d}_flow.sct",
        }
        save_tensor(os.path.join(out_dir, files["tokens"]), f"tokens/{sid}",
                    content.tokens().astype(np.float32))
        save_tensor(os.path.join(out_dir, files["pixels"]), f"pixels/{sid}", pixels)
        save_tensor(os.path.join(out_dir, files["flow"]), f"flow/{sid}", flow_pack)
        records.append(SampleRecord(sid, "video", 0, c,
                                    "val" if sid in val_ids else "train", files))

    manifest = {
        "version": 1,
        "seed": seed,
        "dims": {"canvas": CANVAS, "crop": CROP, "frames": frames,
                 "styles": n_styles, "contents": n_contents,
                 "vocab": VOCAB_SIZE, "tokens_per_sample": TOKENS_PER_SAMPLE},
        "styles": [st.to_json() for st in styles],
        "holdout_pairs": sorted([list(p) for p in held_out]),
        "samples": [
            {"id": r.id, "kind": r.kind, "style_id": r.style_id,
             "content_id": r.content_id, "split": r.split, **r.files}
            for r in records
        ],
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


class Dataset:
    """In-memory view of a dataset bundle."""

    def __init__(self, root):
        self.root = root
        self.manifest = read_json(os.path.join(root, "manifest.json"))
        self.styles = [StyleSpec.from_json(s) for s in self.manifest["styles"]]
        self.dims = self.manifest["dims"]
        self.samples = self.manifest["samples"]
        self._cache = {}

    def __len__(self):
        return len(self.samples)

    def record(self, i):
        return self.samples[i]

    def tokens(self, i):
        return self._load(i, "tokens").astype(np.int64)

    def pixels(self, i):
        return self._load(i, "pixels")

    def flow(self, i):
        return self._load(i, "flow")

    def _load(self, i, key):
        from .io import load_tensor

        ck = (i, key)
        if ck not in self._cache:
            _, arr = load_tensor(os.path.join(self.root, self.samples[i][key]))
            self._cache[ck] = arr
        return self._cache[ck]

    def index_of(self, kind, split):
        return [
            i
            for i, s in enumerate(self.samples)
            if s["kind"] == kind and s["split"] == split
        ]


def render_reference(style, seed, content_id=None, n_contents=16):
    """Fresh style reference crop: new canvas, style path crop. Used for eval."""
    rng = rng_for(seed, "ref", style.style_id)
    if content_id is None:
        content_id = int(rng.integers(n_contents))
    content = _content_instance(content_id, rng, moving=False, frames=1)
    stack, _, _ = render(style, content, frames=1)
    _, ref, _ = decoupled_crops(stack[0], rng)
    return ref
