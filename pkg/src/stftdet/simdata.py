"""Synthetic camera-moving video sequences with per-frame quality artifacts.

A static world canvas (tissue-like background plus one dome-shaped object)
is filmed by a camera that pans and zooms along a smooth random path.  Some
frames are corrupted by specular highlights, blur, occluders or bubbles.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .targets import BBox
from .tensor.io import TensorFileError, load_tensor, save_tensor

CORRUPTIONS = ("none", "specular", "blur", "occlusion", "bubbles")
SUPPORT_WINDOW = 9

DEFAULT_OBJECT = {"radius_range": [7.0, 20.0], "aspect_range": [0.7, 1.3], "absent_prob": 0.5,
                  "absent_frac": [0.1, 0.25], "contrast": 0.05}
DEFAULT_CAMERA = {"speed": 1.2, "zoom_amp": 0.4, "world_scale": 3, "noise": 0.09,
                  "noise_blur": 1.0, "noise_corr": 0.9}


@dataclass
class FrameRecord:
    frame_index: int
    image: np.ndarray                 # [3, H, W] float32 in [0, 1]
    gt_boxes: list = field(default_factory=list)
    annotated: bool = True
    corruption: str = "none"

    def visible_boxes(self) -> list:
        """Ground truth as the trainer may see it (hidden when unannotated)."""
        return list(self.gt_boxes) if self.annotated else []


@dataclass
class SequenceManifest:
    seed: int
    frames: list
    camera_path: list
    split: str = "train"
    name: str = "seq"
    params: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    def images(self) -> np.ndarray:
        return np.stack([f.image for f in self.frames])


# ---------------------------------------------------------------------------
# rendering helpers
# ---------------------------------------------------------------------------

def _noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    n = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return n / (n.std() + 1e-12)


def _sensor_noise(rng: np.random.Generator, shape, amp: float, blur: float) -> np.ndarray:
    """Fresh per-frame grain; ``blur`` > 0 makes it blotchy rather than white."""
    n = rng.standard_normal(shape)
    if blur > 0:
        n = ndimage.gaussian_filter(n, (0, blur, blur), mode="wrap")
        n /= n.std() + 1e-12
    return amp * n


def _world(rng: np.random.Generator, size: int, obj: dict):
    """Background canvas ``[3, S, S]`` plus the object's alpha mask ``[S, S]`` and texture."""
    low = _noise(rng, (size, size), size / 12)
    mid = _noise(rng, (size, size), 3.0)
    folds = np.sin(np.linspace(0, rng.uniform(3, 6) * math.pi, size))[None, :] * \
        np.cos(np.linspace(0, rng.uniform(2, 5) * math.pi, size))[:, None]
    base = np.array([0.72, 0.42, 0.38])[:, None, None]
    bg = base + 0.08 * low[None] + 0.03 * mid[None] + 0.05 * folds[None]
    bg = bg * np.array([1.0, 0.9, 0.85])[:, None, None]

    cy, cx = obj["center"]
    ry, rx = obj["radii"]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    alpha = np.clip((1.0 - r) * min(ry, rx) / 1.5, 0.0, 1.0)
    dome = np.clip(1.0 - r ** 2, 0.0, 1.0)
    bumps = _noise(rng, (size, size), 1.2)
    # the object keeps the tissue underneath and shifts its hue under a faint dome
    tint = np.array([1.0, 0.1, -0.7])[:, None, None]
    obj_rgb = bg + obj["contrast"] * (tint * (0.4 + dome[None]) + 0.3 * bumps[None])
    return bg, alpha, obj_rgb


def _sample(canvas: np.ndarray, cam: tuple, out: int) -> np.ndarray:
    """Render ``canvas [..., S, S]`` through camera ``(cy, cx, zoom)`` to ``out x out``."""
    cy, cx, zoom = cam
    v = (np.arange(out) + 0.5 - out / 2) / zoom
    gy, gx = np.meshgrid(cy + v, cx + v, indexing="ij")
    coords = np.stack([gy, gx])
    if canvas.ndim == 2:
        return ndimage.map_coordinates(canvas, coords, order=1, mode="nearest")
    return np.stack([ndimage.map_coordinates(c, coords, order=1, mode="nearest") for c in canvas])


def _camera_path(rng: np.random.Generator, length: int, world: int, image: int,
                 obj: dict, cam: dict) -> list:
    cy, cx = obj["center"]
    half_obj = max(obj["radii"]) + 2.0
    phase = rng.uniform(0, 2 * math.pi, size=4)
    freq = rng.uniform(0.03, 0.09, size=4)
    vel = rng.normal(0, cam["speed"], size=2)
    pos = np.array([cy, cx], dtype=np.float64) + rng.uniform(-image / 5, image / 5, size=2)
    path = []
    for t in range(length):
        zoom = 1.0 + cam["zoom_amp"] * math.sin(freq[2] * t * 2 * math.pi + phase[2])
        vel = 0.9 * vel + rng.normal(0, 0.35 * cam["speed"], size=2)
        vel += 0.4 * cam["speed"] * np.array([math.sin(freq[0] * t + phase[0]),
                                              math.cos(freq[1] * t + phase[1])])
        pos = pos + vel
        # re-clamp so the whole object stays inside the field of view
        reach = image / (2 * zoom) - half_obj
        lo = np.array([cy, cx]) - max(reach, 0.0)
        hi = np.array([cy, cx]) + max(reach, 0.0)
        clamped = np.clip(pos, lo, hi)
        vel = np.where(clamped != pos, -0.5 * vel, vel)
        pos = clamped
        path.append((float(pos[0]), float(pos[1]), float(zoom)))
    return path


def _box_from_mask(mask: np.ndarray) -> BBox | None:
    ys, xs = np.nonzero(mask > 0.5)
    if len(ys) == 0:
        return None
    return BBox(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _ellipse(h: int, w: int, cy, cx, ry, rx) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2


def apply_corruption(img: np.ndarray, kind: str, rng: np.random.Generator,
                     box: BBox | None) -> np.ndarray:
    """Return a corrupted copy of ``img [3, H, W]``; the ground truth never changes."""
    _, H, W = img.shape
    out = img.copy()
    if kind == "none":
        return out
    if kind == "blur":
        return ndimage.uniform_filter(out, size=(1, 5, 5), mode="nearest")
    if kind == "specular":
        for _ in range(rng.integers(2, 6)):
            cy, cx = rng.uniform(4, H - 4), rng.uniform(4, W - 4)
            ry, rx = rng.uniform(1.5, 5.0), rng.uniform(1.5, 5.0)
            d = _ellipse(H, W, cy, cx, ry, rx)
            glow = np.clip(1.6 - d, 0.0, 1.0)
            out = out * (1 - glow) + glow
        return out
    if kind == "occlusion":
        if box is not None and rng.random() < 0.75:
            bw, bh = box.width, box.height
            cover = rng.uniform(0.6, 1.0)
            ow, oh = bw * cover + rng.uniform(2, 8), bh * cover + rng.uniform(2, 8)
            cx = box.center[0] + rng.uniform(-0.2, 0.2) * bw
            cy = box.center[1] + rng.uniform(-0.2, 0.2) * bh
        else:
            ow, oh = rng.uniform(10, 30), rng.uniform(10, 30)
            cx, cy = rng.uniform(0, W), rng.uniform(0, H)
        x0, x1 = int(max(cx - ow / 2, 0)), int(min(cx + ow / 2, W))
        y0, y1 = int(max(cy - oh / 2, 0)), int(min(cy + oh / 2, H))
        shade = rng.uniform(0.05, 0.2)
        out[:, y0:y1, x0:x1] = shade * np.array([1.0, 0.8, 0.7])[:, None, None]
        return out
    if kind == "bubbles":
        ccy, ccx = rng.uniform(10, H - 10), rng.uniform(10, W - 10)
        for _ in range(rng.integers(3, 9)):
            cy, cx = ccy + rng.normal(0, 6), ccx + rng.normal(0, 6)
            r = rng.uniform(2.5, 7.0)
            d = np.sqrt(_ellipse(H, W, cy, cx, r, r))
            ring = np.clip(1.0 - np.abs(d - 1.0) * r / 1.2, 0.0, 1.0) * 0.85
            out = out * (1 - ring) + ring * 0.97
        return out
    raise ValueError(f"unknown corruption {kind!r}")


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate_sequence(seed: int, length: int = 60, image_size: int = 64,
                      object_spec: dict | None = None, camera_spec: dict | None = None,
                      artifact_rate: float = 0.3, split: str = "train",
                      name: str | None = None) -> SequenceManifest:
    """Render one deterministic sequence from ``seed`` and the given parameters."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if not 0.0 <= artifact_rate <= 1.0:
        raise ValueError("artifact_rate must lie in [0, 1]")
    ospec = {**DEFAULT_OBJECT, **(object_spec or {})}
    cspec = {**DEFAULT_CAMERA, **(camera_spec or {})}
    rng = np.random.default_rng(seed)
    world = int(cspec["world_scale"] * image_size)

    r = rng.uniform(*ospec["radius_range"])
    aspect = rng.uniform(*ospec["aspect_range"])
    obj = {"center": (world / 2 + rng.uniform(-8, 8), world / 2 + rng.uniform(-8, 8)),
           "radii": (r * math.sqrt(aspect), r / math.sqrt(aspect)),
           "contrast": float(ospec["contrast"])}
    max_r = (image_size / (2 * (1.0 + cspec["zoom_amp"])) - 3.0)
    # object must fit in view at the largest zoom
    scale_fit = min(1.0, max_r / max(obj["radii"]))
    obj["radii"] = tuple(x * scale_fit for x in obj["radii"])

    present = [0, length]
    if rng.random() < ospec["absent_prob"] and length >= 10:
        n_abs = int(round(rng.uniform(*ospec["absent_frac"]) * length))
        present = [n_abs, length] if rng.random() < 0.5 else [0, length - n_abs]

    bg, alpha, obj_rgb = _world(rng, world, obj)
    path = _camera_path(rng, length, world, image_size, obj, cspec)
    kinds = rng.choice(CORRUPTIONS[1:], size=length)
    corrupt = rng.random(length) < artifact_rate
    frames = []
    rho = float(cspec["noise_corr"])
    grain = None
    for t, cam in enumerate(path):
        visible = present[0] <= t < present[1]
        a = _sample(alpha, cam, image_size) if visible else np.zeros((image_size, image_size))
        img = _sample(bg, cam, image_size)
        if visible:
            img = img * (1 - a) + _sample(obj_rgb, cam, image_size) * a
        # AR(1) grain: stationary amplitude, correlated across neighbouring frames
        fresh = _sensor_noise(rng, img.shape, cspec["noise"], cspec["noise_blur"])
        grain = fresh if grain is None else rho * grain + math.sqrt(1 - rho * rho) * fresh
        img += grain
        box = _box_from_mask(a) if visible else None
        kind = str(kinds[t]) if corrupt[t] else "none"
        img = apply_corruption(np.clip(img, 0, 1), kind, rng, box)
        frames.append(FrameRecord(t, np.clip(img, 0, 1).astype(np.float32),
                                  [box] if box is not None else [], True, kind))
    params = {"length": length, "image_size": image_size, "object_spec": ospec,
              "camera_spec": cspec, "artifact_rate": artifact_rate, "present": present,
              "object": {"center": list(obj["center"]), "radii": list(obj["radii"])}}
    return SequenceManifest(seed, frames, path, split, name or f"{split}_{seed}", params)


def object_mask(manifest: SequenceManifest, t: int) -> np.ndarray:
    """Re-render the object's alpha mask for frame ``t`` from the stored geometry."""
    p = manifest.params
    size = p["image_size"]
    if not (p["present"][0] <= t < p["present"][1]):
        return np.zeros((size, size))
    world = int(p["camera_spec"]["world_scale"] * size)
    cy, cx = p["object"]["center"]
    ry, rx = p["object"]["radii"]
    yy, xx = np.mgrid[0:world, 0:world].astype(np.float64)
    rr = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    alpha = np.clip((1.0 - rr) * min(ry, rx) / 1.5, 0.0, 1.0)
    return _sample(alpha, tuple(manifest.camera_path[t]), size)


def apply_annotation_ratio(manifest: SequenceManifest, ratio: float) -> SequenceManifest:
    """Mark every ``round(1/ratio)``-th frame annotated (uniform stride from frame 0)."""
    if not 0 < ratio <= 1:
        raise ValueError("annotation ratio must lie in (0, 1]")
    step = int(round(1.0 / ratio))
    for f in manifest.frames:
        f.annotated = f.frame_index % step == 0
    return manifest


def sample_support_indices(t: int, sequence_len: int, n: int,
                           rng: np.random.Generator) -> list[int]:
    """Draw ``n`` support frames uniformly from the ``[t-9, t+9]`` window, excluding ``t``."""
    if n < 1:
        raise ValueError("need at least one support frame")
    if sequence_len == 1:
        return [t] * n
    lo, hi = max(0, t - SUPPORT_WINDOW), min(sequence_len - 1, t + SUPPORT_WINDOW)
    cand = np.array([i for i in range(lo, hi + 1) if i != t])
    pick = rng.choice(cand, size=n, replace=len(cand) < n)
    return [int(i) for i in pick]


# ---------------------------------------------------------------------------
# benchmark + disk layout
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    sequences: list
    seed: int = 0
    params: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        return [s for s in self.sequences if s.split == name]


def generate_benchmark(seed: int = 7, n_train: int = 4, n_test: int = 2, length: int = 60,
                       artifact_rate: float = 0.3, image_size: int = 64,
                       object_spec: dict | None = None, camera_spec: dict | None = None) -> Dataset:
    seqs = []
    for k in range(n_train + n_test):
        split = "train" if k < n_train else "test"
        idx = k if k < n_train else k - n_train
        seqs.append(generate_sequence(seed * 1000 + k, length, image_size, object_spec,
                                      camera_spec, artifact_rate=artifact_rate, split=split,
                                      name=f"{split}_{idx:02d}"))
    params = {"n_train": n_train, "n_test": n_test, "length": length,
              "artifact_rate": artifact_rate, "image_size": image_size,
              "object_spec": object_spec or {}, "camera_spec": camera_spec or {}}
    return Dataset(seqs, seed, params)


def _box_list(boxes) -> list:
    return [[float(v) for v in b] for b in boxes]


def save_sequence(manifest: SequenceManifest, path: str | os.PathLike) -> None:
    os.makedirs(os.path.join(path, "frames"), exist_ok=True)
    records = []
    with open(os.path.join(path, "gt.jsonl"), "w") as gt:
        for f in manifest.frames:
            fname = f"frames/{f.frame_index:06d}.tensor"
            save_tensor(os.path.join(path, fname), f.image)
            records.append({"frame_index": f.frame_index, "file": fname,
                            "annotated": f.annotated, "corruption": f.corruption,
                            "gt_boxes": _box_list(f.gt_boxes)})
            gt.write(json.dumps({"seq": manifest.name, "frame": f.frame_index,
                                 "boxes": _box_list(f.gt_boxes),
                                 "annotated": f.annotated}) + "\n")
    doc = {"seed": manifest.seed, "name": manifest.name, "split": manifest.split,
           "params": manifest.params, "camera_path": [list(c) for c in manifest.camera_path],
           "frames": records}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_sequence(path: str | os.PathLike) -> SequenceManifest:
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise TensorFileError(f"{mpath}: {exc.strerror or exc}") from exc
    frames = []
    for i, rec in enumerate(doc["frames"]):
        if rec["frame_index"] != i:
            raise TensorFileError(f"{mpath}: frame indices are not contiguous at {i}")
        img = load_tensor(os.path.join(path, rec["file"]))
        frames.append(FrameRecord(i, img, [BBox(*b) for b in rec["gt_boxes"]],
                                  rec["annotated"], rec["corruption"]))
    return SequenceManifest(doc["seed"], frames, [tuple(c) for c in doc["camera_path"]],
                            doc["split"], doc["name"], doc["params"])


def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    os.makedirs(path, exist_ok=True)
    for s in ds.sequences:
        save_sequence(s, os.path.join(path, s.name))
    doc = {"seed": ds.seed, "params": ds.params,
           "sequences": [{"name": s.name, "split": s.split} for s in ds.sequences]}
    with open(os.path.join(path, "dataset.json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_dataset(path: str | os.PathLike) -> Dataset:
    dpath = os.path.join(path, "dataset.json")
    try:
        with open(dpath) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise TensorFileError(f"{dpath}: {exc.strerror or exc}") from exc
    seqs = [load_sequence(os.path.join(path, s["name"])) for s in doc["sequences"]]
    return Dataset(seqs, doc["seed"], doc["params"])


def gt_records(seqs: Sequence[SequenceManifest]) -> list[dict]:
    """Ground truth rows ``{seq, frame, boxes}`` for evaluation (annotation ignored)."""
    return [{"seq": s.name, "frame": f.frame_index, "boxes": _box_list(f.gt_boxes)}
            for s in seqs for f in s.frames]
