"""Synthetic dataset generation, on-disk ingestion, preprocessing,
augmentation, and level-set target construction.

Every random decision flows from explicit integer seeds through
``numpy.random.default_rng``, so generation and augmentation are
deterministic per (seed, index) and independent of call order or worker
scheduling.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter, map_coordinates

from .errors import (DatasetError, MissingFile, ShapeMismatch,
                     UnknownClassIndex)
from .levelset import signed_distance
from .errors import DegenerateMask


@dataclass
class Sample:
    image: np.ndarray          # (H, W, N) float32
    label: np.ndarray          # (H, W) integer class indices
    sample_id: str
    spacing: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.image.shape[:2] != self.label.shape:
            raise ShapeMismatch(
                f"image {self.image.shape[:2]} vs label {self.label.shape}")


@dataclass
class DatasetManifest:
    root: Path
    classes: int
    spacing: tuple
    entries: dict                      # id -> {"image": path, "label": path}
    splits: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

DIFFICULTIES = ("easy", "hard")


def _sample_rng(seed, stream, index):
    return np.random.default_rng([int(seed), int(stream), int(index)])


def synth_generate(seed, n, size=64, difficulty="easy", stream=0):
    """Generate n synthetic single-channel samples with one foreground blob.

    Shapes are smooth closed contours: an ellipse whose polar radius is
    modulated by a small random Fourier series (no modulation for "easy",
    so easy masks are exact rasterized ellipses). Images are foreground /
    background intensities plus a smooth bias field and Gaussian noise.
    Deterministic per (seed, stream, index).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if size < 64:
        raise ValueError("size must be >= 64")
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"difficulty must be one of {DIFFICULTIES}")
    out = []
    for i in range(n):
        rng = _sample_rng(seed, stream, i)
        mask = _random_blob_mask(rng, size, difficulty)
        img = _render_image(rng, mask, difficulty)
        out.append(Sample(
            image=img[..., None].astype(np.float32),
            label=mask.astype(np.uint8),
            sample_id=f"s{seed}-{stream}-{i:04d}",
        ))
    return out


def _random_blob_mask(rng, size, difficulty):
    cy = size * rng.uniform(0.42, 0.58)
    cx = size * rng.uniform(0.42, 0.58)
    ra = size * rng.uniform(0.16, 0.27)
    rb = size * rng.uniform(0.16, 0.27)
    theta = rng.uniform(0.0, math.pi)
    if difficulty == "easy":
        amps, phases = np.zeros(0), np.zeros(0)
    else:
        amps = rng.uniform(0.0, 0.10, size=4)
        phases = rng.uniform(0.0, 2 * math.pi, size=4)

    ii, jj = np.mgrid[0:size, 0:size].astype(np.float64)
    dy = ii - cy
    dx = jj - cx
    # rotate into the ellipse frame
    p = math.cos(theta) * dy + math.sin(theta) * dx
    q = -math.sin(theta) * dy + math.cos(theta) * dx
    rho = np.hypot(p, q)
    ang = np.arctan2(q, p)
    denom = np.hypot(rb * np.cos(ang), ra * np.sin(ang))
    r_ell = ra * rb / denom
    mod = np.ones_like(ang)
    for k, (a, ph) in enumerate(zip(amps, phases), start=2):
        mod += a * np.cos(k * ang + ph)
    return (rho <= r_ell * mod).astype(np.uint8)


def _render_image(rng, mask, difficulty):
    size = mask.shape[0]
    if difficulty == "easy":
        contrast, noise_sigma, bias_amp = 0.5, 0.03, 0.05
    else:
        contrast, noise_sigma, bias_amp = 0.3, 0.08, 0.10
    base = 0.5 - contrast / 2 + contrast * mask.astype(np.float64)
    fy, fx = rng.uniform(0.5, 1.5, size=2)
    phase = rng.uniform(0.0, 2 * math.pi)
    ii, jj = np.mgrid[0:size, 0:size].astype(np.float64)
    bias = bias_amp * np.cos(2 * math.pi * (fy * ii + fx * jj) / size + phase)
    img = base + bias + rng.normal(0.0, noise_sigma, size=mask.shape)
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# On-disk datasets: PNG images/labels plus a JSON manifest
# ---------------------------------------------------------------------------

def save_dataset(out_dir, splits, classes, spacing=(1.0, 1.0)):
    """Write samples to PNG files plus a manifest.

    splits: dict split name -> list of Sample. Images are stored as 16-bit
    grayscale (intensities are clipped to [0, 1] and quantized); labels as
    8-bit index PNGs, which round-trip losslessly.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    split_ids = {}
    for split, samples in splits.items():
        ids = []
        for s in samples:
            img16 = np.round(np.clip(s.image[..., 0], 0.0, 1.0) * 65535).astype(np.uint16)
            img_rel = f"images/{s.sample_id}.png"
            lab_rel = f"labels/{s.sample_id}.png"
            Image.fromarray(img16).save(out_dir / img_rel)
            Image.fromarray(s.label.astype(np.uint8), mode="L").save(out_dir / lab_rel)
            entries.append({"id": s.sample_id, "image": img_rel, "label": lab_rel})
            ids.append(s.sample_id)
        split_ids[split] = ids
    manifest = {
        "classes": classes,
        "spacing": list(spacing),
        "entries": entries,
        "splits": split_ids,
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def load_manifest(path):
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        with open(path) as fh:
            raw = json.load(fh)
        classes = int(raw["classes"])
        spacing = tuple(float(x) for x in raw["spacing"])
        entries = {e["id"]: {"image": e["image"], "label": e["label"]}
                   for e in raw["entries"]}
        splits = {k: list(v) for k, v in raw.get("splits", {}).items()}
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise DatasetError(f"malformed manifest {path}: {e}")
    seen = set()
    for name, ids in splits.items():
        for sid in ids:
            if sid in seen:
                raise DatasetError(f"sample {sid!r} appears in more than one split")
            if sid not in entries:
                raise DatasetError(f"split {name!r} references unknown id {sid!r}")
        seen.update(ids)
    root = path.parent
    for sid, e in entries.items():
        for k in ("image", "label"):
            if not (root / e[k]).exists():
                raise MissingFile(str(root / e[k]))
    return DatasetManifest(root=root, classes=classes, spacing=spacing,
                           entries=entries, splits=splits)


def load_sample(manifest, sample_id):
    entry = manifest.entries.get(sample_id)
    if entry is None:
        raise DatasetError(f"unknown sample id {sample_id!r}")
    img = _read_gray(manifest.root / entry["image"])
    lab_img = Image.open(manifest.root / entry["label"])
    label = np.asarray(lab_img)
    if label.ndim != 2 or label.dtype not in (np.uint8, np.int32):
        raise DatasetError(f"label {entry['label']} must be an 8-bit index PNG")
    label = label.astype(np.int64)
    if label.max() >= manifest.classes:
        raise UnknownClassIndex(
            f"label {entry['label']} has index {int(label.max())} >= {manifest.classes}")
    if img.shape != label.shape:
        raise ShapeMismatch(f"image {img.shape} vs label {label.shape}")
    return Sample(image=img[..., None].astype(np.float32), label=label,
                  sample_id=sample_id, spacing=manifest.spacing)


def _read_gray(path):
    if not Path(path).exists():
        raise MissingFile(str(path))
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise DatasetError(f"{path} is not a grayscale image")
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    return arr.astype(np.float32) / 65535.0


# ---------------------------------------------------------------------------
# Preprocessing and augmentation
# ---------------------------------------------------------------------------

def resize_sample(sample, height, width):
    """Geometry-only resize: bilinear for the image, nearest for the label.

    Physical spacing is rescaled so metric distances are preserved.
    """
    h0, w0 = sample.label.shape
    if (h0, w0) == (height, width):
        return sample
    img = cv2.resize(sample.image, (width, height), interpolation=cv2.INTER_LINEAR)
    if img.ndim == 2:
        img = img[..., None]
    lab = cv2.resize(sample.label.astype(np.int32), (width, height),
                     interpolation=cv2.INTER_NEAREST).astype(sample.label.dtype)
    spacing = (sample.spacing[0] * h0 / height, sample.spacing[1] * w0 / width)
    return Sample(image=img.astype(np.float32), label=lab,
                  sample_id=sample.sample_id, spacing=spacing)


def preprocess(sample, fp):
    """Resize to the fingerprint dims and z-score with its statistics."""
    s = resize_sample(sample, fp.height, fp.width)
    mean = np.asarray(fp.intensity_mean, dtype=np.float32)
    std = np.asarray(fp.intensity_std, dtype=np.float32)
    img = (s.image - mean) / std
    return Sample(image=img.astype(np.float32), label=s.label,
                  sample_id=s.sample_id, spacing=s.spacing)


def augment(sample, rng, rotate_deg=25.0, scale_range=(0.85, 1.15),
            elastic_alpha=10.0, elastic_sigma=8.0):
    """Random rotation, scaling, and elastic warp of one sample.

    The image is interpolated bilinearly and the label with nearest
    neighbor, so the label class set is preserved. Drawing identity
    parameters reproduces the input exactly.
    """
    h, w = sample.label.shape
    angle = math.radians(rng.uniform(-rotate_deg, rotate_deg))
    scale = rng.uniform(scale_range[0], scale_range[1])
    disp_r = gaussian_filter(rng.uniform(-1, 1, size=(h, w)), elastic_sigma) * elastic_alpha
    disp_c = gaussian_filter(rng.uniform(-1, 1, size=(h, w)), elastic_sigma) * elastic_alpha
    return _warp(sample, angle, scale, disp_r, disp_c)


def _warp(sample, angle, scale, disp_r, disp_c):
    h, w = sample.label.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ii, jj = np.mgrid[0:h, 0:w].astype(np.float64)
    dy = ii - cy
    dx = jj - cx
    # inverse map: source coords for each output pixel
    cos_t, sin_t = math.cos(angle), math.sin(angle)
    src_r = cy + (cos_t * dy - sin_t * dx) / scale + disp_r
    src_c = cx + (sin_t * dy + cos_t * dx) / scale + disp_c
    coords = np.stack([src_r, src_c])
    img_out = np.empty_like(sample.image)
    for ch in range(sample.image.shape[2]):
        img_out[..., ch] = map_coordinates(
            sample.image[..., ch].astype(np.float64), coords, order=1, mode="nearest")
    lab_out = map_coordinates(sample.label, coords, order=0, mode="nearest")
    return Sample(image=img_out.astype(np.float32), label=lab_out,
                  sample_id=sample.sample_id, spacing=sample.spacing)


# ---------------------------------------------------------------------------
# Level-set targets
# ---------------------------------------------------------------------------

def make_levelset_targets(label, classes):
    """Per-class signed distance stack plus degeneracy flags.

    Channels whose class region is empty or fills the grid have no boundary;
    they are filled with the constant H + W and flagged so the trainer can
    mask their loss contributions.
    """
    h, w = label.shape
    cap = float(h + w)
    phi = np.empty((h, w, classes), dtype=np.float32)
    degenerate = np.zeros(classes, dtype=bool)
    for j in range(classes):
        mask = (label == j).astype(np.uint8)
        try:
            phi[..., j] = signed_distance(mask).phi.astype(np.float32)
        except DegenerateMask:
            phi[..., j] = cap
            degenerate[j] = True
    return phi, degenerate
