"""Dataset generation, manifest handling, splits, and pose normalization.

A dataset directory holds images/rgb/*.png, images/pc/*.png (and
images/gan_pc/*.png once reconstructions are materialized) plus a
manifest.json listing every sample with its pose labels, provenance, and
split. Augmented variants point back to their source sample and always live
in the source's split, so no pose leaks across split boundaries through a
brightness or mask copy.
"""
from __future__ import annotations

import os

import numpy as np
import torch
from torch.utils.data import Dataset

from .augmentation import adjust_brightness, mask_pair, sliding_mask_grid
from .errors import (
    DegenerateAxisError,
    InvalidArgumentError,
    ParseError,
    ReferentialIntegrityError,
)
from .geometry import quat_canonical, quat_normalize
from .images import read_png, write_png
from .scene_world import RenderSettings, render_pointcloud, render_rgb
from .trajectories import generate_trajectory
from .util import derive_seed, read_json, rng, write_json

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
_TAG_SPLIT = 301


def new_manifest(image_cfg: dict, world_path: str) -> dict:
    return {
        "format_version": MANIFEST_FORMAT_VERSION,
        "world_path": world_path,
        "image": dict(image_cfg),
        "normalization": {},
        "samples": [],
    }


def save_manifest(manifest: dict, root) -> None:
    write_json(os.path.join(str(root), MANIFEST_NAME), manifest)


def load_manifest(root, check_files: bool = False) -> dict:
    path = os.path.join(str(root), MANIFEST_NAME)
    if not os.path.exists(path):
        raise ParseError(f"no {MANIFEST_NAME} under {root}")
    manifest = read_json(path)
    if manifest.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise ParseError(f"unsupported manifest format {manifest.get('format_version')!r}")
    validate_manifest(manifest, root if check_files else None)
    return manifest


def validate_manifest(manifest: dict, root=None) -> None:
    """Check referential integrity; pass a root to also check files exist."""
    by_id = {s["id"]: s for s in manifest["samples"]}
    if len(by_id) != len(manifest["samples"]):
        raise ReferentialIntegrityError("duplicate sample ids in manifest")
    for s in manifest["samples"]:
        src = by_id.get(s["source_id"])
        if src is None:
            raise ReferentialIntegrityError(
                f"sample {s['id']} references missing source {s['source_id']}"
            )
        if src["kind"] != "original":
            raise ReferentialIntegrityError(
                f"sample {s['id']} has non-original source {s['source_id']}"
            )
        if s["split"] is not None and s["split"] not in SPLITS:
            raise ReferentialIntegrityError(f"sample {s['id']} has split {s['split']!r}")
        if s["split"] != src["split"]:
            raise ReferentialIntegrityError(
                f"sample {s['id']} split {s['split']!r} differs from its source's"
            )
        if root is not None:
            for key in ("rgb_path", "pc_path"):
                p = os.path.join(str(root), s[key])
                if not os.path.exists(p):
                    raise ReferentialIntegrityError(f"missing image file {s[key]}")


def samples_of(manifest: dict, split=None, kind=None, scene_id=None) -> list:
    out = []
    for s in manifest["samples"]:
        if split is not None and s["split"] != split:
            continue
        if kind is not None and s["kind"] != kind:
            continue
        if scene_id is not None and s["scene_id"] != scene_id:
            continue
        out.append(s)
    return out


def generate_dataset(world, root, gen_cfg: dict) -> dict:
    """Render every trajectory of every scene and write images plus manifest.

    gen_cfg keys: regimes (list of dicts with name / direction / optional
    regime params), step, margin, width, height, vertical_fov, bit_depth,
    seed, split_ratios.
    """
    root = str(root)
    settings = RenderSettings(
        width=gen_cfg.get("width", 128),
        height=gen_cfg.get("height", 128),
        vertical_fov=gen_cfg.get("vertical_fov", 60.0),
    )
    bit_depth = gen_cfg.get("bit_depth", 16)
    step = gen_cfg.get("step", 0.35)
    margin = gen_cfg.get("margin", 0.45)
    seed = gen_cfg.get("seed", 0)

    manifest = new_manifest(
        {
            "width": settings.width,
            "height": settings.height,
            "vertical_fov": settings.vertical_fov,
            "bit_depth": bit_depth,
        },
        gen_cfg.get("world_path", "world.json"),
    )
    sid_counter = 0
    for scene in world.scenes:
        for r_idx, regime_cfg in enumerate(gen_cfg["regimes"]):
            regime = regime_cfg["name"]
            params = {k: v for k, v in regime_cfg.items() if k not in ("name", "direction", "step")}
            poses = generate_trajectory(
                scene.bounds,
                regime,
                step=regime_cfg.get("step", step),
                margin=margin,
                direction=regime_cfg.get("direction", "forward"),
                seed=derive_seed(seed, f"traj/{scene.id}/{r_idx}"),
                **params,
            )
            for pose in poses:
                rec = _render_sample(world, scene.id, pose, settings, bit_depth,
                                     root, sid_counter, regime)
                manifest["samples"].append(rec)
                sid_counter += 1

    assign_splits(manifest, gen_cfg.get("split_ratios", (0.6, 0.2, 0.2)), seed)
    manifest["normalization"] = compute_normalization(manifest)
    save_manifest(manifest, root)
    return manifest


def _render_sample(world, scene_id, pose, settings, bit_depth, root, sample_id, regime):
    rgb = render_rgb(world, scene_id, pose, settings)
    pc = render_pointcloud(world, scene_id, pose, settings)
    rgb_rel = os.path.join("images", "rgb", f"{sample_id:06d}.png")
    pc_rel = os.path.join("images", "pc", f"{sample_id:06d}.png")
    write_png(os.path.join(root, rgb_rel), rgb, bit_depth)
    write_png(os.path.join(root, pc_rel), pc, bit_depth)
    return {
        "id": sample_id,
        "scene_id": scene_id,
        "regime": regime,
        "kind": "original",
        "source_id": sample_id,
        "split": None,
        "position": [float(v) for v in pose.position],
        "quaternion": [float(v) for v in pose.orientation],
        "rgb_path": rgb_rel,
        "pc_path": pc_rel,
        "brightness": 1.0,
        "mask": None,
    }


def assign_splits(manifest: dict, ratios, seed: int) -> None:
    """Stratified split by scene over source groups (variants follow source).

    Uses largest-remainder allocation, so each scene's split sizes are within
    one sample group of the exact ratio targets.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"ratios must be 3 nonnegative values summing to 1, got {ratios}")
    originals = samples_of(manifest, kind="original")
    by_scene = {}
    for s in originals:
        by_scene.setdefault(s["scene_id"], []).append(s["id"])

    assignment = {}
    for scene_id in sorted(by_scene):
        ids = sorted(by_scene[scene_id])
        g = rng(seed, _TAG_SPLIT, scene_id)
        g.shuffle(ids)
        counts = _largest_remainder(len(ids), ratios)
        offset = 0
        for split, n in zip(SPLITS, counts):
            for sid in ids[offset:offset + n]:
                assignment[sid] = split
            offset += n
    for s in manifest["samples"]:
        s["split"] = assignment[s["source_id"]]


def _largest_remainder(n: int, ratios) -> list:
    exact = [n * r for r in ratios]
    base = [int(np.floor(e)) for e in exact]
    short = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def compute_normalization(manifest: dict) -> dict:
    """Per-scene position min/max from the training split only."""
    norm = {}
    scene_ids = sorted({s["scene_id"] for s in manifest["samples"]})
    for scene_id in scene_ids:
        train = samples_of(manifest, split="train", scene_id=scene_id)
        if not train:
            raise InvalidArgumentError(f"scene {scene_id} has no training samples")
        pos = np.array([s["position"] for s in train], dtype=np.float64)
        pmin = pos.min(axis=0)
        pmax = pos.max(axis=0)
        for axis in range(3):
            if pmax[axis] - pmin[axis] < 1e-9:
                raise DegenerateAxisError(scene_id, axis)
        norm[str(scene_id)] = {"pmin": pmin.tolist(), "pmax": pmax.tolist()}
    return norm


def norm_params(manifest: dict, scene_id: int) -> tuple:
    entry = manifest["normalization"].get(str(scene_id))
    if entry is None:
        raise ReferentialIntegrityError(f"no normalization entry for scene {scene_id}")
    return np.array(entry["pmin"]), np.array(entry["pmax"])


def normalize_position(p, pmin, pmax) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return 2.0 * (p - pmin) / (pmax - pmin) - 1.0


def denormalize_position(pn, pmin, pmax) -> np.ndarray:
    pn = np.asarray(pn, dtype=np.float64)
    return (pn + 1.0) / 2.0 * (pmax - pmin) + pmin


def pose_target(sample: dict, manifest: dict) -> np.ndarray:
    """7-vector regression target: normalized position plus canonical unit
    quaternion."""
    pmin, pmax = norm_params(manifest, sample["scene_id"])
    pn = normalize_position(sample["position"], pmin, pmax)
    q = quat_canonical(quat_normalize(sample["quaternion"]))
    return np.concatenate([pn, q]).astype(np.float32)


def augment_dataset(root, manifest: dict, factors, mask_frac, stride_frac) -> dict:
    """Append brightness and sliding-mask variants for every original sample.

    Brightness touches only the RGB image; masks burn the same rectangle into
    both modalities. Variants inherit pose, scene, and split from the source.
    """
    root = str(root)
    bit_depth = manifest["image"]["bit_depth"]
    width, height = manifest["image"]["width"], manifest["image"]["height"]
    rects = sliding_mask_grid(width, height, mask_frac, stride_frac) if mask_frac else []
    next_id = max((s["id"] for s in manifest["samples"]), default=-1) + 1
    originals = samples_of(manifest, kind="original")

    for src in originals:
        rgb = read_png(os.path.join(root, src["rgb_path"]))
        pc = read_png(os.path.join(root, src["pc_path"]))
        for factor in factors:
            if factor == 1.0:
                continue
            rec = _variant_record(src, next_id, "brightness")
            rec["brightness"] = float(factor)
            _write_variant(root, rec, adjust_brightness(rgb, factor), pc, bit_depth)
            manifest["samples"].append(rec)
            next_id += 1
        for rect in rects:
            rec = _variant_record(src, next_id, "mask")
            rec["mask"] = list(rect)
            m_rgb, m_pc = mask_pair(rgb, pc, rect)
            _write_variant(root, rec, m_rgb, m_pc, bit_depth)
            manifest["samples"].append(rec)
            next_id += 1

    save_manifest(manifest, root)
    return manifest


def _variant_record(src: dict, sample_id: int, kind: str) -> dict:
    rec = dict(src)
    rec["id"] = sample_id
    rec["kind"] = kind
    rec["source_id"] = src["id"]
    rec["rgb_path"] = os.path.join("images", "rgb", f"{sample_id:06d}.png")
    rec["pc_path"] = os.path.join("images", "pc", f"{sample_id:06d}.png")
    return rec


def _write_variant(root, rec, rgb, pc, bit_depth):
    write_png(os.path.join(root, rec["rgb_path"]), rgb, bit_depth)
    write_png(os.path.join(root, rec["pc_path"]), pc, bit_depth)


def _to_tensor(image: np.ndarray) -> torch.Tensor:
    """float [0, 1] HWC image to a [-1, 1] CHW tensor."""
    return torch.from_numpy(image.transpose(2, 0, 1).copy()) * 2.0 - 1.0


class ClassifierDataset(Dataset):
    """(rgb, scene_id) pairs for scene classification."""

    def __init__(self, manifest, root, split):
        if split not in SPLITS:
            raise InvalidArgumentError(f"split must be one of {SPLITS}")
        self.root = str(root)
        self.samples = sorted(samples_of(manifest, split=split), key=lambda s: s["id"])

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        s = self.samples[i]
        rgb = read_png(os.path.join(self.root, s["rgb_path"]))
        return _to_tensor(rgb), s["scene_id"]


class PairedDataset(Dataset):
    """(rgb, pointcloud) pairs for image-to-image translation."""

    def __init__(self, manifest, root, split):
        if split not in SPLITS:
            raise InvalidArgumentError(f"split must be one of {SPLITS}")
        self.root = str(root)
        self.samples = sorted(samples_of(manifest, split=split), key=lambda s: s["id"])

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        s = self.samples[i]
        rgb = read_png(os.path.join(self.root, s["rgb_path"]))
        pc = read_png(os.path.join(self.root, s["pc_path"]))
        return _to_tensor(rgb), _to_tensor(pc)


class PoseDataset(Dataset):
    """(rgb, pointcloud, pose target, scene_id) tuples for pose regression.

    pc_source picks the point-cloud modality: "ground_truth" reads the
    rendered clouds, "generated" reads materialized reconstructions, which is
    what the deployed system sees.
    """

    def __init__(self, manifest, root, split, pc_source="ground_truth"):
        if split not in SPLITS:
            raise InvalidArgumentError(f"split must be one of {SPLITS}")
        if pc_source not in ("ground_truth", "generated"):
            raise InvalidArgumentError(f"unknown pc_source {pc_source!r}")
        self.root = str(root)
        self.manifest = manifest
        self.pc_key = "pc_path" if pc_source == "ground_truth" else "gan_pc_path"
        self.samples = sorted(samples_of(manifest, split=split), key=lambda s: s["id"])
        if pc_source == "generated":
            missing = [s["id"] for s in self.samples if self.pc_key not in s]
            if missing:
                raise ReferentialIntegrityError(
                    f"{len(missing)} samples lack reconstructions (first: {missing[0]}); "
                    "materialize them before training on generated clouds"
                )
        self.targets = {
            s["id"]: torch.from_numpy(pose_target(s, manifest)) for s in self.samples
        }

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        s = self.samples[i]
        rgb = read_png(os.path.join(self.root, s["rgb_path"]))
        pc = read_png(os.path.join(self.root, s[self.pc_key]))
        return _to_tensor(rgb), _to_tensor(pc), self.targets[s["id"]], s["scene_id"]
