"""End-to-end localization from a single RGB image.

The deployed pipeline: classify the scene, translate the image to a
point-cloud image, regress the pose from the fused pair, then map the
normalized position back to world meters using the predicted scene's
normalization parameters.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch

from .dataset import _to_tensor, denormalize_position, load_manifest, norm_params
from .errors import BundleIntegrityError, InvalidArgumentError
from .geometry import quat_canonical, quat_normalize
from .images import read_png
from .models import (
    FusedPoseNet,
    PoseBranch,
    SceneClassifier,
    UNetGenerator,
)
from .training import load_checkpoint


@dataclass
class InferenceBundle:
    classifier: SceneClassifier
    generator: UNetGenerator
    fused: FusedPoseNet
    manifest: dict


def _require(path):
    if not os.path.exists(path):
        raise BundleIntegrityError(f"missing model file {path}")
    return path


def load_bundle(run_dir) -> InferenceBundle:
    """Assemble the classifier, generator, and fused regressor of a run."""
    run_dir = str(run_dir)
    data_dir = os.path.join(run_dir, "data")
    models_dir = os.path.join(run_dir, "models")
    manifest = load_manifest(data_dir)

    blob = torch.load(_require(os.path.join(models_dir, "classifier.pt")),
                      map_location="cpu", weights_only=False)
    meta = blob["meta"]
    if meta.get("kind") != "classifier":
        raise BundleIntegrityError(f"classifier.pt holds a {meta.get('kind')!r} model")
    classifier = SceneClassifier(meta["num_scenes"], meta["width_mult"],
                                 meta["depth_mult"], meta["drop_connect"])
    classifier.load_state_dict(blob["state_dict"])

    blob = torch.load(_require(os.path.join(models_dir, "generator.pt")),
                      map_location="cpu", weights_only=False)
    gmeta = blob["meta"]
    if gmeta.get("kind") != "generator":
        raise BundleIntegrityError(f"generator.pt holds a {gmeta.get('kind')!r} model")
    generator = UNetGenerator(gmeta["image_size"], ngf=gmeta["ngf"])
    generator.load_state_dict(blob["state_dict"])

    fused = FusedPoseNet(
        PoseBranch(meta["width_mult"], meta["depth_mult"]),
        PoseBranch(meta["width_mult"], meta["depth_mult"]),
    )
    fmeta = load_checkpoint(_require(os.path.join(models_dir, "fused.pt")),
                            fused, expected={"kind": "fused"})
    if fmeta.get("num_scenes") not in (None, meta["num_scenes"]):
        raise BundleIntegrityError("fused and classifier disagree on scene count")
    if gmeta["image_size"] != manifest["image"]["width"]:
        raise BundleIntegrityError("generator image size does not match the dataset")

    classifier.eval()
    generator.eval()
    fused.eval()
    return InferenceBundle(classifier, generator, fused, manifest)


@torch.no_grad()
def localize(bundle: InferenceBundle, rgb: np.ndarray) -> dict:
    img = bundle.manifest["image"]
    if rgb.shape != (img["height"], img["width"], 3):
        raise InvalidArgumentError(
            f"expected a {img['height']}x{img['width']}x3 image, got {rgb.shape}"
        )
    x = _to_tensor(rgb.astype(np.float32))[None]
    logits = bundle.classifier(x)[0]
    probs = torch.softmax(logits, dim=0).numpy()
    scene_id = int(logits.argmax().item())

    pc = bundle.generator(x)
    out = bundle.fused(x, pc)[0].numpy()

    pmin, pmax = norm_params(bundle.manifest, scene_id)
    position = denormalize_position(out[:3], pmin, pmax)
    quat = quat_canonical(quat_normalize(out[3:]))
    return {
        "scene_id": scene_id,
        "scene_probs": [float(p) for p in probs],
        "position": [float(v) for v in position],
        "quaternion": [float(v) for v in quat],
        "raw_output": [float(v) for v in out],
    }


def localize_file(bundle: InferenceBundle, image_path) -> dict:
    return localize(bundle, read_png(image_path))
