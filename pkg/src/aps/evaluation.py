"""Metrics, the occlusion disruption test, and report rendering.

All pose errors are reported three ways: the combined training loss, the
per-axis position error in the world frame (denormalized back to meters),
and the quaternion geodesic angle in degrees.
"""
from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from .dataset import (
    ClassifierDataset,
    PoseDataset,
    _to_tensor,
    denormalize_position,
    norm_params,
    samples_of,
)
from .errors import InvalidArgumentError
from .geometry import quat_normalize
from .images import read_png
from .scene_world import CameraPose, RenderSettings, insert_occluders, render_rgb
from .training import make_loader, pose_loss
from .util import rng

_TAG_DISRUPT = 401


def quat_angle_deg(q1, q2) -> float:
    """Geodesic angle between two rotations, in degrees; sign-insensitive."""
    a = np.asarray(quat_normalize(q1))
    b = np.asarray(quat_normalize(q2))
    dot = min(1.0, abs(float(np.dot(a, b))))
    return float(np.degrees(2.0 * np.arccos(dot)))


@torch.no_grad()
def evaluate_classifier(model, manifest, root, split, batch_size=32, device="cpu") -> dict:
    """Accuracy, cross-entropy, and a confusion matrix over one split."""
    ds = ClassifierDataset(manifest, root, split)
    loader = make_loader(ds, batch_size, False, 0)
    n_scenes = len(manifest["normalization"])
    confusion = np.zeros((n_scenes, n_scenes), dtype=np.int64)
    ce = torch.nn.CrossEntropyLoss(reduction="sum")
    model.to(device)
    model.eval()
    total, correct, count = 0.0, 0, 0
    for x, y in loader:
        x, y = x.to(device), y.to(device)
        logits = model(x)
        total += ce(logits, y).item()
        pred = logits.argmax(dim=1)
        correct += (pred == y).sum().item()
        count += x.shape[0]
        for t, p in zip(y.cpu().numpy(), pred.cpu().numpy()):
            confusion[t, p] += 1
    return {
        "split": split,
        "n": count,
        "accuracy": correct / max(count, 1),
        "loss": total / max(count, 1),
        "confusion": confusion.tolist(),
    }


@torch.no_grad()
def evaluate_pose_model(model, manifest, root, split, modality, beta=1.0,
                        pc_source="ground_truth", batch_size=32, device="cpu") -> dict:
    """Pose losses plus denormalized per-axis MAE and quaternion degrees."""
    ds = PoseDataset(manifest, root, split, pc_source=pc_source)
    loader = make_loader(ds, batch_size, False, 0)
    model.to(device)
    model.eval()
    preds, targets, scenes = [], [], []
    for rgb, pc, target, scene in loader:
        if modality == "rgb":
            out = model(rgb.to(device))
        elif modality == "pc":
            out = model(pc.to(device))
        else:
            out = model(rgb.to(device), pc.to(device))
        preds.append(out.cpu())
        targets.append(target)
        scenes.append(scene)
    pred = torch.cat(preds)
    target = torch.cat(targets)
    scene = torch.cat(scenes).numpy()
    loss, pos_term, quat_term = pose_loss(pred, target, beta)

    pred_np, target_np = pred.numpy(), target.numpy()
    pos_err = np.zeros((len(scene), 3))
    ang = np.zeros(len(scene))
    for i in range(len(scene)):
        pmin, pmax = norm_params(manifest, int(scene[i]))
        p_hat = denormalize_position(pred_np[i, :3], pmin, pmax)
        p_ref = denormalize_position(target_np[i, :3], pmin, pmax)
        pos_err[i] = np.abs(p_hat - p_ref)
        ang[i] = quat_angle_deg(pred_np[i, 3:], target_np[i, 3:])
    mae = pos_err.mean(axis=0)
    return {
        "split": split,
        "modality": modality,
        "n": len(scene),
        "loss": float(loss.item()),
        "pos_term": float(pos_term.item()),
        "quat_term": float(quat_term.item()),
        "x_mae_m": float(mae[0]),
        "y_mae_m": float(mae[1]),
        "z_mae_m": float(mae[2]),
        "quat_deg": float(ang.mean()),
    }


def _quantize(image: np.ndarray, bit_depth: int) -> np.ndarray:
    scale = float(2 ** bit_depth - 1)
    return (np.rint(image * scale) / scale).astype(np.float32)


@torch.no_grad()
def disruption_test(world, manifest, root, models: dict, cfg: dict,
                    beta=1.0, device="cpu") -> dict:
    """Re-render sampled test frames in a world with unseen occluder boxes and
    compare pose losses on clean versus disrupted inputs.

    Point-cloud inputs on both sides come from the generator, matching what
    the deployed pipeline would see. models needs keys gen, rgb, pc, fused.
    """
    frames = int(cfg.get("frames", 24))
    originals = samples_of(manifest, split="test", kind="original")
    if not originals:
        raise InvalidArgumentError("no test originals to disrupt")
    originals = sorted(originals, key=lambda s: s["id"])
    g = rng(cfg.get("seed", 0), _TAG_DISRUPT)
    take = min(frames, len(originals))
    idx = np.sort(g.choice(len(originals), size=take, replace=False))
    chosen = [originals[i] for i in idx]

    disrupted = world
    for scene_id in sorted({s["scene_id"] for s in chosen}):
        disrupted = insert_occluders(
            disrupted, scene_id, cfg.get("count", 2),
            tuple(cfg.get("size_range", (0.5, 1.1))), cfg.get("seed", 0),
        )

    img_cfg = manifest["image"]
    settings = RenderSettings(width=img_cfg["width"], height=img_cfg["height"],
                              vertical_fov=img_cfg["vertical_fov"])
    bit_depth = img_cfg["bit_depth"]

    clean_rgb, dis_rgb, targets = [], [], []
    changed = []
    from .dataset import pose_target

    for s in chosen:
        rgb0 = read_png(os.path.join(str(root), s["rgb_path"]))
        pose = CameraPose(tuple(s["position"]), tuple(s["quaternion"]))
        rgb1 = _quantize(render_rgb(disrupted, s["scene_id"], pose, settings), bit_depth)
        changed.append(float(np.mean(np.abs(rgb1 - rgb0) > 2.0 / 255.0)))
        clean_rgb.append(_to_tensor(rgb0))
        dis_rgb.append(_to_tensor(rgb1))
        targets.append(torch.from_numpy(pose_target(s, manifest)))

    clean_rgb = torch.stack(clean_rgb).to(device)
    dis_rgb = torch.stack(dis_rgb).to(device)
    target = torch.stack(targets).to(device)

    gen = models["gen"].to(device)
    gen.eval()
    clean_pc = gen(clean_rgb)
    dis_pc = gen(dis_rgb)

    def loss_of(model, inputs):
        model.to(device)
        model.eval()
        total, _, _ = pose_loss(model(*inputs), target, beta)
        return float(total.item())

    rows = {
        "rgb": {"clean": loss_of(models["rgb"], (clean_rgb,)),
                "disrupted": loss_of(models["rgb"], (dis_rgb,))},
        "pointcloud": {"clean": loss_of(models["pc"], (clean_pc,)),
                       "disrupted": loss_of(models["pc"], (dis_pc,))},
        "fused": {"clean": loss_of(models["fused"], (clean_rgb, clean_pc)),
                  "disrupted": loss_of(models["fused"], (dis_rgb, dis_pc))},
    }
    for row in rows.values():
        row["delta"] = row["disrupted"] - row["clean"]
    return {
        "frames": [s["id"] for s in chosen],
        "changed_fraction_mean": float(np.mean(changed)),
        "changed_fraction_max": float(np.max(changed)),
        "rows": rows,
    }


def write_csv(path, fieldnames, rows) -> None:
    os.makedirs(os.path.dirname(str(path)) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def plot_confusion(confusion, path, title="Scene confusion (test)") -> None:
    m = np.asarray(confusion)
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(m, cmap="viridis")
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, str(m[i, j]), ha="center", va="center",
                    color="white" if m[i, j] < m.max() * 0.6 else "black", fontsize=8)
    ax.set_xlabel("predicted scene")
    ax.set_ylabel("true scene")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    os.makedirs(os.path.dirname(str(path)) or ".", exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


_PANEL_KEYS = {
    "total": ("train_loss", "val_loss"),
    "position": ("train_pos", "val_pos"),
    "quaternion": ("train_quat", "val_quat"),
}


def plot_loss_panels(histories: dict, out_dir) -> list:
    """One panel per (model, loss component); nine files for three models."""
    os.makedirs(str(out_dir), exist_ok=True)
    paths = []
    for name, hist in histories.items():
        for component, (train_key, val_key) in _PANEL_KEYS.items():
            fig, ax = plt.subplots(figsize=(4.2, 3.2))
            epochs = np.arange(1, len(hist[train_key]) + 1)
            ax.plot(epochs, hist[train_key], label="train")
            ax.plot(epochs, hist[val_key], label="val")
            ax.set_xlabel("epoch")
            ax.set_ylabel(f"{component} loss")
            ax.set_title(f"{name}: {component}")
            ax.legend()
            fig.tight_layout()
            path = os.path.join(str(out_dir), f"loss_{name}_{component}.png")
            fig.savefig(path, dpi=110)
            plt.close(fig)
            paths.append(path)
    return paths
