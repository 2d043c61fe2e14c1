"""Training loops and the pose loss.

Everything runs on CPU by default and is deterministic for a fixed seed:
torch is seeded once, loaders get seeded generators with num_workers=0, and
the data pipeline behind them is already reproducible.
"""
from __future__ import annotations

import os
import random

import numpy as np
import torch
from torch.utils.data import DataLoader

from .dataset import _to_tensor  # shared image-to-tensor convention
from .errors import ConfigError, DivergenceError
from .images import read_png, write_png
from .util import write_json


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def make_loader(dataset, batch_size, shuffle, seed, drop_last=False) -> DataLoader:
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle,
                      num_workers=0, generator=gen, drop_last=drop_last)


def _safe_norm(diff: torch.Tensor) -> torch.Tensor:
    """Row-wise euclidean norm with a zero subgradient at exactly zero.

    sqrt has an infinite derivative at 0, so rows with zero difference are
    kept out of the sqrt entirely instead of being epsilon-padded.
    """
    sq = (diff * diff).sum(dim=1)
    out = torch.zeros_like(sq)
    nz = sq > 0
    if nz.any():
        out[nz] = torch.sqrt(sq[nz])
    return out


def pose_loss(pred: torch.Tensor, target: torch.Tensor, beta: float = 1.0):
    """Position norm plus (1/beta)-weighted quaternion norm, both non-squared.

    The target quaternion is re-normalized; the prediction is compared raw.
    Returns (total, position term, quaternion term) as scalar tensors.
    """
    p, q = pred[:, :3], pred[:, 3:]
    tp, tq = target[:, :3], target[:, 3:]
    tq = tq / tq.norm(dim=1, keepdim=True)
    pos = _safe_norm(p - tp).mean()
    quat = _safe_norm(q - tq).mean()
    return pos + quat / beta, pos, quat


def _check_finite(loss, epoch):
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss.item()}", epoch)


def train_classifier(model, train_ds, val_ds, epochs, batch_size=16, lr=1e-3,
                     seed=0, device="cpu", verbose=False) -> dict:
    seed_everything(seed)
    model.to(device)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    ce = torch.nn.CrossEntropyLoss()
    train_loader = make_loader(train_ds, batch_size, True, seed, drop_last=True)
    val_loader = make_loader(val_ds, batch_size, False, seed)
    history = {"train_loss": [], "val_loss": [], "val_acc": []}
    for epoch in range(epochs):
        model.train()
        total, count = 0.0, 0
        for x, y in train_loader:
            x, y = x.to(device), y.to(device)
            opt.zero_grad()
            loss = ce(model(x), y)
            _check_finite(loss, epoch)
            loss.backward()
            opt.step()
            total += loss.item() * x.shape[0]
            count += x.shape[0]
        val_loss, val_acc = eval_classifier(model, val_loader, device)
        history["train_loss"].append(total / max(count, 1))
        history["val_loss"].append(val_loss)
        history["val_acc"].append(val_acc)
        if verbose:
            print(f"classifier epoch {epoch + 1}/{epochs}: "
                  f"train {history['train_loss'][-1]:.4f} "
                  f"val {val_loss:.4f} acc {val_acc:.4f}")
    return history


@torch.no_grad()
def eval_classifier(model, loader, device="cpu"):
    model.eval()
    ce = torch.nn.CrossEntropyLoss(reduction="sum")
    total, correct, count = 0.0, 0, 0
    for x, y in loader:
        x, y = x.to(device), y.to(device)
        logits = model(x)
        total += ce(logits, y).item()
        correct += (logits.argmax(dim=1) == y).sum().item()
        count += x.shape[0]
    return total / max(count, 1), correct / max(count, 1)


def train_gan(gen, disc, train_ds, val_ds, epochs, batch_size=8, lr=2e-4,
              l1_weight=100.0, seed=0, device="cpu", verbose=False) -> dict:
    """Conditional adversarial training with an L1 reconstruction term."""
    seed_everything(seed)
    gen.to(device)
    disc.to(device)
    bce = torch.nn.BCEWithLogitsLoss()
    l1 = torch.nn.L1Loss()
    opt_g = torch.optim.Adam(gen.parameters(), lr=lr, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=lr, betas=(0.5, 0.999))
    train_loader = make_loader(train_ds, batch_size, True, seed, drop_last=True)
    val_loader = make_loader(val_ds, batch_size, False, seed)

    history = {"g_loss": [], "d_loss": [], "val_l1": [],
               "initial_val_l1": eval_gan_l1(gen, val_loader, device)}
    for epoch in range(epochs):
        gen.train()
        disc.train()
        g_total, d_total, count = 0.0, 0.0, 0
        for rgb, pc in train_loader:
            rgb, pc = rgb.to(device), pc.to(device)
            fake = gen(rgb)

            opt_d.zero_grad()
            pred_real = disc(torch.cat([rgb, pc], dim=1))
            pred_fake = disc(torch.cat([rgb, fake.detach()], dim=1))
            d_loss = 0.5 * (bce(pred_real, torch.ones_like(pred_real)) +
                            bce(pred_fake, torch.zeros_like(pred_fake)))
            _check_finite(d_loss, epoch)
            d_loss.backward()
            opt_d.step()

            opt_g.zero_grad()
            pred_fake = disc(torch.cat([rgb, fake], dim=1))
            g_loss = bce(pred_fake, torch.ones_like(pred_fake)) + l1_weight * l1(fake, pc)
            _check_finite(g_loss, epoch)
            g_loss.backward()
            opt_g.step()

            g_total += g_loss.item() * rgb.shape[0]
            d_total += d_loss.item() * rgb.shape[0]
            count += rgb.shape[0]
        history["g_loss"].append(g_total / max(count, 1))
        history["d_loss"].append(d_total / max(count, 1))
        history["val_l1"].append(eval_gan_l1(gen, val_loader, device))
        if verbose:
            print(f"gan epoch {epoch + 1}/{epochs}: g {history['g_loss'][-1]:.4f} "
                  f"d {history['d_loss'][-1]:.4f} val_l1 {history['val_l1'][-1]:.4f}")
    return history


@torch.no_grad()
def eval_gan_l1(gen, loader, device="cpu") -> float:
    gen.eval()
    total, count = 0.0, 0
    for rgb, pc in loader:
        rgb, pc = rgb.to(device), pc.to(device)
        fake = gen(rgb)
        total += (fake - pc).abs().mean().item() * rgb.shape[0]
        count += rgb.shape[0]
    return total / max(count, 1)


def _pose_inputs(batch, modality):
    rgb, pc, target, _ = batch
    if modality == "rgb":
        return (rgb,), target
    if modality == "pc":
        return (pc,), target
    return (rgb, pc), target


def train_pose(model, train_ds, val_ds, epochs, modality, beta=1.0, batch_size=16,
               lr=1e-3, seed=0, device="cpu", verbose=False) -> dict:
    """Shared loop for branch pretraining (modality "rgb" or "pc") and fused
    training (modality "fused", model takes both images)."""
    if modality not in ("rgb", "pc", "fused"):
        raise ConfigError(f"unknown modality {modality!r}")
    seed_everything(seed)
    model.to(device)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    train_loader = make_loader(train_ds, batch_size, True, seed, drop_last=True)
    val_loader = make_loader(val_ds, batch_size, False, seed)
    history = {"train_loss": [], "train_pos": [], "train_quat": [],
               "val_loss": [], "val_pos": [], "val_quat": []}
    for epoch in range(epochs):
        model.train()
        totals, count = np.zeros(3), 0
        for batch in train_loader:
            inputs, target = _pose_inputs(batch, modality)
            inputs = tuple(t.to(device) for t in inputs)
            target = target.to(device)
            opt.zero_grad()
            loss, pos, quat = pose_loss(model(*inputs), target, beta)
            _check_finite(loss, epoch)
            loss.backward()
            opt.step()
            totals += np.array([loss.item(), pos.item(), quat.item()]) * target.shape[0]
            count += target.shape[0]
        totals /= max(count, 1)
        val_loss, val_pos, val_quat = eval_pose(model, val_loader, modality, beta, device)
        history["train_loss"].append(float(totals[0]))
        history["train_pos"].append(float(totals[1]))
        history["train_quat"].append(float(totals[2]))
        history["val_loss"].append(val_loss)
        history["val_pos"].append(val_pos)
        history["val_quat"].append(val_quat)
        if verbose:
            print(f"pose[{modality}] epoch {epoch + 1}/{epochs}: "
                  f"train {history['train_loss'][-1]:.4f} val {val_loss:.4f}")
    return history


@torch.no_grad()
def eval_pose(model, loader, modality, beta=1.0, device="cpu"):
    model.eval()
    totals = np.zeros(3)
    count = 0
    for batch in loader:
        inputs, target = _pose_inputs(batch, modality)
        inputs = tuple(t.to(device) for t in inputs)
        target = target.to(device)
        loss, pos, quat = pose_loss(model(*inputs), target, beta)
        totals += np.array([loss.item(), pos.item(), quat.item()]) * target.shape[0]
        count += target.shape[0]
    totals /= max(count, 1)
    return float(totals[0]), float(totals[1]), float(totals[2])


@torch.no_grad()
def materialize_reconstructions(gen, manifest, root, batch_size=16, device="cpu") -> dict:
    """Run the generator over every sample's RGB image and store the predicted
    point-cloud image under images/gan_pc/, recording gan_pc_path."""
    from .dataset import save_manifest

    gen.to(device)
    gen.eval()
    root = str(root)
    bit_depth = manifest["image"]["bit_depth"]
    samples = sorted(manifest["samples"], key=lambda s: s["id"])
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = torch.stack([
            _to_tensor(read_png(os.path.join(root, s["rgb_path"]))) for s in chunk
        ]).to(device)
        fake = gen(batch)
        imgs = ((fake.cpu().numpy().transpose(0, 2, 3, 1) + 1.0) / 2.0).clip(0.0, 1.0)
        for s, img in zip(chunk, imgs):
            rel = os.path.join("images", "gan_pc", f"{s['id']:06d}.png")
            write_png(os.path.join(root, rel), img.astype(np.float32), bit_depth)
            s["gan_pc_path"] = rel
    save_manifest(manifest, root)
    return manifest


def save_checkpoint(path, model, meta: dict) -> None:
    path = str(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    torch.save({"state_dict": model.state_dict(), "meta": dict(meta)}, path)


def load_checkpoint(path, model, expected: dict | None = None) -> dict:
    blob = torch.load(str(path), map_location="cpu", weights_only=False)
    meta = blob.get("meta", {})
    if expected:
        for key, want in expected.items():
            have = meta.get(key)
            if have != want:
                raise ConfigError(
                    f"checkpoint {path} has {key}={have!r}, expected {want!r}"
                )
    model.load_state_dict(blob["state_dict"])
    return meta


def save_history(path, history: dict) -> None:
    write_json(path, history)
