"""Staged pipeline with dependency tracking.

Each stage stamps a hash of the config subset it depends on (chained through
its prerequisites), so re-running is a no-op until a relevant setting
changes, and downstream stages refuse to run on top of stale artifacts.
Changing the training seed re-runs training stages but leaves the rendered
dataset untouched.
"""
from __future__ import annotations

import os

import torch

from .config import validate_config
from .dataset import PoseDataset, ClassifierDataset, PairedDataset, augment_dataset, generate_dataset, load_manifest
from .errors import (
    ConfigError,
    DependencyError,
    IncomparableReportsError,
    InvalidArgumentError,
    StaleArtifactError,
)
from .evaluation import (
    disruption_test,
    evaluate_classifier,
    evaluate_pose_model,
    plot_confusion,
    plot_loss_panels,
    write_csv,
)
from .models import (
    FusedPoseNet,
    PatchDiscriminator,
    PoseBranch,
    SceneClassifier,
    SingleBranchPoseNet,
    UNetGenerator,
    init_gan_weights,
)
from .scene_world import build_world, load_world, save_world, validate_world
from .training import (
    load_checkpoint,
    materialize_reconstructions,
    save_checkpoint,
    save_history,
    seed_everything,
    train_classifier,
    train_gan,
    train_pose,
)
from .util import canonical_json, derive_seed, read_json, sha256_of, write_json

STAGES = (
    "generate",
    "augment",
    "train_classifier",
    "train_gan",
    "pretrain_branches",
    "train_fused",
    "evaluate",
    "disruption",
    "report",
)

DEPS = {
    "generate": (),
    "augment": ("generate",),
    "train_classifier": ("augment",),
    "train_gan": ("augment",),
    "pretrain_branches": ("augment", "train_classifier", "train_gan"),
    "train_fused": ("pretrain_branches",),
    "evaluate": ("train_classifier", "pretrain_branches", "train_fused"),
    "disruption": ("train_gan", "pretrain_branches", "train_fused"),
    "report": ("evaluate", "disruption"),
}


class RunPaths:
    def __init__(self, run_dir):
        self.run_dir = str(run_dir)
        self.world = os.path.join(self.run_dir, "world.json")
        self.data_dir = os.path.join(self.run_dir, "data")
        self.models_dir = os.path.join(self.run_dir, "models")
        self.reports_dir = os.path.join(self.run_dir, "reports")
        self.stages_dir = os.path.join(self.run_dir, "stages")

    def stamp(self, stage):
        return os.path.join(self.stages_dir, f"{stage}.json")

    def model(self, name):
        return os.path.join(self.models_dir, f"{name}.pt")

    def history(self, name):
        return os.path.join(self.models_dir, f"history_{name}.json")

    def report(self, name):
        return os.path.join(self.reports_dir, name)


def _subset(cfg, stage) -> dict:
    t = cfg["training"]
    common = {"seed": t["seed"], "device": t["device"]}
    if stage == "generate":
        return {"world": cfg["world"], "generate": cfg["generate"]}
    if stage == "augment":
        return {"augment": cfg["augment"]}
    if stage == "train_classifier":
        return {**common, "classifier": t["classifier"]}
    if stage == "train_gan":
        return {**common, "gan": t["gan"]}
    if stage == "pretrain_branches":
        return {**common, "beta": t["beta"], "branches": t["branches"]}
    if stage == "train_fused":
        return {**common, "beta": t["beta"], "fused": t["fused"]}
    if stage == "evaluate":
        return {"beta": t["beta"], "evaluation": cfg["evaluation"]}
    if stage == "disruption":
        return {"beta": t["beta"], "disruption": cfg["disruption"]}
    if stage == "report":
        return {}
    raise InvalidArgumentError(f"unknown stage {stage!r}")


def stage_hash(cfg, stage) -> str:
    doc = {
        "stage": stage,
        "config": _subset(cfg, stage),
        "deps": {dep: stage_hash(cfg, dep) for dep in DEPS[stage]},
    }
    return sha256_of(canonical_json(doc))[:16]


def _stage_generate(cfg, paths: RunPaths):
    w = cfg["world"]
    world = build_world(w["seed"], w["scene_count"], w["extent"])
    validate_world(world)
    save_world(world, paths.world)
    gen_cfg = dict(cfg["generate"])
    gen_cfg["seed"] = w["seed"]
    gen_cfg["world_path"] = os.path.relpath(paths.world, paths.data_dir)
    generate_dataset(world, paths.data_dir, gen_cfg)


def _stage_augment(cfg, paths: RunPaths):
    a = cfg["augment"]
    manifest = load_manifest(paths.data_dir)
    augment_dataset(paths.data_dir, manifest, a["brightness_factors"],
                    a["mask_frac"], a["stride_frac"])


def _stage_train_classifier(cfg, paths: RunPaths):
    t = cfg["training"]
    c = t["classifier"]
    manifest = load_manifest(paths.data_dir)
    num_scenes = len(manifest["normalization"])
    seed_everything(derive_seed(t["seed"], "classifier-init"))
    model = SceneClassifier(num_scenes, c["width_mult"], c["depth_mult"], c["drop_connect"])
    history = train_classifier(
        model,
        ClassifierDataset(manifest, paths.data_dir, "train"),
        ClassifierDataset(manifest, paths.data_dir, "val"),
        epochs=c["epochs"], batch_size=c["batch_size"], lr=c["lr"],
        seed=t["seed"], device=t["device"], verbose=True,
    )
    save_checkpoint(paths.model("classifier"), model, {
        "kind": "classifier", "num_scenes": num_scenes,
        "width_mult": c["width_mult"], "depth_mult": c["depth_mult"],
        "drop_connect": c["drop_connect"], "seed": t["seed"],
    })
    save_history(paths.history("classifier"), history)


def _stage_train_gan(cfg, paths: RunPaths):
    t = cfg["training"]
    g = t["gan"]
    manifest = load_manifest(paths.data_dir)
    img = manifest["image"]
    if img["width"] != img["height"]:
        raise ConfigError("translation stage needs square images")
    seed_everything(derive_seed(t["seed"], "gan-init"))
    gen = UNetGenerator(img["width"], ngf=g["ngf"])
    disc = PatchDiscriminator(ndf=g["ndf"])
    init_gan_weights(gen)
    init_gan_weights(disc)
    history = train_gan(
        gen, disc,
        PairedDataset(manifest, paths.data_dir, "train"),
        PairedDataset(manifest, paths.data_dir, "val"),
        epochs=g["epochs"], batch_size=g["batch_size"], lr=g["lr"],
        l1_weight=g["l1_weight"], seed=t["seed"], device=t["device"], verbose=True,
    )
    save_checkpoint(paths.model("generator"), gen, {
        "kind": "generator", "image_size": img["width"], "ngf": g["ngf"], "seed": t["seed"],
    })
    save_checkpoint(paths.model("discriminator"), disc, {
        "kind": "discriminator", "ndf": g["ndf"], "seed": t["seed"],
    })
    save_history(paths.history("gan"), history)
    materialize_reconstructions(gen, manifest, paths.data_dir, device=t["device"])


def _load_classifier(paths):
    blob = torch.load(paths.model("classifier"), map_location="cpu", weights_only=False)
    meta = blob["meta"]
    model = SceneClassifier(meta["num_scenes"], meta["width_mult"],
                            meta["depth_mult"], meta["drop_connect"])
    model.load_state_dict(blob["state_dict"])
    return model, meta


def _stage_pretrain_branches(cfg, paths: RunPaths):
    t = cfg["training"]
    b = t["branches"]
    manifest = load_manifest(paths.data_dir)
    classifier, cmeta = _load_classifier(paths)
    arch = (cmeta["width_mult"], cmeta["depth_mult"], cmeta["drop_connect"])

    train_gt = PoseDataset(manifest, paths.data_dir, "train", pc_source="ground_truth")
    val_gt = PoseDataset(manifest, paths.data_dir, "val", pc_source="ground_truth")
    train_gen = PoseDataset(manifest, paths.data_dir, "train", pc_source="generated")
    val_gen = PoseDataset(manifest, paths.data_dir, "val", pc_source="generated")

    seed_everything(derive_seed(t["seed"], "branch-rgb-init"))
    if b["init"] == "classifier":
        rgb_branch = PoseBranch.from_classifier(classifier)
    else:
        rgb_branch = PoseBranch(*arch)
    rgb_net = SingleBranchPoseNet(rgb_branch, arch[2])
    hist_rgb = train_pose(rgb_net, train_gt, val_gt, epochs=b["epochs"], modality="rgb",
                          beta=t["beta"], batch_size=b["batch_size"], lr=b["lr"],
                          seed=t["seed"], device=t["device"], verbose=True)

    # the point-cloud branch sees a different input distribution, and it
    # trains on the generator's reconstructions so it matches deployment
    seed_everything(derive_seed(t["seed"], "branch-pc-init"))
    pc_net = SingleBranchPoseNet(PoseBranch(*arch), arch[2])
    hist_pc = train_pose(pc_net, train_gen, val_gen, epochs=b["epochs"], modality="pc",
                         beta=t["beta"], batch_size=b["batch_size"], lr=b["lr"],
                         seed=derive_seed(t["seed"], "branch-pc"), device=t["device"],
                         verbose=True)

    meta = {"width_mult": arch[0], "depth_mult": arch[1], "drop_connect": arch[2],
            "num_scenes": cmeta["num_scenes"], "seed": t["seed"]}
    save_checkpoint(paths.model("branch_rgb"), rgb_net, {**meta, "kind": "branch_rgb"})
    save_checkpoint(paths.model("branch_pc"), pc_net, {**meta, "kind": "branch_pc"})
    save_history(paths.history("branch_rgb"), hist_rgb)
    save_history(paths.history("branch_pc"), hist_pc)


def _load_single(paths, name, arch):
    net = SingleBranchPoseNet(PoseBranch(*arch), arch[2])
    load_checkpoint(paths.model(name), net, expected={"kind": name})
    return net


def _stage_train_fused(cfg, paths: RunPaths):
    t = cfg["training"]
    f = t["fused"]
    manifest = load_manifest(paths.data_dir)
    _, cmeta = _load_classifier(paths)
    arch = (cmeta["width_mult"], cmeta["depth_mult"], cmeta["drop_connect"])

    seed_everything(derive_seed(t["seed"], "fused-init"))
    if f["init"] == "pretrained":
        rgb_net = _load_single(paths, "branch_rgb", arch)
        pc_net = _load_single(paths, "branch_pc", arch)
        fused = FusedPoseNet(rgb_net.branch, pc_net.branch, arch[2])
    else:
        fused = FusedPoseNet(PoseBranch(*arch), PoseBranch(*arch), arch[2])

    history = train_pose(
        fused,
        PoseDataset(manifest, paths.data_dir, "train", pc_source="generated"),
        PoseDataset(manifest, paths.data_dir, "val", pc_source="generated"),
        epochs=f["epochs"], modality="fused", beta=t["beta"],
        batch_size=f["batch_size"], lr=f["lr"],
        seed=derive_seed(t["seed"], "fused"), device=t["device"], verbose=True,
    )
    save_checkpoint(paths.model("fused"), fused, {
        "kind": "fused", "width_mult": arch[0], "depth_mult": arch[1],
        "drop_connect": arch[2], "num_scenes": cmeta["num_scenes"], "seed": t["seed"],
    })
    save_history(paths.history("fused"), history)


def _pose_models(cfg, paths):
    _, cmeta = _load_classifier(paths)
    arch = (cmeta["width_mult"], cmeta["depth_mult"], cmeta["drop_connect"])
    rgb_net = _load_single(paths, "branch_rgb", arch)
    pc_net = _load_single(paths, "branch_pc", arch)
    fused = FusedPoseNet(PoseBranch(*arch), PoseBranch(*arch), arch[2])
    load_checkpoint(paths.model("fused"), fused, expected={"kind": "fused"})
    return rgb_net, pc_net, fused


def _stage_evaluate(cfg, paths: RunPaths):
    t = cfg["training"]
    bs = cfg["evaluation"]["batch_size"]
    device = t["device"]
    manifest = load_manifest(paths.data_dir)
    classifier, _ = _load_classifier(paths)
    rgb_net, pc_net, fused = _pose_models(cfg, paths)

    clf = {split: evaluate_classifier(classifier, manifest, paths.data_dir, split,
                                      bs, device)
           for split in ("train", "val", "test")}
    pose = {}
    for name, model, modality, source in (
        ("rgb", rgb_net, "rgb", "ground_truth"),
        ("pointcloud", pc_net, "pc", "generated"),
        ("fused", fused, "fused", "generated"),
    ):
        pose[name] = {
            split: evaluate_pose_model(model, manifest, paths.data_dir, split,
                                       modality, t["beta"], source, bs, device)
            for split in ("train", "val", "test")
        }
    write_json(paths.report("evaluation.json"), {
        "dataset_hash": stage_hash(cfg, "augment"),
        "classifier": clf,
        "pose": pose,
    })


def _stage_disruption(cfg, paths: RunPaths):
    t = cfg["training"]
    manifest = load_manifest(paths.data_dir)
    world = load_world(paths.world)
    rgb_net, pc_net, fused = _pose_models(cfg, paths)
    gen_blob = torch.load(paths.model("generator"), map_location="cpu", weights_only=False)
    gen = UNetGenerator(gen_blob["meta"]["image_size"], ngf=gen_blob["meta"]["ngf"])
    gen.load_state_dict(gen_blob["state_dict"])

    result = disruption_test(
        world, manifest, paths.data_dir,
        {"gen": gen, "rgb": rgb_net, "pc": pc_net, "fused": fused},
        cfg["disruption"], beta=t["beta"], device=t["device"],
    )
    result["dataset_hash"] = stage_hash(cfg, "augment")
    write_json(paths.report("disruption.json"), result)


def _stage_report(cfg, paths: RunPaths):
    evaluation = read_json(paths.report("evaluation.json"))
    disruption = read_json(paths.report("disruption.json"))
    if evaluation["dataset_hash"] != disruption["dataset_hash"]:
        raise IncomparableReportsError(
            "evaluation and disruption reports come from different datasets"
        )

    clf = evaluation["classifier"]
    write_csv(paths.report("table1.csv"), ["split", "n", "accuracy", "loss"], [
        {"split": s, "n": clf[s]["n"], "accuracy": f"{clf[s]['accuracy']:.6f}",
         "loss": f"{clf[s]['loss']:.6f}"}
        for s in ("train", "val", "test")
    ])

    pose = evaluation["pose"]
    write_csv(paths.report("table2.csv"), ["model", "train", "val", "test"], [
        {"model": m, **{s: f"{pose[m][s]['loss']:.6f}" for s in ("train", "val", "test")}}
        for m in ("rgb", "pointcloud", "fused")
    ])

    write_csv(paths.report("table3.csv"),
              ["model", "x_mae_mm", "y_mae_mm", "z_mae_mm", "quat_deg"], [
        {"model": m,
         "x_mae_mm": f"{pose[m]['test']['x_mae_m'] * 1000:.2f}",
         "y_mae_mm": f"{pose[m]['test']['y_mae_m'] * 1000:.2f}",
         "z_mae_mm": f"{pose[m]['test']['z_mae_m'] * 1000:.2f}",
         "quat_deg": f"{pose[m]['test']['quat_deg']:.4f}"}
        for m in ("rgb", "pointcloud", "fused")
    ])

    rows = disruption["rows"]
    write_csv(paths.report("table4.csv"), ["model", "clean", "disrupted", "delta"], [
        {"model": m, "clean": f"{rows[m]['clean']:.6f}",
         "disrupted": f"{rows[m]['disrupted']:.6f}", "delta": f"{rows[m]['delta']:.6f}"}
        for m in ("rgb", "pointcloud", "fused")
    ])

    plot_confusion(clf["test"]["confusion"], paths.report("confusion_matrix.png"))
    histories = {
        "rgb": read_json(paths.history("branch_rgb")),
        "pointcloud": read_json(paths.history("branch_pc")),
        "fused": read_json(paths.history("fused")),
    }
    plot_loss_panels(histories, paths.reports_dir)

    lines = [
        "# Positioning pipeline report",
        "",
        f"- test scene accuracy: {clf['test']['accuracy']:.4f}",
        f"- test pose loss (rgb / pointcloud / fused): "
        f"{pose['rgb']['test']['loss']:.4f} / {pose['pointcloud']['test']['loss']:.4f} / "
        f"{pose['fused']['test']['loss']:.4f}",
        f"- disrupted pose loss (rgb / pointcloud / fused): "
        f"{rows['rgb']['disrupted']:.4f} / {rows['pointcloud']['disrupted']:.4f} / "
        f"{rows['fused']['disrupted']:.4f}",
        f"- disrupted frames changed pixel fraction: "
        f"mean {disruption['changed_fraction_mean']:.4f}, "
        f"max {disruption['changed_fraction_max']:.4f}",
        "",
        "Tables 1-4 and the loss panels live next to this file.",
    ]
    with open(paths.report("report.md"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


_STAGE_IMPLS = {
    "generate": _stage_generate,
    "augment": _stage_augment,
    "train_classifier": _stage_train_classifier,
    "train_gan": _stage_train_gan,
    "pretrain_branches": _stage_pretrain_branches,
    "train_fused": _stage_train_fused,
    "evaluate": _stage_evaluate,
    "disruption": _stage_disruption,
    "report": _stage_report,
}


def run_stage(cfg, run_dir, stage, force=False) -> str:
    """Run one stage if its stamp is missing or stale; returns completed or
    skipped. Prerequisite stamps must exist and match the current config."""
    validate_config(cfg)
    if stage not in _STAGE_IMPLS:
        raise InvalidArgumentError(f"unknown stage {stage!r}; choose from {STAGES}")
    paths = RunPaths(run_dir)
    for dep in DEPS[stage]:
        stamp_path = paths.stamp(dep)
        if not os.path.exists(stamp_path):
            raise DependencyError(
                f"stage '{stage}' needs '{dep}' to run first", stage=dep
            )
        stamped = read_json(stamp_path)
        if stamped.get("hash") != stage_hash(cfg, dep):
            raise StaleArtifactError(
                f"stage '{dep}' was produced under a different config; re-run it"
            )
    want = stage_hash(cfg, stage)
    stamp_path = paths.stamp(stage)
    if not force and os.path.exists(stamp_path):
        if read_json(stamp_path).get("hash") == want:
            return "skipped"
    _STAGE_IMPLS[stage](cfg, paths)
    write_json(stamp_path, {
        "stage": stage,
        "hash": want,
        "deps": {dep: stage_hash(cfg, dep) for dep in DEPS[stage]},
    })
    return "completed"


def run_pipeline(cfg, run_dir, stages=None, force=False) -> dict:
    """Run the given stages (default: all) in dependency order."""
    todo = list(STAGES) if stages is None else list(stages)
    for stage in todo:
        if stage not in STAGES:
            raise InvalidArgumentError(f"unknown stage {stage!r}")
    statuses = {}
    for stage in STAGES:
        if stage in todo:
            statuses[stage] = run_stage(cfg, run_dir, stage, force=force)
    return statuses
