"""Network architectures.

Three families:

* SceneClassifier: a scaled-down mobile-inverted-bottleneck CNN with a
  1024 x 256 x 32 fully connected head (batch norm, swish, dropconnect).
  The output of the first head layer doubles as the feature embedding that
  pose branches are built from.
* UNetGenerator / PatchDiscriminator: image-to-image translation pair that
  maps RGB renders to point-cloud images.
* SingleBranchPoseNet / FusedPoseNet: pose regressors over one embedding or
  the concatenation of an RGB and a point-cloud branch, emitting 3 position
  and 4 quaternion values.
"""
from __future__ import annotations

import copy
import math

import torch
import torch.nn as nn

from .errors import IncompatibleBranchError, InvalidArgumentError

# (expansion, channels, repeats, stride, kernel)
_STAGES = [
    (1, 16, 1, 1, 3),
    (6, 24, 2, 2, 3),
    (6, 40, 2, 2, 5),
    (6, 80, 3, 2, 3),
    (6, 112, 3, 1, 5),
    (6, 192, 4, 2, 5),
    (6, 320, 1, 1, 3),
]
HEAD_DIMS = (1024, 256, 32)


def _round_channels(c, divisor=8):
    new = max(divisor, int(c + divisor / 2) // divisor * divisor)
    if new < 0.9 * c:
        new += divisor
    return new


class DropConnectLinear(nn.Linear):
    """Linear layer whose individual weights are dropped during training."""

    def __init__(self, in_features, out_features, p=0.1):
        super().__init__(in_features, out_features)
        if not 0.0 <= p < 1.0:
            raise InvalidArgumentError("dropconnect p must be in [0, 1)")
        self.p = p

    def forward(self, x):
        w = self.weight
        if self.training and self.p > 0:
            mask = torch.bernoulli(torch.full_like(w, 1.0 - self.p))
            w = w * mask / (1.0 - self.p)
        return nn.functional.linear(x, w, self.bias)


class SqueezeExcite(nn.Module):
    def __init__(self, channels, se_channels):
        super().__init__()
        self.fc1 = nn.Conv2d(channels, se_channels, 1)
        self.fc2 = nn.Conv2d(se_channels, channels, 1)
        self.act = nn.SiLU(inplace=True)

    def forward(self, x):
        s = x.mean((2, 3), keepdim=True)
        s = self.fc2(self.act(self.fc1(s)))
        return x * torch.sigmoid(s)


class MBConv(nn.Module):
    def __init__(self, in_ch, out_ch, expand, stride, kernel):
        super().__init__()
        hidden = in_ch * expand
        layers = []
        if expand != 1:
            layers += [nn.Conv2d(in_ch, hidden, 1, bias=False),
                       nn.BatchNorm2d(hidden), nn.SiLU(inplace=True)]
        layers += [
            nn.Conv2d(hidden, hidden, kernel, stride, kernel // 2, groups=hidden, bias=False),
            nn.BatchNorm2d(hidden), nn.SiLU(inplace=True),
            SqueezeExcite(hidden, max(1, in_ch // 4)),
            nn.Conv2d(hidden, out_ch, 1, bias=False),
            nn.BatchNorm2d(out_ch),
        ]
        self.block = nn.Sequential(*layers)
        self.residual = stride == 1 and in_ch == out_ch

    def forward(self, x):
        out = self.block(x)
        return x + out if self.residual else out


class MBConvBackbone(nn.Module):
    """Stem, staged MBConv blocks, 1x1 head conv, global average pool."""

    def __init__(self, width_mult=0.25, depth_mult=0.5, in_ch=3):
        super().__init__()
        stem_ch = _round_channels(32 * width_mult)
        layers = [nn.Conv2d(in_ch, stem_ch, 3, 2, 1, bias=False),
                  nn.BatchNorm2d(stem_ch), nn.SiLU(inplace=True)]
        c = stem_ch
        for expand, channels, repeats, stride, kernel in _STAGES:
            out_ch = _round_channels(channels * width_mult)
            for i in range(max(1, math.ceil(repeats * depth_mult))):
                layers.append(MBConv(c, out_ch, expand, stride if i == 0 else 1, kernel))
                c = out_ch
        self.out_channels = _round_channels(1280 * width_mult)
        layers += [nn.Conv2d(c, self.out_channels, 1, bias=False),
                   nn.BatchNorm2d(self.out_channels), nn.SiLU(inplace=True)]
        self.features = nn.Sequential(*layers)

    def forward(self, x):
        return self.features(x).mean((2, 3))


class SceneClassifier(nn.Module):
    """Scene recognition CNN; forward_features exposes the 1024-d embedding
    coming out of the first head layer."""

    def __init__(self, num_scenes, width_mult=0.25, depth_mult=0.5, drop_connect=0.1):
        super().__init__()
        if num_scenes < 2:
            raise InvalidArgumentError("num_scenes must be >= 2")
        self.num_scenes = num_scenes
        self.backbone = MBConvBackbone(width_mult, depth_mult)
        self.embed = nn.Sequential(
            DropConnectLinear(self.backbone.out_channels, HEAD_DIMS[0], drop_connect),
            nn.BatchNorm1d(HEAD_DIMS[0]),
            nn.SiLU(inplace=True),
        )
        self.head = nn.Sequential(
            DropConnectLinear(HEAD_DIMS[0], HEAD_DIMS[1], drop_connect),
            nn.BatchNorm1d(HEAD_DIMS[1]),
            nn.SiLU(inplace=True),
            DropConnectLinear(HEAD_DIMS[1], HEAD_DIMS[2], drop_connect),
            nn.BatchNorm1d(HEAD_DIMS[2]),
            nn.SiLU(inplace=True),
            nn.Linear(HEAD_DIMS[2], num_scenes),
        )

    def forward_features(self, x):
        return self.embed(self.backbone(x))

    def forward(self, x):
        return self.head(self.forward_features(x))


class PoseBranch(nn.Module):
    """Backbone plus first head layer: images to 1024-d embeddings."""

    out_dim = HEAD_DIMS[0]

    def __init__(self, width_mult=0.25, depth_mult=0.5, drop_connect=0.1):
        super().__init__()
        self.backbone = MBConvBackbone(width_mult, depth_mult)
        self.embed = nn.Sequential(
            DropConnectLinear(self.backbone.out_channels, HEAD_DIMS[0], drop_connect),
            nn.BatchNorm1d(HEAD_DIMS[0]),
            nn.SiLU(inplace=True),
        )

    @classmethod
    def from_classifier(cls, classifier: SceneClassifier):
        """Truncate a trained classifier: copy everything up to and including
        the first head layer, dropping the rest."""
        branch = cls.__new__(cls)
        nn.Module.__init__(branch)
        branch.backbone = copy.deepcopy(classifier.backbone)
        branch.embed = copy.deepcopy(classifier.embed)
        return branch

    def forward(self, x):
        return self.embed(self.backbone(x))


class PoseHead(nn.Module):
    """256 x 32 regression head emitting 3 position + 4 quaternion values."""

    def __init__(self, in_dim, drop_connect=0.1):
        super().__init__()
        self.net = nn.Sequential(
            DropConnectLinear(in_dim, HEAD_DIMS[1], drop_connect),
            nn.BatchNorm1d(HEAD_DIMS[1]),
            nn.SiLU(inplace=True),
            DropConnectLinear(HEAD_DIMS[1], HEAD_DIMS[2], drop_connect),
            nn.BatchNorm1d(HEAD_DIMS[2]),
            nn.SiLU(inplace=True),
            nn.Linear(HEAD_DIMS[2], 7),
        )

    def forward(self, x):
        return self.net(x)


class SingleBranchPoseNet(nn.Module):
    """Pose regression from one modality."""

    def __init__(self, branch: PoseBranch, drop_connect=0.1):
        super().__init__()
        self.branch = branch
        self.head = PoseHead(branch.out_dim, drop_connect)

    def forward(self, x):
        return self.head(self.branch(x))


class FusedPoseNet(nn.Module):
    """Pose regression from concatenated RGB and point-cloud embeddings."""

    def __init__(self, rgb_branch: PoseBranch, pc_branch: PoseBranch, drop_connect=0.1):
        super().__init__()
        if rgb_branch.out_dim != pc_branch.out_dim:
            raise IncompatibleBranchError(
                f"branch widths differ: {rgb_branch.out_dim} vs {pc_branch.out_dim}"
            )
        self.rgb_branch = rgb_branch
        self.pc_branch = pc_branch
        self.head = PoseHead(rgb_branch.out_dim + pc_branch.out_dim, drop_connect)

    def forward(self, rgb, pc):
        feats = torch.cat([self.rgb_branch(rgb), self.pc_branch(pc)], dim=1)
        return self.head(feats)


def _unet_block(outer_ch, inner_ch, in_ch=None, submodule=None, outermost=False, innermost=False):
    if in_ch is None:
        in_ch = outer_ch
    down_conv = nn.Conv2d(in_ch, inner_ch, 4, 2, 1, bias=False)
    down_relu = nn.LeakyReLU(0.2, inplace=True)
    up_relu = nn.ReLU(inplace=True)
    if outermost:
        up = nn.ConvTranspose2d(inner_ch * 2, outer_ch, 4, 2, 1)
        model = [down_conv, submodule, up_relu, up, nn.Tanh()]
    elif innermost:
        up = nn.ConvTranspose2d(inner_ch, outer_ch, 4, 2, 1, bias=False)
        model = [down_relu, down_conv, up_relu, up, nn.BatchNorm2d(outer_ch)]
    else:
        up = nn.ConvTranspose2d(inner_ch * 2, outer_ch, 4, 2, 1, bias=False)
        model = [down_relu, down_conv, nn.BatchNorm2d(inner_ch),
                 submodule, up_relu, up, nn.BatchNorm2d(outer_ch)]
    return _UnetSkip(nn.Sequential(*model), outermost)


class _UnetSkip(nn.Module):
    def __init__(self, model, outermost):
        super().__init__()
        self.model = model
        self.outermost = outermost

    def forward(self, x):
        out = self.model(x)
        return out if self.outermost else torch.cat([x, out], dim=1)


class UNetGenerator(nn.Module):
    """U-Net that downsamples all the way to a 1x1 bottleneck, tanh output."""

    def __init__(self, image_size, in_ch=3, out_ch=3, ngf=32):
        super().__init__()
        if image_size < 64 or image_size & (image_size - 1) != 0:
            raise InvalidArgumentError(
                f"image_size must be a power of two >= 64, got {image_size}"
            )
        num_downs = int(math.log2(image_size))
        block = _unet_block(ngf * 8, ngf * 8, innermost=True)
        for _ in range(num_downs - 5):
            block = _unet_block(ngf * 8, ngf * 8, submodule=block)
        block = _unet_block(ngf * 4, ngf * 8, submodule=block)
        block = _unet_block(ngf * 2, ngf * 4, submodule=block)
        block = _unet_block(ngf, ngf * 2, submodule=block)
        self.model = _unet_block(out_ch, ngf, in_ch=in_ch, submodule=block, outermost=True)

    def forward(self, x):
        return self.model(x)


class PatchDiscriminator(nn.Module):
    """PatchGAN over the channel-concatenated (input, candidate) pair.

    Emits a logit map; no final sigmoid, pair with BCEWithLogitsLoss.
    """

    def __init__(self, in_ch=6, ndf=32, n_layers=3):
        super().__init__()
        layers = [nn.Conv2d(in_ch, ndf, 4, 2, 1), nn.LeakyReLU(0.2, inplace=True)]
        mult = 1
        for i in range(1, n_layers):
            prev, mult = mult, min(2 ** i, 8)
            layers += [nn.Conv2d(ndf * prev, ndf * mult, 4, 2, 1, bias=False),
                       nn.BatchNorm2d(ndf * mult), nn.LeakyReLU(0.2, inplace=True)]
        prev, mult = mult, min(2 ** n_layers, 8)
        layers += [nn.Conv2d(ndf * prev, ndf * mult, 4, 1, 1, bias=False),
                   nn.BatchNorm2d(ndf * mult), nn.LeakyReLU(0.2, inplace=True),
                   nn.Conv2d(ndf * mult, 1, 4, 1, 1)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


def init_gan_weights(module: nn.Module) -> None:
    """Gaussian(0, 0.02) init for conv and norm layers, the usual recipe for
    this translation setup."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, 0.02)
            nn.init.zeros_(m.bias)
