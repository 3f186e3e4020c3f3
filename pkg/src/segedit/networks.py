"""Network architectures: structure generator, conditional patch
discriminators, and the frozen perceptual encoder.

The generator translates a one-hot incomplete label map plus an edit-mask
channel into a color-coded segmentation map in [-1, 1]. Discriminators are
fully convolutional, so the variable-size crops produced by box expansion
need no special handling beyond a documented minimum side length.
"""

from __future__ import annotations

import contextlib

import torch
import torch.nn.functional as F
from torch import nn

# Receptive field of one score element for the discriminator stack below
# (k4s2 -> k4s2 -> k3s1 -> k3s1): 1 -> 3*4+... computed layer by layer:
# rf = 1; rf = 1+(3-1)*4 = ... forward pass: 4 -> 10 -> 18 -> 26.
MIN_DISC_SIDE = 26

# Weights for the five perceptual encoder taps, shallow to deep.
PERCEPTUAL_WEIGHTS = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)

ENCODER_SEED = 97


@contextlib.contextmanager
def _isolated_seed(seed):
    """Construct modules under a private RNG stream when a seed is given."""
    if seed is None:
        yield
        return
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        yield


def _norm(channels: int) -> nn.Module:
    # affine=False and no running stats: behaves identically in train and
    # eval mode, which keeps checkpointed trajectories reproducible.
    return nn.InstanceNorm2d(channels, affine=False, track_running_stats=False)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            _norm(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            _norm(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Encoder-decoder with a residual bottleneck.

    Input: (B, in_channels, H, W) with in_channels = one-hot categories + 1
    mask channel. Output: (B, 3, H, W) in [-1, 1]. Odd or non-divisible
    sizes are replicate-padded to a stride multiple and cropped back, so the
    output spatial size always equals the input's.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int = 3,
        downsamples: int = 2,
        residual_blocks: int = 4,
        base_width: int = 32,
        seed: int | None = None,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride_multiple = 2**downsamples
        with _isolated_seed(seed):
            layers: list[nn.Module] = [
                nn.ReflectionPad2d(3),
                nn.Conv2d(in_channels, base_width, 7),
                _norm(base_width),
                nn.ReLU(inplace=True),
            ]
            width = base_width
            for _ in range(downsamples):
                layers += [
                    nn.Conv2d(width, width * 2, 3, stride=2, padding=1),
                    _norm(width * 2),
                    nn.ReLU(inplace=True),
                ]
                width *= 2
            layers += [ResidualBlock(width) for _ in range(residual_blocks)]
            for _ in range(downsamples):
                layers += [
                    nn.ConvTranspose2d(width, width // 2, 3, stride=2, padding=1, output_padding=1),
                    _norm(width // 2),
                    nn.ReLU(inplace=True),
                ]
                width //= 2
            layers += [
                nn.ReflectionPad2d(3),
                nn.Conv2d(width, out_channels, 7),
                nn.Tanh(),
            ]
            self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"expected (B, {self.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        h, w = x.shape[2], x.shape[3]
        m = self.stride_multiple
        pad_h = (-h) % m
        pad_w = (-w) % m
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
        y = self.net(x)
        return y[:, :, :h, :w]


class PatchDiscriminator(nn.Module):
    """Conditional patch discriminator with exposed per-layer features.

    Scores a candidate color map concatenated with its condition channels.
    Returns (score field, features): scores are sigmoid-squashed to (0, 1)
    and the feature list holds all t=4 block outputs, shallow to deep, with
    the raw score logits as the deepest entry.

    Inputs smaller than MIN_DISC_SIDE (the receptive field of one score
    element) are rejected; callers that legitimately hold smaller crops must
    zero-pad them up first (see pad_to_min_side).
    """

    t = 4

    def __init__(self, condition_channels: int, color_channels: int = 3,
                 base_width: int = 32, seed: int | None = None):
        super().__init__()
        self.condition_channels = condition_channels
        self.color_channels = color_channels
        in_channels = color_channels + condition_channels
        w = base_width
        with _isolated_seed(seed):
            self.block1 = nn.Sequential(
                nn.Conv2d(in_channels, w, 4, stride=2, padding=1),
                nn.LeakyReLU(0.2, inplace=True),
            )
            self.block2 = nn.Sequential(
                nn.Conv2d(w, w * 2, 4, stride=2, padding=1),
                _norm(w * 2),
                nn.LeakyReLU(0.2, inplace=True),
            )
            self.block3 = nn.Sequential(
                nn.Conv2d(w * 2, w * 4, 3, stride=1, padding=1),
                _norm(w * 4),
                nn.LeakyReLU(0.2, inplace=True),
            )
            self.block4 = nn.Conv2d(w * 4, 1, 3, stride=1, padding=1)

    def forward(self, candidate: torch.Tensor, condition: torch.Tensor):
        if candidate.shape[0] != condition.shape[0] or candidate.shape[2:] != condition.shape[2:]:
            raise ValueError(
                f"candidate {tuple(candidate.shape)} and condition "
                f"{tuple(condition.shape)} are not spatially aligned"
            )
        if min(candidate.shape[2], candidate.shape[3]) < MIN_DISC_SIDE:
            raise ValueError(
                f"input side {tuple(candidate.shape[2:])} below minimum {MIN_DISC_SIDE}"
            )
        x = torch.cat([candidate, condition], dim=1)
        f1 = self.block1(x)
        f2 = self.block2(f1)
        f3 = self.block3(f2)
        logits = self.block4(f3)
        return torch.sigmoid(logits), [f1, f2, f3, logits]


def pad_to_min_side(x: torch.Tensor, side: int = MIN_DISC_SIDE) -> torch.Tensor:
    """Zero-pad the bottom/right of (B, C, H, W) up to at least ``side``.

    Zero padding matches the masked-region convention (everything outside a
    crop is zero), so padded crops remain consistent discriminator inputs.
    """
    pad_h = max(0, side - x.shape[2])
    pad_w = max(0, side - x.shape[3])
    if pad_h == 0 and pad_w == 0:
        return x
    return F.pad(x, (0, pad_w, 0, pad_h))


class PerceptualEncoder(nn.Module):
    """Frozen convolutional pyramid with r=5 feature taps.

    The default is a fixed-seed randomly initialized stack (deterministic
    everywhere, no downloads); ``from_stages`` adapts any pre-trained
    feature pyramid (e.g. a 19-layer classification network sliced into 5
    stages) to the same interface. ELU keeps the taps smooth, which the
    finite-difference gradient checks rely on.
    """

    def __init__(self, weights=PERCEPTUAL_WEIGHTS, seed: int = ENCODER_SEED,
                 stages: list[nn.Module] | None = None):
        super().__init__()
        if stages is None:
            with _isolated_seed(seed):
                stages = [
                    nn.Sequential(nn.Conv2d(3, 8, 3, padding=1), nn.ELU()),
                    nn.Sequential(nn.Conv2d(8, 16, 3, stride=2, padding=1), nn.ELU()),
                    nn.Sequential(nn.Conv2d(16, 16, 3, padding=1), nn.ELU()),
                    nn.Sequential(nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ELU()),
                    nn.Sequential(nn.Conv2d(32, 32, 3, padding=1), nn.ELU()),
                ]
        if len(stages) != len(weights):
            raise ValueError(f"{len(stages)} stages for {len(weights)} weights")
        self.stages = nn.ModuleList(stages)
        self.weights = tuple(float(w) for w in weights)
        self.r = len(self.weights)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @classmethod
    def from_stages(cls, stages: list[nn.Module], weights=PERCEPTUAL_WEIGHTS) -> "PerceptualEncoder":
        return cls(weights=weights, stages=stages)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        taps = []
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return taps
