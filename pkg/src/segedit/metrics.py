"""Evaluation metrics: mask-local label agreement, image similarity, and the
Frechet distance between embedded image sets.

All functions are pure; per-sample metrics can be computed concurrently and
reduced in any deterministic order.
"""

from __future__ import annotations

import functools

import numpy as np
import torch
from torch import nn

# Luma weights for the grayscale conversion used by ssim (ITU-R BT.601).
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

SSIM_WINDOW = 8


def tiou(predicted: np.ndarray, truth: np.ndarray, mask: np.ndarray, target: int) -> float:
    """Intersection-over-union of the target label inside the mask.

    Scoring is restricted to the mask because only the mask is generated;
    an empty union (target absent from both maps) counts as a perfect 1.0.
    """
    if predicted.shape != truth.shape or predicted.shape != mask.shape:
        raise ValueError("shape mismatch")
    inside = mask.astype(bool)
    p = (predicted == target) & inside
    t = (truth == target) & inside
    union = (p | t).sum()
    if union == 0:
        return 1.0
    return float((p & t).sum() / union)


def hamm(predicted: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of mask pixels whose predicted label equals the ground truth."""
    if predicted.shape != truth.shape or predicted.shape != mask.shape:
        raise ValueError("shape mismatch")
    inside = mask.astype(bool)
    total = inside.sum()
    if total == 0:
        raise ValueError("empty mask")
    return float(((predicted == truth) & inside).sum() / total)


def l1(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute per-pixel, per-channel difference."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))))


def _to_gray(image: np.ndarray) -> np.ndarray:
    arr = image.astype(np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ np.asarray(LUMA_WEIGHTS, dtype=np.float64)
    raise ValueError(f"expected HxW or HxWx3 image, got {image.shape}")


def ssim(a: np.ndarray, b: np.ndarray, dynamic_range: float = 255.0) -> float:
    """Structural similarity with an 8x8 sliding window, mean over windows.

    Inputs are converted to grayscale with BT.601 luma weights; window
    statistics use population normalization; stabilizers are
    C1=(0.01*L)^2 and C2=(0.03*L)^2 for dynamic range L.
    """
    x = _to_gray(a)
    y = _to_gray(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window")

    wx = np.lib.stride_tricks.sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
    wy = np.lib.stride_tricks.sliding_window_view(y, (SSIM_WINDOW, SSIM_WINDOW))
    mu_x = wx.mean(axis=(-2, -1))
    mu_y = wy.mean(axis=(-2, -1))
    var_x = (wx * wx).mean(axis=(-2, -1)) - mu_x * mu_x
    var_y = (wy * wy).mean(axis=(-2, -1)) - mu_y * mu_y
    cov = (wx * wy).mean(axis=(-2, -1)) - mu_x * mu_y

    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return float(score.mean())


class RandomConvEmbedder(nn.Module):
    """Fixed-seed random convolutional image embedding.

    Deterministic and dependency-free, so Frechet distances are reproducible
    on any machine; absolute values are only comparable within one embedding.
    """

    def __init__(self, feature_dim: int = 8, seed: int = 1234):
        super().__init__()
        self.feature_dim = feature_dim
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.net = nn.Sequential(
                nn.Conv2d(3, 16, 3, stride=2, padding=1),
                nn.ELU(),
                nn.Conv2d(16, 32, 3, stride=2, padding=1),
                nn.ELU(),
                nn.Conv2d(32, feature_dim, 3, stride=1, padding=1),
            )
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def __call__(self, images) -> np.ndarray:
        feats = []
        for image in images:
            arr = np.asarray(image, dtype=np.float64)
            if arr.ndim != 3 or arr.shape[2] != 3:
                raise ValueError(f"expected HxWx3 images, got {arr.shape}")
            x = torch.from_numpy(arr / 127.5 - 1.0).permute(2, 0, 1)[None].float()
            z = self.net(x).mean(dim=(2, 3))  # global average pool
            feats.append(z[0].double().numpy())
        return np.stack(feats)


@functools.lru_cache(maxsize=1)
def default_embedder() -> RandomConvEmbedder:
    return RandomConvEmbedder()


def _psd_sqrt(matrix: np.ndarray, clip: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(matrix)
    vals = _clip_eigenvalues(vals, clip)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _clip_eigenvalues(vals: np.ndarray, clip: float) -> np.ndarray:
    if (vals < -clip).any():
        raise ValueError(
            f"covariance product has eigenvalue {vals.min():.3e} below -{clip:.0e}; "
            "increase shrinkage or the sample count"
        )
    return np.clip(vals, 0.0, None)


def frechet_distance(
    mu_a: np.ndarray,
    cov_a: np.ndarray,
    mu_b: np.ndarray,
    cov_b: np.ndarray,
    eig_clip: float = 1e-6,
) -> float:
    """Frechet distance between two Gaussians.

    The matrix square root is taken by eigendecomposition of the symmetrized
    product sqrt(A) B sqrt(A); eigenvalues in (-eig_clip, 0) are clipped to 0.
    """
    diff = mu_a - mu_b
    sqrt_a = _psd_sqrt(cov_a, eig_clip)
    product = sqrt_a @ cov_b @ sqrt_a
    product = (product + product.T) / 2.0
    vals = _clip_eigenvalues(np.linalg.eigvalsh(product), eig_clip)
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sqrt(vals).sum())
    if value < 0:
        if value < -eig_clip:
            raise ValueError(f"Frechet distance {value:.3e} below numerical floor")
        value = 0.0
    return value


def fid(set_a, set_b, embed=None, shrinkage: float = 0.0) -> float:
    """Frechet distance between Gaussian fits of two embedded image sets.

    ``embed`` maps a sequence of images to an (n, d) feature array; the
    identity is a valid embedding for pre-computed features. Each set needs
    at least d+1 members for a well-defined covariance unless ``shrinkage``
    adds a diagonal ridge.
    """
    embed = embed if embed is not None else default_embedder()
    feats_a = np.asarray(embed(set_a), dtype=np.float64)
    feats_b = np.asarray(embed(set_b), dtype=np.float64)
    for name, feats in (("a", feats_a), ("b", feats_b)):
        if feats.ndim != 2:
            raise ValueError(f"embedding of set {name} must be 2-D, got {feats.shape}")
        if feats.shape[0] < feats.shape[1] + 1 and shrinkage <= 0:
            raise ValueError(
                f"set {name} has {feats.shape[0]} samples for {feats.shape[1]} feature dims; "
                "degenerate covariance (pass shrinkage > 0 or more samples)"
            )
    mu_a, cov_a = feats_a.mean(axis=0), np.cov(feats_a, rowvar=False)
    mu_b, cov_b = feats_b.mean(axis=0), np.cov(feats_b, rowvar=False)
    cov_a = np.atleast_2d(cov_a) + shrinkage * np.eye(feats_a.shape[1])
    cov_b = np.atleast_2d(cov_b) + shrinkage * np.eye(feats_b.shape[1])
    return frechet_distance(mu_a, cov_a, mu_b, cov_b)
