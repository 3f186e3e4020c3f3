"""Training objectives.

The generator is scored by a weighted sum of a global conditional
adversarial term, discriminator feature matching, and a perceptual term.
On top of that, the multi-level expansion loss applies one conditional
adversarial loss per concentric expansion of the edit box: the cropped
variant gives each level its own discriminator, the uncropped (full-canvas
masked) variant shares a single discriminator across levels.

All losses are pure given parameters; per-level terms are summed in level
order for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch

from .geometry import EditBox, ExpansionSchedule, expand_box
from .networks import PatchDiscriminator, PerceptualEncoder, pad_to_min_side

# Score clamp: keeps every log argument in [EPS, 1-EPS] so losses stay finite.
EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights for the combined objective, plus the expansion
    schedule used by the level terms."""

    lambda1: float = 1.0  # adversarial
    lambda2: float = 1.0  # feature matching
    lambda3: float = 1.0  # perceptual
    lambda4: float = 1.0  # expansion term
    schedule: ExpansionSchedule = field(default_factory=ExpansionSchedule)

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class AdversarialPair:
    """Generator-side and discriminator-side values of one adversarial term."""

    gen: torch.Tensor
    disc: torch.Tensor


@dataclass
class BasicTerms:
    gen: torch.Tensor
    disc: torch.Tensor
    parts: dict


@dataclass
class CombinedTerms:
    """Combined objective: basic terms plus the weighted expansion term.

    ``disc_global`` drives the global discriminator; ``disc_expansion``
    (None when the expansion term is disabled) drives the expansion
    discriminator(s). ``disc`` is their weighted sum for single-optimizer
    updates.
    """

    gen: torch.Tensor
    disc: torch.Tensor
    disc_global: torch.Tensor
    disc_expansion: torch.Tensor | None
    parts: dict


def _clamp(scores: torch.Tensor) -> torch.Tensor:
    return scores.clamp(EPS, 1.0 - EPS)


def adversarial_loss(
    real_scores: torch.Tensor,
    fake_scores: torch.Tensor,
    literal_complement: bool = False,
) -> AdversarialPair:
    """Cross-entropy adversarial terms from pre-squashed score fields.

    Discriminator term: -mean[log D(real)] - mean[log(1 - D(fake))].
    Generator term: -mean[log D(fake)] (non-saturating).

    ``literal_complement`` swaps the discriminator's fake penalty for the
    unbounded complement form mean[1 - log D(fake)] kept for fidelity
    experiments; it is never the default.
    """
    if real_scores.numel() == 0 or fake_scores.numel() == 0:
        raise ValueError("empty score field")
    real = _clamp(real_scores)
    fake = _clamp(fake_scores)
    gen = -torch.log(fake).mean()
    if literal_complement:
        disc = -torch.log(real).mean() - (1.0 - torch.log(fake)).mean()
    else:
        disc = -torch.log(real).mean() - torch.log(1.0 - fake).mean()
    return AdversarialPair(gen=gen, disc=disc)


def feature_matching_loss(
    real_features: Sequence[torch.Tensor],
    fake_features: Sequence[torch.Tensor],
) -> torch.Tensor:
    """Sum over layers of element-count-normalized L1 distances."""
    if len(real_features) != len(fake_features):
        raise ValueError(
            f"layer count mismatch: {len(real_features)} vs {len(fake_features)}"
        )
    total = None
    for real, fake in zip(real_features, fake_features):
        if real.shape != fake.shape:
            raise ValueError(f"feature shape mismatch: {real.shape} vs {fake.shape}")
        term = (real - fake).abs().mean()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("empty feature list")
    return total


def perceptual_loss(
    generated: torch.Tensor,
    ground_truth: torch.Tensor,
    encoder: PerceptualEncoder,
) -> torch.Tensor:
    """Weighted sum of per-tap L1 distances through the frozen encoder."""
    if generated.shape != ground_truth.shape:
        raise ValueError(f"shape mismatch: {generated.shape} vs {ground_truth.shape}")
    gen_taps = encoder(generated)
    gt_taps = encoder(ground_truth)
    total = None
    for w, g, t in zip(encoder.weights, gen_taps, gt_taps):
        if g.shape != t.shape:
            raise ValueError(f"encoder tap mismatch: {g.shape} vs {t.shape}")
        term = w * (g - t).abs().mean()
        total = term if total is None else total + term
    return total


def fuse_maps(initial: torch.Tensor, context: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Per-pixel selection: initial inside the mask, context outside."""
    return initial * mask + context * (1.0 - mask)


def basic_loss(
    initial: torch.Tensor,
    real: torch.Tensor,
    condition: torch.Tensor,
    discriminator: PatchDiscriminator,
    encoder: PerceptualEncoder,
    weights: LossWeights,
    literal_complement: bool = False,
) -> BasicTerms:
    """Weighted global objective on the initial (pre-fusion) output.

    lambda1 * adversarial + lambda2 * feature matching + lambda3 * perceptual,
    all conditioned on / compared against the ground-truth color map.
    """
    real_scores, real_feats = discriminator(real, condition)
    fake_scores, fake_feats = discriminator(initial, condition)
    adv = adversarial_loss(real_scores, fake_scores, literal_complement)

    # ground-truth features are fixed targets for the generator
    fea = feature_matching_loss([f.detach() for f in real_feats], fake_feats)
    pec = perceptual_loss(initial, real, encoder)

    disc_scores_fake, _ = discriminator(initial.detach(), condition)
    disc = adversarial_loss(real_scores, disc_scores_fake, literal_complement).disc

    gen = weights.lambda1 * adv.gen + weights.lambda2 * fea + weights.lambda3 * pec
    parts = {
        "adv_gen": float(adv.gen.detach()),
        "fea": float(fea.detach()),
        "pec": float(pec.detach()),
        "disc_global": float(disc.detach()),
    }
    return BasicTerms(gen=gen, disc=disc, parts=parts)


def _level_corners(box: EditBox, schedule: ExpansionSchedule, h: int, w: int):
    return [expand_box(box, j, schedule, h, w) for j in range(schedule.q + 1)]


def _level_adversarial(
    disc: PatchDiscriminator,
    fake: torch.Tensor,
    real: torch.Tensor,
    condition: torch.Tensor,
    literal_complement: bool,
) -> AdversarialPair:
    fake = pad_to_min_side(fake)
    real = pad_to_min_side(real)
    condition = pad_to_min_side(condition)
    real_scores, _ = disc(real, condition)
    fake_scores, _ = disc(fake, condition)
    gen = adversarial_loss(real_scores, fake_scores, literal_complement).gen
    disc_scores_fake, _ = disc(fake.detach(), condition)
    disc_term = adversarial_loss(real_scores, disc_scores_fake, literal_complement).disc
    return AdversarialPair(gen=gen, disc=disc_term)


def mex_loss(
    fused: torch.Tensor,
    real: torch.Tensor,
    condition: torch.Tensor,
    boxes: Sequence[EditBox],
    schedule: ExpansionSchedule,
    discriminators: Sequence[PatchDiscriminator],
    literal_complement: bool = False,
) -> AdversarialPair:
    """Cropped multi-level expansion loss with one discriminator per level.

    For each sample and each expansion level j, the fused map, the real map,
    and the condition are cropped to the level's rectangle and scored by
    discriminator j; per-level terms are summed in level order and averaged
    over the batch. Crops below the discriminator's minimum side are
    zero-padded up to it.
    """
    if not schedule.cropped:
        raise ValueError("cropped schedule required; use a_mex_loss for uncropped levels")
    if len(discriminators) != schedule.q + 1:
        raise ValueError(
            f"expected {schedule.q + 1} discriminators, got {len(discriminators)}"
        )
    if fused.shape[0] != len(boxes):
        raise ValueError(f"{fused.shape[0]} samples but {len(boxes)} boxes")
    h, w = fused.shape[2], fused.shape[3]
    gen_total = fused.new_zeros(())
    disc_total = fused.new_zeros(())
    for b, box in enumerate(boxes):
        for j, (r1, c1, r2, c2) in enumerate(_level_corners(box, schedule, h, w)):
            pair = _level_adversarial(
                discriminators[j],
                fused[b : b + 1, :, r1 : r2 + 1, c1 : c2 + 1],
                real[b : b + 1, :, r1 : r2 + 1, c1 : c2 + 1],
                condition[b : b + 1, :, r1 : r2 + 1, c1 : c2 + 1],
                literal_complement,
            )
            gen_total = gen_total + pair.gen
            disc_total = disc_total + pair.disc
    n = len(boxes)
    return AdversarialPair(gen=gen_total / n, disc=disc_total / n)


def a_mex_loss(
    fused: torch.Tensor,
    real: torch.Tensor,
    condition: torch.Tensor,
    boxes: Sequence[EditBox],
    schedule: ExpansionSchedule,
    discriminator: PatchDiscriminator,
    literal_complement: bool = False,
) -> AdversarialPair:
    """Uncropped expansion loss: full-canvas masked levels, one shared
    discriminator.

    Level j multiplies the fused map, real map, and condition by the level-j
    rectangle mask; every level input keeps the full canvas size.
    """
    if schedule.cropped:
        raise ValueError("uncropped schedule required; use mex_loss for cropped levels")
    if fused.shape[0] != len(boxes):
        raise ValueError(f"{fused.shape[0]} samples but {len(boxes)} boxes")
    h, w = fused.shape[2], fused.shape[3]
    per_sample_corners = [_level_corners(box, schedule, h, w) for box in boxes]
    gen_total = fused.new_zeros(())
    disc_total = fused.new_zeros(())
    for j in range(schedule.q + 1):
        mask = fused.new_zeros((fused.shape[0], 1, h, w))
        for b, corners in enumerate(per_sample_corners):
            r1, c1, r2, c2 = corners[j]
            mask[b, :, r1 : r2 + 1, c1 : c2 + 1] = 1.0
        pair = _level_adversarial(
            discriminator, fused * mask, real * mask, condition * mask, literal_complement
        )
        gen_total = gen_total + pair.gen
        disc_total = disc_total + pair.disc
    return AdversarialPair(gen=gen_total, disc=disc_total)


def mexgan_loss(
    initial: torch.Tensor,
    fused: torch.Tensor,
    real: torch.Tensor,
    condition: torch.Tensor,
    boxes: Sequence[EditBox],
    global_discriminator: PatchDiscriminator,
    encoder: PerceptualEncoder,
    expansion_discriminators: Sequence[PatchDiscriminator] | None,
    weights: LossWeights,
    literal_complement: bool = False,
) -> CombinedTerms:
    """Combined objective: basic terms plus lambda4 times the expansion term.

    The schedule's ``cropped`` flag selects between per-level discriminators
    (requires len == q+1) and a single shared one (pass a one-element
    sequence). With lambda4 == 0 the expansion term is skipped entirely, so
    the computation graph is identical to the basic objective.
    """
    base = basic_loss(
        initial, real, condition, global_discriminator, encoder, weights, literal_complement
    )
    if weights.lambda4 == 0 or expansion_discriminators is None:
        return CombinedTerms(
            gen=base.gen,
            disc=base.disc,
            disc_global=base.disc,
            disc_expansion=None,
            parts=base.parts,
        )
    if weights.schedule.cropped:
        expansion = mex_loss(
            fused, real, condition, boxes, weights.schedule,
            expansion_discriminators, literal_complement,
        )
    else:
        if len(expansion_discriminators) != 1:
            raise ValueError("uncropped expansion shares exactly one discriminator")
        expansion = a_mex_loss(
            fused, real, condition, boxes, weights.schedule,
            expansion_discriminators[0], literal_complement,
        )
    gen = base.gen + weights.lambda4 * expansion.gen
    disc_expansion = weights.lambda4 * expansion.disc
    parts = dict(base.parts)
    parts["mex_gen"] = float(expansion.gen.detach())
    parts["disc_expansion"] = float(disc_expansion.detach())
    return CombinedTerms(
        gen=gen,
        disc=base.disc + disc_expansion,
        disc_global=base.disc,
        disc_expansion=disc_expansion,
        parts=parts,
    )
