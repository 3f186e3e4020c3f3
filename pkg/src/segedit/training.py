"""Alternating generator/discriminator training.

Each step performs one update of every active discriminator followed by one
generator update. Variants:

- ``basic``: global objective only.
- ``gl``: global + single local discriminator on the raw box crop. This is
  exactly the cropped expansion variant with q = 0, and is implemented as
  that aliasing so the equivalence is structural rather than duplicated
  code.
- ``mex``: cropped expansion levels, one discriminator per level.
- ``a-mex``: uncropped (full-canvas masked) levels, one shared
  discriminator.

Determinism: every model is constructed under its own derived seed, so the
generator's initialization does not depend on how many discriminators the
variant needs, and data sampling runs on an explicit numpy generator whose
consumption is variant-independent. Two configs that differ only in ways
that zero out a term therefore produce bit-identical generator
trajectories.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import (
    ColorPalette,
    InpaintingDataset,
    InpaintTriple,
    SegmentationDataset,
    TrainingTriple,
    make_triple,
    sample_box,
    sample_inpaint_box,
)
from .geometry import ExpansionSchedule, make_mask
from .losses import CombinedTerms, LossWeights, fuse_maps, mexgan_loss
from .networks import Generator, PatchDiscriminator, PerceptualEncoder

VARIANTS = ("basic", "gl", "mex", "a-mex")
TASKS = ("segmentation", "inpainting")

CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """A loss term left the finite range; training must not continue."""


@dataclass
class TrainConfig:
    variant: str = "mex"
    task: str = "segmentation"
    epochs: int = 200
    batch_size: int = 4
    lr: float = 2e-4
    beta1: float = 0.5
    decay_start: int | None = None  # resolves to min(100, epochs)
    seed: int = 0
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 1.0
    q: int = 4
    alpha: int = 5
    beta: int = 5
    literal_complement: bool = False
    base_width: int = 32
    residual_blocks: int = 4
    downsamples: int = 2
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.resolved_decay_start <= self.epochs:
            raise ValueError(
                f"decay_start {self.decay_start} outside [0, {self.epochs}]"
            )

    @property
    def resolved_decay_start(self) -> int:
        return min(100, self.epochs) if self.decay_start is None else self.decay_start

    @property
    def schedule(self) -> ExpansionSchedule | None:
        if self.variant == "basic":
            return None
        if self.variant == "gl":  # structural q=0 aliasing
            return ExpansionSchedule(q=0, alpha=self.alpha, beta=self.beta, cropped=True)
        cropped = self.variant == "mex"
        return ExpansionSchedule(q=self.q, alpha=self.alpha, beta=self.beta, cropped=cropped)

    @property
    def weights(self) -> LossWeights:
        schedule = self.schedule or ExpansionSchedule(q=0)
        return LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4, schedule)

    def expansion_disc_count(self) -> int:
        schedule = self.schedule
        if schedule is None:
            return 0
        return 1 if not schedule.cropped else schedule.q + 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Constant learning rate until decay_start, then linear to 0 at the end."""
    if not 0 <= epoch <= config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs}]")
    start = config.resolved_decay_start
    if epoch < start:
        return config.lr
    if config.epochs == start:
        return 0.0
    return config.lr * (config.epochs - epoch) / (config.epochs - start)


@dataclass
class TrainState:
    config: TrainConfig
    condition_channels: int
    generator: Generator
    global_disc: PatchDiscriminator
    expansion_discs: list[PatchDiscriminator]
    encoder: PerceptualEncoder
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    data_rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    # bound from the dataset at run time, never serialized
    palette: ColorPalette | None = field(default=None, repr=False)

    def all_discs(self) -> list[PatchDiscriminator]:
        return [self.global_disc, *self.expansion_discs]

    def set_lr(self, value: float) -> None:
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = value


def init_state(config: TrainConfig, condition_channels: int) -> TrainState:
    """Build models, optimizers, and the data rng for one run.

    ``condition_channels`` is the discriminator condition width: the palette
    size for segmentation, 3 (the masked RGB image) for inpainting. The
    generator additionally receives the mask channel.
    """
    # Derived per-component seeds: module initialization is independent of
    # construction order and of how many discriminators the variant has.
    base = config.seed * 10_000
    generator = Generator(
        in_channels=condition_channels + 1,
        downsamples=config.downsamples,
        residual_blocks=config.residual_blocks,
        base_width=config.base_width,
        seed=base + 1,
    )
    global_disc = PatchDiscriminator(
        condition_channels=condition_channels, base_width=config.base_width, seed=base + 2
    )
    expansion_discs = [
        PatchDiscriminator(
            condition_channels=condition_channels, base_width=config.base_width,
            seed=base + 10 + j,
        )
        for j in range(config.expansion_disc_count())
    ]
    betas = (config.beta1, 0.999)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr, betas=betas)
    disc_params = [p for d in [global_disc, *expansion_discs] for p in d.parameters()]
    opt_d = torch.optim.Adam(disc_params, lr=config.lr, betas=betas)
    return TrainState(
        config=config,
        condition_channels=condition_channels,
        generator=generator,
        global_disc=global_disc,
        expansion_discs=expansion_discs,
        encoder=PerceptualEncoder(),
        opt_g=opt_g,
        opt_d=opt_d,
        data_rng=np.random.default_rng(config.seed),
    )


def one_hot_labels(labels: np.ndarray, palette: ColorPalette) -> np.ndarray:
    """(H, W) label ids -> (C, H, W) float32 one-hot planes, palette order."""
    lookup = np.full(max(palette.ids) + 1, -1, dtype=np.int64)
    lookup[np.array(palette.ids)] = np.arange(len(palette))
    if labels.max() >= lookup.size or (lookup[labels] < 0).any():
        raise ValueError("label map contains ids outside the palette")
    eye = np.eye(len(palette), dtype=np.float32)
    return eye[lookup[labels]].transpose(2, 0, 1)


def normalize_color(color: np.ndarray) -> np.ndarray:
    """uint8 RGB (H, W, 3) -> float32 (3, H, W) in [-1, 1]."""
    return (color.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)


@dataclass
class Batch:
    gen_input: torch.Tensor  # (B, C+1, H, W): one-hot incomplete + mask
    condition: torch.Tensor  # (B, C, H, W): one-hot incomplete
    real: torch.Tensor  # (B, 3, H, W): ground-truth color render
    context: torch.Tensor  # (B, 3, H, W): incomplete color render (fusion context)
    mask: torch.Tensor  # (B, 1, H, W)
    boxes: list


def batch_from_triples(triples: Sequence[TrainingTriple], palette: ColorPalette) -> Batch:
    conditions, gen_inputs, reals, contexts, masks = [], [], [], [], []
    for t in triples:
        cond = one_hot_labels(t.incomplete, palette)
        mask = t.mask.astype(np.float32)[None]
        conditions.append(cond)
        gen_inputs.append(np.concatenate([cond, mask], axis=0))
        reals.append(normalize_color(t.ground_truth_color))
        contexts.append(normalize_color(t.context_color))
        masks.append(mask)
    stack = lambda arrs: torch.from_numpy(np.stack(arrs))
    return Batch(
        gen_input=stack(gen_inputs),
        condition=stack(conditions),
        real=stack(reals),
        context=stack(contexts),
        mask=stack(masks),
        boxes=[t.box for t in triples],
    )


def inpaint_batch_from_triples(triples: Sequence[InpaintTriple]) -> Batch:
    """Inpainting batch: the condition is the hole-masked image itself."""
    gen_inputs, conditions, reals, masks = [], [], [], []
    for t in triples:
        image = normalize_color(t.image)
        mask = t.mask.astype(np.float32)[None]
        masked = image * (1.0 - mask)
        conditions.append(masked)
        gen_inputs.append(np.concatenate([masked, mask], axis=0))
        reals.append(image)
        masks.append(mask)
    stack = lambda arrs: torch.from_numpy(np.stack(arrs))
    return Batch(
        gen_input=stack(gen_inputs),
        condition=stack(conditions),
        real=stack(reals),
        context=stack(reals),  # outside the hole the original image is kept
        mask=stack(masks),
        boxes=[t.box for t in triples],
    )


def _loss_report(state: TrainState, terms: CombinedTerms, lr: float) -> dict:
    report = {
        "step": state.step,
        "epoch": state.epoch,
        "lr": lr,
        "gen_total": float(terms.gen.detach()),
        "disc_total": float(terms.disc.detach()),
    }
    report.update(terms.parts)
    return report


def train_step(triples: Sequence[TrainingTriple], state: TrainState, config: TrainConfig) -> dict:
    """One discriminator update (all active discriminators), then one
    generator update, on a batch of edit triples."""
    if state.palette is None:
        raise RuntimeError("state has no palette bound; call bind_palette first")
    return step_on_batch(batch_from_triples(triples, state.palette), state, config)


def step_on_batch(batch: Batch, state: TrainState, config: TrainConfig) -> dict:
    initial = state.generator(batch.gen_input)
    # re-fused every step from the current generator output, so the area
    # outside the box stays ground-truth context
    fused = fuse_maps(initial, batch.context, batch.mask)
    terms = mexgan_loss(
        initial,
        fused,
        batch.real,
        batch.condition,
        batch.boxes,
        state.global_disc,
        state.encoder,
        state.expansion_discs if state.expansion_discs else None,
        config.weights,
        config.literal_complement,
    )
    if not (torch.isfinite(terms.gen) and torch.isfinite(terms.disc)):
        raise NonFiniteLossError(
            f"non-finite loss at step {state.step}: gen={float(terms.gen.detach())}, "
            f"disc={float(terms.disc.detach())}"
        )

    # Both losses come from the same parameter snapshot, so run both
    # backwards before either step. The generator backward also deposits
    # gradients into discriminator parameters (its loss flows through D);
    # those are cleared before the discriminator's own backward. Updates
    # are then applied discriminator-first.
    state.opt_g.zero_grad(set_to_none=True)
    terms.gen.backward()
    state.opt_d.zero_grad(set_to_none=True)
    terms.disc.backward()
    state.opt_d.step()
    state.opt_g.step()

    lr = state.opt_g.param_groups[0]["lr"]
    report = _loss_report(state, terms, lr)
    state.step += 1
    return report


def bind_palette(state: TrainState, palette: ColorPalette) -> TrainState:
    if len(palette) != state.condition_channels:
        raise ValueError(
            f"palette has {len(palette)} categories, model expects "
            f"{state.condition_channels}"
        )
    state.palette = palette
    return state


def save_checkpoint(state: TrainState, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "condition_channels": state.condition_channels,
        "epoch": state.epoch,
        "step": state.step,
        "generator": state.generator.state_dict(),
        "global_disc": state.global_disc.state_dict(),
        "expansion_discs": [d.state_dict() for d in state.expansion_discs],
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "data_rng": state.data_rng.bit_generator.state,
    }
    torch.save(payload, path)


def load_checkpoint(path: Path) -> TrainState:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    config = TrainConfig.from_dict(payload["config"])
    state = init_state(config, payload["condition_channels"])
    state.generator.load_state_dict(payload["generator"])
    state.global_disc.load_state_dict(payload["global_disc"])
    saved_discs = payload["expansion_discs"]
    if len(saved_discs) != len(state.expansion_discs):
        raise ValueError("checkpoint discriminator count does not match config")
    for disc, weights in zip(state.expansion_discs, saved_discs):
        disc.load_state_dict(weights)
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.data_rng.bit_generator.state = payload["data_rng"]
    state.epoch = payload["epoch"]
    state.step = payload["step"]
    return state


def epoch_triples(
    dataset: SegmentationDataset, state: TrainState
) -> list[list[TrainingTriple]]:
    """Shuffle the split and sample one edit box per image, batched.

    Images without a qualifying editable instance are skipped for the
    epoch; the rng consumption stays variant-independent either way.
    """
    spec = dataset.spec()
    order = state.data_rng.permutation(len(dataset))
    triples = []
    for i in order:
        labels = dataset.maps[int(i)]
        box = sample_box(labels, spec, state.data_rng)
        if box is None:
            continue
        triples.append(make_triple(labels, box, dataset.palette, name=dataset.names[int(i)]))
    size = state.config.batch_size
    return [triples[i : i + size] for i in range(0, len(triples), size)]


def _epoch_batches(dataset, state: TrainState) -> list[Batch]:
    if state.config.task == "inpainting":
        order = state.data_rng.permutation(len(dataset))
        triples = []
        for i in order:
            image = dataset.images[int(i)]
            h, w = image.shape[:2]
            box = sample_inpaint_box(h, w, state.data_rng)
            triples.append(
                InpaintTriple(
                    image=image, box=box, mask=make_mask(box, h, w),
                    name=dataset.names[int(i)],
                )
            )
        size = state.config.batch_size
        groups = [triples[i : i + size] for i in range(0, len(triples), size)]
        return [inpaint_batch_from_triples(g) for g in groups]
    return [
        batch_from_triples(g, dataset.palette) for g in epoch_triples(dataset, state)
    ]


def run_training(
    dataset: SegmentationDataset | InpaintingDataset,
    config: TrainConfig,
    run_dir: Path | str,
    resume_from: Path | str | None = None,
) -> Path:
    """Train on one dataset split, writing the run directory layout:
    config.json, log.jsonl (one object per step), checkpoints/epoch_N.

    Returns the final checkpoint path. On a non-finite loss a diagnostic
    snapshot checkpoint is written before the error propagates.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if config.task == "inpainting" and not isinstance(dataset, InpaintingDataset):
        raise ValueError("inpainting task needs an RGB image dataset")
    if config.task == "segmentation" and not isinstance(dataset, SegmentationDataset):
        raise ValueError("segmentation task needs a label-map dataset")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
    checkpoints = run_dir / "checkpoints"
    checkpoints.mkdir(exist_ok=True)

    channels = 3 if config.task == "inpainting" else len(dataset.palette)
    if resume_from is not None:
        state = load_checkpoint(Path(resume_from))
        if state.config != config:
            raise ValueError("resume config does not match checkpoint config")
        if state.condition_channels != channels:
            raise ValueError("checkpoint does not fit this dataset")
    else:
        state = init_state(config, channels)
    if config.task == "segmentation":
        bind_palette(state, dataset.palette)

    log_path = run_dir / "log.jsonl"
    mode = "a" if resume_from is not None else "w"
    with log_path.open(mode) as log:
        for epoch in range(state.epoch, config.epochs):
            state.epoch = epoch
            state.set_lr(lr_at(epoch, config))
            for batch in _epoch_batches(dataset, state):
                try:
                    report = step_on_batch(batch, state, config)
                except NonFiniteLossError:
                    save_checkpoint(state, checkpoints / f"diagnostic_step_{state.step}")
                    raise
                log.write(json.dumps(report) + "\n")
            state.epoch = epoch + 1
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                save_checkpoint(state, checkpoints / f"epoch_{epoch + 1}")
    final = checkpoints / f"epoch_{config.epochs}"
    if not final.exists():
        save_checkpoint(state, final)
    return final
