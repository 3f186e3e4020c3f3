"""Held-out scoring of trained editors, report serialization, and the
expansion-count sensitivity sweep.

Evaluation is deterministic: test-time boxes come from a fixed-seed sampler,
all model passes run without gradients, and reports are serialized
canonically, so a rerun with the same seed is byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import (
    InpaintingDataset,
    SegmentationDataset,
    color_decode,
    color_encode,
    make_triple,
    test_inpaint_masking,
    test_masking,
)
from .geometry import EditBox
from .losses import fuse_maps
from .metrics import fid, hamm, l1, ssim, tiou
from .training import (
    Batch,
    TrainConfig,
    TrainState,
    batch_from_triples,
    bind_palette,
    inpaint_batch_from_triples,
    load_checkpoint,
    run_training,
)

REPORT_KEYS = (
    "variant",
    "seed",
    "n_samples",
    "tiou_mean",
    "hamm_mean",
    "fid",
    "ssim_mean",
    "l1_mean",
)


def denormalize_color(y) -> np.ndarray:
    """float (3, H, W) in [-1, 1] -> uint8 RGB (H, W, 3), nearest value."""
    arr = y.detach().cpu().numpy() if isinstance(y, torch.Tensor) else np.asarray(y)
    arr = np.transpose(arr, (1, 2, 0))
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class EditResult:
    color: np.ndarray  # uint8 (H, W, 3) manipulated rendering, fused
    labels: np.ndarray  # (H, W) label ids decoded back from the rendering
    mask: np.ndarray  # the regenerated region


def _fused_colors(batch: Batch, state: TrainState) -> list[np.ndarray]:
    # normalization layers carry no batch statistics, so no mode switch is
    # needed between training and inference
    with torch.no_grad():
        initial = state.generator(batch.gen_input)
        fused = fuse_maps(initial, batch.context, batch.mask)
    return [denormalize_color(fused[i]) for i in range(fused.shape[0])]


def apply_edit(state: TrainState, labels: np.ndarray, box: EditBox) -> EditResult:
    """One edit request: mask the box, generate, fuse, decode labels back.

    Raises ValueError for a box outside the map or a target label that is
    missing from the palette or not editable, RuntimeError when the state
    has no palette bound.
    """
    if state.palette is None:
        raise RuntimeError("state has no palette bound; call bind_palette first")
    if box.target_label not in state.palette:
        raise ValueError(f"target label {box.target_label} missing from palette")
    if box.target_label not in state.palette.editable_ids:
        raise ValueError(f"target label {box.target_label} is not editable")
    triple = make_triple(labels, box, state.palette)
    batch = batch_from_triples([triple], state.palette)
    [color] = _fused_colors(batch, state)
    return EditResult(
        color=color, labels=color_decode(color, state.palette), mask=triple.mask
    )


def _score_edits(dataset: SegmentationDataset, state: TrainState, test_seed: int):
    triples = test_masking(dataset, dataset.spec(test_seed))
    if not triples:
        raise ValueError("no scorable samples in the split")
    records, generated = [], []
    for triple in triples:
        batch = batch_from_triples([triple], state.palette)
        [color] = _fused_colors(batch, state)
        decoded = color_decode(color, state.palette)
        records.append(
            {
                "tiou": tiou(
                    decoded, triple.ground_truth_labels, triple.mask, triple.box.target_label
                ),
                "hamm": hamm(decoded, triple.ground_truth_labels, triple.mask),
                "l1": l1(color, triple.ground_truth_color),
                "ssim": ssim(color, triple.ground_truth_color),
            }
        )
        generated.append(color)
    return triples, records, generated


def evaluate(
    dataset: SegmentationDataset,
    state: TrainState,
    test_seed: int = 679,
    fid_shrinkage: float = 0.0,
    fid_reference: str = "edited",
) -> dict:
    """Score deterministic held-out edits, returning the report dict.

    ``fid_reference`` selects the real-side image set: "edited" uses the
    ground-truth renderings of the scored samples, "all" uses renderings of
    every map in the split (including samples skipped for lacking an
    editable object).
    """
    if state.palette is None:
        bind_palette(state, dataset.palette)
    triples, records, generated = _score_edits(dataset, state, test_seed)
    if fid_reference == "edited":
        real = [t.ground_truth_color for t in triples]
    elif fid_reference == "all":
        real = [color_encode(m, dataset.palette) for m in dataset.maps]
    else:
        raise ValueError(f"fid_reference must be 'edited' or 'all', got {fid_reference!r}")
    return {
        "variant": state.config.variant,
        "seed": test_seed,
        "n_samples": len(triples),
        "tiou_mean": float(np.mean([r["tiou"] for r in records])),
        "hamm_mean": float(np.mean([r["hamm"] for r in records])),
        "fid": fid(generated, real, shrinkage=fid_shrinkage),
        "ssim_mean": float(np.mean([r["ssim"] for r in records])),
        "l1_mean": float(np.mean([r["l1"] for r in records])),
    }


def evaluate_inpainting(
    dataset: InpaintingDataset,
    state: TrainState,
    test_seed: int = 679,
    fid_shrinkage: float = 0.0,
) -> dict:
    """Score deterministic held-out completions.

    The report shape matches ``evaluate``; tiou_mean and hamm_mean are null
    because natural images carry no label maps.
    """
    triples = test_inpaint_masking(dataset, test_seed)
    l1s, ssims, generated = [], [], []
    for triple in triples:
        batch = inpaint_batch_from_triples([triple])
        [color] = _fused_colors(batch, state)
        l1s.append(l1(color, triple.image))
        ssims.append(ssim(color, triple.image))
        generated.append(color)
    return {
        "variant": state.config.variant,
        "seed": test_seed,
        "n_samples": len(triples),
        "tiou_mean": None,
        "hamm_mean": None,
        "fid": fid(generated, [t.image for t in triples], shrinkage=fid_shrinkage),
        "ssim_mean": float(np.mean(ssims)),
        "l1_mean": float(np.mean(l1s)),
    }


def write_report(report: dict, path: Path | str) -> None:
    """Canonical serialization (sorted keys, no timestamps): identical
    evaluations produce byte-identical files."""
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")


def q_sweep(
    train_set: SegmentationDataset,
    test_set: SegmentationDataset,
    base_config: TrainConfig,
    q_values: Sequence[int],
    work_dir: Path | str,
    test_seed: int = 679,
) -> list[dict]:
    """Train one model per expansion count q (shared seed), score each on the
    held-out split, and return rows of {q, tiou, hamm} in input order."""
    if any(q < 0 for q in q_values):
        raise ValueError("q values must be non-negative")
    if base_config.variant not in ("mex", "a-mex"):
        raise ValueError("q sweep needs an expansion variant (mex or a-mex)")
    work_dir = Path(work_dir)
    rows = []
    for q in q_values:
        config = dataclasses.replace(base_config, q=int(q))
        final = run_training(train_set, config, work_dir / f"q{q}")
        state = load_checkpoint(final)
        bind_palette(state, test_set.palette)
        _, records, _ = _score_edits(test_set, state, test_seed)
        rows.append(
            {
                "q": int(q),
                "tiou": float(np.mean([r["tiou"] for r in records])),
                "hamm": float(np.mean([r["hamm"] for r in records])),
            }
        )
    return rows


def write_q_sweep_csv(rows: Sequence[dict], path: Path | str) -> None:
    with Path(path).open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=["q", "tiou", "hamm"])
        writer.writeheader()
        writer.writerows(rows)
