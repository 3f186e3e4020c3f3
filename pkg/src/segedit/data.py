"""Datasets for box-conditioned map editing.

A dataset on disk is a directory with a `palette.json` at the root and one
8-bit grayscale label image per sample under `<split>/labels/`. Natural
images for the inpainting task live under `<split>/images/` as RGB PNGs.

`palette.json` schema:
    {"categories": [{"id": int, "name": str, "color": [r, g, b],
                     "editable": bool}],
     "size_threshold": float}

Readers are immutable after load and may be shared across workers; every
sampling function takes an explicit numpy Generator so parallel callers can
hold independent seeded streams.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .geometry import EditBox, make_mask

DEFAULT_SIZE_THRESHOLD = 0.02


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    color: tuple[int, int, int]
    editable: bool


class ColorPalette:
    """Injective mapping from category ids to RGB colors, ordered by id."""

    def __init__(self, categories: list[Category]):
        self.categories = sorted(categories, key=lambda c: c.id)
        self.ids = [c.id for c in self.categories]
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate category ids")
        colors = [c.color for c in self.categories]
        if len(set(colors)) != len(colors):
            raise ValueError("palette colors must be distinct")
        self._index_of = {c.id: i for i, c in enumerate(self.categories)}
        self.color_array = np.array(colors, dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.categories)

    def __contains__(self, label: int) -> bool:
        return label in self._index_of

    def index_of(self, label: int) -> int:
        return self._index_of[label]

    def label_at(self, index: int) -> int:
        return self.ids[index]

    @property
    def editable_ids(self) -> frozenset[int]:
        return frozenset(c.id for c in self.categories if c.editable)

    def to_json(self, size_threshold: float = DEFAULT_SIZE_THRESHOLD) -> dict:
        return {
            "categories": [
                {"id": c.id, "name": c.name, "color": list(c.color), "editable": c.editable}
                for c in self.categories
            ],
            "size_threshold": size_threshold,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ColorPalette":
        cats = [
            Category(int(c["id"]), str(c["name"]), tuple(int(v) for v in c["color"]), bool(c["editable"]))
            for c in doc["categories"]
        ]
        return cls(cats)


def default_palette() -> ColorPalette:
    """Palette for the bundled synthetic shapes: one backdrop + 5 editable."""
    return ColorPalette(
        [
            Category(0, "backdrop", (112, 112, 112), editable=False),
            Category(1, "crate", (214, 39, 40), editable=True),
            Category(2, "disc", (44, 160, 44), editable=True),
            Category(3, "slab", (31, 119, 200), editable=True),
            Category(4, "blob", (255, 200, 50), editable=True),
            Category(5, "strip", (148, 60, 190), editable=True),
        ]
    )


@dataclass(frozen=True)
class DatasetSpec:
    """Sampling configuration for one dataset split."""

    editable_ids: frozenset[int]
    size_threshold: float = DEFAULT_SIZE_THRESHOLD
    height: int = 32
    width: int = 32
    test_seed: int = 679

    def __post_init__(self) -> None:
        if not 0 <= self.size_threshold < 1:
            raise ValueError(f"size_threshold must be in [0, 1), got {self.size_threshold}")


@dataclass(frozen=True)
class TrainingTriple:
    """One self-supervised edit sample.

    ``incomplete`` equals the ground-truth labels outside the box and the
    target label inside; the color renderings back the losses and fusion.
    """

    incomplete: np.ndarray
    box: EditBox
    ground_truth_color: np.ndarray
    context_color: np.ndarray
    mask: np.ndarray
    ground_truth_labels: np.ndarray
    name: str = ""


@dataclass(frozen=True)
class InpaintTriple:
    """One inpainting sample: a natural RGB image plus the region to redo."""

    image: np.ndarray
    box: EditBox
    mask: np.ndarray
    name: str = ""


def color_encode(labels: np.ndarray, palette: ColorPalette) -> np.ndarray:
    """Render a label map to uint8 RGB via palette lookup."""
    present = np.unique(labels)
    unknown = [int(v) for v in present if int(v) not in palette]
    if unknown:
        raise ValueError(f"labels {unknown} missing from palette")
    index = np.zeros(int(present.max()) + 1, dtype=np.int64)
    for v in present:
        index[int(v)] = palette.index_of(int(v))
    return palette.color_array[index[labels]]


def color_decode(image: np.ndarray, palette: ColorPalette) -> np.ndarray:
    """Assign each pixel the nearest palette color's label (ties: smallest id)."""
    flat = image.reshape(-1, 3).astype(np.int64)
    colors = palette.color_array.astype(np.int64)
    dists = ((flat[:, None, :] - colors[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(dists, axis=1)  # argmin takes the first (smallest id) on ties
    labels = np.array(palette.ids, dtype=np.int64)[nearest]
    return labels.reshape(image.shape[:2])


def build_incomplete(complete: np.ndarray, box: EditBox) -> np.ndarray:
    """Copy of the full label map with the box interior painted target_label."""
    h, w = complete.shape
    box.validate(h, w)
    r1, c1, r2, c2 = box.corners
    out = complete.copy()
    out[r1 : r2 + 1, c1 : c2 + 1] = box.target_label
    return out


def object_boxes(labels: np.ndarray, editable_ids: frozenset[int]) -> list[EditBox]:
    """Tight boxes of connected components of each editable category.

    Instances are 4-connected components computed from the labels alone;
    results are ordered by (category id, top-left corner) so downstream
    random choices are reproducible.
    """
    found: list[EditBox] = []
    for cat in sorted(editable_ids):
        binary = labels == cat
        if not binary.any():
            continue
        comp, n = ndimage.label(binary)
        for slice_pair in ndimage.find_objects(comp, max_label=n):
            if slice_pair is None:
                continue
            rs, cs = slice_pair
            found.append(EditBox((rs.start, cs.start, rs.stop - 1, cs.stop - 1), target_label=cat))
    found.sort(key=lambda b: (b.target_label, b.corners))
    return found


def sample_box(complete: np.ndarray, spec: DatasetSpec, rng: np.random.Generator) -> EditBox | None:
    """Pick one editable object instance whose tight box is large enough.

    Boxes below ``size_threshold`` of the image area are excluded; with no
    qualifying instance the sample is skipped (None). Ties between instances
    are broken uniformly at random.
    """
    h, w = complete.shape
    min_area = spec.size_threshold * h * w
    qualifying = [b for b in object_boxes(complete, spec.editable_ids) if b.area >= min_area]
    if not qualifying:
        return None
    return qualifying[int(rng.integers(len(qualifying)))]


def make_triple(labels: np.ndarray, box: EditBox, palette: ColorPalette, name: str = "") -> TrainingTriple:
    h, w = labels.shape
    incomplete = build_incomplete(labels, box)
    return TrainingTriple(
        incomplete=incomplete,
        box=box,
        ground_truth_color=color_encode(labels, palette),
        context_color=color_encode(incomplete, palette),
        mask=make_mask(box, h, w),
        ground_truth_labels=labels,
        name=name,
    )


def _draw_rect(canvas: np.ndarray, rng: np.random.Generator, label: int) -> None:
    h, w = canvas.shape
    bh = int(rng.integers(h // 5, h // 2 + 1))
    bw = int(rng.integers(w // 5, w // 2 + 1))
    r0 = int(rng.integers(0, h - bh + 1))
    c0 = int(rng.integers(0, w - bw + 1))
    canvas[r0 : r0 + bh, c0 : c0 + bw] = label


def _draw_ellipse(canvas: np.ndarray, rng: np.random.Generator, label: int) -> None:
    h, w = canvas.shape
    a = int(rng.integers(h // 8, h // 4 + 1))
    b = int(rng.integers(w // 8, w // 4 + 1))
    r0 = int(rng.integers(a, h - a))
    c0 = int(rng.integers(b, w - b))
    rr, cc = np.ogrid[:h, :w]
    inside = ((rr - r0) / a) ** 2 + ((cc - c0) / b) ** 2 <= 1.0
    canvas[inside] = label


def synthesize_shapes(
    n: int,
    height: int,
    width: int,
    rng: np.random.Generator,
    palette: ColorPalette | None = None,
    size_threshold: float = DEFAULT_SIZE_THRESHOLD,
) -> list[np.ndarray]:
    """Generate label maps of random rectangles/ellipses on a backdrop.

    Every map is guaranteed to contain at least one editable object whose
    tight box passes ``size_threshold``, so box sampling never comes up
    empty on the bundled data.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    palette = palette or default_palette()
    spec = DatasetSpec(
        editable_ids=palette.editable_ids,
        size_threshold=size_threshold,
        height=height,
        width=width,
    )
    editable = sorted(palette.editable_ids)
    maps: list[np.ndarray] = []
    while len(maps) < n:
        canvas = np.zeros((height, width), dtype=np.uint8)
        for _ in range(int(rng.integers(2, 6))):
            label = editable[int(rng.integers(len(editable)))]
            if rng.integers(2) == 0:
                _draw_rect(canvas, rng, label)
            else:
                _draw_ellipse(canvas, rng, label)
        if sample_box(canvas, spec, rng) is None:
            continue  # occlusion ate every qualifying object; redraw
        maps.append(canvas)
    return maps


def render_shaded_image(labels: np.ndarray, palette: ColorPalette, rng: np.random.Generator) -> np.ndarray:
    """Natural-looking RGB companion of a label map: color render x ramp."""
    color = color_encode(labels, palette).astype(np.float64)
    h, w = labels.shape
    angle = rng.uniform(0, 2 * np.pi)
    rr, cc = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    ramp = 0.7 + 0.3 * (np.cos(angle) * rr + np.sin(angle) * cc)
    shaded = color * ramp[:, :, None]
    return np.clip(np.rint(shaded), 0, 255).astype(np.uint8)


def write_dataset(
    root: Path | str,
    train_maps: list[np.ndarray],
    test_maps: list[np.ndarray],
    palette: ColorPalette,
    size_threshold: float = DEFAULT_SIZE_THRESHOLD,
    with_images: bool = False,
    image_rng: np.random.Generator | None = None,
) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "palette.json").write_text(json.dumps(palette.to_json(size_threshold), indent=2))
    for split, maps in (("train", train_maps), ("test", test_maps)):
        labels_dir = root / split / "labels"
        labels_dir.mkdir(parents=True, exist_ok=True)
        if with_images:
            images_dir = root / split / "images"
            images_dir.mkdir(parents=True, exist_ok=True)
        for i, labels in enumerate(maps):
            name = f"{split}_{i:04d}.png"
            Image.fromarray(labels.astype(np.uint8), mode="L").save(labels_dir / name)
            if with_images:
                rng = image_rng if image_rng is not None else np.random.default_rng(i)
                Image.fromarray(render_shaded_image(labels, palette, rng), mode="RGB").save(
                    images_dir / name
                )


@dataclass
class SegmentationDataset:
    """In-memory view of one split of a labels-on-disk dataset."""

    root: Path
    split: str
    palette: ColorPalette = field(repr=False, default=None)  # type: ignore[assignment]
    size_threshold: float = DEFAULT_SIZE_THRESHOLD
    names: list[str] = field(default_factory=list)
    maps: list[np.ndarray] = field(default_factory=list, repr=False)

    @classmethod
    def load(cls, root: Path | str, split: str) -> "SegmentationDataset":
        root = Path(root)
        doc = json.loads((root / "palette.json").read_text())
        palette = ColorPalette.from_json(doc)
        labels_dir = root / split / "labels"
        if not labels_dir.is_dir():
            raise FileNotFoundError(f"no labels directory at {labels_dir}")
        paths = sorted(labels_dir.glob("*.png"))
        if not paths:
            raise ValueError(f"empty dataset split at {labels_dir}")
        maps = [np.asarray(Image.open(p).convert("L"), dtype=np.uint8) for p in paths]
        return cls(
            root=root,
            split=split,
            palette=palette,
            size_threshold=float(doc.get("size_threshold", DEFAULT_SIZE_THRESHOLD)),
            names=[p.name for p in paths],
            maps=maps,
        )

    def __len__(self) -> int:
        return len(self.maps)

    def spec(self, test_seed: int = 679) -> DatasetSpec:
        h, w = self.maps[0].shape
        return DatasetSpec(
            editable_ids=self.palette.editable_ids,
            size_threshold=self.size_threshold,
            height=h,
            width=w,
            test_seed=test_seed,
        )


@dataclass
class InpaintingDataset:
    """In-memory view of one split of RGB images for the inpainting task."""

    root: Path
    split: str
    names: list[str] = field(default_factory=list)
    images: list[np.ndarray] = field(default_factory=list, repr=False)

    @classmethod
    def load(cls, root: Path | str, split: str) -> "InpaintingDataset":
        root = Path(root)
        images_dir = root / split / "images"
        if not images_dir.is_dir():
            raise FileNotFoundError(f"no images directory at {images_dir}")
        paths = sorted(images_dir.glob("*.png"))
        if not paths:
            raise ValueError(f"empty dataset split at {images_dir}")
        images = [np.asarray(Image.open(p).convert("RGB"), dtype=np.uint8) for p in paths]
        return cls(root=root, split=split, names=[p.name for p in paths], images=images)

    def __len__(self) -> int:
        return len(self.images)


def sample_inpaint_box(height: int, width: int, rng: np.random.Generator) -> EditBox:
    """Random rectangular hole covering 25-50% of each image side."""
    bh = int(rng.integers(height // 4, height // 2 + 1))
    bw = int(rng.integers(width // 4, width // 2 + 1))
    r0 = int(rng.integers(0, height - bh + 1))
    c0 = int(rng.integers(0, width - bw + 1))
    return EditBox((r0, c0, r0 + bh - 1, c0 + bw - 1), target_label=0)


def test_masking(dataset: SegmentationDataset, spec: DatasetSpec) -> list[TrainingTriple]:
    """Deterministic test-time edit requests.

    Samples are visited in lexicographic file-name order with a generator
    seeded from ``spec.test_seed``, so repeated runs select identical boxes;
    samples with no qualifying object are skipped.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(spec.test_seed)
    triples: list[TrainingTriple] = []
    for name, labels in zip(dataset.names, dataset.maps):
        box = sample_box(labels, spec, rng)
        if box is None:
            continue
        triples.append(make_triple(labels, box, dataset.palette, name=name))
    return triples


def test_inpaint_masking(dataset: InpaintingDataset, test_seed: int = 679) -> list[InpaintTriple]:
    """Deterministic random holes for the inpainting test split."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(test_seed)
    triples = []
    for name, image in zip(dataset.names, dataset.images):
        h, w = image.shape[:2]
        box = sample_inpaint_box(h, w, rng)
        triples.append(InpaintTriple(image=image, box=box, mask=make_mask(box, h, w), name=name))
    return triples
