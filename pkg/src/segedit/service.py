"""HTTP edit service: the package's inference pipeline behind a JSON API.

Endpoints:
  POST /api/edit          apply one edit to an uploaded or served label map
  GET  /api/labels        the palette (ids, names, colors, editable flags)
  GET  /api/samples       ids of the browsable held-out samples
  GET  /api/samples/{id}  one sample's color rendering and dimensions

Wire images are base64-encoded PNGs inside JSON, so the API stays
single-content-type. Handlers never mutate model parameters; the edit
pipeline runs under a lock over an immutable model snapshot, making
concurrent requests equivalent to serialized execution. A snapshot can be
replaced atomically between requests (``ModelHolder.swap``).
"""

from __future__ import annotations

import base64
import binascii
import io
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, model_validator

from .data import ColorPalette, SegmentationDataset, color_encode, default_palette
from .evaluation import apply_edit, denormalize_color
from .geometry import EditBox
from .metrics import hamm, tiou
from .training import TrainState, bind_palette, load_checkpoint, normalize_color


class EditRequestWire(BaseModel):
    """One edit request. Exactly one of label_map/sample_id carries the map."""

    label_map: str | None = None  # base64 PNG, 8-bit grayscale label ids
    sample_id: str | None = None  # id from GET /api/samples
    box: tuple[int, int, int, int]  # inclusive corners [r1, c1, r2, c2]
    target_label: int

    @model_validator(mode="after")
    def _exactly_one_source(self) -> "EditRequestWire":
        if (self.label_map is None) == (self.sample_id is None):
            raise ValueError("provide exactly one of label_map or sample_id")
        return self


class EditResponseWire(BaseModel):
    manipulated_color: str  # base64 PNG, same dimensions as the input
    manipulated_labels: str  # base64 PNG, decoded label ids
    tiou: float | None = None  # only for sample_id requests
    hamm: float | None = None  # only for sample_id requests
    latency_ms: float
    translated_image: str | None = None  # only when a translator is configured


class ModelHolder:
    """Atomic slot for the serving snapshot; edits run one at a time."""

    def __init__(self, state: TrainState | None):
        self._state = state
        self.lock = threading.Lock()

    @property
    def state(self) -> TrainState | None:
        return self._state

    def swap(self, state: TrainState) -> None:
        self._state = state


@dataclass
class SampleStore:
    names: list[str]
    maps: dict[str, np.ndarray]

    @classmethod
    def from_dataset(cls, dataset: SegmentationDataset) -> "SampleStore":
        ids = [Path(n).stem for n in dataset.names]
        return cls(names=ids, maps=dict(zip(ids, dataset.maps)))


def _field_error(field: str, message: str) -> HTTPException:
    return HTTPException(status_code=400, detail=[{"field": field, "message": message}])


def _png_base64(array: np.ndarray, mode: str) -> str:
    buf = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _decode_label_png(encoded: str) -> np.ndarray:
    try:
        raw = base64.b64decode(encoded, validate=True)
    except (binascii.Error, ValueError):
        raise _field_error("label_map", "not valid base64") from None
    try:
        image = Image.open(io.BytesIO(raw))
        image.load()
    except UnidentifiedImageError:
        raise _field_error("label_map", "not a decodable PNG") from None
    if image.mode != "L":
        raise _field_error("label_map", f"expected 8-bit grayscale PNG, got mode {image.mode}")
    return np.asarray(image, dtype=np.uint8)


def _translate(state: TrainState, color: np.ndarray) -> str:
    """Full-canvas pass of a translation generator over the color rendering."""
    image = torch.from_numpy(normalize_color(color))[None]
    mask = torch.ones((1, 1, *color.shape[:2]), dtype=torch.float32)
    with torch.no_grad():
        out = state.generator(torch.cat([image, mask], dim=1))
    return _png_base64(denormalize_color(out[0]), "RGB")


def create_app(
    checkpoint: Path | str | None = None,
    dataset_dir: Path | str | None = None,
    translate_checkpoint: Path | str | None = None,
    static_dir: Path | str | None = None,
    split: str = "test",
) -> FastAPI:
    """Build the service over one model snapshot.

    The palette comes from the dataset when one is mounted, otherwise the
    bundled default; a checkpoint whose condition width disagrees with that
    palette fails here rather than on the first request.
    """
    dataset = SegmentationDataset.load(dataset_dir, split) if dataset_dir else None
    palette = dataset.palette if dataset else default_palette()
    samples = SampleStore.from_dataset(dataset) if dataset else SampleStore([], {})

    state = None
    if checkpoint is not None:
        state = load_checkpoint(Path(checkpoint))
        bind_palette(state, palette)
    holder = ModelHolder(state)

    translator = None
    if translate_checkpoint is not None:
        translator = load_checkpoint(Path(translate_checkpoint))
        if translator.condition_channels != 3:
            raise ValueError("translation checkpoint must consume RGB images")

    app = FastAPI(title="segedit service")
    app.state.holder = holder

    @app.exception_handler(RequestValidationError)
    async def validation_to_400(request: Request, exc: RequestValidationError):
        errors = [
            {"field": ".".join(str(p) for p in err["loc"] if p != "body"), "message": err["msg"]}
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": errors})

    @app.get("/api/labels")
    def get_labels() -> dict:
        if dataset is not None:
            return palette.to_json(dataset.size_threshold)
        return palette.to_json()

    @app.get("/api/samples")
    def list_samples(offset: int = 0, limit: int = 100) -> dict:
        ids = samples.names[offset : offset + limit]
        return {"samples": ids, "count": len(samples.names)}

    @app.get("/api/samples/{sample_id}")
    def get_sample(sample_id: str) -> dict:
        if sample_id not in samples.maps:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id!r}")
        labels = samples.maps[sample_id]
        return {
            "sample_id": sample_id,
            "color": _png_base64(color_encode(labels, palette), "RGB"),
            "height": int(labels.shape[0]),
            "width": int(labels.shape[1]),
        }

    @app.post("/api/edit", response_model=EditResponseWire, response_model_exclude_none=True)
    def post_edit(request: EditRequestWire) -> EditResponseWire:
        snapshot = holder.state
        if snapshot is None:
            raise HTTPException(status_code=503, detail="model not loaded")

        if request.sample_id is not None:
            if request.sample_id not in samples.maps:
                raise _field_error("sample_id", f"unknown sample {request.sample_id!r}")
            labels = samples.maps[request.sample_id]
        else:
            labels = _decode_label_png(request.label_map)

        box = EditBox(tuple(request.box), target_label=request.target_label)
        try:
            box.validate(*labels.shape)
        except ValueError as exc:
            raise _field_error("box", str(exc)) from None
        if request.target_label not in palette:
            raise _field_error("target_label", f"label {request.target_label} not in palette")
        if request.target_label not in palette.editable_ids:
            raise _field_error("target_label", f"label {request.target_label} is not editable")
        unknown = [int(v) for v in np.unique(labels) if int(v) not in palette]
        if unknown:
            raise _field_error("label_map", f"labels {unknown} not in palette")

        started = time.perf_counter()
        with holder.lock:
            result = apply_edit(snapshot, labels, box)
            translated = _translate(translator, result.color) if translator else None
        latency_ms = (time.perf_counter() - started) * 1000.0

        response = EditResponseWire(
            manipulated_color=_png_base64(result.color, "RGB"),
            manipulated_labels=_png_base64(result.labels.astype(np.uint8), "L"),
            latency_ms=latency_ms,
            translated_image=translated,
        )
        if request.sample_id is not None:
            response.tiou = tiou(result.labels, labels, result.mask, request.target_label)
            response.hamm = hamm(result.labels, labels, result.mask)
        return response

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="frontend")

    return app
