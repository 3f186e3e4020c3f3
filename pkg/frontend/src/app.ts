/** DOM wiring for the browser editor.
 *
 * Flow: pick a sample (or upload a grayscale label PNG), draw a box on the
 * overlay canvas, pick an editable target label, submit. Each successful edit
 * appends to the history; the manipulated label map becomes the input of the
 * next edit, so edits chain. Undo restores the stored PNGs bit-for-bit.
 * Requests go through a queue that keeps at most one edit in flight.
 */

import {
  ApiError,
  getLabels,
  getSample,
  getSamples,
  postEdit,
  type EditRequest,
  type EditResponse,
  type LabelsResponse,
} from "./api.js";
import {
  boxToDisplayRect,
  boxToWire,
  dragToBox,
  type Box,
  type Drag,
} from "./coords.js";
import { EditHistory } from "./history.js";
import { SubmitQueue } from "./queue.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function ctx2d(canvas: HTMLCanvasElement): CanvasRenderingContext2D {
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    throw new Error("2d canvas unsupported");
  }
  return ctx;
}

const statusDot = el<HTMLSpanElement>("status");
const sampleSelect = el<HTMLSelectElement>("sample-select");
const uploadInput = el<HTMLInputElement>("upload");
const zoomSelect = el<HTMLSelectElement>("zoom-select");
const labelPicker = el<HTMLDivElement>("label-picker");
const submitBtn = el<HTMLButtonElement>("submit");
const undoBtn = el<HTMLButtonElement>("undo");
const boxReadout = el<HTMLParagraphElement>("box-readout");
const metricsLine = el<HTMLParagraphElement>("metrics");
const historyList = el<HTMLOListElement>("history-list");
const baseCanvas = el<HTMLCanvasElement>("base");
const beforeCanvas = el<HTMLCanvasElement>("before");
const divider = el<HTMLDivElement>("divider");
const overlay = el<HTMLCanvasElement>("overlay");
const compareSlider = el<HTMLInputElement>("compare");
const toasts = el<HTMLDivElement>("toasts");

let labels: LabelsResponse | null = null;
let colorById = new Map<number, [number, number, number]>();
let nameById = new Map<number, string>();
let selectedLabel: number | null = null;
let currentSampleId: string | null = null;
let imageHeight = 0;
let imageWidth = 0;
let zoom = Number(zoomSelect.value);
let pendingBox: Box | null = null;
let activeDrag: Drag | null = null;

const history = new EditHistory();
const queue = new SubmitQueue();

function toast(message: string, kind: "error" | "info" = "error"): void {
  const node = document.createElement("div");
  node.className = kind === "info" ? "toast info" : "toast";
  node.textContent = message;
  toasts.append(node);
  setTimeout(() => node.remove(), 5000);
}

function showError(err: unknown): void {
  if (err instanceof ApiError) {
    if (err.status === 503) {
      statusDot.className = "status down";
    }
    const fields = err.fields
      .map((f) => `${f.field}: ${f.message}`)
      .join("; ");
    toast(fields.length > 0 ? `${err.message} (${fields})` : err.message);
  } else {
    toast(err instanceof Error ? err.message : String(err));
  }
}

function loadImage(b64: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error("failed to decode PNG"));
    img.src = `data:image/png;base64,${b64}`;
  });
}

async function drawMap(
  canvas: HTMLCanvasElement,
  colorPng: string,
): Promise<void> {
  const img = await loadImage(colorPng);
  canvas.width = imageWidth * zoom;
  canvas.height = imageHeight * zoom;
  const ctx = ctx2d(canvas);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
}

function drawOverlay(): void {
  const ctx = ctx2d(overlay);
  ctx.clearRect(0, 0, overlay.width, overlay.height);
  const box = activeDrag
    ? dragToBox(activeDrag, zoom, imageHeight, imageWidth)
    : pendingBox;
  if (!box) {
    return;
  }
  const rect = boxToDisplayRect(box, zoom);
  ctx.fillStyle = "rgba(79, 156, 249, 0.18)";
  ctx.fillRect(rect.x, rect.y, rect.width, rect.height);
  ctx.strokeStyle = "#4f9cf9";
  ctx.lineWidth = 1.5;
  ctx.strokeRect(
    rect.x + 0.75,
    rect.y + 0.75,
    rect.width - 1.5,
    rect.height - 1.5,
  );
}

function updateComparator(): void {
  const frac = Number(compareSlider.value) / 100;
  if (beforeCanvas.hidden || frac <= 0) {
    beforeCanvas.style.clipPath = "inset(0 100% 0 0)";
    divider.style.display = "none";
    return;
  }
  const px = Math.round(baseCanvas.width * frac);
  beforeCanvas.style.clipPath = `inset(0 ${baseCanvas.width - px}px 0 0)`;
  divider.style.display = "block";
  divider.style.left = `${px}px`;
  divider.style.height = `${baseCanvas.height}px`;
}

function renderHistory(): void {
  historyList.textContent = "";
  const pos = history.position();
  history.all().forEach((entry, i) => {
    const li = document.createElement("li");
    if (entry.edit) {
      const { box, targetLabel } = entry.edit;
      const name = nameById.get(targetLabel) ?? `label ${targetLabel}`;
      li.textContent = `(${box.r1},${box.c1})-(${box.r2},${box.c2}) to ${name}`;
    } else {
      li.textContent = currentSampleId
        ? `loaded ${currentSampleId}`
        : "uploaded map";
    }
    if (i === pos) {
      li.classList.add("current");
    }
    historyList.append(li);
  });
}

function updateSubmitState(): void {
  submitBtn.disabled = !(
    pendingBox !== null &&
    selectedLabel !== null &&
    history.current() !== null
  );
  undoBtn.disabled = !history.canUndo();
}

async function renderCurrent(): Promise<void> {
  const cur = history.current();
  if (!cur) {
    return;
  }
  await drawMap(baseCanvas, cur.colorPng);
  overlay.width = baseCanvas.width;
  overlay.height = baseCanvas.height;
  const prev = history.previous();
  if (prev) {
    beforeCanvas.hidden = false;
    compareSlider.disabled = false;
    await drawMap(beforeCanvas, prev.colorPng);
  } else {
    beforeCanvas.hidden = true;
    compareSlider.disabled = true;
  }
  updateComparator();
  drawOverlay();
  renderHistory();
  updateSubmitState();
}

function renderLabelPicker(): void {
  labelPicker.textContent = "";
  if (!labels) {
    return;
  }
  for (const cat of labels.categories) {
    if (!cat.editable) {
      continue;
    }
    const btn = document.createElement("button");
    btn.type = "button";
    const sw = document.createElement("span");
    sw.className = "swatch";
    sw.style.background = `rgb(${cat.color[0]}, ${cat.color[1]}, ${cat.color[2]})`;
    btn.append(sw, document.createTextNode(cat.name));
    btn.classList.toggle("selected", cat.id === selectedLabel);
    btn.addEventListener("click", () => {
      selectedLabel = cat.id;
      renderLabelPicker();
      updateSubmitState();
    });
    labelPicker.append(btn);
  }
}

function resetViewForNewMap(): void {
  pendingBox = null;
  activeDrag = null;
  metricsLine.textContent = "";
  boxReadout.textContent = "draw a box on the map";
  compareSlider.value = "0";
}

async function loadSample(id: string): Promise<void> {
  try {
    const sample = await getSample(id);
    currentSampleId = sample.sample_id;
    imageHeight = sample.height;
    imageWidth = sample.width;
    history.reset();
    history.push({ colorPng: sample.color, labelsPng: null, edit: null });
    resetViewForNewMap();
    await renderCurrent();
  } catch (err) {
    showError(err);
  }
}

async function loadUploaded(labelsPng: string): Promise<void> {
  try {
    const img = await loadImage(labelsPng);
    const off = document.createElement("canvas");
    off.width = img.naturalWidth;
    off.height = img.naturalHeight;
    const octx = ctx2d(off);
    octx.drawImage(img, 0, 0);
    const src = octx.getImageData(0, 0, off.width, off.height);
    const out = octx.createImageData(off.width, off.height);
    for (let i = 0; i < src.data.length; i += 4) {
      // grayscale PNG: the red channel carries the label id
      const color = colorById.get(src.data[i]) ?? [0, 0, 0];
      out.data[i] = color[0];
      out.data[i + 1] = color[1];
      out.data[i + 2] = color[2];
      out.data[i + 3] = 255;
    }
    octx.putImageData(out, 0, 0);
    const colorUrl = off.toDataURL("image/png");
    currentSampleId = null;
    imageHeight = off.height;
    imageWidth = off.width;
    history.reset();
    history.push({
      colorPng: colorUrl.slice(colorUrl.indexOf(",") + 1),
      labelsPng,
      edit: null,
    });
    resetViewForNewMap();
    await renderCurrent();
  } catch (err) {
    showError(err);
  }
}

function applyEditResponse(box: Box, target: number, res: EditResponse): void {
  statusDot.className = "status ok";
  history.push({
    colorPng: res.manipulated_color,
    labelsPng: res.manipulated_labels,
    edit: { box, targetLabel: target },
  });
  pendingBox = null;
  boxReadout.textContent = "draw a box on the map";
  const parts = [`latency ${res.latency_ms.toFixed(1)} ms`];
  if (res.tiou !== undefined) {
    parts.push(`tiou ${res.tiou.toFixed(4)}`);
  }
  if (res.hamm !== undefined) {
    parts.push(`hamm ${res.hamm.toFixed(4)}`);
  }
  metricsLine.textContent = parts.join(" | ");
  compareSlider.value = "50";
  void renderCurrent();
}

function displayPoint(ev: PointerEvent): { x: number; y: number } {
  const rect = overlay.getBoundingClientRect();
  return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
}

overlay.addEventListener("pointerdown", (ev) => {
  if (!history.current()) {
    return;
  }
  ev.preventDefault();
  overlay.setPointerCapture(ev.pointerId);
  const p = displayPoint(ev);
  activeDrag = { x0: p.x, y0: p.y, x1: p.x, y1: p.y };
  drawOverlay();
});

overlay.addEventListener("pointermove", (ev) => {
  if (!activeDrag) {
    return;
  }
  const p = displayPoint(ev);
  activeDrag.x1 = p.x;
  activeDrag.y1 = p.y;
  drawOverlay();
});

overlay.addEventListener("pointerup", (ev) => {
  if (!activeDrag) {
    return;
  }
  const p = displayPoint(ev);
  activeDrag.x1 = p.x;
  activeDrag.y1 = p.y;
  const box = dragToBox(activeDrag, zoom, imageHeight, imageWidth);
  activeDrag = null;
  if (box) {
    pendingBox = box;
    boxReadout.textContent = `box rows ${box.r1}-${box.r2}, cols ${box.c1}-${box.c2}`;
  } else {
    pendingBox = null;
    boxReadout.textContent = "zero-area drag discarded";
  }
  drawOverlay();
  updateSubmitState();
});

submitBtn.addEventListener("click", () => {
  const box = pendingBox;
  const target = selectedLabel;
  if (box === null || target === null) {
    return;
  }
  // the input map is read when the task runs, not when it is queued, so a
  // queued edit applies to the result of the edit before it
  void queue.enqueue(async () => {
    const cur = history.current();
    if (!cur) {
      return;
    }
    if (cur.labelsPng === null && currentSampleId === null) {
      toast("no input map available");
      return;
    }
    const req: EditRequest = {
      box: boxToWire(box),
      target_label: target,
      ...(cur.labelsPng !== null
        ? { label_map: cur.labelsPng }
        : { sample_id: currentSampleId as string }),
    };
    try {
      const res = await postEdit(req);
      applyEditResponse(box, target, res);
    } catch (err) {
      showError(err);
    }
  });
});

undoBtn.addEventListener("click", () => {
  const entry = history.undo();
  if (!entry) {
    return;
  }
  pendingBox = null;
  metricsLine.textContent = "";
  boxReadout.textContent = "draw a box on the map";
  void renderCurrent();
});

sampleSelect.addEventListener("change", () => {
  void loadSample(sampleSelect.value);
});

uploadInput.addEventListener("change", () => {
  const file = uploadInput.files?.[0];
  if (!file) {
    return;
  }
  const reader = new FileReader();
  reader.onload = () => {
    const url = String(reader.result);
    void loadUploaded(url.slice(url.indexOf(",") + 1));
  };
  reader.readAsDataURL(file);
});

zoomSelect.addEventListener("change", () => {
  // pendingBox lives in image coordinates, so it survives zoom changes;
  // the overlay redraw rescales it
  zoom = Number(zoomSelect.value);
  void renderCurrent();
});

compareSlider.addEventListener("input", updateComparator);

async function init(): Promise<void> {
  try {
    labels = await getLabels();
    colorById = new Map(labels.categories.map((c) => [c.id, c.color]));
    nameById = new Map(labels.categories.map((c) => [c.id, c.name]));
    statusDot.className = "status ok";
    const firstEditable = labels.categories.find((c) => c.editable);
    if (firstEditable) {
      selectedLabel = firstEditable.id;
    }
    renderLabelPicker();
    const samples = await getSamples();
    sampleSelect.textContent = "";
    for (const id of samples.samples) {
      const opt = document.createElement("option");
      opt.value = id;
      opt.textContent = id;
      sampleSelect.append(opt);
    }
    if (samples.samples.length > 0) {
      await loadSample(samples.samples[0]);
    } else {
      toast("no samples on the server; upload a label PNG to start", "info");
    }
  } catch (err) {
    statusDot.className = "status down";
    showError(err);
  }
}

void init();
