/** Typed client for the edit service's HTTP API. */

export interface LabelCategory {
  id: number;
  name: string;
  color: [number, number, number];
  editable: boolean;
}

export interface LabelsResponse {
  categories: LabelCategory[];
  size_threshold: number;
}

export interface SamplesResponse {
  samples: string[];
  count: number;
}

export interface SampleResponse {
  sample_id: string;
  color: string; // base64 PNG
  height: number;
  width: number;
}

export interface EditRequest {
  label_map?: string; // base64 PNG, 8-bit grayscale label ids
  sample_id?: string;
  box: [number, number, number, number];
  target_label: number;
}

export interface EditResponse {
  manipulated_color: string;
  manipulated_labels: string;
  tiou?: number;
  hamm?: number;
  latency_ms: number;
  translated_image?: string;
}

export interface FieldError {
  field: string;
  message: string;
}

export class ApiError extends Error {
  readonly status: number;
  readonly fields: FieldError[];

  constructor(status: number, message: string, fields: FieldError[] = []) {
    super(message);
    this.status = status;
    this.fields = fields;
  }
}

/** Normalize an error body: field errors arrive as detail: [{field, message}]. */
export function errorFromBody(status: number, body: unknown): ApiError {
  if (body && typeof body === "object" && "detail" in body) {
    const detail = (body as { detail: unknown }).detail;
    if (Array.isArray(detail)) {
      const fields = detail.filter(
        (d): d is FieldError =>
          !!d && typeof d === "object" && "field" in d && "message" in d,
      );
      const text = fields.map((f) => `${f.field}: ${f.message}`).join("; ");
      return new ApiError(status, text || `request failed (${status})`, fields);
    }
    if (typeof detail === "string") {
      return new ApiError(status, detail);
    }
  }
  return new ApiError(status, `request failed (${status})`);
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(path, init);
  if (!response.ok) {
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      // non-JSON error body; fall through to the generic message
    }
    throw errorFromBody(response.status, body);
  }
  return (await response.json()) as T;
}

export function getLabels(): Promise<LabelsResponse> {
  return request("/api/labels");
}

export function getSamples(limit = 200): Promise<SamplesResponse> {
  return request(`/api/samples?limit=${limit}`);
}

export function getSample(id: string): Promise<SampleResponse> {
  return request(`/api/samples/${encodeURIComponent(id)}`);
}

export function postEdit(body: EditRequest): Promise<EditResponse> {
  return request("/api/edit", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
}
