// Typed client for the captioning service.  Every reply is an envelope with
// exactly one of `payload` or `error`; the client unwraps payloads and throws
// ApiError otherwise.  The fetch function is injectable so tests can run
// against a mock service with no network.

import type { Point } from "./encode";

export interface ApiErrorBody {
  code: string;
  message: string;
}

export class ApiError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message);
    this.name = "ApiError";
    this.code = body.code;
    this.status = status;
  }
}

export interface EncodeResult {
  tokens: string;
}

export interface CaptionResult {
  caption: string;
  tokens: string;
}

export interface AttentionResult {
  rows: number[]; // flattened N x P, row-major
  dims: [number, number]; // [N queries, P patches]
  grid: [number, number]; // patch grid [H_p, W_p]
  mean: number[]; // length P, mean over queries
  tokens: string;
}

export interface DialogueTurn {
  role: "user" | "model";
  text: string;
  points?: Point[];
  z?: number[][];
}

export interface DialogueResult {
  reply: string;
  truncated: boolean;
  history: DialogueTurn[];
}

export interface HealthResult {
  status: string;
  grid: number;
  n_images: number;
  n_queries: number;
  colors: string[];
  shapes: string[];
}

export interface ImagesResult {
  images: string[];
}

// Narrow view of fetch so tests can supply a plain object.
export interface FetchResponse {
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<FetchResponse>;

function unwrap(status: number, body: unknown): unknown {
  if (typeof body !== "object" || body === null) {
    throw new ApiError(status, { code: "bad_envelope", message: "response is not an object" });
  }
  const rec = body as Record<string, unknown>;
  const hasPayload = "payload" in rec;
  const hasError = "error" in rec;
  if (hasPayload === hasError) {
    throw new ApiError(status, { code: "bad_envelope", message: "expected exactly one of payload|error" });
  }
  if (hasError) {
    throw new ApiError(status, rec.error as ApiErrorBody);
  }
  return rec.payload;
}

export class Client {
  constructor(
    private readonly base: string,
    private readonly fetchFn: FetchLike,
  ) {}

  private async get(path: string): Promise<unknown> {
    const res = await this.fetchFn(this.base + path);
    return unwrap(res.status, await res.json());
  }

  private async post(path: string, body: unknown): Promise<unknown> {
    const res = await this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return unwrap(res.status, await res.json());
  }

  health(): Promise<HealthResult> {
    return this.get("/api/health") as Promise<HealthResult>;
  }

  images(limit?: number): Promise<ImagesResult> {
    const q = limit === undefined ? "" : `?limit=${limit}`;
    return this.get("/api/images" + q) as Promise<ImagesResult>;
  }

  imagePngUrl(imageId: string, cellPx = 48): string {
    return `${this.base}/api/image?id=${encodeURIComponent(imageId)}&cell_px=${cellPx}`;
  }

  encode(points: Point[]): Promise<EncodeResult> {
    return this.post("/api/encode", { points }) as Promise<EncodeResult>;
  }

  caption(imageId: string, points: Point[], opts: { k?: number; seed?: number } = {}): Promise<CaptionResult> {
    return this.post("/api/caption", { image_id: imageId, points, ...opts }) as Promise<CaptionResult>;
  }

  attention(imageId: string, points: Point[], opts: { layer?: number; head?: number } = {}): Promise<AttentionResult> {
    return this.post("/api/attention", { image_id: imageId, points, ...opts }) as Promise<AttentionResult>;
  }

  dialogue(
    imageId: string,
    text: string,
    points: Point[],
    history: DialogueTurn[],
    opts: { k?: number; seed?: number } = {},
  ): Promise<DialogueResult> {
    const body: Record<string, unknown> = { image_id: imageId, text, history, ...opts };
    if (points.length > 0) body.points = points;
    return this.post("/api/dialogue", body) as Promise<DialogueResult>;
  }
}
