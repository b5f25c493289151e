// Typed client for the review service. Every catalog mutation the UI can
// perform goes through POST /api/labels; everything else is read-only.

import type {
  LinkView,
  MarkingView,
  QueueName,
  ReviewTask,
  Rotation,
  SignatureGroupView,
  SubmitResult,
} from "./types.js";

export class ConflictError extends Error {
  constructor(detail: string) {
    super(detail);
    this.name = "ConflictError";
  }
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

export interface LabelSubmission {
  task_id: string;
  reviewer: string;
  label?: string;
  corrected_text?: string;
  skip?: boolean;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ReviewApi {
  constructor(
    private readonly base: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(this.base + path);
    if (!response.ok) {
      throw new ApiError(response.status, await describe(response));
    }
    return (await response.json()) as T;
  }

  fetchQueue(
    queue: QueueName,
    options: { seizure?: number; limit?: number } = {},
  ): Promise<ReviewTask[]> {
    const params = new URLSearchParams();
    if (options.seizure !== undefined) params.set("seizure", String(options.seizure));
    if (options.limit !== undefined) params.set("limit", String(options.limit));
    const query = params.toString();
    return this.getJson(`/api/queue/${queue}${query ? "?" + query : ""}`);
  }

  async submit(submission: LabelSubmission): Promise<SubmitResult> {
    const response = await this.fetchImpl(this.base + "/api/labels", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(submission),
    });
    if (response.status === 409) {
      throw new ConflictError(await describe(response));
    }
    if (!response.ok) {
      throw new ApiError(response.status, await describe(response));
    }
    return (await response.json()) as SubmitResult;
  }

  fetchMarking(markingId: string): Promise<MarkingView> {
    return this.getJson(`/api/markings/${markingId}`);
  }

  fetchVocabulary(): Promise<string[]> {
    return this.getJson("/api/labels/vocabulary");
  }

  fetchSeizures(): Promise<number[]> {
    return this.getJson("/api/seizures");
  }

  fetchSignatures(): Promise<SignatureGroupView[]> {
    return this.getJson("/api/signatures");
  }

  fetchLinks(): Promise<LinkView[]> {
    return this.getJson("/api/links");
  }

  cropUrl(markingId: string, rotation: Rotation = 0): string {
    return `${this.base}/api/markings/${markingId}/crop?rotation=${rotation}`;
  }
}

async function describe(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    return body.detail ?? `HTTP ${response.status}`;
  } catch {
    return `HTTP ${response.status}`;
  }
}
