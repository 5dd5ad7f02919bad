/** Typed client for the gateway. The fetch implementation is injected so
 * tests can drive the client with canned responses and no network. */

import type { ChatResponse, JobJson, ModelsPage, TraceJson } from "./types.js";

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly payload?: unknown,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface JobPollResult {
  status: string; // queued | running | done | failed
  settled: boolean; // done or failed
  imageUrl?: string;
  imageDigest?: string;
  error?: string;
}

async function readJson(resp: Response): Promise<Record<string, unknown>> {
  try {
    return (await resp.json()) as Record<string, unknown>;
  } catch {
    return {};
  }
}

export class GatewayClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchFn,
  ) {}

  url(path: string): string {
    return this.baseUrl.replace(/\/+$/, "") + path;
  }

  imageUrl(digest: string): string {
    return this.url(`/v1/images/${digest}`);
  }

  /**
   * Send one chat message. Without a session id the gateway opens a new
   * session; with one, the stored history rides along server-side. A 503
   * whose body still carries a trace is a completed round trip reporting a
   * failed pipeline run, so it is returned, not thrown.
   */
  async sendChat(
    text: string,
    sessionId?: string,
    image?: Blob,
  ): Promise<ChatResponse> {
    let resp: Response;
    if (image !== undefined) {
      const form = new FormData();
      form.append("text", text);
      if (sessionId !== undefined) {
        form.append("session_id", sessionId);
      }
      form.append("image", image);
      resp = await this.fetchFn(this.url("/v1/chat"), {
        method: "POST",
        body: form,
      });
    } else {
      const body: Record<string, string> = { text };
      if (sessionId !== undefined) {
        body.session_id = sessionId;
      }
      resp = await this.fetchFn(this.url("/v1/chat"), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
    }
    const payload = await readJson(resp);
    if (resp.ok || (resp.status === 503 && payload.trace !== undefined)) {
      return payload as unknown as ChatResponse;
    }
    throw new ApiError(
      String(payload.error ?? `chat failed (${resp.status})`),
      resp.status,
      payload,
    );
  }

  async getModels(offset = 0, limit = 50): Promise<ModelsPage> {
    const resp = await this.fetchFn(
      this.url(`/v1/models?offset=${offset}&limit=${limit}`),
    );
    if (!resp.ok) {
      throw new ApiError(`model listing failed (${resp.status})`, resp.status);
    }
    return (await resp.json()) as ModelsPage;
  }

  async getTrace(traceId: string): Promise<TraceJson> {
    const resp = await this.fetchFn(this.url(`/v1/traces/${traceId}`));
    const payload = await readJson(resp);
    if (!resp.ok) {
      throw new ApiError(
        String(payload.error ?? `trace ${traceId} not found`),
        resp.status,
        payload,
      );
    }
    return payload as unknown as TraceJson;
  }

  /**
   * One poll of a render job. Once the job is done the gateway answers with
   * the PNG itself (plus an X-Image-Digest header); before that, and after a
   * failure, it answers with the job JSON.
   */
  async pollJobOnce(jobId: string): Promise<JobPollResult> {
    const resp = await this.fetchFn(this.url(`/v1/jobs/${jobId}`));
    if (!resp.ok) {
      const payload = await readJson(resp);
      throw new ApiError(
        String(payload.error ?? `job ${jobId} lookup failed`),
        resp.status,
        payload,
      );
    }
    const contentType = resp.headers.get("content-type") ?? "";
    if (contentType.startsWith("image/")) {
      const digest = resp.headers.get("x-image-digest") ?? "";
      return {
        status: "done",
        settled: true,
        imageDigest: digest,
        imageUrl: this.imageUrl(digest),
      };
    }
    const job = (await resp.json()) as JobJson;
    return {
      status: job.status,
      settled: job.status === "done" || job.status === "failed",
      error: job.error ?? undefined,
      imageDigest: job.image_digest ?? undefined,
      imageUrl: job.image_digest ? this.imageUrl(job.image_digest) : undefined,
    };
  }
}
