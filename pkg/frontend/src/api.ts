// Typed client for the annotation service. The fetch implementation is
// injectable so tests can run against an in-memory fixture service.

import type { AnnotationBody, NextResponse, StatusView } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`api error ${status}`);
  }
}

async function parse<T>(response: Response): Promise<T> {
  const body = await response.json().catch(() => null);
  if (!response.ok) {
    throw new ApiError(response.status, body?.detail ?? body);
  }
  return body as T;
}

export class ApiClient {
  constructor(
    private readonly doFetch: FetchLike = (url, init) => fetch(url, init),
    private readonly base: string = "",
  ) {}

  status(): Promise<StatusView> {
    return this.doFetch(`${this.base}/api/status`).then((r) => parse<StatusView>(r));
  }

  next(): Promise<NextResponse> {
    return this.doFetch(`${this.base}/api/queue/next`).then((r) => parse<NextResponse>(r));
  }

  submit(body: AnnotationBody): Promise<{ ok: boolean; status: StatusView }> {
    return this.doFetch(`${this.base}/api/annotations`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => parse(r));
  }

  advance(): Promise<StatusView> {
    return this.doFetch(`${this.base}/api/iterations/advance`, { method: "POST" }).then((r) =>
      parse<StatusView>(r),
    );
  }
}
