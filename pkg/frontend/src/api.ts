// Typed client for the rating service HTTP API. All methods reject with
// ApiError when the server answers with its {error_class, message} envelope.

export interface SessionInfo {
  session_id: string;
  rated: number;
  total: number;
}

export interface RatingItem {
  image_id: string;
  image_url: string;
  rated: number;
  total: number;
}

export interface SubmitAck {
  acknowledged: boolean;
  rated: number;
  total: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

// session ids are deterministic on the server: sha256("critic|bundle") hex,
// first 16 chars. Deriving the same id client-side is what makes resuming an
// interrupted session possible without a lookup endpoint.
export async function deriveSessionId(criticId: string, bundleId: string): Promise<string> {
  const data = new TextEncoder().encode(`${criticId}|${bundleId}`);
  const digest = await crypto.subtle.digest("SHA-256", data);
  const hex = Array.from(new Uint8Array(digest), (b) => b.toString(16).padStart(2, "0"));
  return hex.join("").slice(0, 16);
}

export class ApiError extends Error {
  readonly status: number;
  readonly errorClass: string;

  constructor(status: number, errorClass: string, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.errorClass = errorClass;
  }
}

async function raiseFor(response: Response): Promise<never> {
  let errorClass = "HttpError";
  let message = `request failed with status ${response.status}`;
  try {
    const body = await response.json();
    if (body && typeof body.error_class === "string") {
      errorClass = body.error_class;
      message = typeof body.message === "string" ? body.message : message;
    }
  } catch {
    // non-JSON body: keep the generic message
  }
  throw new ApiError(response.status, errorClass, message);
}

export class RatingApi {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl = "", fetchImpl?: FetchLike) {
    // trailing slash would double up with the absolute paths below
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  imageUrl(item: RatingItem): string {
    return this.baseUrl + item.image_url;
  }

  exportUrl(bundleId: string): string {
    return `${this.baseUrl}/bundles/${encodeURIComponent(bundleId)}/export`;
  }

  async createSession(criticId: string, bundleId: string): Promise<SessionInfo> {
    const response = await this.fetchImpl(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ critic_id: criticId, bundle_id: bundleId }),
    });
    if (response.status !== 201) await raiseFor(response);
    return (await response.json()) as SessionInfo;
  }

  async nextItem(sessionId: string): Promise<RatingItem> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/sessions/${encodeURIComponent(sessionId)}/next`,
    );
    if (!response.ok) await raiseFor(response);
    return (await response.json()) as RatingItem;
  }

  async submitScore(sessionId: string, imageId: string, score: number): Promise<SubmitAck> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/sessions/${encodeURIComponent(sessionId)}/scores`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ image_id: imageId, score }),
      },
    );
    if (!response.ok) await raiseFor(response);
    return (await response.json()) as SubmitAck;
  }

  async exportCsv(bundleId: string): Promise<string> {
    const response = await this.fetchImpl(this.exportUrl(bundleId));
    if (!response.ok) await raiseFor(response);
    return response.text();
  }
}
