import { describe, expect, it } from "vitest";

import { ApiError, RatingApi, deriveSessionId } from "../src/api.js";
import { FakeServer } from "./fake_server.js";

function serverWithBundle(imageCount = 3): FakeServer {
  const server = new FakeServer();
  const ids = Array.from({ length: imageCount }, (_, i) => `img-${i}`);
  server.addBundle("demo", ids);
  return server;
}

describe("RatingApi", () => {
  it("posts the ids to /sessions and parses a 201", async () => {
    const calls: { input: string; init?: RequestInit }[] = [];
    const api = new RatingApi("", async (input, init) => {
      calls.push({ input, init });
      return new Response(JSON.stringify({ session_id: "abc123", rated: 0, total: 5 }), {
        status: 201,
        headers: { "content-type": "application/json" },
      });
    });

    const info = await api.createSession("zoe", "demo");

    expect(info).toEqual({ session_id: "abc123", rated: 0, total: 5 });
    expect(calls).toHaveLength(1);
    expect(calls[0].input).toBe("/sessions");
    expect(calls[0].init?.method).toBe("POST");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      critic_id: "zoe",
      bundle_id: "demo",
    });
  });

  it("raises ApiError carrying the server's error envelope", async () => {
    const server = serverWithBundle();
    const api = new RatingApi("", server.fetch);
    await api.createSession("zoe", "demo");

    let caught: unknown = null;
    try {
      await api.createSession("zoe", "demo");
    } catch (err) {
      caught = err;
    }
    expect(caught).toBeInstanceOf(ApiError);
    const apiErr = caught as ApiError;
    expect(apiErr.status).toBe(409);
    expect(apiErr.errorClass).toBe("DuplicateSession");
    expect(apiErr.message).toContain("already rated");
  });

  it("falls back to HttpError when the body is not the json envelope", async () => {
    const api = new RatingApi("", async () => new Response("boom", { status: 500 }));
    await expect(api.createSession("zoe", "demo")).rejects.toMatchObject({
      name: "ApiError",
      status: 500,
      errorClass: "HttpError",
    });
  });

  it("walks next and submit against the session routes", async () => {
    const server = serverWithBundle(2);
    const api = new RatingApi("", server.fetch);
    const info = await api.createSession("zoe", "demo");

    const first = await api.nextItem(info.session_id);
    expect(first.image_id).toBe("img-0");
    expect(first.image_url).toBe("/images/tok-img-0");
    expect(first.rated).toBe(0);
    expect(first.total).toBe(2);

    const ack = await api.submitScore(info.session_id, "img-0", 42.5);
    expect(ack).toEqual({ acknowledged: true, rated: 1, total: 2 });
    expect(server.log.map((entry) => entry.path)).toEqual([
      "/sessions",
      `/sessions/${info.session_id}/next`,
      `/sessions/${info.session_id}/scores`,
    ]);
  });

  it("surfaces ScoreOutOfRange and OutOfOrderSubmission", async () => {
    const server = serverWithBundle(2);
    const api = new RatingApi("", server.fetch);
    const info = await api.createSession("zoe", "demo");

    await expect(api.submitScore(info.session_id, "img-0", 100.5)).rejects.toMatchObject({
      status: 400,
      errorClass: "ScoreOutOfRange",
    });
    await expect(api.submitScore(info.session_id, "img-1", 50)).rejects.toMatchObject({
      status: 409,
      errorClass: "OutOfOrderSubmission",
    });
    expect(server.scores).toHaveLength(0);
  });

  it("exports csv text once scores exist", async () => {
    const server = serverWithBundle(2);
    const api = new RatingApi("", server.fetch);

    await expect(api.exportCsv("demo")).rejects.toMatchObject({
      status: 404,
      errorClass: "NothingToExport",
    });

    const info = await api.createSession("zoe", "demo");
    await api.submitScore(info.session_id, "img-0", 10);
    await api.submitScore(info.session_id, "img-1", 90);

    const csv = await api.exportCsv("demo");
    const lines = csv.trim().split("\n");
    expect(lines[0]).toBe("critic_id,image_id,score");
    expect(lines).toHaveLength(3);
    expect(lines[1]).toBe("zoe,img-0,10");
    expect(lines[2]).toBe("zoe,img-1,90");
  });

  it("derives the same session ids the backend hands out", async () => {
    // pinned against the service's sha256("critic|bundle") scheme
    expect(await deriveSessionId("alice", "demo")).toBe("51c5a19a5a3f6414");
    expect(await deriveSessionId("zoe", "demo")).toBe("c8e69f0d9eecb3e0");
  });

  it("builds urls against the base url without doubling slashes", () => {
    const api = new RatingApi("http://localhost:8000/");
    const item = { image_id: "x", image_url: "/images/abcd", rated: 0, total: 1 };
    expect(api.imageUrl(item)).toBe("http://localhost:8000/images/abcd");
    expect(api.exportUrl("my bundle")).toBe("http://localhost:8000/bundles/my%20bundle/export");
  });
});
