import { describe, expect, it } from "vitest";

import { RatingApi, deriveSessionId } from "../src/api.js";
import { Phase, RatingSession, validateScore } from "../src/session.js";
import { FakeServer } from "./fake_server.js";

function setup(imageCount = 3, critic = "zoe", bundle = "demo") {
  const server = new FakeServer();
  const ids = Array.from({ length: imageCount }, (_, i) => `img-${i}`);
  server.addBundle(bundle, ids);
  const api = new RatingApi("", server.fetch);
  const session = new RatingSession(api, critic, bundle);
  const phases: Phase[] = [];
  session.subscribe((snap) => phases.push(snap.phase));
  return { server, api, session, phases };
}

describe("validateScore", () => {
  it("accepts the inclusive 0..100 range and rejects the rest", () => {
    expect(validateScore(0)).toBeNull();
    expect(validateScore(100)).toBeNull();
    expect(validateScore(55.5)).toBeNull();
    expect(validateScore(-0.1)).not.toBeNull();
    expect(validateScore(100.5)).not.toBeNull();
    expect(validateScore(Number.NaN)).not.toBeNull();
    expect(validateScore(Number.POSITIVE_INFINITY)).not.toBeNull();
  });
});

describe("RatingSession", () => {
  it("walks a bundle from start to complete", async () => {
    const { server, session, phases } = setup(3);

    await session.start();
    let snap = session.snapshot();
    expect(snap.phase).toBe("rating");
    expect(snap.item?.image_id).toBe("img-0");
    expect(snap.rated).toBe(0);
    expect(snap.total).toBe(3);
    expect(session.currentImageUrl()).toBe("/images/tok-img-0");

    await session.submit(10);
    await session.submit(20);
    await session.submit(30);

    snap = session.snapshot();
    expect(snap.phase).toBe("complete");
    expect(snap.item).toBeNull();
    expect(snap.pendingScore).toBeNull();
    expect(snap.rated).toBe(3);
    expect(server.scores.map((row) => row.score)).toEqual([10, 20, 30]);
    expect(phases).toEqual([
      "starting",
      "rating",
      "submitting",
      "rating",
      "submitting",
      "rating",
      "submitting",
      "complete",
    ]);
  });

  it("rejects an out-of-range score locally without touching the network", async () => {
    const { server, session } = setup(1);
    await session.start();
    const requestsBefore = server.log.length;

    await session.submit(100.5);
    let snap = session.snapshot();
    expect(snap.phase).toBe("rating");
    expect(snap.error).toContain("between 0 and 100");
    expect(snap.item?.image_id).toBe("img-0");
    expect(server.log.length).toBe(requestsBefore);

    await session.submit(100);
    snap = session.snapshot();
    expect(snap.phase).toBe("complete");
    expect(snap.error).toBeNull();
    expect(server.scores.map((row) => row.score)).toEqual([100]);
  });

  it("accepts both boundary scores", async () => {
    const { server, session } = setup(2);
    await session.start();
    await session.submit(0);
    await session.submit(100);
    expect(session.snapshot().phase).toBe("complete");
    expect(server.scores.map((row) => row.score)).toEqual([0, 100]);
  });

  it("offers resume instead of restart on a duplicate session", async () => {
    const { server, api, session } = setup(3);
    await session.start();
    await session.submit(40);

    const again = new RatingSession(api, "zoe", "demo");
    await again.start();
    let snap = again.snapshot();
    expect(snap.phase).toBe("resumable");
    expect(snap.error).toContain("already rated");

    await again.resume();
    snap = again.snapshot();
    expect(snap.phase).toBe("rating");
    expect(snap.item?.image_id).toBe("img-1");
    expect(snap.rated).toBe(1);
    expect(snap.total).toBe(3);

    await again.submit(50);
    await again.submit(60);
    expect(again.snapshot().phase).toBe("complete");
    expect(server.scores.map((row) => row.score)).toEqual([40, 50, 60]);
  });

  it("resuming an already finished session lands on complete", async () => {
    const { api, session } = setup(1);
    await session.start();
    await session.submit(10);

    const again = new RatingSession(api, "zoe", "demo");
    await again.start();
    expect(again.snapshot().phase).toBe("resumable");
    await again.resume();
    expect(again.snapshot().phase).toBe("complete");
  });

  it("refreshes from the server on an out-of-order submission", async () => {
    const { server, api, session } = setup(3);
    await session.start();
    // a second client scores the current image behind this session's back
    const sid = await deriveSessionId("zoe", "demo");
    await api.submitScore(sid, "img-0", 15);

    await session.submit(85);
    const snap = session.snapshot();
    expect(snap.phase).toBe("rating");
    expect(snap.item?.image_id).toBe("img-1");
    expect(snap.rated).toBe(1);
    expect(snap.pendingScore).toBeNull();
    expect(server.scores.map((row) => row.score)).toEqual([15]);
  });

  it("keeps the score for retry after a transport failure", async () => {
    const server = new FakeServer();
    server.addBundle("demo", ["img-0", "img-1"]);
    let failures = 1;
    const api = new RatingApi("", async (input, init) => {
      if (failures > 0 && init?.method === "POST" && input.endsWith("/scores")) {
        failures -= 1;
        throw new Error("socket hang up");
      }
      return server.fetch(input, init);
    });
    const session = new RatingSession(api, "zoe", "demo");
    await session.start();

    await session.submit(42.5);
    let snap = session.snapshot();
    expect(snap.phase).toBe("rating");
    expect(snap.pendingScore).toBe(42.5);
    expect(snap.error).toBe("socket hang up");
    expect(snap.item?.image_id).toBe("img-0");
    expect(server.scores).toHaveLength(0);

    await session.submit(42.5);
    snap = session.snapshot();
    expect(snap.phase).toBe("rating");
    expect(snap.item?.image_id).toBe("img-1");
    expect(snap.pendingScore).toBeNull();
    expect(server.scores.map((row) => row.score)).toEqual([42.5]);
  });

  it("treats a SessionComplete rejection on submit as completion", async () => {
    // simulates a second tab racing this one to the last image
    const api = new RatingApi("", async (input, init) => {
      const method = init?.method ?? "GET";
      if (method === "POST" && input === "/sessions") {
        return new Response(JSON.stringify({ session_id: "s1", rated: 0, total: 2 }), {
          status: 201,
        });
      }
      if (method === "GET") {
        return new Response(
          JSON.stringify({ image_id: "a", image_url: "/images/a", rated: 0, total: 2 }),
          { status: 200 },
        );
      }
      return new Response(
        JSON.stringify({ error_class: "SessionComplete", message: "already finished" }),
        { status: 409 },
      );
    });
    const session = new RatingSession(api, "zoe", "demo");
    await session.start();
    await session.submit(50);

    const snap = session.snapshot();
    expect(snap.phase).toBe("complete");
    expect(snap.error).toBeNull();
  });

  it("completes immediately on an empty bundle", async () => {
    const { server, session } = setup(0);
    await session.start();
    expect(session.snapshot().phase).toBe("complete");
    expect(server.log.map((entry) => entry.path)).toEqual(["/sessions"]);
  });

  it("fails when the backend is unreachable", async () => {
    const api = new RatingApi("", async () => {
      throw new Error("connection refused");
    });
    const session = new RatingSession(api, "zoe", "demo");
    await session.start();
    const snap = session.snapshot();
    expect(snap.phase).toBe("failed");
    expect(snap.error).toBe("connection refused");
  });

  it("refuses phase-breaking calls", async () => {
    const { session } = setup(1);
    await expect(session.submit(5)).rejects.toThrow(/cannot submit in phase idle/);
    await expect(session.resume()).rejects.toThrow(/cannot resume from phase idle/);
    await session.start();
    await expect(session.start()).rejects.toThrow(/cannot start from phase rating/);
  });
});
