import { describe, expect, it } from "vitest";

import { PreviewScheduler } from "../src/scheduler.js";
import type { RenderRequest } from "../src/types.js";

function req(time: number): RenderRequest {
  return {
    time_index: time, width: 8, height: 8, fov_x: 0.7, samples: 8,
    quality: "preview",
    camera: { position: [0, 0, 3], look_at: [0, 0, 0], up: [0, 0, 1] },
  };
}

/** A mock service whose completions the test controls explicitly. */
function deferredSender() {
  const pending: Array<{ req: RenderRequest; resolve: (v: unknown) => void;
                         reject: (e: unknown) => void }> = [];
  let concurrent = 0;
  let maxConcurrent = 0;
  const send = (r: RenderRequest, _signal: AbortSignal) => {
    concurrent += 1;
    maxConcurrent = Math.max(maxConcurrent, concurrent);
    return new Promise((resolve, reject) => {
      pending.push({
        req: r,
        resolve: (v) => { concurrent -= 1; resolve(v); },
        reject: (e) => { concurrent -= 1; reject(e); },
      });
    });
  };
  return { send, pending, stats: () => ({ maxConcurrent }) };
}

const tickle = () => new Promise((r) => setTimeout(r, 0));

describe("latest-wins preview scheduling", () => {
  it("keeps at most one request in flight under a burst of submissions", async () => {
    const svc = deferredSender();
    const done: RenderRequest[] = [];
    const sched = new PreviewScheduler(svc.send, (r) => done.push(r));

    for (let i = 0; i < 20; i += 1) {
      sched.submit(req(i));
    }
    expect(sched.inFlight).toBe(1);
    expect(svc.pending.length).toBe(1);

    svc.pending.shift()!.resolve("frame-0");
    await tickle();
    // only the newest candidate followed; the 18 in between were dropped
    expect(svc.pending.length).toBe(1);
    expect(svc.pending[0].req.time_index).toBe(19);
    svc.pending.shift()!.resolve("frame-19");
    await tickle();

    expect(svc.stats().maxConcurrent).toBe(1);
    expect(sched.issued).toBe(2);
    expect(done.map((r) => r.time_index)).toEqual([0, 19]);
  });

  it("issues immediately when idle (no artificial throttle)", async () => {
    const svc = deferredSender();
    const sched = new PreviewScheduler(svc.send, () => {});
    for (let i = 0; i < 5; i += 1) {
      sched.submit(req(i));
      svc.pending.shift()!.resolve(`frame-${i}`);
      await tickle();
    }
    // every submission went straight out because the line was free
    expect(sched.issued).toBe(5);
  });

  it("cancel aborts the in-flight request and clears the queue", async () => {
    const svc = deferredSender();
    const done: RenderRequest[] = [];
    const errors: unknown[] = [];
    const sched = new PreviewScheduler(svc.send, (r) => done.push(r),
                                       (_r, e) => errors.push(e));
    sched.submit(req(0));
    sched.submit(req(1));
    sched.cancel();
    svc.pending.shift()!.resolve("late frame");
    await sched.idle();
    expect(done).toEqual([]);      // aborted result is dropped
    expect(errors).toEqual([]);
    expect(sched.inFlight).toBe(0);
  });

  it("reports failures without dropping subsequent requests", async () => {
    const svc = deferredSender();
    const done: RenderRequest[] = [];
    const errors: unknown[] = [];
    const sched = new PreviewScheduler(svc.send, (r) => done.push(r),
                                       (_r, e) => errors.push(e));
    sched.submit(req(0));
    svc.pending.shift()!.reject(new Error("boom"));
    await tickle();
    sched.submit(req(1));
    svc.pending.shift()!.resolve("ok");
    await tickle();
    expect(errors.length).toBe(1);
    expect(done.map((r) => r.time_index)).toEqual([1]);
  });
});
