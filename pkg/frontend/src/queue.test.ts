import { describe, expect, it } from "vitest";

import { SubmitQueue } from "./queue.js";

function deferred<T>() {
  let resolve!: (value: T) => void;
  let reject!: (reason?: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

const tick = () => new Promise<void>((res) => setTimeout(res, 0));

describe("SubmitQueue", () => {
  it("runs at most one task at a time", async () => {
    const queue = new SubmitQueue();
    const first = deferred<string>();
    const second = deferred<string>();

    const p1 = queue.enqueue(() => first.promise);
    const p2 = queue.enqueue(() => second.promise);
    await tick();

    expect(queue.inFlight).toBe(1);
    expect(queue.pending).toBe(1);

    first.resolve("one");
    await tick();
    expect(queue.inFlight).toBe(1); // second started only after first settled
    expect(queue.pending).toBe(0);

    second.resolve("two");
    expect(await p1).toBe("one");
    expect(await p2).toBe("two");
    expect(queue.inFlight).toBe(0);
  });

  it("preserves FIFO order", async () => {
    const queue = new SubmitQueue();
    const order: number[] = [];
    await Promise.all(
      [0, 1, 2, 3].map((n) =>
        queue.enqueue(async () => {
          order.push(n);
          await tick();
        }),
      ),
    );
    expect(order).toEqual([0, 1, 2, 3]);
  });

  it("enqueue never blocks the caller", async () => {
    const queue = new SubmitQueue();
    const gate = deferred<void>();
    queue.enqueue(() => gate.promise);
    await tick(); // let the first task start
    // a second submission is accepted immediately while the first is stuck
    const p = queue.enqueue(async () => "queued");
    expect(queue.inFlight).toBe(1);
    expect(queue.pending).toBe(1);
    gate.resolve();
    expect(await p).toBe("queued");
  });

  it("a failing task rejects its own promise and the queue keeps draining", async () => {
    const queue = new SubmitQueue();
    const boom = queue.enqueue(async () => {
      throw new Error("boom");
    });
    const after = queue.enqueue(async () => "still alive");
    await expect(boom).rejects.toThrow("boom");
    expect(await after).toBe("still alive");
    expect(queue.inFlight).toBe(0);
    expect(queue.pending).toBe(0);
  });
});
