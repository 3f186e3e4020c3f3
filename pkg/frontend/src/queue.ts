/** Sequential task queue: at most one task in flight, FIFO order.
 *
 * Submissions never block the caller; each enqueue returns a promise for its
 * own task's outcome. A rejected task rejects its own promise only, the
 * chain keeps draining.
 */

export class SubmitQueue {
  private tail: Promise<unknown> = Promise.resolve();
  private running = 0;
  private waiting = 0;

  /** Number of tasks currently executing (0 or 1). */
  get inFlight(): number {
    return this.running;
  }

  /** Number of tasks queued behind the in-flight one. */
  get pending(): number {
    return this.waiting;
  }

  enqueue<T>(task: () => Promise<T>): Promise<T> {
    this.waiting += 1;
    const result = this.tail.then(async () => {
      this.waiting -= 1;
      this.running += 1;
      try {
        return await task();
      } finally {
        this.running -= 1;
      }
    });
    // keep the chain alive past failures; callers see them via `result`
    this.tail = result.catch(() => undefined);
    return result;
  }
}
