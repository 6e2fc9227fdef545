// Debounced single-flight runner for intervention requests: rapid toggles
// collapse to one request after the quiet period, at most one request is
// in flight, and the last submitted state always wins.

export class LastWinsRunner<T> {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;
  private pending: (() => Promise<T>) | null = null;

  constructor(
    private readonly onResult: (value: T) => void,
    private readonly onError: (err: unknown) => void,
    private readonly delayMs = 150,
  ) {}

  submit(task: () => Promise<T>): void {
    this.pending = task;
    if (this.timer) clearTimeout(this.timer);
    this.timer = setTimeout(() => void this.drain(), this.delayMs);
  }

  private async drain(): Promise<void> {
    if (this.inFlight || !this.pending) return;
    const task = this.pending;
    this.pending = null;
    this.inFlight = true;
    try {
      const value = await task();
      // a newer submission supersedes this result
      if (!this.pending) this.onResult(value);
    } catch (err) {
      if (!this.pending) this.onError(err);
    } finally {
      this.inFlight = false;
      if (this.pending) void this.drain();
    }
  }
}
