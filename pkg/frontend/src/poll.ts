/** Fixed-interval poller with stale-data tracking.
 *
 * A failed tick keeps the last good value and raises the stale flag instead
 * of clearing the view; the next success lowers it. Ticks never overlap: a
 * slow request simply delays the next schedule.
 */

export interface PollState<T> {
  value: T | null;
  stale: boolean;
  lastError: string | null;
}

export class Poller<T> {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;
  readonly state: PollState<T> = { value: null, stale: false, lastError: null };

  constructor(
    private readonly fetchValue: () => Promise<T>,
    private readonly onChange: (state: PollState<T>) => void,
    private readonly intervalMs = 2000,
  ) {}

  start(): void {
    this.stopped = false;
    void this.tick();
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }

  /** One poll cycle; exposed so tests can drive the poller synchronously. */
  async tick(): Promise<void> {
    try {
      const value = await this.fetchValue();
      this.state.value = value;
      this.state.stale = false;
      this.state.lastError = null;
    } catch (error) {
      this.state.stale = this.state.value !== null;
      this.state.lastError = error instanceof Error ? error.message : String(error);
    }
    this.onChange(this.state);
    if (!this.stopped) {
      this.timer = setTimeout(() => void this.tick(), this.intervalMs);
    }
  }
}
