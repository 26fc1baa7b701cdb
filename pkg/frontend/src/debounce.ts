// Commit-on-release debouncing: every diffusion render is expensive, so
// slider drags must not stream requests. The UI calls schedule() on change
// events; only the last call per key within the window fires.

export class Debouncer<K> {
  private handles = new Map<K, ReturnType<typeof setTimeout>>();

  constructor(private readonly windowMs = 250) {}

  schedule(key: K, op: () => void): void {
    const existing = this.handles.get(key);
    if (existing !== undefined) clearTimeout(existing);
    this.handles.set(
      key,
      setTimeout(() => {
        this.handles.delete(key);
        op();
      }, this.windowMs),
    );
  }

  cancel(key: K): void {
    const existing = this.handles.get(key);
    if (existing !== undefined) {
      clearTimeout(existing);
      this.handles.delete(key);
    }
  }

  flushPendingCount(): number {
    return this.handles.size;
  }
}
