/* Fixed-capacity buffer that evicts oldest entries. Capacities here are a few
 * hundred, so a plain array with shift() is plenty fast. */

export class RingBuffer<T> {
  private items: T[] = [];

  constructor(readonly capacity: number) {
    if (!Number.isInteger(capacity) || capacity < 1) {
      throw new Error(`capacity must be a positive integer, got ${capacity}`);
    }
  }

  push(item: T): void {
    this.items.push(item);
    if (this.items.length > this.capacity) {
      this.items.shift();
    }
  }

  get length(): number {
    return this.items.length;
  }

  /* index 0 is the oldest retained entry */
  at(i: number): T {
    if (i < 0 || i >= this.items.length) {
      throw new Error(`index ${i} out of range 0..${this.items.length - 1}`);
    }
    return this.items[i];
  }

  last(): T | null {
    return this.items.length > 0 ? this.items[this.items.length - 1] : null;
  }

  toArray(): readonly T[] {
    return this.items;
  }

  clear(): void {
    this.items = [];
  }
}
