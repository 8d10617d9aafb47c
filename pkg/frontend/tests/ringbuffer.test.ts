import { expect, test } from "vitest";

import { RingBuffer } from "../src/ringbuffer.js";

test("holds items in insertion order", () => {
  const buf = new RingBuffer<number>(5);
  [1, 2, 3].forEach((v) => buf.push(v));
  expect(buf.length).toBe(3);
  expect(buf.toArray()).toEqual([1, 2, 3]);
  expect(buf.at(0)).toBe(1);
  expect(buf.last()).toBe(3);
});

test("evicts oldest beyond capacity", () => {
  const buf = new RingBuffer<number>(3);
  [0, 1, 2, 3, 4].forEach((v) => buf.push(v));
  expect(buf.length).toBe(3);
  expect(buf.toArray()).toEqual([2, 3, 4]);
});

test("length never exceeds capacity", () => {
  const buf = new RingBuffer<number>(250);
  for (let i = 0; i < 1000; i++) {
    buf.push(i);
  }
  expect(buf.length).toBe(250);
  expect(buf.at(0)).toBe(750);
});

test("empty buffer has no last element", () => {
  const buf = new RingBuffer<number>(2);
  expect(buf.last()).toBeNull();
  expect(buf.length).toBe(0);
});

test("clear empties the buffer", () => {
  const buf = new RingBuffer<number>(2);
  buf.push(1);
  buf.clear();
  expect(buf.length).toBe(0);
});

test("rejects out-of-range index", () => {
  const buf = new RingBuffer<number>(2);
  buf.push(1);
  expect(() => buf.at(1)).toThrow(/out of range/);
  expect(() => buf.at(-1)).toThrow(/out of range/);
});

test.each([0, -1, 2.5])("rejects capacity %d", (capacity) => {
  expect(() => new RingBuffer(capacity)).toThrow(/capacity/);
});
