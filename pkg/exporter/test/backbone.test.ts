import assert from "node:assert/strict";
import { test } from "node:test";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { Backbone } from "../src/backbone";

function grayImage(width: number, height: number, value = 0.5) {
  const data = new Float32Array(width * height * 3).fill(value);
  return { width, height, data };
}

test("stack layout reaches 512 channels at 1/16 resolution", () => {
  const backbone = Backbone.seeded(1);
  assert.equal(backbone.layers.length, 10);
  assert.equal(backbone.layers[backbone.layers.length - 1].cout, 512);
  const out = backbone.run(grayImage(32, 32));
  assert.equal(out.channels, 512);
  assert.equal(out.width, 2);
  assert.equal(out.height, 2);
});

test("non-multiple-of-16 input uses ceil pooling", () => {
  const backbone = Backbone.seeded(1);
  const out = backbone.run(grayImage(18, 33));
  assert.equal(out.width, Math.ceil(18 / 16));
  assert.equal(out.height, Math.ceil(33 / 16));
});

test("seeded weights are reproducible and outputs finite", () => {
  const a = Backbone.seeded(7).run(grayImage(16, 16));
  const b = Backbone.seeded(7).run(grayImage(16, 16));
  assert.deepEqual([...a.data], [...b.data]);
  for (const v of a.data) {
    assert.ok(Number.isFinite(v));
    assert.ok(v >= 0); // outputs sit behind max-pooled ReLU
  }
});

test("weight file round trip reproduces outputs", () => {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "bb-"));
  const backbone = Backbone.seeded(3);
  const file = path.join(dir, "weights.dvck");
  backbone.saveWeights(file);
  const loaded = Backbone.fromFile(file);
  const img = grayImage(16, 16, 0.25);
  assert.deepEqual([...loaded.run(img).data], [...backbone.run(img).data]);
});

test("missing layer tensors rejected", () => {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "bb-"));
  const file = path.join(dir, "bad.dvck");
  const { writeNamedTensors } = require("../src/tensors");
  writeNamedTensors(file, new Map([["conv1_1_w", { dims: [3, 3, 3, 64], data: new Float32Array(3 * 3 * 3 * 64) }]]));
  assert.throws(() => Backbone.fromFile(file), /missing tensors/);
});
