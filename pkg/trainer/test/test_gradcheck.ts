import assert from "node:assert/strict";
import { test } from "node:test";

import { Arch } from "../src/arch.js";
import { forward, lossAndBackward, zeroGrads } from "../src/model.js";
import { Rng } from "../src/rand.js";
import { initParams } from "../src/weights.js";

const ARCH: Arch = {
  d_model: 8, n_heads: 2, n_layers: 2, d_ff: 12,
  k_g: 2, n_y: 1, n_o: 2, pos_len: 9,
  norm_placement: "pre", activation: "gelu_tanh",
  layer_norm_eps: 1e-5, version: "test",
};

function sampleLoss(params: ReturnType<typeof initParams>, tokens: Float64Array, target: Float64Array): number {
  const { out } = forward(params, ARCH, tokens);
  let l = 0;
  for (let i = 0; i < out.length; i++) {
    const d = out[i] - target[i];
    l += d * d;
  }
  return l / (1 + ARCH.k_g);
}

test("analytic gradients match central finite differences", () => {
  const rng = new Rng(123);
  const params = initParams(ARCH, 5, 0.3); // large scale exercises the nonlinearities
  const lp = ARCH.n_o * (1 + ARCH.k_g);
  const tokens = new Float64Array(lp * (ARCH.n_y + 1));
  for (let i = 0; i < tokens.length; i++) tokens[i] = rng.gauss();
  const target = new Float64Array((1 + ARCH.k_g) * ARCH.n_y);
  for (let i = 0; i < target.length; i++) target[i] = rng.gauss();

  const grads = zeroGrads(params);
  const { cache } = forward(params, ARCH, tokens, true);
  lossAndBackward(params, ARCH, cache!, target, grads);

  const h = 1e-5;
  let checked = 0;
  for (const [name, tensor] of params) {
    // a few random coordinates per tensor
    for (let trial = 0; trial < 3; trial++) {
      const idx = Math.floor(rng.next() * tensor.length);
      const orig = tensor[idx];
      tensor[idx] = orig + h;
      const up = sampleLoss(params, tokens, target);
      tensor[idx] = orig - h;
      const down = sampleLoss(params, tokens, target);
      tensor[idx] = orig;
      const numeric = (up - down) / (2 * h);
      const analytic = grads.get(name)![idx];
      const scale = Math.max(1.0, Math.abs(numeric), Math.abs(analytic));
      assert.ok(
        Math.abs(numeric - analytic) / scale < 1e-6,
        `${name}[${idx}]: analytic ${analytic} vs numeric ${numeric}`,
      );
      checked += 1;
    }
  }
  assert.ok(checked >= 60);
});

test("forward is deterministic and causal over the query block", () => {
  const rng = new Rng(9);
  const params = initParams(ARCH, 2, 0.1);
  const lp = ARCH.n_o * (1 + ARCH.k_g);
  const tokens = new Float64Array(lp * (ARCH.n_y + 1));
  for (let i = 0; i < tokens.length; i++) tokens[i] = rng.gauss();
  const a = forward(params, ARCH, tokens).out;
  const b = forward(params, ARCH, tokens).out;
  assert.deepEqual(a, b);
  // perturb one coordinate of query token 1 (a whole-row constant would be
  // swallowed by the layer norm); output token 0 must not move
  const q = params.get("query.weight")!;
  const d = ARCH.d_model;
  q[d] += 0.5;
  const c = forward(params, ARCH, tokens).out;
  for (let j = 0; j < ARCH.n_y; j++) assert.equal(c[j], a[j]);
  let moved = 0;
  for (let i = ARCH.n_y; i < c.length; i++) moved += Math.abs(c[i] - a[i]);
  assert.ok(moved > 0);
});
