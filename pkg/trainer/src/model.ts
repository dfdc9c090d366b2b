/** Decoder-only transformer: forward pass and hand-written backward pass.
 *
 * Mirrors the inference core exactly: linear token embedding, learned
 * absolute positional embeddings over prompt + query block, pre-layer-norm
 * blocks with causal self-attention and a gelu(tanh) feed-forward, a final
 * layer norm, and an output head mapping the last 1 + K_g hidden states to
 * R^{n_y}.  Everything computes in float64; matrices are row-major
 * Float64Arrays with explicit dimensions.
 */

import { Arch } from "./arch.js";
import { Params } from "./weights.js";

const SQRT_2_OVER_PI = Math.sqrt(2.0 / Math.PI);
const GELU_C = 0.044715;

function matmul(a: Float64Array, b: Float64Array, n: number, k: number, m: number): Float64Array {
  const out = new Float64Array(n * m);
  for (let i = 0; i < n; i++) {
    for (let p = 0; p < k; p++) {
      const av = a[i * k + p];
      if (av === 0) continue;
      const bo = p * m;
      const oo = i * m;
      for (let j = 0; j < m; j++) out[oo + j] += av * b[bo + j];
    }
  }
  return out;
}

/** out = a^T b with a (k, n), b (k, m) -> (n, m); used for weight gradients. */
function matmulTA(a: Float64Array, b: Float64Array, k: number, n: number, m: number): Float64Array {
  const out = new Float64Array(n * m);
  for (let p = 0; p < k; p++) {
    for (let i = 0; i < n; i++) {
      const av = a[p * n + i];
      if (av === 0) continue;
      const bo = p * m;
      const oo = i * m;
      for (let j = 0; j < m; j++) out[oo + j] += av * b[bo + j];
    }
  }
  return out;
}

/** out = a b^T with a (n, k), b (m, k) -> (n, m). */
function matmulTB(a: Float64Array, b: Float64Array, n: number, k: number, m: number): Float64Array {
  const out = new Float64Array(n * m);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < m; j++) {
      let acc = 0;
      const ao = i * k;
      const bo = j * k;
      for (let p = 0; p < k; p++) acc += a[ao + p] * b[bo + p];
      out[i * m + j] = acc;
    }
  }
  return out;
}

function addBiasRows(x: Float64Array, bias: Float64Array, rows: number, cols: number): void {
  for (let i = 0; i < rows; i++) {
    for (let j = 0; j < cols; j++) x[i * cols + j] += bias[j];
  }
}

function gelu(x: number): number {
  return 0.5 * x * (1.0 + Math.tanh(SQRT_2_OVER_PI * (x + GELU_C * x * x * x)));
}

function geluGrad(x: number): number {
  const u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
  const t = Math.tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
}

interface LnCache {
  xhat: Float64Array;
  invStd: Float64Array;
}

function layerNorm(
  x: Float64Array, gain: Float64Array, bias: Float64Array,
  rows: number, cols: number, eps: number,
): { out: Float64Array; cache: LnCache } {
  const out = new Float64Array(rows * cols);
  const xhat = new Float64Array(rows * cols);
  const invStd = new Float64Array(rows);
  for (let i = 0; i < rows; i++) {
    const o = i * cols;
    let mu = 0;
    for (let j = 0; j < cols; j++) mu += x[o + j];
    mu /= cols;
    let varAcc = 0;
    for (let j = 0; j < cols; j++) {
      const d = x[o + j] - mu;
      varAcc += d * d;
    }
    const inv = 1.0 / Math.sqrt(varAcc / cols + eps);
    invStd[i] = inv;
    for (let j = 0; j < cols; j++) {
      const xh = (x[o + j] - mu) * inv;
      xhat[o + j] = xh;
      out[o + j] = xh * gain[j] + bias[j];
    }
  }
  return { out, cache: { xhat, invStd } };
}

function layerNormBackward(
  dy: Float64Array, cache: LnCache, gain: Float64Array,
  rows: number, cols: number,
  dGain: Float64Array, dBias: Float64Array,
): Float64Array {
  const dx = new Float64Array(rows * cols);
  for (let i = 0; i < rows; i++) {
    const o = i * cols;
    let sumDxhat = 0;
    let sumDxhatXhat = 0;
    for (let j = 0; j < cols; j++) {
      const g = dy[o + j];
      const dxh = g * gain[j];
      dGain[j] += g * cache.xhat[o + j];
      dBias[j] += g;
      sumDxhat += dxh;
      sumDxhatXhat += dxh * cache.xhat[o + j];
    }
    const inv = cache.invStd[i];
    for (let j = 0; j < cols; j++) {
      const dxh = dy[o + j] * gain[j];
      dx[o + j] = inv * (dxh - sumDxhat / cols - cache.xhat[o + j] * (sumDxhatXhat / cols));
    }
  }
  return dx;
}

interface LayerCache {
  hIn: Float64Array;
  ln1: LnCache;
  u1: Float64Array;
  q: Float64Array;
  k: Float64Array;
  v: Float64Array;
  att: Float64Array; // (H, L, L) softmax weights
  ctx: Float64Array;
  hMid: Float64Array;
  ln2: LnCache;
  u2: Float64Array;
  f1: Float64Array;
  f2: Float64Array;
}

export interface ForwardCache {
  tokens: Float64Array;
  L: number;
  lp: number;
  layers: LayerCache[];
  hFinalIn: Float64Array;
  lnF: LnCache;
  hf: Float64Array;
  out: Float64Array;
}

/** Full-sequence forward; returns the (1 + K_g, n_y) output block. */
export function forward(params: Params, arch: Arch, tokens: Float64Array, withCache = false):
  { out: Float64Array; cache?: ForwardCache } {
  const d = arch.d_model;
  const H = arch.n_heads;
  const dh = d / H;
  const block = 1 + arch.k_g;
  const lp = arch.n_o * block;
  const nIn = arch.n_y + 1;
  if (tokens.length !== lp * nIn) {
    throw new Error(`prompt of ${tokens.length / nIn} tokens, expected ${lp}`);
  }
  const L = lp + block;
  const eps = arch.layer_norm_eps;
  const P = (name: string) => params.get(name)!;

  let h = new Float64Array(L * d);
  const emb = matmul(tokens, P("embed.weight"), lp, nIn, d);
  addBiasRows(emb, P("embed.bias"), lp, d);
  h.set(emb, 0);
  h.set(P("query.weight"), lp * d);
  const pos = P("pos.weight");
  for (let i = 0; i < L * d; i++) h[i] += pos[i];

  const layers: LayerCache[] = [];
  for (let li = 0; li < arch.n_layers; li++) {
    const pre = `layers.${li}`;
    const hIn = h;
    const { out: u1, cache: ln1 } = layerNorm(hIn, P(`${pre}.ln1.gain`), P(`${pre}.ln1.bias`), L, d, eps);
    const q = matmul(u1, P(`${pre}.attn.wq`), L, d, d);
    addBiasRows(q, P(`${pre}.attn.bq`), L, d);
    const k = matmul(u1, P(`${pre}.attn.wk`), L, d, d);
    addBiasRows(k, P(`${pre}.attn.bk`), L, d);
    const v = matmul(u1, P(`${pre}.attn.wv`), L, d, d);
    addBiasRows(v, P(`${pre}.attn.bv`), L, d);

    const att = new Float64Array(H * L * L);
    const ctx = new Float64Array(L * d);
    const scale = 1.0 / Math.sqrt(dh);
    for (let hd = 0; hd < H; hd++) {
      const off = hd * dh;
      for (let i = 0; i < L; i++) {
        // causal mask: row i attends to columns 0..i
        let maxv = -Infinity;
        const scores = new Float64Array(i + 1);
        for (let j = 0; j <= i; j++) {
          let acc = 0;
          for (let p = 0; p < dh; p++) acc += q[i * d + off + p] * k[j * d + off + p];
          const s = acc * scale;
          scores[j] = s;
          if (s > maxv) maxv = s;
        }
        let z = 0;
        for (let j = 0; j <= i; j++) {
          const e = Math.exp(scores[j] - maxv);
          scores[j] = e;
          z += e;
        }
        const ao = hd * L * L + i * L;
        for (let j = 0; j <= i; j++) {
          const w = scores[j] / z;
          att[ao + j] = w;
          for (let p = 0; p < dh; p++) ctx[i * d + off + p] += w * v[j * d + off + p];
        }
      }
    }
    const proj = matmul(ctx, P(`${pre}.attn.wo`), L, d, d);
    addBiasRows(proj, P(`${pre}.attn.bo`), L, d);
    const hMid = new Float64Array(L * d);
    for (let i = 0; i < L * d; i++) hMid[i] = hIn[i] + proj[i];

    const { out: u2, cache: ln2 } = layerNorm(hMid, P(`${pre}.ln2.gain`), P(`${pre}.ln2.bias`), L, d, eps);
    const f1 = matmul(u2, P(`${pre}.ff.w1`), L, d, arch.d_ff);
    addBiasRows(f1, P(`${pre}.ff.b1`), L, arch.d_ff);
    const f2 = new Float64Array(L * arch.d_ff);
    for (let i = 0; i < f2.length; i++) f2[i] = gelu(f1[i]);
    const ff = matmul(f2, P(`${pre}.ff.w2`), L, arch.d_ff, d);
    addBiasRows(ff, P(`${pre}.ff.b2`), L, d);
    const hOut = new Float64Array(L * d);
    for (let i = 0; i < L * d; i++) hOut[i] = hMid[i] + ff[i];

    layers.push({ hIn, ln1, u1, q, k, v, att, ctx, hMid, ln2, u2, f1, f2 });
    h = hOut;
  }

  const { out: hf, cache: lnF } = layerNorm(h, P("final_ln.gain"), P("final_ln.bias"), L, d, eps);
  const tail = hf.subarray((L - block) * d);
  const out = matmul(tail, P("head.weight"), block, d, arch.n_y);
  addBiasRows(out, P("head.bias"), block, arch.n_y);

  if (!withCache) return { out };
  return {
    out,
    cache: { tokens, L, lp, layers, hFinalIn: h, lnF, hf, out },
  };
}

export type Grads = Map<string, Float64Array>;

export function zeroGrads(params: Params): Grads {
  const g: Grads = new Map();
  for (const [name, t] of params) g.set(name, new Float64Array(t.length));
  return g;
}

/** Token-averaged squared-error loss; accumulates parameter gradients. */
export function lossAndBackward(
  params: Params, arch: Arch, cache: ForwardCache, target: Float64Array, grads: Grads,
): number {
  const d = arch.d_model;
  const H = arch.n_heads;
  const dh = d / H;
  const block = 1 + arch.k_g;
  const L = cache.L;
  const eps = arch.layer_norm_eps;
  const nY = arch.n_y;
  const P = (name: string) => params.get(name)!;
  const G = (name: string) => grads.get(name)!;

  // loss = (1 / block) * sum_j || out_j - target_j ||_2^2
  let loss = 0;
  const dOut = new Float64Array(block * nY);
  for (let i = 0; i < block * nY; i++) {
    const diff = cache.out[i] - target[i];
    loss += diff * diff;
    dOut[i] = (2.0 / block) * diff;
  }
  loss /= block;

  // head
  const tail = cache.hf.subarray((L - block) * d);
  const dWh = matmulTA(tail, dOut, block, d, nY);
  const gWh = G("head.weight");
  for (let i = 0; i < gWh.length; i++) gWh[i] += dWh[i];
  const gBh = G("head.bias");
  for (let i = 0; i < block; i++) {
    for (let j = 0; j < nY; j++) gBh[j] += dOut[i * nY + j];
  }
  const dHf = new Float64Array(L * d);
  const dTail = matmulTB(dOut, P("head.weight"), block, nY, d);
  dHf.set(dTail, (L - block) * d);

  // final layer norm
  let dH = layerNormBackward(dHf, cache.lnF, P("final_ln.gain"), L, d, G("final_ln.gain"), G("final_ln.bias"));

  for (let li = arch.n_layers - 1; li >= 0; li--) {
    const pre = `layers.${li}`;
    const lc = cache.layers[li];

    // feed-forward block: hOut = hMid + gelu(u2 W1 + b1) W2 + b2
    const dF2 = matmulTB(dH, P(`${pre}.ff.w2`), L, d, arch.d_ff);
    const dW2 = matmulTA(lc.f2, dH, L, arch.d_ff, d);
    accumulate(G(`${pre}.ff.w2`), dW2);
    sumRows(G(`${pre}.ff.b2`), dH, L, d);
    const dF1 = new Float64Array(L * arch.d_ff);
    for (let i = 0; i < dF1.length; i++) dF1[i] = dF2[i] * geluGrad(lc.f1[i]);
    const dW1 = matmulTA(lc.u2, dF1, L, d, arch.d_ff);
    accumulate(G(`${pre}.ff.w1`), dW1);
    sumRows(G(`${pre}.ff.b1`), dF1, L, arch.d_ff);
    const dU2 = matmulTB(dF1, P(`${pre}.ff.w1`), L, arch.d_ff, d);
    const dHmid = layerNormBackward(dU2, lc.ln2, P(`${pre}.ln2.gain`), L, d, G(`${pre}.ln2.gain`), G(`${pre}.ln2.bias`));
    for (let i = 0; i < L * d; i++) dHmid[i] += dH[i]; // residual

    // attention block: hMid = hIn + (ctx Wo + bo)
    const dProj = dHmid;
    const dWo = matmulTA(lc.ctx, dProj, L, d, d);
    accumulate(G(`${pre}.attn.wo`), dWo);
    sumRows(G(`${pre}.attn.bo`), dProj, L, d);
    const dCtx = matmulTB(dProj, P(`${pre}.attn.wo`), L, d, d);

    const dQ = new Float64Array(L * d);
    const dK = new Float64Array(L * d);
    const dV = new Float64Array(L * d);
    const scale = 1.0 / Math.sqrt(dh);
    for (let hd = 0; hd < H; hd++) {
      const off = hd * dh;
      for (let i = 0; i < L; i++) {
        const ao = hd * L * L + i * L;
        // dA then softmax backward on row i (support 0..i)
        let dot = 0;
        const dA = new Float64Array(i + 1);
        for (let j = 0; j <= i; j++) {
          let acc = 0;
          for (let p = 0; p < dh; p++) acc += dCtx[i * d + off + p] * lc.v[j * d + off + p];
          dA[j] = acc;
          dot += acc * lc.att[ao + j];
        }
        for (let j = 0; j <= i; j++) {
          const w = lc.att[ao + j];
          const dS = w * (dA[j] - dot) * scale;
          for (let p = 0; p < dh; p++) {
            dQ[i * d + off + p] += dS * lc.k[j * d + off + p];
            dK[j * d + off + p] += dS * lc.q[i * d + off + p];
            dV[j * d + off + p] += lc.att[ao + j] * dCtx[i * d + off + p];
          }
        }
      }
    }
    accumulate(G(`${pre}.attn.wq`), matmulTA(lc.u1, dQ, L, d, d));
    sumRows(G(`${pre}.attn.bq`), dQ, L, d);
    accumulate(G(`${pre}.attn.wk`), matmulTA(lc.u1, dK, L, d, d));
    sumRows(G(`${pre}.attn.bk`), dK, L, d);
    accumulate(G(`${pre}.attn.wv`), matmulTA(lc.u1, dV, L, d, d));
    sumRows(G(`${pre}.attn.bv`), dV, L, d);
    const dU1 = matmulTB(dQ, P(`${pre}.attn.wq`), L, d, d);
    const dU1k = matmulTB(dK, P(`${pre}.attn.wk`), L, d, d);
    const dU1v = matmulTB(dV, P(`${pre}.attn.wv`), L, d, d);
    for (let i = 0; i < L * d; i++) dU1[i] += dU1k[i] + dU1v[i];
    const dHin = layerNormBackward(dU1, lc.ln1, P(`${pre}.ln1.gain`), L, d, G(`${pre}.ln1.gain`), G(`${pre}.ln1.bias`));
    for (let i = 0; i < L * d; i++) dHin[i] += dHmid[i]; // residual
    dH = dHin;
  }

  // positions, query block, embedding
  accumulate(G("pos.weight"), dH);
  const gQ = G("query.weight");
  const lp = cache.lp;
  for (let i = 0; i < block * d; i++) gQ[i] += dH[lp * d + i];
  const dEmb = dH.subarray(0, lp * d);
  const nIn = arch.n_y + 1;
  accumulate(G("embed.weight"), matmulTA(cache.tokens, dEmb, lp, nIn, d));
  sumRows(G("embed.bias"), dEmb, lp, d);
  return loss;
}

function accumulate(dst: Float64Array, src: Float64Array): void {
  for (let i = 0; i < dst.length; i++) dst[i] += src[i];
}

function sumRows(dst: Float64Array, src: Float64Array, rows: number, cols: number): void {
  for (let i = 0; i < rows; i++) {
    for (let j = 0; j < cols; j++) dst[j] += src[i * cols + j];
  }
}
