/** Zonotope token codec, mirroring the inference core.
 *
 * A zonotope with up to K_g generators becomes 1 + K_g tokens in
 * R^{n_y + 1}: the center, then each generator (zero-padded), each carrying
 * the normalized time coordinate step / t_max in the last slot.
 */

export interface ZonotopeJson {
  center: number[];
  generators: number[][]; // list of generator vectors
}

export interface TokenizerConfig {
  n_y: number;
  k_g: number;
  t_max: number;
  n_o: number;
}

export function tokenizeOne(
  z: ZonotopeJson, step: number, cfg: TokenizerConfig,
): Float64Array {
  if (z.center.length !== cfg.n_y) {
    throw new Error(`zonotope of dimension ${z.center.length}, tokenizer expects ${cfg.n_y}`);
  }
  if (z.generators.length > cfg.k_g) {
    throw new Error(`zonotope has ${z.generators.length} generators > k_g=${cfg.k_g}`);
  }
  const width = cfg.n_y + 1;
  const t = step / cfg.t_max;
  const out = new Float64Array((1 + cfg.k_g) * width);
  for (let j = 0; j < cfg.n_y; j++) out[j] = z.center[j];
  out[cfg.n_y] = t;
  for (let g = 0; g < cfg.k_g; g++) {
    const o = (1 + g) * width;
    if (g < z.generators.length) {
      for (let j = 0; j < cfg.n_y; j++) out[o + j] = z.generators[g][j];
    }
    out[o + cfg.n_y] = t;
  }
  return out;
}

export function tokenizeContext(
  zonos: ZonotopeJson[], steps: number[], cfg: TokenizerConfig,
): Float64Array {
  if (zonos.length !== cfg.n_o || steps.length !== cfg.n_o) {
    throw new Error(`context of ${zonos.length} sets, expected n_o=${cfg.n_o}`);
  }
  const width = cfg.n_y + 1;
  const blockLen = (1 + cfg.k_g) * width;
  const out = new Float64Array(cfg.n_o * blockLen);
  for (let i = 0; i < cfg.n_o; i++) {
    out.set(tokenizeOne(zonos[i], steps[i], cfg), i * blockLen);
  }
  return out;
}

/** Target tokens for the loss: the vector parts only, (1 + K_g) x n_y. */
export function targetTokens(z: ZonotopeJson, cfg: TokenizerConfig): Float64Array {
  const out = new Float64Array((1 + cfg.k_g) * cfg.n_y);
  for (let j = 0; j < cfg.n_y; j++) out[j] = z.center[j];
  for (let g = 0; g < z.generators.length; g++) {
    for (let j = 0; j < cfg.n_y; j++) out[(1 + g) * cfg.n_y + j] = z.generators[g][j];
  }
  return out;
}

export function detokenize(block: Float64Array, cfg: TokenizerConfig): ZonotopeJson {
  const nY = cfg.n_y;
  const center = Array.from(block.subarray(0, nY));
  const generators: number[][] = [];
  for (let g = 0; g < cfg.k_g; g++) {
    generators.push(Array.from(block.subarray((1 + g) * nY, (1 + g) * nY + nY)));
  }
  return { center, generators };
}
