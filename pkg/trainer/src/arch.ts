/** Architecture manifest and the canonical tensor table.
 *
 * The tensor names, shapes and their order define the weights.bin layout and
 * must stay in lockstep with the inference core that consumes the bundle.
 * Linear layers are stored as (in, out) and applied as x @ W + b.
 */

export interface Arch {
  d_model: number;
  n_heads: number;
  n_layers: number;
  d_ff: number;
  k_g: number;
  n_y: number;
  n_o: number;
  pos_len: number;
  norm_placement: string;
  activation: string;
  layer_norm_eps: number;
  version: string;
}

export interface TensorSpec {
  name: string;
  shape: number[];
}

export function tensorTable(arch: Arch): TensorSpec[] {
  const d = arch.d_model;
  const dff = arch.d_ff;
  const table: TensorSpec[] = [
    { name: "embed.weight", shape: [arch.n_y + 1, d] },
    { name: "embed.bias", shape: [d] },
    { name: "pos.weight", shape: [arch.pos_len, d] },
    { name: "query.weight", shape: [1 + arch.k_g, d] },
  ];
  for (let i = 0; i < arch.n_layers; i++) {
    const pre = `layers.${i}`;
    table.push(
      { name: `${pre}.ln1.gain`, shape: [d] },
      { name: `${pre}.ln1.bias`, shape: [d] },
      { name: `${pre}.attn.wq`, shape: [d, d] },
      { name: `${pre}.attn.bq`, shape: [d] },
      { name: `${pre}.attn.wk`, shape: [d, d] },
      { name: `${pre}.attn.bk`, shape: [d] },
      { name: `${pre}.attn.wv`, shape: [d, d] },
      { name: `${pre}.attn.bv`, shape: [d] },
      { name: `${pre}.attn.wo`, shape: [d, d] },
      { name: `${pre}.attn.bo`, shape: [d] },
      { name: `${pre}.ln2.gain`, shape: [d] },
      { name: `${pre}.ln2.bias`, shape: [d] },
      { name: `${pre}.ff.w1`, shape: [d, dff] },
      { name: `${pre}.ff.b1`, shape: [dff] },
      { name: `${pre}.ff.w2`, shape: [dff, d] },
      { name: `${pre}.ff.b2`, shape: [d] },
    );
  }
  table.push(
    { name: "final_ln.gain", shape: [d] },
    { name: "final_ln.bias", shape: [d] },
    { name: "head.weight", shape: [d, arch.n_y] },
    { name: "head.bias", shape: [arch.n_y] },
  );
  return table;
}

export function validateArch(arch: Arch): void {
  if (arch.norm_placement !== "pre" || arch.activation !== "gelu_tanh") {
    throw new Error(`unsupported architecture tags ${arch.norm_placement}/${arch.activation}`);
  }
  if (arch.d_model % arch.n_heads !== 0) {
    throw new Error("d_model must be divisible by n_heads");
  }
  if (arch.pos_len !== (arch.n_o + 1) * (1 + arch.k_g)) {
    throw new Error("pos_len inconsistent with n_o and k_g");
  }
  if (arch.k_g < 1 || arch.k_g % arch.n_y !== 0) {
    throw new Error("k_g must be a positive multiple of n_y");
  }
}

export function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}
