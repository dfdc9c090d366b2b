/** Weight bundle I/O: manifest.json plus weights.bin (little-endian float32,
 * row-major, concatenated in tensor-table order).  This file pair is the
 * binding contract with the inference core; export -> import -> export must be
 * byte-identical.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { Arch, numel, tensorTable, validateArch } from "./arch.js";
import { Rng } from "./rand.js";

export type Params = Map<string, Float64Array>;

export interface Bundle {
  arch: Arch;
  params: Params;
}

export function initParams(arch: Arch, seed: number, std = 0.02): Params {
  validateArch(arch);
  const rng = new Rng(seed);
  const params: Params = new Map();
  for (const spec of tensorTable(arch)) {
    const n = numel(spec.shape);
    const t = new Float64Array(n);
    if (spec.name.endsWith(".gain")) {
      t.fill(1.0);
    } else if (/\.(bias|bq|bk|bv|bo|b1|b2)$/.test(spec.name)) {
      // zero biases
    } else {
      for (let i = 0; i < n; i++) t[i] = rng.gauss() * std;
    }
    params.set(spec.name, t);
  }
  return params;
}

/** Round parameters through float32, so training state matches what ships. */
export function quantizeToF32(params: Params): void {
  for (const t of params.values()) {
    for (let i = 0; i < t.length; i++) t[i] = Math.fround(t[i]);
  }
}

export function saveBundle(bundle: Bundle, dir: string): void {
  validateArch(bundle.arch);
  fs.mkdirSync(dir, { recursive: true });
  const table = tensorTable(bundle.arch);
  const entries: { name: string; shape: number[]; offset: number }[] = [];
  let offset = 0;
  const blobs: Buffer[] = [];
  for (const spec of table) {
    const t = bundle.params.get(spec.name);
    if (t === undefined || t.length !== numel(spec.shape)) {
      throw new Error(`tensor ${spec.name} missing or mis-sized`);
    }
    const f32 = new Float32Array(t); // narrows to the storage precision
    const buf = Buffer.alloc(f32.length * 4);
    for (let i = 0; i < f32.length; i++) buf.writeFloatLE(f32[i], i * 4);
    entries.push({ name: spec.name, shape: spec.shape, offset });
    blobs.push(buf);
    offset += buf.length;
  }
  const manifest = { format_version: 1, arch: bundle.arch, tensors: entries };
  fs.writeFileSync(
    path.join(dir, "manifest.json"),
    canonicalJson(manifest, 0) + "\n",
  );
  fs.writeFileSync(path.join(dir, "weights.bin"), Buffer.concat(blobs));
}

export function loadBundle(dir: string): Bundle {
  const manifest = JSON.parse(fs.readFileSync(path.join(dir, "manifest.json"), "utf8"));
  const raw = fs.readFileSync(path.join(dir, "weights.bin"));
  const arch = manifest.arch as Arch;
  validateArch(arch);
  const params: Params = new Map();
  for (const entry of manifest.tensors) {
    const n = numel(entry.shape);
    const t = new Float64Array(n);
    for (let i = 0; i < n; i++) t[i] = raw.readFloatLE(entry.offset + i * 4);
    params.set(entry.name, t);
  }
  // every expected tensor must be present with the right size
  for (const spec of tensorTable(arch)) {
    const t = params.get(spec.name);
    if (t === undefined || t.length !== numel(spec.shape)) {
      throw new Error(`bundle is missing tensor ${spec.name}`);
    }
  }
  return { arch, params };
}

/** Stable JSON with sorted keys, matching the python pipeline's writer. */
export function canonicalJson(value: unknown, indentLevel: number): string {
  const indent = "  ";
  const pad = indent.repeat(indentLevel);
  const padIn = indent.repeat(indentLevel + 1);
  if (value === null || typeof value === "number" || typeof value === "boolean") {
    return JSON.stringify(value);
  }
  if (typeof value === "string") return JSON.stringify(value);
  if (Array.isArray(value)) {
    if (value.length === 0) return "[]";
    const items = value.map((v) => padIn + canonicalJson(v, indentLevel + 1));
    return "[\n" + items.join(",\n") + "\n" + pad + "]";
  }
  const obj = value as Record<string, unknown>;
  const keys = Object.keys(obj).sort();
  if (keys.length === 0) return "{}";
  const items = keys.map(
    (k) => padIn + JSON.stringify(k) + ": " + canonicalJson(obj[k], indentLevel + 1),
  );
  return "{\n" + items.join(",\n") + "\n" + pad + "}";
}
