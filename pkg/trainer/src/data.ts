/** Training set assembly from tightened label files.
 *
 * Each line of a labels.jsonl file holds one augmentation run (the initial
 * condition was resampled upstream when the labels were generated): a
 * step-indexed sequence of zonotopes with at most K_g generators.  A training
 * sample is a sliding window of n_o consecutive sets as context and the next
 * set as target.  Windows are pooled across runs, shuffled deterministically,
 * and capped at n_samples.
 */

import * as fs from "node:fs";

import { Rng } from "./rand.js";
import { TokenizerConfig, ZonotopeJson, targetTokens, tokenizeContext } from "./tokenizer.js";

export interface LabelRun {
  run: number;
  steps: number[];
  sets: ZonotopeJson[];
}

export interface TrainingSample {
  contextTokens: Float64Array; // n_o (1 + K_g) tokens in R^{n_y+1}
  target: Float64Array; // (1 + K_g) x n_y
  steps: number[];
}

export function readLabelRuns(path: string): LabelRun[] {
  const runs: LabelRun[] = [];
  const text = fs.readFileSync(path, "utf8");
  for (const line of text.split("\n")) {
    if (!line.trim()) continue;
    const obj = JSON.parse(line);
    if (!Array.isArray(obj.steps) || !Array.isArray(obj.sets) || obj.steps.length !== obj.sets.length) {
      throw new Error(`malformed label record in ${path}`);
    }
    runs.push({ run: obj.run, steps: obj.steps, sets: obj.sets });
  }
  if (runs.length === 0) throw new Error(`no label runs found in ${path}`);
  return runs;
}

export function buildTrainingSet(
  labelFiles: string[],
  cfg: TokenizerConfig,
  nSamples: number,
  seed: number,
): TrainingSample[] {
  const samples: TrainingSample[] = [];
  for (const file of labelFiles) {
    for (const run of readLabelRuns(file)) {
      for (let i = 0; i + cfg.n_o < run.steps.length; i++) {
        const ctx = run.sets.slice(i, i + cfg.n_o);
        const steps = run.steps.slice(i, i + cfg.n_o);
        samples.push({
          contextTokens: tokenizeContext(ctx, steps, cfg),
          target: targetTokens(run.sets[i + cfg.n_o], cfg),
          steps,
        });
      }
    }
  }
  if (samples.length === 0) throw new Error("label files yield no training windows");
  new Rng(seed).shuffle(samples);
  return samples.slice(0, nSamples);
}
