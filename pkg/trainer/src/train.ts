/** Training loop: Adam on the token MSE with early stopping.
 *
 * The loss is the uniform mean squared error over the 1 + K_g predicted
 * tokens against the target zonotope tokens.  A held-out validation split
 * drives early stopping: training halts once the best validation loss has
 * not improved for `patience` epochs, and the best parameters are restored.
 * Training aborts with an error if the loss leaves the finite range.
 */

import { Arch } from "./arch.js";
import { TrainingSample } from "./data.js";
import { Grads, forward, lossAndBackward, zeroGrads } from "./model.js";
import { Rng } from "./rand.js";
import { Params } from "./weights.js";

export interface TrainConfig {
  learningRate: number;
  epochs: number;
  patience: number;
  batchSize: number;
  validationSplit: number;
  seed: number;
  logEvery?: number;
}

export const DEFAULT_TRAIN: Omit<TrainConfig, "seed"> = {
  learningRate: 3e-4,
  epochs: 1500,
  patience: 150,
  batchSize: 64,
  validationSplit: 0.1,
  logEvery: 25,
};

export interface EpochLog {
  epoch: number;
  trainLoss: number;
  valLoss: number;
}

export interface TrainResult {
  params: Params;
  log: EpochLog[];
  stoppedEarly: boolean;
  bestEpoch: number;
}

class Adam {
  private m: Map<string, Float64Array> = new Map();
  private v: Map<string, Float64Array> = new Map();
  private t = 0;

  constructor(
    private readonly lr: number,
    private readonly beta1 = 0.9,
    private readonly beta2 = 0.999,
    private readonly eps = 1e-8,
  ) {}

  step(params: Params, grads: Grads, scale: number): void {
    this.t += 1;
    const c1 = 1 - Math.pow(this.beta1, this.t);
    const c2 = 1 - Math.pow(this.beta2, this.t);
    for (const [name, p] of params) {
      let m = this.m.get(name);
      let v = this.v.get(name);
      if (!m) {
        m = new Float64Array(p.length);
        v = new Float64Array(p.length);
        this.m.set(name, m);
        this.v.set(name, v!);
      }
      const g = grads.get(name)!;
      for (let i = 0; i < p.length; i++) {
        const gi = g[i] * scale;
        m[i] = this.beta1 * m[i] + (1 - this.beta1) * gi;
        v![i] = this.beta2 * v![i] + (1 - this.beta2) * gi * gi;
        p[i] -= (this.lr * (m[i] / c1)) / (Math.sqrt(v![i] / c2) + this.eps);
      }
    }
  }
}

export function evalMeanLoss(params: Params, arch: Arch, samples: TrainingSample[]): number {
  let acc = 0;
  const block = 1 + arch.k_g;
  for (const s of samples) {
    const { out } = forward(params, arch, s.contextTokens);
    let l = 0;
    for (let i = 0; i < out.length; i++) {
      const diff = out[i] - s.target[i];
      l += diff * diff;
    }
    acc += l / block;
  }
  return acc / samples.length;
}

export function train(
  params: Params,
  arch: Arch,
  samples: TrainingSample[],
  cfg: TrainConfig,
  onLog?: (entry: EpochLog) => void,
): TrainResult {
  if (samples.length === 0) throw new Error("empty training set");
  const rng = new Rng(cfg.seed);
  const shuffled = rng.shuffle([...samples]);
  const nVal = Math.min(
    samples.length - 1,
    Math.max(cfg.validationSplit > 0 ? 1 : 0, Math.floor(samples.length * cfg.validationSplit)),
  );
  const val = shuffled.slice(0, nVal);
  const trainSet = shuffled.slice(nVal);
  const monitor = val.length > 0 ? val : trainSet;

  const adam = new Adam(cfg.learningRate);
  const log: EpochLog[] = [];
  let best = Infinity;
  let bestEpoch = 0;
  let bestParams: Params = cloneParams(params);
  let sinceBest = 0;
  let stoppedEarly = false;

  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    rng.shuffle(trainSet);
    let epochLoss = 0;
    for (let start = 0; start < trainSet.length; start += cfg.batchSize) {
      const batch = trainSet.slice(start, start + cfg.batchSize);
      const grads = zeroGrads(params);
      let batchLoss = 0;
      for (const s of batch) {
        const { cache } = forward(params, arch, s.contextTokens, true);
        batchLoss += lossAndBackward(params, arch, cache!, s.target, grads);
      }
      if (!Number.isFinite(batchLoss)) {
        throw new Error(`training diverged: non-finite loss at epoch ${epoch}`);
      }
      adam.step(params, grads, 1.0 / batch.length);
      epochLoss += batchLoss;
    }
    const entry: EpochLog = {
      epoch,
      trainLoss: epochLoss / Math.max(1, trainSet.length),
      valLoss: evalMeanLoss(params, arch, monitor),
    };
    log.push(entry);
    if (onLog && (cfg.logEvery === undefined || epoch % (cfg.logEvery || 1) === 0)) onLog(entry);
    if (entry.valLoss < best - 1e-12) {
      best = entry.valLoss;
      bestEpoch = epoch;
      bestParams = cloneParams(params);
      sinceBest = 0;
    } else {
      sinceBest += 1;
      if (sinceBest > cfg.patience) {
        stoppedEarly = true;
        break;
      }
    }
  }
  return { params: bestParams, log, stoppedEarly, bestEpoch };
}

export function cloneParams(params: Params): Params {
  const out: Params = new Map();
  for (const [name, t] of params) out.set(name, new Float64Array(t));
  return out;
}
