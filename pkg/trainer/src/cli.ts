/** Trainer command line.
 *
 *   node dist/src/cli.js train --labels <labels.jsonl> [--labels ...]
 *        --config <trainer.json> --out <bundle-dir> [--seed <n>]
 *
 * The config names the tokenizer geometry, the architecture, and the
 * optimization settings; the result is a manifest.json/weights.bin pair
 * consumable by the inference core, plus a training_log.json.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { Arch, validateArch } from "./arch.js";
import { buildTrainingSet } from "./data.js";
import { DEFAULT_TRAIN, TrainConfig, train } from "./train.js";
import { canonicalJson, initParams, saveBundle } from "./weights.js";

interface CliConfig {
  tokenizer: { n_y: number; k_g: number; t_max: number; n_o: number };
  arch: { d_model: number; n_heads: number; n_layers: number; d_ff: number };
  train: {
    learning_rate?: number;
    epochs?: number;
    patience?: number;
    batch_size?: number;
    validation_split?: number;
    n_samples?: number;
  };
  seed: number;
}

function parseArgs(argv: string[]): Map<string, string[]> {
  const out = new Map<string, string[]>();
  let key: string | null = null;
  for (const a of argv) {
    if (a.startsWith("--")) {
      key = a.slice(2);
      if (!out.has(key)) out.set(key, []);
    } else if (key) {
      out.get(key)!.push(a);
    } else {
      throw new Error(`unexpected argument ${a}`);
    }
  }
  return out;
}

export function runTrain(argv: string[]): number {
  const args = parseArgs(argv);
  const labels = args.get("labels") ?? [];
  const configPath = args.get("config")?.[0];
  const outDir = args.get("out")?.[0];
  if (labels.length === 0 || !configPath || !outDir) {
    console.error("usage: train --labels <file> [--labels ...] --config <json> --out <dir> [--seed n]");
    return 2;
  }
  const cfg: CliConfig = JSON.parse(fs.readFileSync(configPath, "utf8"));
  const seed = args.get("seed") ? Number(args.get("seed")![0]) : cfg.seed;
  const arch: Arch = {
    ...cfg.arch,
    k_g: cfg.tokenizer.k_g,
    n_y: cfg.tokenizer.n_y,
    n_o: cfg.tokenizer.n_o,
    pos_len: (cfg.tokenizer.n_o + 1) * (1 + cfg.tokenizer.k_g),
    norm_placement: "pre",
    activation: "gelu_tanh",
    layer_norm_eps: 1e-5,
    version: "trainer-0.1.0",
  };
  validateArch(arch);
  const nSamples = cfg.train.n_samples ?? 10_000;
  const samples = buildTrainingSet(labels, cfg.tokenizer, nSamples, seed);
  console.log(`training on ${samples.length} windows from ${labels.length} label file(s)`);
  const trainCfg: TrainConfig = {
    learningRate: cfg.train.learning_rate ?? DEFAULT_TRAIN.learningRate,
    epochs: cfg.train.epochs ?? DEFAULT_TRAIN.epochs,
    patience: cfg.train.patience ?? DEFAULT_TRAIN.patience,
    batchSize: cfg.train.batch_size ?? DEFAULT_TRAIN.batchSize,
    validationSplit: cfg.train.validation_split ?? DEFAULT_TRAIN.validationSplit,
    seed,
    logEvery: DEFAULT_TRAIN.logEvery,
  };
  const params = initParams(arch, seed);
  const result = train(params, arch, samples, trainCfg, (e) =>
    console.log(`epoch ${e.epoch}: train ${e.trainLoss.toExponential(3)} val ${e.valLoss.toExponential(3)}`),
  );
  saveBundle({ arch, params: result.params }, outDir);
  fs.writeFileSync(
    path.join(outDir, "training_log.json"),
    canonicalJson(
      {
        stopped_early: result.stoppedEarly,
        best_epoch: result.bestEpoch,
        epochs: result.log.map((e) => ({ epoch: e.epoch, train_loss: e.trainLoss, val_loss: e.valLoss })),
        config: { ...trainCfg },
      },
      0,
    ) + "\n",
  );
  console.log(`wrote ${outDir}/manifest.json, weights.bin, training_log.json`);
  return 0;
}

function main(): number {
  const [, , cmd, ...rest] = process.argv;
  if (cmd === "train") return runTrain(rest);
  console.error("usage: cli.js train ...");
  return 2;
}

process.exit(main());
