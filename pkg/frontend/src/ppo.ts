/**
 * Compact PPO for the remote micro-grid environment.
 *
 * Continuous Gaussian policy with a two-hidden-layer (32 units, tanh) MLP
 * for the mean, a state-independent trainable log-std, and a matching
 * value network; clipped surrogate objective with GAE(lambda) advantages.
 * Sized for smoke runs that demonstrate learning over a random agent, not
 * for full-scale training.
 *
 * Network weights live in raw tf.Variables initialized from a seeded JS
 * RNG, and rollout sampling happens in plain JS with the same RNG family,
 * so runs are reproducible end to end; tensors are only used where
 * gradients are needed.  Actions are sampled from the unclipped Gaussian
 * and clipped into the rate boxes only at the environment boundary (the
 * shield projects them anyway).
 */

import * as tf from "@tensorflow/tfjs";

export interface PPOConfig {
  obsDim: number;
  actionDim: number;
  actionLow: number[];
  actionHigh: number[];
  hidden?: number;
  gamma?: number;
  lam?: number;
  clipRatio?: number;
  learningRate?: number;
  entropyCoef?: number;
  valueCoef?: number;
  epochs?: number;
  minibatch?: number;
  seed?: number;
}

export interface Transition {
  obs: number[];
  action: number[]; // unclipped sample, the policy's own coordinates
  logProb: number;
  reward: number;
  value: number;
  done: boolean;
}

/** Deterministic 32-bit RNG (mulberry32) plus a Box-Muller normal. */
export class SeededRng {
  private state: number;
  private spare: number | null = null;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  next(): number {
    let t = (this.state += 0x6d2b79f5);
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  uniform(lo: number, hi: number): number {
    return lo + (hi - lo) * this.next();
  }

  normal(): number {
    if (this.spare !== null) {
      const v = this.spare;
      this.spare = null;
      return v;
    }
    let u = 0;
    let v = 0;
    while (u === 0) u = this.next();
    while (v === 0) v = this.next();
    const mag = Math.sqrt(-2.0 * Math.log(u));
    this.spare = mag * Math.sin(2.0 * Math.PI * v);
    return mag * Math.cos(2.0 * Math.PI * v);
  }

  /** Fisher-Yates shuffle of 0..n-1. */
  permutation(n: number): number[] {
    const idx = Array.from({ length: n }, (_, i) => i);
    for (let i = n - 1; i > 0; i--) {
      const j = Math.floor(this.next() * (i + 1));
      [idx[i], idx[j]] = [idx[j], idx[i]];
    }
    return idx;
  }
}

/** Online per-dimension observation standardization (Welford). */
export class RunningNorm {
  private count = 1e-4;
  private mean: number[];
  private m2: number[];

  constructor(readonly dim: number) {
    this.mean = new Array(dim).fill(0);
    this.m2 = new Array(dim).fill(1e-4);
  }

  update(x: readonly number[]): void {
    this.count += 1;
    for (let i = 0; i < this.dim; i++) {
      const d = x[i] - this.mean[i];
      this.mean[i] += d / this.count;
      this.m2[i] += d * (x[i] - this.mean[i]);
    }
  }

  normalize(x: readonly number[]): number[] {
    const out = new Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      const sd = Math.sqrt(this.m2[i] / this.count + 1e-8);
      out[i] = Math.min(10, Math.max(-10, (x[i] - this.mean[i]) / sd));
    }
    return out;
  }
}

const LOG_2PI = Math.log(2 * Math.PI);

/** Two tanh hidden layers, linear head; weights as raw seeded variables. */
class Mlp {
  readonly vars: tf.Variable[] = [];
  private weights: tf.Variable[] = [];
  private biases: tf.Variable[] = [];

  constructor(dims: number[], rng: SeededRng) {
    for (let l = 0; l + 1 < dims.length; l++) {
      const [nIn, nOut] = [dims[l], dims[l + 1]];
      const limit = Math.sqrt(6 / (nIn + nOut)); // Glorot uniform
      const data = new Float32Array(nIn * nOut);
      for (let i = 0; i < data.length; i++) data[i] = rng.uniform(-limit, limit);
      const w = tf.variable(tf.tensor2d(data, [nIn, nOut]));
      const b = tf.variable(tf.zeros([nOut]));
      this.weights.push(w);
      this.biases.push(b);
      this.vars.push(w, b);
    }
  }

  apply(x: tf.Tensor2D): tf.Tensor2D {
    let h = x;
    const last = this.weights.length - 1;
    for (let l = 0; l <= last; l++) {
      const z = h.matMul(this.weights[l]).add(this.biases[l]) as tf.Tensor2D;
      h = l < last ? (tf.tanh(z) as tf.Tensor2D) : z;
    }
    return h;
  }

  predictRow(x: readonly number[]): number[] {
    return tf.tidy(() => Array.from(this.apply(tf.tensor2d([x as number[]])).dataSync()));
  }

  dispose(): void {
    for (const v of this.vars) v.dispose();
  }
}

export class PPOAgent {
  readonly cfg: Required<PPOConfig>;
  readonly norm: RunningNorm;
  private policy: Mlp;
  private value: Mlp;
  private logStd: tf.Variable;
  private optimizer: tf.Optimizer;
  private rng: SeededRng;

  constructor(config: PPOConfig) {
    this.cfg = {
      hidden: 32,
      gamma: 0.99,
      lam: 0.95,
      clipRatio: 0.2,
      learningRate: 3e-4,
      entropyCoef: 0.001,
      valueCoef: 0.5,
      epochs: 4,
      minibatch: 128,
      seed: 0,
      ...config,
    };
    if (
      config.actionLow.length !== config.actionDim ||
      config.actionHigh.length !== config.actionDim
    ) {
      throw new Error("action bounds must match actionDim");
    }
    this.norm = new RunningNorm(this.cfg.obsDim);
    const initRng = new SeededRng(this.cfg.seed * 7919 + 17);
    this.rng = new SeededRng(this.cfg.seed * 104729 + 389);
    const h = this.cfg.hidden;
    this.policy = new Mlp([this.cfg.obsDim, h, h, this.cfg.actionDim], initRng);
    this.value = new Mlp([this.cfg.obsDim, h, h, 1], initRng);
    this.logStd = tf.variable(tf.zeros([this.cfg.actionDim]), true, "log_std");
    this.optimizer = tf.train.adam(this.cfg.learningRate);
  }

  private logStdArray(): number[] {
    return Array.from(this.logStd.dataSync());
  }

  /** Clip a policy-space action into the environment's rate boxes. */
  clipToBounds(action: readonly number[]): number[] {
    return action.map((v, i) =>
      Math.min(this.cfg.actionHigh[i], Math.max(this.cfg.actionLow[i], v))
    );
  }

  /** Stochastic action for rollouts (policy coordinates, unclipped). */
  sample(obs: readonly number[]): {
    action: number[];
    logProb: number;
    value: number;
  } {
    const obsNorm = this.norm.normalize(obs);
    const mean = this.policy.predictRow(obsNorm);
    const value = this.value.predictRow(obsNorm)[0];
    const logStd = this.logStdArray();
    const action = new Array(this.cfg.actionDim);
    let logProb = 0;
    for (let i = 0; i < this.cfg.actionDim; i++) {
      const std = Math.exp(logStd[i]);
      const z = this.rng.normal();
      action[i] = mean[i] + std * z;
      logProb += -0.5 * (z * z + 2 * logStd[i] + LOG_2PI);
    }
    return { action, logProb, value };
  }

  /** Value estimate used to bootstrap a truncated rollout. */
  valueOf(obs: readonly number[]): number {
    return this.value.predictRow(this.norm.normalize(obs))[0];
  }

  /** Deterministic (mean) action, clipped to the rate boxes. */
  actDeterministic(obs: readonly number[]): number[] {
    return this.clipToBounds(this.policy.predictRow(this.norm.normalize(obs)));
  }

  /**
   * One PPO update over a finished rollout.  `lastValue` bootstraps the
   * value of the state after the final transition (0 when it was terminal).
   */
  update(transitions: Transition[], lastValue: number): {
    policyLoss: number;
    valueLoss: number;
  } {
    const n = transitions.length;
    const { gamma, lam, clipRatio, valueCoef, entropyCoef, epochs, minibatch } = this.cfg;

    // GAE advantages and returns, computed backward in plain JS.
    const adv = new Array<number>(n).fill(0);
    let nextAdv = 0;
    let nextValue = lastValue;
    for (let t = n - 1; t >= 0; t--) {
      const tr = transitions[t];
      const notDone = tr.done ? 0 : 1;
      const delta = tr.reward + gamma * nextValue * notDone - tr.value;
      nextAdv = delta + gamma * lam * notDone * nextAdv;
      adv[t] = nextAdv;
      nextValue = tr.value;
    }
    const returns = adv.map((a, t) => a + transitions[t].value);
    const advMean = adv.reduce((s, v) => s + v, 0) / n;
    const advStd =
      Math.sqrt(adv.reduce((s, v) => s + (v - advMean) ** 2, 0) / n) + 1e-8;
    const advNorm = adv.map((v) => (v - advMean) / advStd);

    // Normalize with the statistics the rollout was collected under, then
    // fold the new observations in for the next rollout.
    const obsNorm = transitions.map((tr) => this.norm.normalize(tr.obs));
    for (const tr of transitions) this.norm.update(tr.obs);

    const vars = [...this.policy.vars, this.logStd, ...this.value.vars];
    let lastPolicyLoss = 0;
    let lastValueLoss = 0;
    for (let epoch = 0; epoch < epochs; epoch++) {
      const order = this.rng.permutation(n);
      for (let start = 0; start < n; start += minibatch) {
        const idx = order.slice(start, start + minibatch);
        tf.tidy(() => {
          const obsT = tf.tensor2d(idx.map((i) => obsNorm[i]));
          const actT = tf.tensor2d(idx.map((i) => transitions[i].action));
          const advT = tf.tensor1d(idx.map((i) => advNorm[i]));
          const retT = tf.tensor1d(idx.map((i) => returns[i]));
          const logpOldT = tf.tensor1d(idx.map((i) => transitions[i].logProb));

          const grads = tf.variableGrads(() => {
            const mean = this.policy.apply(obsT);
            const logStdB = this.logStd.reshape([1, this.cfg.actionDim]);
            const z = actT.sub(mean).div(tf.exp(logStdB));
            const logp = z
              .square()
              .add(logStdB.mul(2))
              .add(LOG_2PI)
              .mul(-0.5)
              .sum(1);
            const ratio = tf.exp(logp.sub(logpOldT));
            const clipped = tf.clipByValue(ratio, 1 - clipRatio, 1 + clipRatio);
            const surrogate = tf
              .minimum(ratio.mul(advT), clipped.mul(advT))
              .mean()
              .neg();
            const vPred = this.value.apply(obsT).squeeze([1]);
            const vLoss = vPred.sub(retT).square().mean();
            // Gaussian entropy depends only on log-std.
            const entropy = this.logStd.add(0.5 * (LOG_2PI + 1)).sum();
            lastPolicyLoss = surrogate.dataSync()[0];
            lastValueLoss = vLoss.dataSync()[0];
            return surrogate
              .add(vLoss.mul(valueCoef))
              .sub(entropy.mul(entropyCoef)) as tf.Scalar;
          }, vars);
          this.optimizer.applyGradients(grads.grads);
          grads.value.dispose();
        });
      }
    }
    return { policyLoss: lastPolicyLoss, valueLoss: lastValueLoss };
  }

  dispose(): void {
    this.policy.dispose();
    this.value.dispose();
    this.logStd.dispose();
    this.optimizer.dispose();
  }
}
