/**
 * Deterministic byte-level causal language model.
 *
 * Next-byte logits come from hash features of the last few bytes (orders
 * 1..K), softmaxed over the 256-byte vocabulary. Everything is a pure
 * function of (model seed, preceding bytes), so repeated requests are
 * identical, every log-probability is negative, and the chain rule holds up
 * to float summation. No weights are loaded from disk: the model exists so
 * protocol conformance and end-to-end selection runs can be exercised on
 * hardware that cannot host a real checkpoint.
 *
 * Tokenization is bytes of UTF-8. The continuation boundary uses the suffix
 * rule, tokenize(context + continuation) minus tokenize(context), which is
 * exact for byte tokens (nothing can merge across the boundary).
 */

export interface ModelConfig {
  name: string;
  /** highest n-gram order mixed into the logits */
  order: number;
  /** hash seed; different seeds give different models */
  seed: number;
  /** logit scale; larger means peakier distributions */
  scale: number;
  /** compute logits in float32 ("f32") or float64 ("f64") */
  dtype: "f32" | "f64";
}

export interface TokenScores {
  tokens: string[];
  logprobs: number[];
  total: number;
}

const VOCAB = 256;
// greedy decoding is restricted to bytes that are always valid one-byte
// UTF-8, so generated text never contains broken sequences
const PRINTABLE: number[] = [];
for (let b = 32; b <= 126; b++) PRINTABLE.push(b);
PRINTABLE.push(10);

function mix32(h: number, x: number): number {
  // xorshift-multiply step; stays in uint32 land via >>> 0
  h = (h ^ x) >>> 0;
  h = Math.imul(h, 0x9e3779b1) >>> 0;
  h = (h ^ (h >>> 15)) >>> 0;
  return h;
}

export function tokenizeBytes(text: string): number[] {
  return Array.from(Buffer.from(text, "utf8"));
}

export function tokenLabel(byte: number): string {
  if (byte >= 32 && byte <= 126) return String.fromCharCode(byte);
  return `\\x${byte.toString(16).padStart(2, "0")}`;
}

export class HashLm {
  readonly config: ModelConfig;

  constructor(config: ModelConfig) {
    this.config = config;
  }

  /** Hash of the order-k suffix ending just before the position to score. */
  private contextHashes(prev: number[]): number[] {
    const hashes: number[] = [];
    for (let k = 1; k <= this.config.order; k++) {
      let h = mix32(this.config.seed, k);
      const lo = Math.max(0, prev.length - k);
      for (let i = lo; i < prev.length; i++) h = mix32(h, prev[i]);
      hashes.push(h);
    }
    return hashes;
  }

  /** Per-byte log-probabilities over the whole vocabulary given `prev`. */
  logDistribution(prev: number[]): Float64Array {
    const { order, scale, dtype } = this.config;
    const hashes = this.contextHashes(prev);
    const logits = new Float64Array(VOCAB);
    for (let b = 0; b < VOCAB; b++) {
      let z = 0;
      for (let k = 0; k < order; k++) {
        const h = mix32(hashes[k], b + 1);
        // map uint32 to [-1, 1]
        z += (h / 0x7fffffff) - 1;
      }
      z *= scale;
      logits[b] = dtype === "f32" ? Math.fround(z) : z;
    }
    let max = -Infinity;
    for (let b = 0; b < VOCAB; b++) if (logits[b] > max) max = logits[b];
    let denom = 0;
    for (let b = 0; b < VOCAB; b++) denom += Math.exp(logits[b] - max);
    const logDenom = max + Math.log(denom);
    const out = new Float64Array(VOCAB);
    for (let b = 0; b < VOCAB; b++) out[b] = logits[b] - logDenom;
    return out;
  }

  /**
   * Teacher-forced log-probabilities of exactly the continuation bytes.
   * The caller is responsible for length limits.
   */
  scoreContinuation(context: string, continuation: string): TokenScores {
    const ctxBytes = tokenizeBytes(context);
    const allBytes = tokenizeBytes(context + continuation);
    const contBytes = allBytes.slice(ctxBytes.length);
    const tokens: string[] = [];
    const logprobs: number[] = [];
    const prev = ctxBytes.slice();
    let total = 0;
    for (const byte of contBytes) {
      const dist = this.logDistribution(prev);
      const lp = Math.min(dist[byte], 0);
      tokens.push(tokenLabel(byte));
      logprobs.push(lp);
      total += lp;
      prev.push(byte);
    }
    return { tokens, logprobs, total };
  }

  /** Greedy decoding: argmax over printable bytes, lowest byte on ties. */
  generate(prompt: string, maxTokens: number, stop: string[]): string {
    const prev = tokenizeBytes(prompt);
    const emitted: number[] = [];
    for (let step = 0; step < maxTokens; step++) {
      const dist = this.logDistribution(prev);
      let best = PRINTABLE[0];
      for (const b of PRINTABLE) {
        if (dist[b] > dist[best]) best = b;
      }
      emitted.push(best);
      prev.push(best);
      const text = Buffer.from(emitted).toString("utf8");
      for (const s of stop) {
        if (s.length > 0) {
          const at = text.indexOf(s);
          if (at !== -1) return text.slice(0, at);
        }
      }
    }
    return Buffer.from(emitted).toString("utf8");
  }
}

const REGISTRY: Record<string, Omit<ModelConfig, "dtype">> = {
  "hashlm-v1": { name: "hashlm-v1", order: 3, seed: 0x5eed0001, scale: 2.0 },
  "hashlm-v1-smooth": { name: "hashlm-v1-smooth", order: 2, seed: 0x5eed0002, scale: 0.5 },
};

export function availableModels(): string[] {
  return Object.keys(REGISTRY);
}

export function loadModel(name: string, dtype: "f32" | "f64" = "f64"): HashLm {
  const base = REGISTRY[name];
  if (!base) {
    throw new Error(
      `unknown model ${JSON.stringify(name)}; available: ${availableModels().join(", ")}`,
    );
  }
  return new HashLm({ ...base, dtype });
}
