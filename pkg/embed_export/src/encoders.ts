/**
 * Text encoder backends.
 *
 * Real encoders run through @huggingface/transformers with locally cached
 * weights; when the package or the weights are missing, the error says
 * exactly what to install and where to point the cache. A deterministic
 * stub backend exists so the export pipeline and its file format can be
 * exercised completely offline.
 */

export interface TextEncoder {
  readonly name: string;
  readonly dim: number;
  embed(prompt: string): Promise<Float32Array>;
}

interface EncoderSpec {
  dim: number;
  modelId: string;
  pooling: "cls" | "mean";
}

// native output widths per encoder choice
export const ENCODER_SPECS: Record<string, EncoderSpec> = {
  "clip-vit-b32": { dim: 512, modelId: "Xenova/clip-vit-base-patch32", pooling: "cls" },
  "sentence-t5": { dim: 768, modelId: "Xenova/sentence-t5-base", pooling: "mean" },
  // next-token LM: one vector per token, mean-pooled into a sentence vector
  "mistral-mean-pooled": { dim: 4096, modelId: "mistralai/Mistral-7B-v0.1", pooling: "mean" },
};

export function encoderNames(): string[] {
  return Object.keys(ENCODER_SPECS);
}

export function nativeDim(encoder: string): number {
  const spec = ENCODER_SPECS[encoder];
  if (!spec) {
    throw new Error(`unknown encoder ${JSON.stringify(encoder)}; choose from ${encoderNames().join(", ")}`);
  }
  return spec.dim;
}

// ---------------------------------------------------------------------------
// deterministic stub: FNV-1a keyed splitmix64 -> Box-Muller normals, L2 norm

function fnv1a64(bytes: Uint8Array): bigint {
  let h = 0xcbf29ce484222325n;
  for (const b of bytes) {
    h ^= BigInt(b);
    h = (h * 0x100000001b3n) & 0xffffffffffffffffn;
  }
  return h;
}

function splitmix64(state: bigint): [bigint, bigint] {
  state = (state + 0x9e3779b97f4a7c15n) & 0xffffffffffffffffn;
  let z = state;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & 0xffffffffffffffffn;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & 0xffffffffffffffffn;
  return [z ^ (z >> 31n), state];
}

function unitUniform(x: bigint): number {
  // top 53 bits -> (0, 1)
  return (Number(x >> 11n) + 0.5) / 2 ** 53;
}

// the web TextEncoder; our interface above shadows the global name
const Utf8Encoder = globalThis.TextEncoder;

export class StubEncoder implements TextEncoder {
  readonly name: string;
  readonly dim: number;

  constructor(encoder: string) {
    this.name = `${encoder} (stub)`;
    this.dim = nativeDim(encoder);
  }

  async embed(prompt: string): Promise<Float32Array> {
    let state = fnv1a64(new Utf8Encoder().encode(prompt));
    const out = new Float32Array(this.dim);
    for (let i = 0; i < this.dim; i += 2) {
      let a: bigint, b: bigint;
      [a, state] = splitmix64(state);
      [b, state] = splitmix64(state);
      const u1 = unitUniform(a);
      const u2 = unitUniform(b);
      const r = Math.sqrt(-2 * Math.log(u1));
      out[i] = r * Math.cos(2 * Math.PI * u2);
      if (i + 1 < this.dim) out[i + 1] = r * Math.sin(2 * Math.PI * u2);
    }
    let norm = 0;
    for (const v of out) norm += v * v;
    norm = Math.sqrt(norm);
    for (let i = 0; i < this.dim; i++) out[i] /= norm;
    return out;
  }
}

// ---------------------------------------------------------------------------
// real encoders via transformers.js

class TransformersEncoder implements TextEncoder {
  readonly name: string;
  readonly dim: number;
  private extractor: any;
  private spec: EncoderSpec;

  private constructor(name: string, spec: EncoderSpec, extractor: any) {
    this.name = name;
    this.dim = spec.dim;
    this.spec = spec;
    this.extractor = extractor;
  }

  static async load(encoder: string): Promise<TransformersEncoder> {
    const spec = ENCODER_SPECS[encoder];
    if (!spec) {
      throw new Error(`unknown encoder ${JSON.stringify(encoder)}; choose from ${encoderNames().join(", ")}`);
    }
    let transformers: any;
    try {
      // optional dependency: resolved only at run time
      const moduleName = "@huggingface/transformers";
      transformers = await import(moduleName);
    } catch {
      throw new Error(
        `encoder ${encoder} needs the optional dependency @huggingface/transformers; ` +
          `run: npm install @huggingface/transformers (weights are read from the local ` +
          `HF cache; set HF_HOME or TRANSFORMERS_CACHE to point at it)`,
      );
    }
    transformers.env.allowRemoteModels = process.env.COPT_ALLOW_DOWNLOAD === "1";
    let extractor: any;
    try {
      extractor = await transformers.pipeline("feature-extraction", spec.modelId);
    } catch (err) {
      throw new Error(
        `could not load local weights for ${encoder} (${spec.modelId}): ${String(err)}. ` +
          `Place the model in the local HF cache or set COPT_ALLOW_DOWNLOAD=1.`,
      );
    }
    return new TransformersEncoder(encoder, spec, extractor);
  }

  async embed(prompt: string): Promise<Float32Array> {
    const pooled = await this.extractor(prompt, {
      pooling: this.spec.pooling === "mean" ? "mean" : "cls",
      normalize: false,
    });
    const data = Float32Array.from(pooled.data as Iterable<number>);
    if (data.length !== this.dim) {
      throw new Error(
        `${this.name} returned dim ${data.length}, expected native width ${this.dim}; aborting`,
      );
    }
    return data;
  }
}

export async function loadEncoder(encoder: string, stub = false): Promise<TextEncoder> {
  if (stub) return new StubEncoder(encoder);
  return TransformersEncoder.load(encoder);
}
