/**
 * Phrase encoders producing token-sequence embedding matrices (L x n).
 *
 * The built-in "hash-sim" encoder is a deterministic stand-in for a real
 * text encoder: each token row is a pseudo-random vector seeded by the
 * token text, padded to the fixed sequence length. It needs no model
 * weights, runs anywhere, and is stable across runs and platforms; the
 * encoder id stored in bundle metadata makes the choice auditable.
 * A remote encoder speaking the /v1/embed protocol can be used instead.
 */

export interface Encoder {
  id: string;
  seqLen: number;
  hiddenSize: number;
  encode(text: string): Promise<Float32Array>; // row-major (seqLen, hiddenSize)
}

function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function tokenize(text: string): string[] {
  return text
    .toLowerCase()
    .split(/[^a-z0-9]+/)
    .filter((t) => t.length > 0);
}

export class HashSimEncoder implements Encoder {
  readonly id: string;
  constructor(
    readonly seqLen = 77,
    readonly hiddenSize = 768,
  ) {
    this.id = `hash-sim-v1-${seqLen}x${hiddenSize}`;
  }

  async encode(text: string): Promise<Float32Array> {
    const tokens = tokenize(text);
    const out = new Float32Array(this.seqLen * this.hiddenSize);
    const scale = 1.0 / Math.sqrt(this.hiddenSize);
    for (let row = 0; row < this.seqLen; row++) {
      const token = row < tokens.length ? tokens[row] : `<pad:${row}>`;
      const next = mulberry32(fnv1a(`${token}#${row}`));
      for (let col = 0; col < this.hiddenSize; col++) {
        out[row * this.hiddenSize + col] = (next() * 2 - 1) * scale;
      }
    }
    return out;
  }
}

export class RemoteEncoder implements Encoder {
  readonly id: string;
  constructor(
    readonly baseUrl: string,
    readonly seqLen: number,
    readonly hiddenSize: number,
  ) {
    this.id = `remote:${baseUrl}`;
  }

  async encode(text: string): Promise<Float32Array> {
    const resp = await fetch(`${this.baseUrl.replace(/\/$/, "")}/v1/embed`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ texts: [text] }),
    });
    if (!resp.ok) throw new Error(`embed endpoint returned ${resp.status}`);
    const body = (await resp.json()) as { embeddings: number[][][]; shape: [number, number] };
    const [L, n] = body.shape;
    if (L !== this.seqLen || n !== this.hiddenSize) {
      throw new Error(`remote shape ${L}x${n} != expected ${this.seqLen}x${this.hiddenSize}`);
    }
    const out = new Float32Array(L * n);
    body.embeddings[0].forEach((row, i) => row.forEach((v, j) => (out[i * n + j] = v)));
    return out;
  }
}

/** Parse an encoder id: "hash-sim-v1-<L>x<n>" or "remote:<url>@<L>x<n>". */
export function makeEncoder(spec: string): Encoder {
  const hash = spec.match(/^hash-sim-v1-(\d+)x(\d+)$/);
  if (hash) return new HashSimEncoder(Number(hash[1]), Number(hash[2]));
  const remote = spec.match(/^remote:(.+)@(\d+)x(\d+)$/);
  if (remote) return new RemoteEncoder(remote[1], Number(remote[2]), Number(remote[3]));
  throw new Error(
    `unknown encoder id ${spec}; use hash-sim-v1-<L>x<n> or remote:<url>@<L>x<n>`,
  );
}

export const DEFAULT_ENCODER_ID = "hash-sim-v1-77x768";
