import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { AddressInfo } from "node:net";

import { describe, expect, it } from "vitest";

import { buildBundle } from "../src/bundle";
import { HashSimEncoder, makeEncoder } from "../src/encoder";
import {
  buildPrompt,
  expandOffline,
  loadWordlist,
  parseLlmReply,
} from "../src/expand";
import { readContainer, writeContainer } from "../src/safetensors";
import { createServer } from "../src/serve";

const WORDLIST = join(__dirname, "..", "fixtures", "wordlist.json");

describe("safetensors writer", () => {
  it("roundtrips tensors and metadata", () => {
    const payload = writeContainer(
      [
        { name: "a", shape: [2, 3], data: new Float32Array([1, 2, 3, 4, 5, 6]) },
        { name: "b/flag", shape: [0], data: new Float32Array(0) },
      ],
      { concept: "x", k: "1" },
    );
    expect(Number(payload.readBigUInt64LE(0)) % 8).toBe(0);
    const { tensors, metadata } = readContainer(payload);
    expect(metadata).toEqual({ concept: "x", k: "1" });
    expect(tensors.get("a")!.shape).toEqual([2, 3]);
    expect(Array.from(tensors.get("a")!.data)).toEqual([1, 2, 3, 4, 5, 6]);
    expect(tensors.get("b/flag")!.data.length).toBe(0);
  });

  it("rejects duplicate names and bad shapes", () => {
    const t = { name: "t", shape: [1], data: new Float32Array([1]) };
    expect(() => writeContainer([t, t])).toThrow(/duplicate/);
    expect(() =>
      writeContainer([{ name: "u", shape: [2], data: new Float32Array([1]) }]),
    ).toThrow(/shape product/);
  });
});

describe("hash-sim encoder", () => {
  it("produces the default 77x768 contract shape", async () => {
    const enc = new HashSimEncoder();
    const out = await enc.encode("a painting");
    expect(out.length).toBe(77 * 768);
    expect(enc.id).toBe("hash-sim-v1-77x768");
  });

  it("is deterministic across calls", async () => {
    const enc = new HashSimEncoder(8, 16);
    const a = await enc.encode("same phrase");
    const b = await enc.encode("same phrase");
    expect(Array.from(a)).toEqual(Array.from(b));
  });

  it("encodes the empty string to a finite neutral matrix", async () => {
    const enc = new HashSimEncoder(8, 16);
    const neutral = await enc.encode("");
    expect(neutral.every((v) => Number.isFinite(v))).toBe(true);
    // padding rows are position-dependent, so the matrix is not all-equal
    expect(new Set(neutral).size).toBeGreaterThan(1);
  });

  it("distinguishes different phrases", async () => {
    const enc = new HashSimEncoder(8, 16);
    const a = await enc.encode("alpha");
    const b = await enc.encode("beta");
    expect(Array.from(a)).not.toEqual(Array.from(b));
  });

  it("parses encoder ids", () => {
    expect(makeEncoder("hash-sim-v1-4x8").seqLen).toBe(4);
    expect(() => makeEncoder("clip-vit")).toThrow(/unknown encoder/);
  });
});

describe("concept expansion", () => {
  it("expands the wordlist fixture with the documented example pair", () => {
    const expansion = expandOffline(loadWordlist(WORDLIST), "modern", 5);
    expect(expansion.synonyms).toContain("contemporary");
    expect(expansion.antonyms).toContain("archaic");
  });

  it("truncates to k", () => {
    const expansion = expandOffline(loadWordlist(WORDLIST), "modern", 1);
    expect(expansion.synonyms).toHaveLength(1);
    expect(expansion.antonyms).toHaveLength(1);
  });

  it("marks all antonym slots absent for concepts without antonyms", () => {
    const expansion = expandOffline(loadWordlist(WORDLIST), "unique-style", 3);
    expect(expansion.antonyms).toEqual([null, null, null]);
  });

  it("parses LLM replies including the none token", () => {
    const reply = "SYNONYMS: gory, gruesome\nANTONYMS: none";
    const expansion = parseLlmReply(reply, 2);
    expect(expansion.synonyms).toEqual(["gory", "gruesome"]);
    expect(expansion.antonyms).toEqual([null, null]);
    expect(() => parseLlmReply("SYNONYMS: just-one\nANTONYMS: none", 2)).toThrow(
      /need 2/,
    );
    expect(buildPrompt("x", 2)).toContain("none");
  });
});

describe("bundle assembly", () => {
  it("lays out syn/ant/neutral with absent flags and metadata", async () => {
    const enc = new HashSimEncoder(4, 8);
    const expansion = expandOffline(loadWordlist(WORDLIST), "unique-style", 2);
    const payload = await buildBundle(expansion, enc, { concept: "unique-style" });
    const { tensors, metadata } = readContainer(payload);
    expect(metadata.concept).toBe("unique-style");
    expect(metadata.encoder_id).toBe("hash-sim-v1-4x8");
    expect(metadata.k).toBe("2");
    for (const name of ["syn/0", "syn/1", "ant/0", "ant/1", "neutral"]) {
      expect(tensors.get(name)!.shape).toEqual([4, 8]);
    }
    expect(tensors.get("ant/0/absent")!.shape).toEqual([0]);
    // absent antonym slots carry the neutral values
    expect(Array.from(tensors.get("ant/0")!.data)).toEqual(
      Array.from(tensors.get("neutral")!.data),
    );
  });

  it("applies phrase templates when asked", async () => {
    const enc = new HashSimEncoder(4, 8);
    const expansion = expandOffline(loadWordlist(WORDLIST), "modern", 1);
    const bare = await buildBundle(expansion, enc, { concept: "modern" });
    const wrapped = await buildBundle(expansion, enc, {
      concept: "modern",
      template: "a photo of {}",
    });
    expect(readContainer(bare).metadata.phrase_template).toBe("bare");
    expect(readContainer(wrapped).metadata.phrase_template).toBe("a photo of {}");
    expect(Buffer.compare(bare, wrapped)).not.toBe(0);
  });
});

describe("embedding service", () => {
  it("serves /v1/expand and /v1/embed", async () => {
    const app = createServer({
      encoder: new HashSimEncoder(4, 8),
      wordlist: loadWordlist(WORDLIST),
    });
    const server = app.listen(0);
    const port = (server.address() as AddressInfo).port;
    try {
      const expand = await fetch(`http://127.0.0.1:${port}/v1/expand`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ concept: "modern", k: 2 }),
      });
      expect(expand.status).toBe(200);
      const expanded = (await expand.json()) as { synonyms: string[]; antonyms: string[] };
      expect(expanded.synonyms).toHaveLength(2);
      expect(expanded.antonyms.length).toBeGreaterThan(0);

      const embed = await fetch(`http://127.0.0.1:${port}/v1/embed`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ texts: ["modern"] }),
      });
      expect(embed.status).toBe(200);
      const body = (await embed.json()) as { embeddings: number[][][]; shape: number[] };
      expect(body.shape).toEqual([4, 8]);
      expect(body.embeddings[0]).toHaveLength(4);

      const bad = await fetch(`http://127.0.0.1:${port}/v1/expand`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ concept: 5 }),
      });
      expect(bad.status).toBe(400);
    } finally {
      server.close();
    }
  });
});

describe("cross-component contract", () => {
  it("exported bundles load in the editor with declared K and shape", async () => {
    const dir = mkdtempSync(join(tmpdir(), "exporter-"));
    const out = join(dir, "modern.st");
    const enc = new HashSimEncoder(77, 768);
    const expansion = expandOffline(loadWordlist(WORDLIST), "modern", 5);
    writeFileSync(out, await buildBundle(expansion, enc, { concept: "modern" }));

    const probe = [
      "import json, sys",
      "import numpy as np",
      "from lorashield import load_concept_spec",
      "spec = load_concept_spec(sys.argv[1])",
      "print(json.dumps({",
      "    'k': spec.k,",
      "    'shape': list(spec.shape),",
      "    'neutral_finite': bool(np.isfinite(spec.neutral).all()),",
      "    'concept': spec.concept_label,",
      "}))",
    ].join("\n");
    const result = JSON.parse(
      execFileSync("python3", ["-c", probe, out], { encoding: "utf-8" }),
    );
    expect(result.k).toBe(5);
    expect(result.shape).toEqual([77, 768]);
    expect(result.neutral_finite).toBe(true);
    expect(result.concept).toBe("modern");
  }, 30000);
});
