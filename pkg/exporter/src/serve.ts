/**
 * Embedding service: implements the /v1/expand and /v1/embed protocol so
 * the editor's bundle-fetch client (or any third party) can use this
 * exporter as its encoder backend.
 */

import express from "express";

import { Encoder } from "./encoder.js";
import { Wordlist, expandOffline, expandViaLlm } from "./expand.js";

export interface ServeOptions {
  encoder: Encoder;
  wordlist?: Wordlist;
  llmEndpoint?: string;
}

export function createServer(options: ServeOptions): express.Express {
  const app = express();
  app.use(express.json({ limit: "5mb" }));

  app.post("/v1/expand", async (req, res) => {
    const { concept, k } = req.body ?? {};
    if (typeof concept !== "string" || !Number.isInteger(k) || k < 1) {
      res.status(400).json({ error: "expected {concept: string, k: int >= 1}" });
      return;
    }
    try {
      const expansion = options.llmEndpoint
        ? await expandViaLlm(options.llmEndpoint, concept, k)
        : expandOffline(options.wordlist ?? {}, concept, k);
      res.json({
        synonyms: expansion.synonyms,
        antonyms: expansion.antonyms.filter((a): a is string => a !== null),
        encoder_id: options.encoder.id,
      });
    } catch (err) {
      res.status(422).json({ error: String(err) });
    }
  });

  app.post("/v1/embed", async (req, res) => {
    const { texts } = req.body ?? {};
    if (!Array.isArray(texts) || texts.some((t) => typeof t !== "string")) {
      res.status(400).json({ error: "expected {texts: string[]}" });
      return;
    }
    const { seqLen, hiddenSize } = options.encoder;
    const embeddings: number[][][] = [];
    for (const text of texts) {
      const flat = await options.encoder.encode(text);
      const rows: number[][] = [];
      for (let i = 0; i < seqLen; i++) {
        rows.push(Array.from(flat.subarray(i * hiddenSize, (i + 1) * hiddenSize)));
      }
      embeddings.push(rows);
    }
    res.json({ embeddings, shape: [seqLen, hiddenSize] });
  });

  app.get("/healthz", (_req, res) => {
    res.json({ status: "ok", encoder: options.encoder.id });
  });

  return app;
}
