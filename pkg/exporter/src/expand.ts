/**
 * Concept expansion: synonyms and antonyms for a target concept, either
 * from an offline wordlist file or by querying an LLM endpoint. Antonym
 * slots that cannot be filled are returned as null so the bundle writer
 * can flag them for the neutral fallback downstream.
 */

import { readFileSync } from "node:fs";

export const PROMPT_TEMPLATE_VERSION = "expand-prompt-v1";

export interface Expansion {
  synonyms: string[];
  antonyms: (string | null)[]; // null = absent, neutral fallback applies
  source: string;
}

export type Wordlist = Record<string, { synonyms: string[]; antonyms: string[] }>;

export function loadWordlist(path: string): Wordlist {
  return JSON.parse(readFileSync(path, "utf-8")) as Wordlist;
}

function padAntonyms(antonyms: string[], k: number): (string | null)[] {
  const out: (string | null)[] = antonyms.slice(0, k);
  while (out.length < k) out.push(null);
  return out;
}

export function expandOffline(wordlist: Wordlist, concept: string, k: number): Expansion {
  const entry = wordlist[concept.toLowerCase()];
  if (!entry) throw new Error(`wordlist has no entry for concept ${concept}`);
  if (entry.synonyms.length < k) {
    throw new Error(
      `wordlist entry for ${concept} has ${entry.synonyms.length} synonyms, need ${k}`,
    );
  }
  return {
    synonyms: entry.synonyms.slice(0, k),
    antonyms: padAntonyms(entry.antonyms, k),
    source: "offline-wordlist",
  };
}

export function buildPrompt(concept: string, k: number): string {
  return [
    `List exactly ${k} single-phrase synonyms and up to ${k} single-phrase antonyms`,
    `for the concept "${concept}".`,
    `Reply with two lines only:`,
    `SYNONYMS: <comma-separated phrases>`,
    `ANTONYMS: <comma-separated phrases, or the single token none>`,
  ].join(" ");
}

export function parseLlmReply(text: string, k: number): Expansion {
  const synLine = text.match(/SYNONYMS:\s*(.+)/i);
  const antLine = text.match(/ANTONYMS:\s*(.+)/i);
  if (!synLine) throw new Error("LLM reply has no SYNONYMS line");
  const split = (line: string) =>
    line
      .split(",")
      .map((p) => p.trim())
      .filter((p) => p.length > 0);
  const synonyms = split(synLine[1]);
  if (synonyms.length < k) {
    throw new Error(`LLM returned ${synonyms.length} synonyms, need ${k}`);
  }
  let antonyms: string[] = [];
  if (antLine && antLine[1].trim().toLowerCase() !== "none") {
    antonyms = split(antLine[1]);
  }
  return {
    synonyms: synonyms.slice(0, k),
    antonyms: padAntonyms(antonyms, k),
    source: "llm",
  };
}

export async function expandViaLlm(
  endpoint: string,
  concept: string,
  k: number,
  attempts = 3,
): Promise<Expansion> {
  const prompt = buildPrompt(concept, k);
  let lastError: unknown;
  for (let attempt = 0; attempt < attempts; attempt++) {
    try {
      const resp = await fetch(endpoint, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ prompt }),
      });
      if (!resp.ok) throw new Error(`LLM endpoint returned ${resp.status}`);
      const body = (await resp.json()) as { text?: string };
      if (typeof body.text !== "string") throw new Error("LLM response has no text field");
      return parseLlmReply(body.text, k);
    } catch (err) {
      lastError = err;
      if (attempt < attempts - 1) {
        await new Promise((r) => setTimeout(r, 250 * 2 ** attempt));
      }
    }
  }
  throw new Error(`LLM expansion failed after ${attempts} attempts: ${lastError}`);
}

/** LLM first when configured, offline wordlist as fallback, else abort. */
export async function expandConcept(opts: {
  concept: string;
  k: number;
  llmEndpoint?: string;
  wordlistPath?: string;
}): Promise<Expansion> {
  const { concept, k, llmEndpoint, wordlistPath } = opts;
  if (llmEndpoint) {
    try {
      return await expandViaLlm(llmEndpoint, concept, k);
    } catch (err) {
      if (!wordlistPath) throw err;
      console.error(`LLM expansion failed (${err}); falling back to wordlist`);
    }
  }
  if (!wordlistPath) throw new Error("no LLM endpoint and no offline wordlist given");
  return expandOffline(loadWordlist(wordlistPath), concept, k);
}
