/**
 * Bundle assembly: encode the expanded phrases and lay them out in the
 * container convention the editor consumes (syn/<i>, ant/<i>, neutral,
 * zero-length ant/<i>/absent flags, metadata concept/encoder_id/k).
 */

import { writeFileSync } from "node:fs";

import { Encoder } from "./encoder.js";
import { Expansion, PROMPT_TEMPLATE_VERSION } from "./expand.js";
import { TensorEntry, writeContainer } from "./safetensors.js";

export interface BundleOptions {
  concept: string;
  template?: string; // e.g. "a photo of {}", applied around each phrase
}

function applyTemplate(phrase: string, template?: string): string {
  if (!template) return phrase;
  return template.includes("{}") ? template.replace("{}", phrase) : `${template} ${phrase}`;
}

export async function buildBundle(
  expansion: Expansion,
  encoder: Encoder,
  options: BundleOptions,
): Promise<Buffer> {
  const shape = [encoder.seqLen, encoder.hiddenSize];
  const tensors: TensorEntry[] = [];
  const neutral = await encoder.encode("");

  for (let i = 0; i < expansion.synonyms.length; i++) {
    const phrase = applyTemplate(expansion.synonyms[i], options.template);
    tensors.push({ name: `syn/${i}`, shape, data: await encoder.encode(phrase) });
  }
  for (let i = 0; i < expansion.antonyms.length; i++) {
    const antonym = expansion.antonyms[i];
    if (antonym === null) {
      tensors.push({ name: `ant/${i}`, shape, data: neutral });
      tensors.push({ name: `ant/${i}/absent`, shape: [0], data: new Float32Array(0) });
    } else {
      const phrase = applyTemplate(antonym, options.template);
      tensors.push({ name: `ant/${i}`, shape, data: await encoder.encode(phrase) });
    }
  }
  tensors.push({ name: "neutral", shape, data: neutral });

  const metadata: Record<string, string> = {
    concept: options.concept,
    encoder_id: encoder.id,
    k: String(expansion.synonyms.length),
    expansion_source: expansion.source,
    prompt_template_version: PROMPT_TEMPLATE_VERSION,
    phrase_template: options.template ?? "bare",
  };
  return writeContainer(tensors, metadata);
}

export async function writeBundle(
  expansion: Expansion,
  encoder: Encoder,
  options: BundleOptions,
  outPath: string,
): Promise<void> {
  writeFileSync(outPath, await buildBundle(expansion, encoder, options));
}
