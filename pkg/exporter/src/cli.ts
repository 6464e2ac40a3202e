#!/usr/bin/env node
/**
 * lorashield-export: build concept-embedding bundles, or serve the
 * embedding protocol.
 *
 *   export --concept nude --k 5 --out nude.st --offline words.json
 *   export --concept nude --k 5 --out nude.st --llm http://llm.internal/complete
 *   serve --port 8750 --offline words.json
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { writeBundle } from "./bundle.js";
import { DEFAULT_ENCODER_ID, makeEncoder } from "./encoder.js";
import { expandConcept, loadWordlist } from "./expand.js";
import { createServer } from "./serve.js";

await yargs(hideBin(process.argv))
  .command(
    "export",
    "expand a concept and write its embedding bundle",
    (y) =>
      y
        .option("concept", { type: "string", demandOption: true })
        .option("k", { type: "number", default: 5 })
        .option("encoder", { type: "string", default: DEFAULT_ENCODER_ID })
        .option("out", { type: "string", demandOption: true })
        .option("llm", { type: "string", describe: "LLM completion endpoint URL" })
        .option("offline", { type: "string", describe: "offline wordlist JSON path" })
        .option("template", { type: "string", describe: "phrase template, {} = phrase" })
        .check((argv) => {
          if (argv.k < 1) throw new Error("--k must be >= 1");
          if (!argv.llm && !argv.offline) throw new Error("need --llm or --offline");
          return true;
        }),
    async (argv) => {
      const encoder = makeEncoder(argv.encoder);
      const expansion = await expandConcept({
        concept: argv.concept,
        k: argv.k,
        llmEndpoint: argv.llm,
        wordlistPath: argv.offline,
      });
      await writeBundle(expansion, encoder, { concept: argv.concept, template: argv.template }, argv.out);
      const absent = expansion.antonyms.filter((a) => a === null).length;
      console.log(
        `wrote ${argv.out}: k=${expansion.synonyms.length}, ` +
          `${absent} antonym slot(s) on neutral fallback, encoder ${encoder.id}`,
      );
    },
  )
  .command(
    "serve",
    "serve the /v1/expand + /v1/embed embedding protocol",
    (y) =>
      y
        .option("port", { type: "number", default: 8750 })
        .option("encoder", { type: "string", default: DEFAULT_ENCODER_ID })
        .option("llm", { type: "string" })
        .option("offline", { type: "string" }),
    (argv) => {
      const app = createServer({
        encoder: makeEncoder(argv.encoder),
        wordlist: argv.offline ? loadWordlist(argv.offline) : undefined,
        llmEndpoint: argv.llm,
      });
      app.listen(argv.port, () => {
        console.log(`embedding service listening on :${argv.port}`);
      });
    },
  )
  .demandCommand(1)
  .strict()
  .help()
  .parseAsync();
