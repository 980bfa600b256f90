#!/usr/bin/env node
/**
 * copt-embed-export export --encoder clip-vit-b32 --classes classes.txt \
 *   --templates synthetic.txt real.txt --mode llm --out clip.ctef
 *
 * Flags: --normalize (L2-normalize vectors before writing), --stub
 * (deterministic placeholder embeddings at the encoder's native width, for
 * offline pipeline testing).
 */

import { encoderNames } from "./encoders.js";
import { runExport } from "./export.js";
import type { TemplateMode } from "./formatters.js";

const USAGE = `usage: copt-embed-export export --encoder <${encoderNames().join("|")}>
         --classes <file> --templates <source> <target>
         --mode <llm|handcrafted> --out <file.ctef> [--normalize] [--stub]`;

function fail(msg: string): never {
  console.error(`error: ${msg}\n${USAGE}`);
  process.exit(2);
}

export async function main(argv: string[]): Promise<number> {
  if (argv[0] !== "export") fail(`unknown subcommand ${JSON.stringify(argv[0] ?? "")}`);
  const args = argv.slice(1);
  let encoder = "";
  let classes = "";
  let templates: string[] = [];
  let mode: TemplateMode | "" = "";
  let out = "";
  let normalize = false;
  let stub = false;

  for (let i = 0; i < args.length; i++) {
    const a = args[i];
    const next = () => {
      if (i + 1 >= args.length) fail(`${a} needs a value`);
      return args[++i];
    };
    switch (a) {
      case "--encoder":
        encoder = next();
        break;
      case "--classes":
        classes = next();
        break;
      case "--templates":
        templates = [next(), next()];
        break;
      case "--mode": {
        const m = next();
        if (m !== "llm" && m !== "handcrafted") fail(`--mode must be llm|handcrafted, got ${m}`);
        mode = m;
        break;
      }
      case "--out":
        out = next();
        break;
      case "--normalize":
        normalize = true;
        break;
      case "--stub":
        stub = true;
        break;
      default:
        fail(`unknown flag ${a}`);
    }
  }
  if (!encoder || !classes || templates.length !== 2 || !mode || !out) {
    fail("missing required flags");
  }

  try {
    const report = await runExport({
      encoder,
      classesPath: classes,
      sourceTemplatePath: templates[0],
      targetTemplatePath: templates[1],
      mode,
      outPath: out,
      normalize,
      stub,
    });
    console.log(
      `wrote ${report.promptCount} embeddings (dim ${report.dim}) from ${report.encoderName} to ${report.outPath}`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
    return 1;
  }
}

const invokedDirectly = process.argv[1] && import.meta.url.endsWith(
  process.argv[1].split("/").pop() ?? "",
);
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
