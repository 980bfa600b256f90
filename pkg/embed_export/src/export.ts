/** The export job: class list + two domain template files -> one CTEF table
 * with an embedding for every formatted prompt. */

import { writeFileSync } from "node:fs";

import { encodeCtef, type CtefEntry } from "./ctef.js";
import { enumeratePrompts, type TemplateMode } from "./formatters.js";
import { loadEncoder, nativeDim } from "./encoders.js";
import { loadClassList, loadTemplateFile } from "./templates.js";

export interface ExportJob {
  encoder: string;
  classesPath: string;
  sourceTemplatePath: string;
  targetTemplatePath: string;
  mode: TemplateMode;
  outPath: string;
  normalize?: boolean; // off by default: the consumer averages raw vectors
  stub?: boolean;
}

export interface ExportReport {
  outPath: string;
  dim: number;
  promptCount: number;
  encoderName: string;
}

export async function runExport(job: ExportJob): Promise<ExportReport> {
  const classes = loadClassList(job.classesPath);
  const source = loadTemplateFile(job.sourceTemplatePath);
  const target = loadTemplateFile(job.targetTemplatePath);
  const prompts = [...new Set(enumeratePrompts(source, target, classes, job.mode))];

  const encoder = await loadEncoder(job.encoder, job.stub ?? false);
  const dim = nativeDim(job.encoder);

  const entries: CtefEntry[] = [];
  for (const prompt of prompts) {
    const vector = await encoder.embed(prompt);
    if (vector.length !== dim) {
      throw new Error(`dim ${vector.length} from ${encoder.name} overflows header dim ${dim}`);
    }
    if (job.normalize) {
      let norm = 0;
      for (const v of vector) norm += v * v;
      norm = Math.sqrt(norm) || 1;
      for (let i = 0; i < vector.length; i++) vector[i] /= norm;
    }
    entries.push({ name: prompt, vector });
  }

  writeFileSync(job.outPath, encodeCtef(dim, entries));
  return {
    outPath: job.outPath,
    dim,
    promptCount: entries.length,
    encoderName: encoder.name,
  };
}
