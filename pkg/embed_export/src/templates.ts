/** Template data file parsing: first line "domain: <name>", one attribute
 * per line after that. Same on-disk format the training side ships. */

import { readFileSync } from "node:fs";

import type { DomainTemplateSet } from "./formatters.js";

export function parseTemplateText(text: string, label = "<string>"): DomainTemplateSet {
  const lines = text.split(/\r?\n/);
  if (!lines.length || !lines[0].startsWith("domain: ")) {
    throw new Error(`${label}: first line must be 'domain: <name>'`);
  }
  const domainName = lines[0].slice("domain: ".length).trim();
  const attributes = lines
    .slice(1)
    .map((l) => l.trim())
    .filter((l) => l.length > 0);
  if (!domainName) throw new Error(`${label}: empty domain name`);
  if (!attributes.length) throw new Error(`${label}: no attributes listed`);
  if (new Set(attributes).size !== attributes.length) {
    throw new Error(`${label}: duplicate attributes`);
  }
  return { domainName, attributes };
}

export function loadTemplateFile(path: string): DomainTemplateSet {
  return parseTemplateText(readFileSync(path, "utf-8"), path);
}

/** Class list files hold one class name per line, id = line number. */
export function loadClassList(path: string): string[] {
  const names = readFileSync(path, "utf-8")
    .split(/\r?\n/)
    .map((l) => l.trim())
    .filter((l) => l.length > 0 && !l.startsWith("#"));
  if (!names.length) throw new Error(`${path}: no class names`);
  if (new Set(names).size !== names.length) {
    throw new Error(`${path}: duplicate class names`);
  }
  return names;
}
