/**
 * Prompt formatters. These must stay byte-identical to the strings the
 * training side generates, because CTEF entries are keyed by the exact
 * prompt; the shared golden fixture pins both implementations.
 */

export function formatHandcrafted(domain: string, className: string): string {
  if (!domain || !className) {
    throw new Error("formatHandcrafted: domain and class must be non-empty");
  }
  return `A ${domain} of a ${className}`;
}

export function formatLlm(className: string, attribute: string): string {
  if (!className || !attribute) {
    throw new Error("formatLlm: class and attribute must be non-empty");
  }
  return `A ${className} with ${attribute}`;
}

export type TemplateMode = "handcrafted" | "llm";

export interface DomainTemplateSet {
  domainName: string;
  attributes: string[];
}

export function classPrompts(
  templates: DomainTemplateSet,
  className: string,
  mode: TemplateMode,
): string[] {
  if (mode === "handcrafted") {
    return [formatHandcrafted(templates.domainName, className)];
  }
  return templates.attributes.map((attr) => formatLlm(className, attr));
}

/** Source domain first, then target; classes in list order, attributes in
 * file order. Matches the consumer's enumeration exactly. */
export function enumeratePrompts(
  source: DomainTemplateSet,
  target: DomainTemplateSet,
  classes: string[],
  mode: TemplateMode,
): string[] {
  const out: string[] = [];
  for (const templates of [source, target]) {
    for (const c of classes) {
      out.push(...classPrompts(templates, c, mode));
    }
  }
  return out;
}

export function goldenPromptLines(
  source: DomainTemplateSet,
  target: DomainTemplateSet,
  classes: string[],
): string[] {
  return [
    ...enumeratePrompts(source, target, classes, "handcrafted"),
    ...enumeratePrompts(source, target, classes, "llm"),
  ];
}
