// Minimal SVG document builder. Serialization is deterministic: attributes
// render in insertion order and numbers use JavaScript's shortest
// round-trip representation, so identical inputs yield identical bytes.

export interface SvgElement {
  tag: string;
  attrs: Record<string, string | number>;
  children: SvgElement[];
  text?: string;
}

export function el(tag: string, attrs: Record<string, string | number> = {},
                   children: SvgElement[] = [], text?: string): SvgElement {
  return { tag, attrs, children, text };
}

function escapeXml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;")
    .replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

function renderNode(node: SvgElement, indent: string): string {
  const attrs = Object.entries(node.attrs)
    .map(([k, v]) => ` ${k}="${escapeXml(String(v))}"`)
    .join("");
  const open = `${indent}<${node.tag}${attrs}`;
  if (node.children.length === 0 && node.text === undefined) {
    return `${open}/>`;
  }
  if (node.children.length === 0) {
    return `${open}>${escapeXml(node.text ?? "")}</${node.tag}>`;
  }
  const inner = node.children.map((c) => renderNode(c, indent + "  ")).join("\n");
  const text = node.text === undefined ? "" : escapeXml(node.text);
  return `${open}>\n${inner}\n${indent}${text}</${node.tag}>`;
}

export function render(root: SvgElement): string {
  return `<?xml version="1.0" encoding="UTF-8"?>\n${renderNode(root, "")}\n`;
}

export function svgRoot(width: number, height: number,
                        children: SvgElement[]): SvgElement {
  return el("svg", {
    xmlns: "http://www.w3.org/2000/svg",
    width,
    height,
    viewBox: `0 0 ${width} ${height}`,
  }, children);
}

export function points(pairs: [number, number][]): string {
  return pairs.map(([x, y]) => `${x},${y}`).join(" ");
}
