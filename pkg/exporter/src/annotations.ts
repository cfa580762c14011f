/** Annotation schema shared with the consuming pipeline.
 *
 * The export input is one JSON file mapping image file names to their object
 * box and part annotations (original pixel frame). The emitted per-scene
 * sidecar carries the same fields with coordinates in the resized frame.
 */
import * as fs from "fs";

export type Box = [number, number, number, number]; // x, y, w, h in pixels

export interface PartAnnotation {
  part_id: number;
  center: [number, number];
  box: Box;
}

export interface SourceAnnotation {
  object_box: Box;
  parts: PartAnnotation[];
}

export interface SceneAnnotation {
  image_id: string;
  object_box: Box;
  scale_ratio: number;
  parts: PartAnnotation[];
  occlusion: { level: number; ratio: number; boxes: Box[] };
}

export function readSourceAnnotations(path: string): Map<string, SourceAnnotation> {
  const raw = JSON.parse(fs.readFileSync(path, "utf-8"));
  const out = new Map<string, SourceAnnotation>();
  for (const [imageName, entry] of Object.entries(raw)) {
    out.set(imageName, entry as SourceAnnotation);
  }
  return out;
}

/** Canonical JSON: sorted keys, two-space indent, trailing newline. */
export function writeCanonicalJson(path: string, value: unknown): void {
  fs.writeFileSync(path, canonicalJson(value) + "\n");
}

export function canonicalJson(value: unknown, indent = ""): string {
  const pad = indent + "  ";
  if (Array.isArray(value)) {
    if (value.length === 0) return "[]";
    const items = value.map((v) => pad + canonicalJson(v, pad));
    return "[\n" + items.join(",\n") + "\n" + indent + "]";
  }
  if (value !== null && typeof value === "object") {
    const keys = Object.keys(value as object).sort();
    if (keys.length === 0) return "{}";
    const items = keys.map(
      (k) =>
        pad +
        JSON.stringify(k) +
        ": " +
        canonicalJson((value as Record<string, unknown>)[k], pad),
    );
    return "{\n" + items.join(",\n") + "\n" + indent + "}";
  }
  return JSON.stringify(value);
}
