/** The export pipeline: resize, run the backbone, write .dvfm + annotation JSON.
 *
 * Raw activations are stored; per-location normalization is the consumer's
 * job, keeping a single canonical place for that contract.
 */
import * as fs from "fs";
import * as path from "path";

import {
  Box,
  SceneAnnotation,
  SourceAnnotation,
  readSourceAnnotations,
  writeCanonicalJson,
} from "./annotations";
import { Backbone } from "./backbone";
import { readPpm, resizeBilinear } from "./image";
import { writeDvfm } from "./tensors";

export interface ExportJob {
  imageDir: string;
  annotationFile: string;
  outDir: string;
  /** resize rule: object short edge lands on this many pixels (224 = canonical) */
  targetShortEdge?: number;
  /** named-tensor weight file; omitted -> deterministic seeded weights */
  weightsFile?: string;
  seed?: number;
}

export interface ExportResult {
  exported: string[];
  skipped: { image: string; reason: string }[];
}

export function runExport(job: ExportJob, log: (msg: string) => void = console.error): ExportResult {
  const target = job.targetShortEdge ?? 224;
  const backbone = job.weightsFile
    ? Backbone.fromFile(job.weightsFile)
    : Backbone.seeded(job.seed ?? 0);
  const annotations = readSourceAnnotations(job.annotationFile);
  fs.mkdirSync(job.outDir, { recursive: true });

  const result: ExportResult = { exported: [], skipped: [] };
  const names = [...annotations.keys()].sort();
  for (const imageName of names) {
    const source = annotations.get(imageName)!;
    if (!source.object_box || source.object_box[2] <= 0 || source.object_box[3] <= 0) {
      result.skipped.push({ image: imageName, reason: "no usable object box" });
      log(`warning: ${imageName}: no usable object box; skipped`);
      continue;
    }
    let scene;
    try {
      scene = exportOne(job.imageDir, imageName, source, target, backbone);
    } catch (err) {
      const reason = err instanceof Error ? err.message : String(err);
      result.skipped.push({ image: imageName, reason });
      log(`warning: ${imageName}: ${reason}; skipped`);
      continue;
    }
    const base = path.join(job.outDir, scene.annotation.image_id);
    writeDvfm(base + ".dvfm", scene.grid);
    writeCanonicalJson(base + ".json", scene.annotation);
    result.exported.push(scene.annotation.image_id);
  }
  return result;
}

export function exportOne(
  imageDir: string,
  imageName: string,
  source: SourceAnnotation,
  targetShortEdge: number,
  backbone: Backbone,
) {
  const image = readPpm(path.join(imageDir, imageName));
  const shortEdge = Math.min(source.object_box[2], source.object_box[3]);
  const zoom = targetShortEdge / shortEdge;
  const outW = Math.max(1, Math.round(image.width * zoom));
  const outH = Math.max(1, Math.round(image.height * zoom));
  const resized = resizeBilinear(image, outW, outH);
  const zoomX = outW / image.width;
  const zoomY = outH / image.height;

  const grid = backbone.run(resized);
  const annotation = transformAnnotation(imageName, source, zoomX, zoomY, outW, outH);
  return { grid, annotation };
}

function transformAnnotation(
  imageName: string,
  source: SourceAnnotation,
  zoomX: number,
  zoomY: number,
  outW: number,
  outH: number,
): SceneAnnotation {
  const tbox = (b: Box): Box => [b[0] * zoomX, b[1] * zoomY, b[2] * zoomX, b[3] * zoomY];
  const objectBox = tbox(source.object_box);
  return {
    image_id: imageName.replace(/\.[^.]+$/, ""),
    object_box: objectBox,
    scale_ratio: Math.min(objectBox[2], objectBox[3]) / Math.max(outW, outH),
    parts: (source.parts ?? []).map((p) => ({
      part_id: p.part_id,
      center: [p.center[0] * zoomX, p.center[1] * zoomY],
      box: tbox(p.box),
    })),
    occlusion: { level: 0, ratio: 0.0, boxes: [] },
  };
}
