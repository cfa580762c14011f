#!/usr/bin/env node
/** CLI: dvfm-export --images DIR --annotations FILE --out DIR [options] */
import { ExportJob, runExport } from "./export";

function parseArgs(argv: string[]): ExportJob | null {
  const args = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith("--") || value === undefined) return null;
    args.set(key.slice(2), value);
  }
  const images = args.get("images");
  const annotations = args.get("annotations");
  const out = args.get("out");
  if (!images || !annotations || !out) return null;
  const job: ExportJob = {
    imageDir: images,
    annotationFile: annotations,
    outDir: out,
  };
  if (args.has("target-short-edge")) {
    job.targetShortEdge = parseInt(args.get("target-short-edge")!, 10);
  }
  if (args.has("weights")) job.weightsFile = args.get("weights");
  if (args.has("seed")) job.seed = parseInt(args.get("seed")!, 10);
  return job;
}

function main(): number {
  const job = parseArgs(process.argv.slice(2));
  if (!job) {
    console.error(
      "usage: dvfm-export --images DIR --annotations FILE --out DIR " +
        "[--target-short-edge N] [--weights FILE] [--seed N]",
    );
    return 1;
  }
  try {
    const result = runExport(job);
    console.error(
      `exported ${result.exported.length} images, skipped ${result.skipped.length}`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 2;
  }
}

process.exit(main());
