/** Binary PPM (P6, maxval 255) decoding and bilinear resizing. */
import * as fs from "fs";

export interface RgbImage {
  width: number;
  height: number;
  /** RGB interleaved, length width*height*3, values in [0, 1] */
  data: Float32Array;
}

export function readPpm(path: string): RgbImage {
  const blob = fs.readFileSync(path);
  let pos = 0;

  function token(): string {
    // skip whitespace and comment lines
    for (;;) {
      while (pos < blob.length && isSpace(blob[pos])) pos++;
      if (pos < blob.length && blob[pos] === 0x23 /* # */) {
        while (pos < blob.length && blob[pos] !== 0x0a) pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < blob.length && !isSpace(blob[pos])) pos++;
    return blob.toString("ascii", start, pos);
  }

  if (token() !== "P6") {
    throw new Error(`${path}: not a binary PPM (P6) image`);
  }
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  if (!(width > 0 && height > 0)) {
    throw new Error(`${path}: bad dimensions`);
  }
  if (maxval !== 255) {
    throw new Error(`${path}: only maxval 255 is supported`);
  }
  pos += 1; // single whitespace byte after the header
  const n = width * height * 3;
  if (blob.length - pos < n) {
    throw new Error(`${path}: truncated pixel data`);
  }
  const data = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    data[i] = blob[pos + i] / 255.0;
  }
  return { width, height, data };
}

export function writePpm(path: string, image: RgbImage): void {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  const body = Buffer.alloc(image.width * image.height * 3);
  for (let i = 0; i < body.length; i++) {
    body[i] = Math.max(0, Math.min(255, Math.round(image.data[i] * 255)));
  }
  fs.writeFileSync(path, Buffer.concat([header, body]));
}

/** Half-pixel-centered bilinear resize. */
export function resizeBilinear(image: RgbImage, outW: number, outH: number): RgbImage {
  const { width: w, height: h, data } = image;
  if (outW === w && outH === h) {
    return { width: w, height: h, data: data.slice() };
  }
  const out = new Float32Array(outW * outH * 3);
  for (let oy = 0; oy < outH; oy++) {
    let sy = ((oy + 0.5) * h) / outH - 0.5;
    sy = Math.min(Math.max(sy, 0), h - 1);
    const y0 = Math.floor(sy);
    const y1 = Math.min(y0 + 1, h - 1);
    const fy = sy - y0;
    for (let ox = 0; ox < outW; ox++) {
      let sx = ((ox + 0.5) * w) / outW - 0.5;
      sx = Math.min(Math.max(sx, 0), w - 1);
      const x0 = Math.floor(sx);
      const x1 = Math.min(x0 + 1, w - 1);
      const fx = sx - x0;
      for (let c = 0; c < 3; c++) {
        const tl = data[(y0 * w + x0) * 3 + c];
        const tr = data[(y0 * w + x1) * 3 + c];
        const bl = data[(y1 * w + x0) * 3 + c];
        const br = data[(y1 * w + x1) * 3 + c];
        const top = tl * (1 - fx) + tr * fx;
        const bot = bl * (1 - fx) + br * fx;
        out[(oy * outW + ox) * 3 + c] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return { width: outW, height: outH, data: out };
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}
