/** Shared little-endian binary containers, byte-compatible with the Python side.
 *
 * Feature file (.dvfm): magic "DVFM", version u8, W/H/C u32 LE, then W*H*C
 * float32 LE in (h*W + w)*C + c order. Named-tensor file (.dvck): magic
 * "DVCK", version u8, count u32 LE, then per tensor name length/name/rank/
 * dims/payload.
 */
import * as fs from "fs";

export const FORMAT_VERSION = 1;

export interface FeatureGrid {
  width: number;
  height: number;
  channels: number;
  /** length width*height*channels, (h*W + w)*C + c order */
  data: Float32Array;
}

export function encodeDvfm(grid: FeatureGrid): Buffer {
  const { width, height, channels, data } = grid;
  if (data.length !== width * height * channels) {
    throw new Error(
      `grid data length ${data.length} != ${width}x${height}x${channels}`,
    );
  }
  const header = Buffer.alloc(17);
  header.write("DVFM", 0, "ascii");
  header.writeUInt8(FORMAT_VERSION, 4);
  header.writeUInt32LE(width, 5);
  header.writeUInt32LE(height, 9);
  header.writeUInt32LE(channels, 13);
  const payload = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) {
    payload.writeFloatLE(data[i], i * 4);
  }
  return Buffer.concat([header, payload]);
}

export function writeDvfm(path: string, grid: FeatureGrid): void {
  fs.writeFileSync(path, encodeDvfm(grid));
}

export function readDvfm(path: string): FeatureGrid {
  const blob = fs.readFileSync(path);
  if (blob.length < 17 || blob.toString("ascii", 0, 4) !== "DVFM") {
    throw new Error(`${path}: not a .dvfm file`);
  }
  if (blob.readUInt8(4) !== FORMAT_VERSION) {
    throw new Error(`${path}: unsupported version ${blob.readUInt8(4)}`);
  }
  const width = blob.readUInt32LE(5);
  const height = blob.readUInt32LE(9);
  const channels = blob.readUInt32LE(13);
  const n = width * height * channels;
  if (blob.length !== 17 + 4 * n) {
    throw new Error(`${path}: payload length mismatch`);
  }
  const data = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    data[i] = blob.readFloatLE(17 + i * 4);
  }
  return { width, height, channels, data };
}

export function writeNamedTensors(
  path: string,
  tensors: Map<string, { dims: number[]; data: Float32Array }>,
): void {
  const chunks: Buffer[] = [];
  const header = Buffer.alloc(9);
  header.write("DVCK", 0, "ascii");
  header.writeUInt8(FORMAT_VERSION, 4);
  header.writeUInt32LE(tensors.size, 5);
  chunks.push(header);
  for (const [name, tensor] of tensors) {
    const nameBuf = Buffer.from(name, "utf-8");
    const meta = Buffer.alloc(4 + nameBuf.length + 4 + 4 * tensor.dims.length);
    let off = 0;
    meta.writeUInt32LE(nameBuf.length, off);
    off += 4;
    nameBuf.copy(meta, off);
    off += nameBuf.length;
    meta.writeUInt32LE(tensor.dims.length, off);
    off += 4;
    for (const d of tensor.dims) {
      meta.writeUInt32LE(d, off);
      off += 4;
    }
    const payload = Buffer.alloc(tensor.data.length * 4);
    for (let i = 0; i < tensor.data.length; i++) {
      payload.writeFloatLE(tensor.data[i], i * 4);
    }
    chunks.push(meta, payload);
  }
  fs.writeFileSync(path, Buffer.concat(chunks));
}

export function readNamedTensors(
  path: string,
): Map<string, { dims: number[]; data: Float32Array }> {
  const blob = fs.readFileSync(path);
  if (blob.length < 9 || blob.toString("ascii", 0, 4) !== "DVCK") {
    throw new Error(`${path}: not a named-tensor file`);
  }
  const count = blob.readUInt32LE(5);
  let off = 9;
  const out = new Map<string, { dims: number[]; data: Float32Array }>();
  for (let t = 0; t < count; t++) {
    const nameLen = blob.readUInt32LE(off);
    off += 4;
    const name = blob.toString("utf-8", off, off + nameLen);
    off += nameLen;
    const rank = blob.readUInt32LE(off);
    off += 4;
    const dims: number[] = [];
    let size = 1;
    for (let i = 0; i < rank; i++) {
      const d = blob.readUInt32LE(off);
      off += 4;
      dims.push(d);
      size *= d;
    }
    const data = new Float32Array(size);
    for (let i = 0; i < size; i++) {
      data[i] = blob.readFloatLE(off + i * 4);
    }
    off += size * 4;
    out.set(name, { dims, data });
  }
  return out;
}
