/** A 16-layer-VGG-style convolutional stack cut at the fourth pooling stage.
 *
 * Layout: [64, 64] pool [128, 128] pool [256, 256, 256] pool [512, 512, 512]
 * pool. All convolutions are 3x3 stride 1 with same padding and ReLU, pooling
 * 2x2 stride 2 with ceil semantics, so the output grid is ceil(input/16) with
 * 512 channels. Weights load from a named-tensor file; without one, a seeded
 * He-scaled random initialization keeps the exporter fully deterministic.
 */
import { FeatureGrid, readNamedTensors, writeNamedTensors } from "./tensors";
import { RgbImage } from "./image";
import { SeededRandom } from "./random";

export const BLOCKS: number[][] = [
  [64, 64],
  [128, 128],
  [256, 256, 256],
  [512, 512, 512],
];

export interface ConvLayer {
  name: string;
  cin: number;
  cout: number;
  /** [ky][kx][ci][co] flattened, 3x3 kernels */
  weights: Float32Array;
  bias: Float32Array;
}

export class Backbone {
  readonly layers: ConvLayer[];

  constructor(layers: ConvLayer[]) {
    this.layers = layers;
  }

  static layerNames(): string[] {
    const names: string[] = [];
    BLOCKS.forEach((block, b) => {
      block.forEach((_, i) => names.push(`conv${b + 1}_${i + 1}`));
    });
    return names;
  }

  /** Deterministic random weights (for pipelines without pretrained files). */
  static seeded(seed: number): Backbone {
    const rng = new SeededRandom(seed);
    const layers: ConvLayer[] = [];
    let cin = 3;
    BLOCKS.forEach((block, b) => {
      block.forEach((cout, i) => {
        const n = 3 * 3 * cin * cout;
        const weights = new Float32Array(n);
        const scale = Math.sqrt(2.0 / (3 * 3 * cin));
        for (let j = 0; j < n; j++) {
          weights[j] = rng.gauss() * scale;
        }
        layers.push({
          name: `conv${b + 1}_${i + 1}`,
          cin,
          cout,
          weights,
          bias: new Float32Array(cout),
        });
        cin = cout;
      });
    });
    return new Backbone(layers);
  }

  static fromFile(path: string): Backbone {
    const tensors = readNamedTensors(path);
    const layers: ConvLayer[] = [];
    let cin = 3;
    BLOCKS.forEach((block, b) => {
      block.forEach((cout, i) => {
        const name = `conv${b + 1}_${i + 1}`;
        const w = tensors.get(`${name}_w`);
        const bias = tensors.get(`${name}_b`);
        if (!w || !bias) {
          throw new Error(`${path}: missing tensors for layer ${name}`);
        }
        const expect = [3, 3, cin, cout];
        if (w.dims.length !== 4 || w.dims.some((d, j) => d !== expect[j])) {
          throw new Error(`${path}: ${name}_w dims [${w.dims}] != [${expect}]`);
        }
        layers.push({ name, cin, cout, weights: w.data, bias: bias.data });
        cin = cout;
      });
    });
    return new Backbone(layers);
  }

  saveWeights(path: string): void {
    const tensors = new Map<string, { dims: number[]; data: Float32Array }>();
    for (const layer of this.layers) {
      tensors.set(`${layer.name}_w`, {
        dims: [3, 3, layer.cin, layer.cout],
        data: layer.weights,
      });
      tensors.set(`${layer.name}_b`, { dims: [layer.cout], data: layer.bias });
    }
    writeNamedTensors(path, tensors);
  }

  /** Run the stack on an RGB image; returns the pool-4 feature grid. */
  run(image: RgbImage): FeatureGrid {
    let grid: FeatureGrid = {
      width: image.width,
      height: image.height,
      channels: 3,
      data: image.data,
    };
    let layerIdx = 0;
    for (const block of BLOCKS) {
      for (let i = 0; i < block.length; i++) {
        grid = convRelu(grid, this.layers[layerIdx]);
        layerIdx++;
      }
      grid = maxPool2(grid);
    }
    return grid;
  }
}

function convRelu(grid: FeatureGrid, layer: ConvLayer): FeatureGrid {
  const { width: w, height: h, channels: cin, data } = grid;
  if (cin !== layer.cin) {
    throw new Error(`layer ${layer.name}: got ${cin} channels, want ${layer.cin}`);
  }
  const cout = layer.cout;
  const out = new Float32Array(w * h * cout);
  const weights = layer.weights;
  for (let oy = 0; oy < h; oy++) {
    for (let ox = 0; ox < w; ox++) {
      const outBase = (oy * w + ox) * cout;
      for (let ky = 0; ky < 3; ky++) {
        const sy = oy + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (let kx = 0; kx < 3; kx++) {
          const sx = ox + kx - 1;
          if (sx < 0 || sx >= w) continue;
          const inBase = (sy * w + sx) * cin;
          const wBase = ((ky * 3 + kx) * cin) * cout;
          for (let ci = 0; ci < cin; ci++) {
            const v = data[inBase + ci];
            if (v === 0) continue;
            const wRow = wBase + ci * cout;
            for (let co = 0; co < cout; co++) {
              out[outBase + co] += v * weights[wRow + co];
            }
          }
        }
      }
      for (let co = 0; co < cout; co++) {
        const v = out[outBase + co] + layer.bias[co];
        out[outBase + co] = v > 0 ? v : 0;
      }
    }
  }
  return { width: w, height: h, channels: cout, data: out };
}

function maxPool2(grid: FeatureGrid): FeatureGrid {
  const { width: w, height: h, channels: c, data } = grid;
  const ow = Math.ceil(w / 2);
  const oh = Math.ceil(h / 2);
  const out = new Float32Array(ow * oh * c);
  for (let oy = 0; oy < oh; oy++) {
    for (let ox = 0; ox < ow; ox++) {
      const y0 = oy * 2;
      const x0 = ox * 2;
      const outBase = (oy * ow + ox) * c;
      for (let ch = 0; ch < c; ch++) {
        let best = -Infinity;
        for (let dy = 0; dy < 2; dy++) {
          const sy = y0 + dy;
          if (sy >= h) continue;
          for (let dx = 0; dx < 2; dx++) {
            const sx = x0 + dx;
            if (sx >= w) continue;
            const v = data[(sy * w + sx) * c + ch];
            if (v > best) best = v;
          }
        }
        out[outBase + ch] = best;
      }
    }
  }
  return { width: ow, height: oh, channels: c, data: out };
}
