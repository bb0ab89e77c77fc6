/**
 * FPT1 tensor container — the byte layout shared with the training side.
 *
 * Everything little-endian:
 *   magic "FPT1" | version u16 | count u32 | per tensor:
 *   name_len u16, name utf8, dtype u8 (0=f32, 1=f64, 2=i32), rank u8,
 *   dims u64 * rank, payload row-major.
 *
 * Writing is canonical: tensors are sorted by name, so identical inputs
 * always produce identical bytes.
 */

export type Dtype = 'float32' | 'float64' | 'int32';

export interface NamedTensor {
  name: string;
  dtype: Dtype;
  shape: number[];
  /** row-major values; length must equal the product of shape */
  data: Float32Array | Float64Array | Int32Array;
}

const MAGIC = Buffer.from('FPT1', 'ascii');
const VERSION = 1;

const DTYPE_TAGS: Record<Dtype, number> = { float32: 0, float64: 1, int32: 2 };
const TAG_DTYPES: Record<number, Dtype> = { 0: 'float32', 1: 'float64', 2: 'int32' };
const ITEM_SIZE: Record<Dtype, number> = { float32: 4, float64: 8, int32: 4 };

export class Fpt1FormatError extends Error {}

function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function writeFpt1(tensors: NamedTensor[]): Buffer {
  const names = new Set<string>();
  for (const t of tensors) {
    if (names.has(t.name)) {
      throw new Fpt1FormatError(`duplicate tensor name '${t.name}'`);
    }
    names.add(t.name);
    if (t.data.length !== numel(t.shape)) {
      throw new Fpt1FormatError(
        `tensor '${t.name}': ${t.data.length} values for shape [${t.shape}]`);
    }
  }
  const sorted = [...tensors].sort((a, b) => (a.name < b.name ? -1 : a.name > b.name ? 1 : 0));

  const chunks: Buffer[] = [];
  const header = Buffer.alloc(4 + 2 + 4);
  MAGIC.copy(header, 0);
  header.writeUInt16LE(VERSION, 4);
  header.writeUInt32LE(sorted.length, 6);
  chunks.push(header);

  for (const t of sorted) {
    const nameBytes = Buffer.from(t.name, 'utf-8');
    const meta = Buffer.alloc(2 + nameBytes.length + 2 + 8 * t.shape.length);
    let pos = 0;
    meta.writeUInt16LE(nameBytes.length, pos); pos += 2;
    nameBytes.copy(meta, pos); pos += nameBytes.length;
    meta.writeUInt8(DTYPE_TAGS[t.dtype], pos); pos += 1;
    meta.writeUInt8(t.shape.length, pos); pos += 1;
    for (const d of t.shape) {
      meta.writeBigUInt64LE(BigInt(d), pos); pos += 8;
    }
    chunks.push(meta);
    const payload = Buffer.alloc(t.data.length * ITEM_SIZE[t.dtype]);
    const view = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
    for (let i = 0; i < t.data.length; i++) {
      if (t.dtype === 'float32') view.setFloat32(i * 4, t.data[i] as number, true);
      else if (t.dtype === 'float64') view.setFloat64(i * 8, t.data[i] as number, true);
      else view.setInt32(i * 4, t.data[i] as number, true);
    }
    chunks.push(payload);
  }
  return Buffer.concat(chunks);
}

class Reader {
  pos = 0;
  constructor(private buf: Buffer) {}

  take(n: number): Buffer {
    if (this.pos + n > this.buf.length) {
      throw new Fpt1FormatError(`unexpected end of data at byte ${this.pos}`);
    }
    const out = this.buf.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }
}

export function readFpt1(buf: Buffer): NamedTensor[] {
  const r = new Reader(buf);
  if (!r.take(4).equals(MAGIC)) {
    throw new Fpt1FormatError('not an FPT1 file');
  }
  const version = r.take(2).readUInt16LE(0);
  if (version !== VERSION) {
    throw new Fpt1FormatError(`unsupported FPT1 version ${version}`);
  }
  const count = r.take(4).readUInt32LE(0);
  const out: NamedTensor[] = [];
  for (let i = 0; i < count; i++) {
    const nameLen = r.take(2).readUInt16LE(0);
    const name = r.take(nameLen).toString('utf-8');
    const tag = r.take(1).readUInt8(0);
    const rank = r.take(1).readUInt8(0);
    const dtype = TAG_DTYPES[tag];
    if (dtype === undefined) {
      throw new Fpt1FormatError(`unsupported dtype tag ${tag} for tensor '${name}'`);
    }
    const shape: number[] = [];
    for (let d = 0; d < rank; d++) {
      shape.push(Number(r.take(8).readBigUInt64LE(0)));
    }
    const n = numel(shape);
    const payload = r.take(n * ITEM_SIZE[dtype]);
    const view = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
    let data: Float32Array | Float64Array | Int32Array;
    if (dtype === 'float32') {
      const arr = new Float32Array(n);
      for (let j = 0; j < n; j++) arr[j] = view.getFloat32(j * 4, true);
      data = arr;
    } else if (dtype === 'float64') {
      const arr = new Float64Array(n);
      for (let j = 0; j < n; j++) arr[j] = view.getFloat64(j * 8, true);
      data = arr;
    } else {
      const arr = new Int32Array(n);
      for (let j = 0; j < n; j++) arr[j] = view.getInt32(j * 4, true);
      data = arr;
    }
    out.push({ name, dtype, shape, data });
  }
  return out;
}
