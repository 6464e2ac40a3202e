/**
 * Minimal writer/reader for the safetensors container layout used by the
 * editor: u64 little-endian header length, UTF-8 JSON header, contiguous
 * data buffer. Only F32 tensors are produced here.
 */

export interface TensorEntry {
  name: string;
  shape: number[];
  data: Float32Array;
}

interface HeaderInfo {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

export function writeContainer(
  tensors: TensorEntry[],
  metadata?: Record<string, string>,
): Buffer {
  const header: Record<string, HeaderInfo | Record<string, string>> = {};
  if (metadata && Object.keys(metadata).length > 0) {
    header["__metadata__"] = metadata;
  }
  const chunks: Buffer[] = [];
  let offset = 0;
  const seen = new Set<string>();
  for (const t of tensors) {
    if (seen.has(t.name)) throw new Error(`duplicate tensor name ${t.name}`);
    seen.add(t.name);
    const count = t.shape.reduce((a, b) => a * b, 1);
    if (count !== t.data.length) {
      throw new Error(`tensor ${t.name}: shape product ${count} != data length ${t.data.length}`);
    }
    const raw = Buffer.alloc(t.data.length * 4);
    for (let i = 0; i < t.data.length; i++) raw.writeFloatLE(t.data[i], i * 4);
    header[t.name] = {
      dtype: "F32",
      shape: t.shape,
      data_offsets: [offset, offset + raw.length],
    };
    chunks.push(raw);
    offset += raw.length;
  }
  let headerJson = Buffer.from(JSON.stringify(header), "utf-8");
  const pad = (8 - ((8 + headerJson.length) % 8)) % 8;
  if (pad > 0) headerJson = Buffer.concat([headerJson, Buffer.alloc(pad, 0x20)]);
  const prefix = Buffer.alloc(8);
  prefix.writeBigUInt64LE(BigInt(headerJson.length));
  return Buffer.concat([prefix, headerJson, ...chunks]);
}

export function readContainer(payload: Buffer): {
  tensors: Map<string, { shape: number[]; data: Float32Array }>;
  metadata: Record<string, string>;
} {
  const headerLen = Number(payload.readBigUInt64LE(0));
  const header = JSON.parse(payload.subarray(8, 8 + headerLen).toString("utf-8"));
  const data = payload.subarray(8 + headerLen);
  const tensors = new Map<string, { shape: number[]; data: Float32Array }>();
  let metadata: Record<string, string> = {};
  for (const [name, info] of Object.entries(header)) {
    if (name === "__metadata__") {
      metadata = info as Record<string, string>;
      continue;
    }
    const { dtype, shape, data_offsets } = info as HeaderInfo;
    if (dtype !== "F32") throw new Error(`reader only supports F32, got ${dtype}`);
    const [begin, end] = data_offsets;
    const raw = data.subarray(begin, end);
    const values = new Float32Array(raw.length / 4);
    for (let i = 0; i < values.length; i++) values[i] = raw.readFloatLE(i * 4);
    tensors.set(name, { shape, data: values });
  }
  return { tensors, metadata };
}
