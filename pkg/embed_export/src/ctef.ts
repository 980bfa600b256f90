/**
 * CTEF binary tables: magic "CTE1" | u32 LE version=1 | u32 LE dim |
 * u32 LE entryCount | entries of (u32 LE nameLen, name utf-8,
 * dim x float32 LE). Entry names are exact prompt strings.
 */

export const CTEF_MAGIC = "CTE1";
export const CTEF_VERSION = 1;

export interface CtefEntry {
  name: string;
  vector: Float32Array;
}

export function encodeCtef(dim: number, entries: CtefEntry[]): Buffer {
  if (!entries.length) throw new Error("refusing to write an empty CTEF table");
  const chunks: Buffer[] = [];
  const header = Buffer.alloc(16);
  header.write(CTEF_MAGIC, 0, "ascii");
  header.writeUInt32LE(CTEF_VERSION, 4);
  header.writeUInt32LE(dim, 8);
  header.writeUInt32LE(entries.length, 12);
  chunks.push(header);
  for (const { name, vector } of entries) {
    if (vector.length !== dim) {
      throw new Error(`entry ${JSON.stringify(name)} has dim ${vector.length}, header says ${dim}`);
    }
    const raw = Buffer.from(name, "utf-8");
    const lenBuf = Buffer.alloc(4);
    lenBuf.writeUInt32LE(raw.length, 0);
    const vecBuf = Buffer.alloc(4 * dim);
    for (let i = 0; i < dim; i++) vecBuf.writeFloatLE(vector[i], 4 * i);
    chunks.push(lenBuf, raw, vecBuf);
  }
  return Buffer.concat(chunks);
}

export function decodeCtef(buf: Buffer): { dim: number; entries: CtefEntry[] } {
  let off = 0;
  const take = (n: number, what: string): Buffer => {
    if (off + n > buf.length) {
      throw new Error(`truncated CTEF while reading ${what} (at byte offset ${off})`);
    }
    const out = buf.subarray(off, off + n);
    off += n;
    return out;
  };
  if (take(4, "magic").toString("ascii") !== CTEF_MAGIC) {
    throw new Error("bad magic, not a CTEF file (at byte offset 0)");
  }
  const version = take(4, "version").readUInt32LE(0);
  if (version !== CTEF_VERSION) throw new Error(`unsupported CTEF version ${version}`);
  const dim = take(4, "dim").readUInt32LE(0);
  const count = take(4, "entry count").readUInt32LE(0);
  const entries: CtefEntry[] = [];
  for (let k = 0; k < count; k++) {
    const nameLen = take(4, "entry name length").readUInt32LE(0);
    const name = take(nameLen, "entry name").toString("utf-8");
    const vecBuf = take(4 * dim, `vector for ${JSON.stringify(name)}`);
    const vector = new Float32Array(dim);
    for (let i = 0; i < dim; i++) vector[i] = vecBuf.readFloatLE(4 * i);
    entries.push({ name, vector });
  }
  if (off !== buf.length) {
    throw new Error(`${buf.length - off} trailing bytes after last entry (at byte offset ${off})`);
  }
  return { dim, entries };
}
