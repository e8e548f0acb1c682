//! Binary formats for embedding sequences (`.emb`) and sanitized samples
//! (`.nvs`), and a synthetic dataset generator.
//!
//! Both formats share one envelope: a six-byte magic, little-endian `u32`
//! dimension and record count, then the records. Every error reports the
//! byte offset at which decoding failed.
//!
//! `.emb` record: `u32` id length, UTF-8 id, 1-byte label tag (0 integer,
//! 1 real), 8-byte label, `u32` n, n·d `f32` values.
//!
//! `.nvs` record: `u32` id length, UTF-8 id, `u32` m, m `f64` weights,
//! m·d `f32` vectors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::network::{Example, Target};
use crate::posterior::WeightedVectorSample;
use crate::sampling::RngState;

const EMB_MAGIC: &[u8; 6] = b"NVDPE1";
const NVS_MAGIC: &[u8; 6] = b"NVDPS1";
const LABEL_INT: u8 = 0;
const LABEL_REAL: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Int(i64),
    Real(f64),
}

/// One embedding sequence: `x` holds `n × d` values, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub label: Label,
    pub d: usize,
    pub x: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn n(&self) -> usize {
        self.x.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn x_f64(&self) -> Vec<f64> {
        self.x.iter().map(|&v| v as f64).collect()
    }

    /// Integer labels become class targets, real labels regression targets.
    pub fn to_example(&self) -> Result<Example> {
        let target = match self.label {
            Label::Int(k) if k >= 0 => Target::Class(k as usize),
            Label::Int(k) => return Err(Error::arg(format!("record {}: negative class label {k}", self.id))),
            Label::Real(v) => Target::Value(v),
        };
        Ok(Example { n: self.n(), x: self.x_f64(), target })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SanitizedRecord {
    pub id: String,
    pub sample: WeightedVectorSample,
}

fn header(magic: &[u8; 6], d: usize, count: usize) -> Result<Vec<u8>> {
    let d = u32::try_from(d).map_err(|_| Error::arg("dimension exceeds u32"))?;
    let count = u32::try_from(count).map_err(|_| Error::arg("record count exceeds u32"))?;
    let mut out = magic.to_vec();
    out.extend_from_slice(&d.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    Ok(out)
}

fn put_id(out: &mut Vec<u8>, id: &str) -> Result<()> {
    let len = u32::try_from(id.len()).map_err(|_| Error::arg("id too long"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    Ok(())
}

fn encode_embedding(r: &EmbeddingRecord, d: usize, offset: u64) -> Result<Vec<u8>> {
    if r.d != d {
        return Err(Error::format(offset, format!("record {:?} has dimension {}, file has {d}", r.id, r.d)));
    }
    if r.x.is_empty() || !r.x.len().is_multiple_of(d) {
        return Err(Error::arg(format!("record {:?}: {} values are not a positive number of rows", r.id, r.x.len())));
    }
    if r.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg(format!("record {:?} has non-finite values", r.id)));
    }
    let mut out = Vec::with_capacity(17 + r.id.len() + 4 * r.x.len());
    put_id(&mut out, &r.id)?;
    match r.label {
        Label::Int(v) => {
            out.push(LABEL_INT);
            out.extend_from_slice(&v.to_le_bytes());
        }
        Label::Real(v) => {
            out.push(LABEL_REAL);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(r.n() as u32).to_le_bytes());
    for v in &r.x {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn encode_sanitized(r: &SanitizedRecord, d: usize, offset: u64) -> Result<Vec<u8>> {
    if r.sample.d != d {
        return Err(Error::format(offset, format!("record {:?} has dimension {}, file has {d}", r.id, r.sample.d)));
    }
    let m = r.sample.m();
    let mut out = Vec::with_capacity(8 + r.id.len() + 8 * m + 4 * m * d);
    put_id(&mut out, &r.id)?;
    out.extend_from_slice(&(m as u32).to_le_bytes());
    for p in &r.sample.pi {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for v in &r.sample.z {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Streaming writer shared by both formats; the record count in the header
/// is patched on [`finish`](RecordWriter::finish).
pub struct RecordWriter<W: Write + Seek> {
    inner: W,
    d: usize,
    count: usize,
    written: u64,
    magic: &'static [u8; 6],
}

impl<W: Write + Seek> RecordWriter<W> {
    fn new(mut inner: W, magic: &'static [u8; 6], d: usize) -> Result<Self> {
        inner.write_all(&header(magic, d, 0)?)?;
        Ok(RecordWriter { inner, d, count: 0, written: 14, magic })
    }

    fn push(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes)?;
        self.count += 1;
        self.written += bytes.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.seek(SeekFrom::Start(0))?;
        self.inner.write_all(&header(self.magic, self.d, self.count)?)?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok(self.inner)
    }

    pub fn embeddings(inner: W, d: usize) -> Result<Self> {
        Self::new(inner, EMB_MAGIC, d)
    }

    pub fn sanitized(inner: W, d: usize) -> Result<Self> {
        Self::new(inner, NVS_MAGIC, d)
    }

    pub fn write_embedding(&mut self, r: &EmbeddingRecord) -> Result<()> {
        debug_assert_eq!(self.magic, EMB_MAGIC);
        let bytes = encode_embedding(r, self.d, self.written)?;
        self.push(&bytes)
    }

    pub fn write_sanitized(&mut self, r: &SanitizedRecord) -> Result<()> {
        debug_assert_eq!(self.magic, NVS_MAGIC);
        let bytes = encode_sanitized(r, self.d, self.written)?;
        self.push(&bytes)
    }
}

/// Encodes records in memory. The file dimension is taken from the first
/// record (0 for an empty list).
pub fn encode_embeddings(records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let d = records.first().map_or(0, |r| r.d);
    let mut out = header(EMB_MAGIC, d, records.len())?;
    for r in records {
        let at = out.len() as u64;
        out.extend(encode_embedding(r, d, at)?);
    }
    Ok(out)
}

pub fn write_embeddings(path: impl AsRef<Path>, records: &[EmbeddingRecord]) -> Result<()> {
    let bytes = encode_embeddings(records)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn encode_sanitized_file(d: usize, records: &[SanitizedRecord]) -> Result<Vec<u8>> {
    let mut out = header(NVS_MAGIC, d, records.len())?;
    for r in records {
        let at = out.len() as u64;
        out.extend(encode_sanitized(r, d, at)?);
    }
    Ok(out)
}

pub fn write_sanitized(path: impl AsRef<Path>, d: usize, records: &[SanitizedRecord]) -> Result<()> {
    let bytes = encode_sanitized_file(d, records)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

/// Reads little-endian fields while tracking the byte offset.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, len: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let got = (&mut self.inner).take(len as u64).read_to_end(&mut buf)?;
        if got < len {
            return Err(Error::format(self.offset + got as u64, format!("truncated {what}")));
        }
        self.offset += len as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    fn at_eof(&mut self) -> Result<bool> {
        let mut probe = [0u8; 1];
        Ok(self.inner.read(&mut probe)? == 0)
    }

    fn id(&mut self) -> Result<String> {
        let len = self.u32("id length")? as usize;
        let at = self.offset;
        let raw = self.bytes(len, "id")?;
        String::from_utf8(raw).map_err(|_| Error::format(at, "id is not UTF-8"))
    }

    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let at = self.offset;
        let raw = self.bytes(count * 4, what)?;
        let vals: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(at + 4 * k as u64, format!("non-finite {what}")));
        }
        Ok(vals)
    }
}

/// Iterates the records of a `.emb` or `.nvs` stream in file order.
pub struct RecordReader<R> {
    cur: Cursor<R>,
    d: usize,
    remaining: usize,
    finished: bool,
}

impl<R: Read> RecordReader<R> {
    fn open(inner: R, magic: &[u8; 6]) -> Result<Self> {
        let mut cur = Cursor { inner, offset: 0 };
        let m = cur.bytes(6, "magic")?;
        if m != magic {
            return Err(Error::format(0, format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        let d = cur.u32("dimension")? as usize;
        let count = cur.u32("record count")? as usize;
        Ok(RecordReader { cur, d, remaining: count, finished: false })
    }

    pub fn embeddings(inner: R) -> Result<Self> {
        Self::open(inner, EMB_MAGIC)
    }

    pub fn sanitized(inner: R) -> Result<Self> {
        Self::open(inner, NVS_MAGIC)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Records announced in the header and not yet read.
    pub fn remaining(&self) -> usize {
        self.remaining
    }

    fn next_with<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T>) -> Option<Result<T>> {
        if self.finished {
            return None;
        }
        if self.remaining == 0 {
            self.finished = true;
            return match self.cur.at_eof() {
                Ok(true) => None,
                Ok(false) => Some(Err(Error::format(self.cur.offset, "trailing bytes after the last record"))),
                Err(e) => Some(Err(e)),
            };
        }
        self.remaining -= 1;
        let r = f(self);
        if r.is_err() {
            self.finished = true;
        }
        Some(r)
    }

    fn read_embedding(&mut self) -> Result<EmbeddingRecord> {
        let id = self.cur.id()?;
        let tag_at = self.cur.offset;
        let tag = self.cur.bytes(1, "label tag")?[0];
        let raw: [u8; 8] = self.cur.bytes(8, "label")?.try_into().unwrap();
        let label = match tag {
            LABEL_INT => Label::Int(i64::from_le_bytes(raw)),
            LABEL_REAL => Label::Real(f64::from_le_bytes(raw)),
            t => return Err(Error::format(tag_at, format!("record {id:?}: unknown label tag {t}"))),
        };
        let n_at = self.cur.offset;
        let n = self.cur.u32("sequence length")? as usize;
        if n == 0 {
            return Err(Error::format(n_at, format!("record {id:?} has no tokens")));
        }
        let x = self.cur.f32s(n * self.d, "embedding values")?;
        Ok(EmbeddingRecord { id, label, d: self.d, x })
    }

    fn read_sanitized(&mut self) -> Result<SanitizedRecord> {
        let id = self.cur.id()?;
        let m = self.cur.u32("component count")? as usize;
        let pi_at = self.cur.offset;
        let raw = self.cur.bytes(8 * m, "weights")?;
        let pi: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(k) = pi.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::format(pi_at + 8 * k as u64, format!("record {id:?}: weight outside [0, 1]")));
        }
        let z = self.cur.f32s(m * self.d, "sample vectors")?;
        let sample = WeightedVectorSample::new(pi, z.into_iter().map(f64::from).collect(), self.d)?;
        Ok(SanitizedRecord { id, sample })
    }
}

pub struct EmbeddingIter<R>(RecordReader<R>);
pub struct SanitizedIter<R>(RecordReader<R>);

impl<R: Read> Iterator for EmbeddingIter<R> {
    type Item = Result<EmbeddingRecord>;
    fn next(&mut self) -> Option<Self::Item> {
        self.0.next_with(|r| r.read_embedding())
    }
}

impl<R: Read> Iterator for SanitizedIter<R> {
    type Item = Result<SanitizedRecord>;
    fn next(&mut self) -> Option<Self::Item> {
        self.0.next_with(|r| r.read_sanitized())
    }
}

impl<R: Read> EmbeddingIter<R> {
    pub fn new(inner: R) -> Result<Self> {
        Ok(EmbeddingIter(RecordReader::embeddings(inner)?))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

impl<R: Read> SanitizedIter<R> {
    pub fn new(inner: R) -> Result<Self> {
        Ok(SanitizedIter(RecordReader::sanitized(inner)?))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

/// Streams the records of a `.emb` file.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingIter<BufReader<File>>> {
    EmbeddingIter::new(BufReader::new(File::open(path)?))
}

/// Reads a whole `.emb` file, returning its dimension and records.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(usize, Vec<EmbeddingRecord>)> {
    let it = read_embeddings(path)?;
    let d = it.dim();
    Ok((d, it.collect::<Result<_>>()?))
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<(usize, Vec<EmbeddingRecord>)> {
    let it = EmbeddingIter::new(bytes)?;
    let d = it.dim();
    Ok((d, it.collect::<Result<_>>()?))
}

pub fn read_sanitized(path: impl AsRef<Path>) -> Result<SanitizedIter<BufReader<File>>> {
    SanitizedIter::new(BufReader::new(File::open(path)?))
}

pub fn load_sanitized(path: impl AsRef<Path>) -> Result<(usize, Vec<SanitizedRecord>)> {
    let it = read_sanitized(path)?;
    let d = it.dim();
    Ok((d, it.collect::<Result<_>>()?))
}

pub fn decode_sanitized(bytes: &[u8]) -> Result<(usize, Vec<SanitizedRecord>)> {
    let it = SanitizedIter::new(bytes)?;
    let d = it.dim();
    Ok((d, it.collect::<Result<_>>()?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_examples: usize,
    pub d: usize,
    /// Inclusive range of sequence lengths.
    pub n_range: (usize, usize),
    pub n_classes: usize,
    pub class_separation: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_examples: 200,
            d: 8,
            n_range: (2, 12),
            n_classes: 2,
            class_separation: 6.0,
            seed: 0,
        }
    }
}

/// Token vectors are `(sep/√2)·e_c + N(0, I)` for class `c`, so any two
/// class means are `sep` apart. Labels cycle through the classes and are
/// then shuffled; lengths are uniform over `n_range`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<EmbeddingRecord>> {
    let SyntheticConfig { n_examples, d, n_range, n_classes, class_separation, seed } = *config;
    if !(class_separation >= 0.0) || !class_separation.is_finite() {
        return Err(Error::arg(format!("class separation {class_separation} must be non-negative")));
    }
    if d == 0 || n_classes == 0 || n_classes > d {
        return Err(Error::arg(format!("need 1 ≤ classes ≤ d, got {n_classes} classes in dimension {d}")));
    }
    if n_range.0 == 0 || n_range.0 > n_range.1 {
        return Err(Error::arg(format!("invalid length range {n_range:?}")));
    }
    let mut rng = RngState::new(seed, 0);
    let mut labels: Vec<usize> = (0..n_examples).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);
    let offset = class_separation / std::f64::consts::SQRT_2;
    let span = n_range.1 - n_range.0 + 1;
    let width = n_examples.max(1).to_string().len().max(6);
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let n = n_range.0 + crate::sampling::uniform_index(&mut rng, span);
            let x = (0..n * d)
                .map(|k| {
                    let mean = if k % d == c { offset } else { 0.0 };
                    (mean + rng.standard_normal()) as f32
                })
                .collect();
            EmbeddingRecord {
                id: format!("syn-{i:0width$}"),
                label: Label::Int(c as i64),
                d,
                x,
            }
        })
        .collect())
}
