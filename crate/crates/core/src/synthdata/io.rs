use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::generate::Dataset;
use super::spec::SyntheticSpec;
use crate::error::{F3Error, Result};
use crate::localmodels::{EmbeddingKind, Shard};
use crate::numcore::{check_permutation, Matrix};

pub const MAGIC: &[u8; 4] = b"F3DS";
pub const FORMAT_VERSION: u32 = 1;

/// Layout, little endian: magic, version `u32`, spec JSON (`u32` length +
/// bytes), `n, m, C` as `u32`, labels `m × u32`, graph `n × n f64`, latent
/// width `u32`, permutations `n × width u32`, then per client: kind `u8`
/// (0 FC, 1 GRU), width `u32`, presence `m × u8`, inputs `m × width f64`.
pub fn write_dataset<W: Write>(d: &Dataset, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    let spec = serde_json::to_vec(&d.spec)?;
    w.write_u32::<LittleEndian>(spec.len() as u32)?;
    w.write_all(&spec)?;
    let (n, m) = (d.clients(), d.samples());
    for v in [n, m, d.spec.classes] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    for &y in &d.labels {
        w.write_u32::<LittleEndian>(y as u32)?;
    }
    for &v in d.graph.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    let width = d.permutations.first().map_or(0, |p| p.len());
    w.write_u32::<LittleEndian>(width as u32)?;
    for p in &d.permutations {
        for &v in p {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
    }
    for (kind, shard) in d.kinds.iter().zip(&d.shards) {
        w.write_u8(match kind {
            EmbeddingKind::Fc => 0,
            EmbeddingKind::Gru => 1,
        })?;
        w.write_u32::<LittleEndian>(shard.width() as u32)?;
        for &p in shard.present() {
            w.write_u8(p as u8)?;
        }
        for &v in shard.raw_inputs().data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Byte-counting reader so parse errors can name the offending offset.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(F3Error::Format {
            offset: self.offset,
            message: message.into(),
        })
    }

    fn bytes(&mut self, len: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        let mut got = 0;
        while got < len {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    self.offset += got as u64;
                    return self.fail(format!("unexpected end of file while reading {what}"));
                }
                Ok(k) => got += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += len as u64;
        Ok(buf)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(self.bytes(4, what)?.as_slice().read_u32::<LittleEndian>()?)
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.bytes(8 * count, what)?;
        let mut out = vec![0.0; count];
        raw.as_slice().read_f64_into::<LittleEndian>(&mut out)?;
        Ok(out)
    }

    fn usize(&mut self, what: &str, limit: usize) -> Result<usize> {
        let start = self.offset;
        let v = self.u32(what)? as usize;
        if v > limit {
            return Err(F3Error::Format {
                offset: start,
                message: format!("{what} = {v} exceeds {limit}"),
            });
        }
        Ok(v)
    }
}

const SANE: usize = 1 << 28;

pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let mut c = Cursor { inner: r, offset: 0 };
    if c.bytes(4, "magic")? != MAGIC {
        c.offset = 0;
        return c.fail("not a dataset file (bad magic)");
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(F3Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = c.usize("spec length", SANE)?;
    let at = c.offset;
    let spec: SyntheticSpec = match serde_json::from_slice(&c.bytes(len, "spec")?) {
        Ok(s) => s,
        Err(e) => {
            c.offset = at;
            return c.fail(format!("bad spec header: {e}"));
        }
    };
    let n = c.usize("client count", SANE)?;
    let m = c.usize("sample count", SANE)?;
    let classes = c.usize("class count", SANE)?;
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let at = c.offset;
        let y = c.u32("label")? as usize;
        if y >= classes {
            c.offset = at;
            return c.fail(format!("label {y} outside {classes} classes"));
        }
        labels.push(y);
    }
    let graph = Matrix::from_vec(n, n, c.f64s(n * n, "graph")?)?;
    let width = c.usize("latent width", SANE)?;
    let mut permutations = Vec::with_capacity(n);
    for _ in 0..n {
        let at = c.offset;
        let p: Vec<usize> = (0..width)
            .map(|_| c.u32("permutation").map(|v| v as usize))
            .collect::<Result<_>>()?;
        if check_permutation(&p, width).is_err() {
            c.offset = at;
            return c.fail("stored permutation is not a permutation");
        }
        permutations.push(p);
    }
    let mut kinds = Vec::with_capacity(n);
    let mut shards = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = match c.u8("client kind")? {
            0 => EmbeddingKind::Fc,
            1 => EmbeddingKind::Gru,
            k => {
                c.offset -= 1;
                return c.fail(format!("unknown client kind {k}"));
            }
        };
        let w = c.usize("input width", SANE)?;
        let present: Vec<bool> = c.bytes(m, "presence flags")?.into_iter().map(|b| b != 0).collect();
        let inputs = Matrix::from_vec(m, w, c.f64s(m * w, "inputs")?)?;
        kinds.push(kind);
        shards.push(Shard::new(inputs, present)?);
    }
    let mut rest = [0u8; 1];
    if c.inner.read(&mut rest)? != 0 {
        return c.fail("trailing bytes after dataset");
    }
    Ok(Dataset {
        spec,
        kinds,
        shards,
        labels,
        graph,
        permutations,
    })
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset(d, std::io::BufWriter::new(file))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file))
}

/// Long-format debug dump of the present inputs:
/// `sample,label,client,feature,value`.
pub fn write_dataset_csv<W: Write>(d: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sample", "label", "client", "feature", "value"])?;
    for (k, &y) in d.labels.iter().enumerate() {
        for (i, shard) in d.shards.iter().enumerate() {
            if !shard.is_present(k) {
                continue;
            }
            for f in 0..shard.width() {
                let v = shard.raw_inputs().get(k, f);
                out.write_record([
                    k.to_string(),
                    y.to_string(),
                    i.to_string(),
                    f.to_string(),
                    v.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
