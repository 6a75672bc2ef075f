//! Versioned little-endian checkpoint container.
//!
//! Layout: magic `CQAC`, `u32` version, `u32` length + config JSON, `u32`
//! tensor count, then per tensor `u32` name length, name bytes, `u32` rows,
//! `u32` cols and `rows·cols` `f64` values. An optional optimizer section
//! follows: a `u8` flag, `u64` step and the first/second moment values of
//! every tensor in the same order.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::AdamState;
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"CQAC";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_values(w: &mut impl Write, m: &Matrix) -> Result<()> {
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, model: &Model, adam: Option<&AdamState>) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, FORMAT_VERSION as usize)?;
    let config = serde_json::to_vec(&model.config)?;
    put_u32(w, config.len())?;
    w.write_all(&config)?;
    put_u32(w, model.store.len())?;
    for (name, m) in model.store.iter() {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, m.rows())?;
        put_u32(w, m.cols())?;
        put_values(w, m)?;
    }
    match adam {
        None => w.write_all(&[0])?,
        Some(state) => {
            w.write_all(&[1])?;
            w.write_all(&state.step.to_le_bytes())?;
            for (m, s) in state.first.iter().zip(&state.second) {
                put_values(w, m)?;
                put_values(w, s)?;
            }
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &Model, adam: Option<&AdamState>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut w, model, adam)?;
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn vec(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(buf)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let data = (0..rows * cols)
            .map(|_| Ok(f64::from_le_bytes(self.bytes()?)))
            .collect::<Result<Vec<_>>>()?;
        Matrix::new(rows, cols, data)
    }
}

pub fn read_checkpoint(r: impl Read) -> Result<(Model, Option<AdamState>)> {
    let mut c = Cursor { inner: r };
    if &c.bytes::<4>()? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let len = c.u32()?;
    let config: ModelConfig = serde_json::from_slice(&c.vec(len)?)?;
    let mut model = Model::new(config)?;
    let count = c.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32()?;
        let name = String::from_utf8(c.vec(len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let (rows, cols) = (c.u32()?, c.u32()?);
        tensors.push((name, c.matrix(rows, cols)?));
    }
    model.store.load_from(tensors).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let adam = match c.bytes::<1>()?[0] {
        0 => None,
        1 => {
            let mut state = AdamState::new(&model.store);
            state.step = u64::from_le_bytes(c.bytes()?);
            for (m, s) in state.first.iter_mut().zip(state.second.iter_mut()) {
                *m = c.matrix(m.rows(), m.cols())?;
                *s = c.matrix(s.rows(), s.cols())?;
            }
            Some(state)
        }
        flag => return Err(Error::Checkpoint(format!("bad optimizer flag {flag}"))),
    };
    let mut rest = Vec::new();
    c.inner.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok((model, adam))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<AdamState>)> {
    read_checkpoint(BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(model: &Model, adam: Option<&AdamState>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, model, adam).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bitwise() {
        let model = Model::new(ModelConfig::tiny()).unwrap();
        let mut adam = AdamState::new(&model.store);
        adam.step = 7;
        adam.first[0].data_mut()[0] = 0.125;
        let buf = bytes(&model, Some(&adam));
        let (back, back_adam) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.store.values(), model.store.values());
        assert_eq!(back_adam.as_ref(), Some(&adam));
        assert_eq!(bytes(&back, back_adam.as_ref()), buf);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let model = Model::new(ModelConfig::tiny()).unwrap();
        let buf = bytes(&model, None);
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Checkpoint(_))));
        let mut bad = buf;
        bad.push(0);
        assert!(read_checkpoint(bad.as_slice()).is_err());
    }
}
