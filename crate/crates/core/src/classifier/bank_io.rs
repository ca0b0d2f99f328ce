//! Model bank files.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! magic      6 bytes  "GPBANK"
//! version    u8       1
//! n_features u32
//! n_retained u32, then n_retained × u32 column indices
//! n_models   u32, then per model:
//!   id        u16 length + UTF-8 bytes
//!   intercept f64
//!   kind      u8   0 logistic, 1 lasso
//!   imbalance u8   0 none, 1 oversample, 2 weighted
//!   fraction  f64  oversampling fraction, NaN otherwise
//!   lambda    f64  selected penalty, NaN for logistic
//!   iterations u32, converged u8, ridge f64, seed u64
//!   nnz       u32, then nnz × (u32 feature column, f64 coefficient)
//! n_failures u32, then per failure: id and message as u16 length + bytes
//! ```
//!
//! Coefficient columns index the full feature space; zero coefficients
//! are omitted.

use std::io::{Read, Write};

use super::ovr::{Imbalance, ModelBank, ModelKind, ModelMeta, OvrModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"GPBANK";
const VERSION: u8 = 1;

fn io(e: std::io::Error) -> Error {
    Error::io("<model bank>", e)
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::format("<model bank>", "string too long"))?;
    w.write_all(&len.to_le_bytes()).map_err(io)?;
    w.write_all(s.as_bytes()).map_err(io)
}

pub fn write_bank<W: Write>(bank: &ModelBank, writer: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&[VERSION]).map_err(io)?;
    w.write_all(&(bank.n_features as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(bank.retained.len() as u32).to_le_bytes()).map_err(io)?;
    for &c in &bank.retained {
        w.write_all(&(c as u32).to_le_bytes()).map_err(io)?;
    }
    w.write_all(&(bank.models.len() as u32).to_le_bytes()).map_err(io)?;
    for m in &bank.models {
        put_str(&mut w, &m.target)?;
        w.write_all(&m.intercept.to_le_bytes()).map_err(io)?;
        let kind = match m.meta.kind {
            ModelKind::Logistic => 0u8,
            ModelKind::Lasso => 1,
        };
        let (mode, fraction) = match m.meta.imbalance {
            Imbalance::None => (0u8, f64::NAN),
            Imbalance::Oversample { fraction } => (1, fraction),
            Imbalance::Weighted => (2, f64::NAN),
        };
        w.write_all(&[kind, mode]).map_err(io)?;
        w.write_all(&fraction.to_le_bytes()).map_err(io)?;
        w.write_all(&m.meta.lambda.unwrap_or(f64::NAN).to_le_bytes()).map_err(io)?;
        w.write_all(&(m.meta.iterations as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&[m.meta.converged as u8]).map_err(io)?;
        w.write_all(&m.meta.ridge.to_le_bytes()).map_err(io)?;
        w.write_all(&m.meta.seed.to_le_bytes()).map_err(io)?;
        let nz: Vec<(usize, f64)> = bank
            .retained
            .iter()
            .zip(&m.coefficients)
            .filter(|(_, &b)| b != 0.0)
            .map(|(&c, &b)| (c, b))
            .collect();
        w.write_all(&(nz.len() as u32).to_le_bytes()).map_err(io)?;
        for (c, b) in nz {
            w.write_all(&(c as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&b.to_le_bytes()).map_err(io)?;
        }
    }
    w.write_all(&(bank.failures.len() as u32).to_le_bytes()).map_err(io)?;
    for (id, msg) in &bank.failures {
        put_str(&mut w, id)?;
        put_str(&mut w, msg)?;
    }
    w.flush().map_err(io)
}

struct Bytes<R: Read>(R);

impl<R: Read> Bytes<R> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0
            .read_exact(&mut buf)
            .map_err(|e| Error::format("<model bank>", format!("truncated: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn string(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take()?) as usize;
        let mut buf = vec![0u8; len];
        self.0
            .read_exact(&mut buf)
            .map_err(|e| Error::format("<model bank>", format!("truncated: {e}")))?;
        String::from_utf8(buf).map_err(|_| Error::format("<model bank>", "string is not UTF-8"))
    }
}

pub fn read_bank<R: Read>(reader: R) -> Result<ModelBank> {
    let mut r = Bytes(std::io::BufReader::new(reader));
    if &r.take::<6>()? != MAGIC {
        return Err(Error::format("<model bank>", "bad magic"));
    }
    let [version] = r.take::<1>()?;
    if version != VERSION {
        return Err(Error::format("<model bank>", format!("unsupported version {version}")));
    }
    let n_features = r.u32()?;
    let n_retained = r.u32()?;
    let retained = (0..n_retained).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let position: std::collections::HashMap<usize, usize> =
        retained.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let n_models = r.u32()?;
    let mut models = Vec::with_capacity(n_models);
    for _ in 0..n_models {
        let target = r.string()?;
        let intercept = r.f64()?;
        let [kind, mode] = r.take::<2>()?;
        let fraction = r.f64()?;
        let lambda = r.f64()?;
        let iterations = r.u32()?;
        let [converged] = r.take::<1>()?;
        let ridge = r.f64()?;
        let seed = u64::from_le_bytes(r.take()?);
        let kind = match kind {
            0 => ModelKind::Logistic,
            1 => ModelKind::Lasso,
            k => return Err(Error::format("<model bank>", format!("unknown model kind {k}"))),
        };
        let imbalance = match mode {
            0 => Imbalance::None,
            1 => Imbalance::Oversample { fraction },
            2 => Imbalance::Weighted,
            k => return Err(Error::format("<model bank>", format!("unknown imbalance mode {k}"))),
        };
        let mut coefficients = vec![0.0; n_retained];
        for _ in 0..r.u32()? {
            let c = r.u32()?;
            let b = r.f64()?;
            let k = *position
                .get(&c)
                .ok_or_else(|| Error::format("<model bank>", format!("column {c} was screened out")))?;
            coefficients[k] = b;
        }
        models.push(OvrModel {
            target,
            intercept,
            coefficients,
            meta: ModelMeta {
                kind,
                imbalance,
                iterations,
                converged: converged != 0,
                ridge,
                lambda: (!lambda.is_nan()).then_some(lambda),
                seed,
            },
        });
    }
    let n_failures = r.u32()?;
    let failures = (0..n_failures)
        .map(|_| Ok((r.string()?, r.string()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelBank {
        n_features,
        retained,
        models,
        failures,
    })
}

/// Pretty JSON export for inspection.
pub fn write_bank_json<W: Write>(bank: &ModelBank, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, bank)?;
    Ok(())
}
