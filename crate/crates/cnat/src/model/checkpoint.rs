//! Checkpoint serialization. Layout: the magic string `CNAT1`, a
//! length-prefixed textual config block, then named parameter blobs as
//! little-endian 32-bit floats with shape headers. All integers are
//! little-endian u32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Classifier, ClassifierConfig, CnatModel, LmConfig, LmModel, ModelConfig};
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Scalar};

const MAGIC: &[u8; 5] = b"CNAT1";

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::BadCheckpoint(format!("value {v} exceeds u32 range")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf) as usize)
}

/// Write `config_text` and every parameter in `store` to `path`.
pub fn save<F: Scalar>(path: &Path, config_text: &str, store: &ParamStore<F>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, config_text.len())?;
    w.write_all(config_text.as_bytes())?;
    write_u32(&mut w, store.len())?;
    for p in store.iter() {
        write_u32(&mut w, p.name.len())?;
        w.write_all(p.name.as_bytes())?;
        write_u32(&mut w, p.shape[0])?;
        write_u32(&mut w, p.shape[1])?;
        for v in &p.data {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One deserialized parameter blob.
pub struct RawParam {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f32>,
}

/// Read back the config text and the raw parameter blobs.
pub fn load_raw(path: &Path) -> Result<(String, Vec<RawParam>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::BadCheckpoint("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::BadCheckpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let cfg_len = read_u32(&mut r)?;
    let mut cfg = vec![0u8; cfg_len];
    r.read_exact(&mut cfg)
        .map_err(|_| Error::BadCheckpoint("truncated config block".into()))?;
    let config_text = String::from_utf8(cfg)
        .map_err(|_| Error::BadCheckpoint("config block is not UTF-8".into()))?;
    let count = read_u32(&mut r)?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)?;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| Error::BadCheckpoint("truncated parameter name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::BadCheckpoint("parameter name is not UTF-8".into()))?;
        let rows = read_u32(&mut r)?;
        let cols = read_u32(&mut r)?;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 4];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf).map_err(|_| {
                Error::BadCheckpoint(format!("truncated data for parameter `{name}`"))
            })?;
            data.push(f32::from_le_bytes(buf));
        }
        params.push(RawParam {
            name,
            shape: [rows, cols],
            data,
        });
    }
    Ok((config_text, params))
}

/// Fill `store` from raw blobs, matching by name and checking shapes.
pub fn fill_store<F: Scalar>(store: &mut ParamStore<F>, raw: &[RawParam]) -> Result<()> {
    use std::collections::HashMap;
    let by_name: HashMap<&str, &RawParam> = raw.iter().map(|p| (p.name.as_str(), p)).collect();
    if by_name.len() != raw.len() {
        return Err(Error::BadCheckpoint("duplicate parameter name".into()));
    }
    if raw.len() != store.len() {
        return Err(Error::BadCheckpoint(format!(
            "parameter count mismatch: checkpoint has {}, model expects {}",
            raw.len(),
            store.len()
        )));
    }
    for p in store.iter_mut() {
        let r = by_name.get(p.name.as_str()).ok_or_else(|| {
            Error::BadCheckpoint(format!("missing parameter `{}`", p.name))
        })?;
        if r.shape != p.shape {
            return Err(Error::BadCheckpoint(format!(
                "shape mismatch for `{}`: checkpoint {:?}, model {:?}",
                p.name, r.shape, p.shape
            )));
        }
        p.data = r.data.iter().map(|&v| F::from_f64(v as f64)).collect();
        for g in &mut p.grad {
            *g = F::zero();
        }
    }
    Ok(())
}

fn kind_of(config_text: &str) -> Result<String> {
    let cfg = crate::data::config::ConfigFile::parse(config_text)?;
    Ok(cfg.get("", "kind").unwrap_or("cnat").to_string())
}

fn expect_kind(config_text: &str, want: &str) -> Result<()> {
    let got = kind_of(config_text)?;
    if got != want {
        return Err(Error::BadCheckpoint(format!(
            "checkpoint holds a `{got}` model, expected `{want}`"
        )));
    }
    Ok(())
}

pub fn save_model<F: Scalar>(path: &Path, model: &CnatModel<F>) -> Result<()> {
    save(path, &model.config.to_text(), &model.params)
}

pub fn load_model<F: Scalar>(path: &Path) -> Result<CnatModel<F>> {
    let (text, raw) = load_raw(path)?;
    expect_kind(&text, "cnat")?;
    let config = ModelConfig::from_text(&text)?;
    let mut model = CnatModel::new(config, 0)?;
    fill_store(&mut model.params, &raw)?;
    Ok(model)
}

pub fn save_lm<F: Scalar>(path: &Path, lm: &LmModel<F>) -> Result<()> {
    save(path, &lm.config.to_text(), &lm.params)
}

pub fn load_lm<F: Scalar>(path: &Path) -> Result<LmModel<F>> {
    let (text, raw) = load_raw(path)?;
    expect_kind(&text, "lm")?;
    let config = LmConfig::from_text(&text)?;
    let mut lm = LmModel::new(config, 0)?;
    fill_store(&mut lm.params, &raw)?;
    Ok(lm)
}

pub fn save_classifier<F: Scalar>(path: &Path, clf: &Classifier<F>) -> Result<()> {
    save(path, &clf.config.to_text(), &clf.params)
}

pub fn load_classifier<F: Scalar>(path: &Path) -> Result<Classifier<F>> {
    let (text, raw) = load_raw(path)?;
    expect_kind(&text, "classifier")?;
    let config = ClassifierConfig::from_text(&text)?;
    let mut clf = Classifier::new(config, 0)?;
    fill_store(&mut clf.params, &raw)?;
    Ok(clf)
}
