//! `LATC` checkpoint files.
//!
//! Layout (little-endian): magic `LATC`, version `u32`, curvature `f64`,
//! config block and metadata block (each `u32` length + `key = value` text),
//! shared records (`u32` count), adapter banks (`u32` subject count, then per
//! subject its id, a record count and the records), prototype block
//! (`u32` classes, `u32` dim, `f32` values) and a CRC32 of all preceding
//! bytes. A record is `u32` name length, name, dtype `u8` (0 = f32),
//! `u32` rank, `u32` dims, then the `f32` payload.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::config::{parse_kv_lines, LatteConfig};
use super::latte::{is_subject_param, LatteModel};
use crate::autodiff::Tensor;
use crate::binio::{check_crc, check_header, Reader, Writer};
use crate::error::{FormatError, Result};
use crate::layers::Module;

pub const MAGIC: &[u8; 4] = b"LATC";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// A model plus free-form training metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: LatteModel,
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(model: LatteModel) -> Self {
        Self {
            model,
            metadata: Vec::new(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn subject_of(name: &str) -> Option<u32> {
    let rest = [".lora.s", ".boost.s"]
        .iter()
        .find_map(|m| name.find(m).map(|i| &name[i + m.len()..]))?;
    let end = rest.find('.')?;
    rest[..end].parse().ok()
}

fn write_record(w: &mut Writer, name: &str, t: &Tensor) {
    w.block(name.as_bytes());
    w.u8(DTYPE_F32);
    w.u32(2);
    w.u32(t.rows() as u32);
    w.u32(t.cols() as u32);
    for v in t.data() {
        w.f32(*v as f32);
    }
}

fn read_record(r: &mut Reader) -> Result<(String, Tensor), FormatError> {
    let name = std::str::from_utf8(r.block()?)
        .map_err(|_| FormatError::Malformed("record name is not UTF-8".into()))?
        .to_string();
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(FormatError::Malformed(format!(
            "{name}: unknown dtype {dtype}"
        )));
    }
    let rank = r.u32()?;
    if rank != 2 {
        return Err(FormatError::Malformed(format!(
            "{name}: rank {rank}, expected 2"
        )));
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let n = rows
        .checked_mul(cols)
        .filter(|n| *n <= r.remaining() / 4)
        .ok_or(FormatError::Truncated {
            needed: r.pos() + rows.saturating_mul(cols).saturating_mul(4),
            found: r.pos() + r.remaining(),
        })?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.f32()? as f64);
    }
    Ok((name, Tensor::from_vec(rows, cols, data)))
}

pub fn write_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let m = &ck.model;
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.f64(m.curvature.value());
    w.block(m.config.to_text().as_bytes());
    let mut meta = String::new();
    for (k, v) in &ck.metadata {
        meta.push_str(&format!("{k} = {v}\n"));
    }
    w.block(meta.as_bytes());

    let mut shared: Vec<(String, Tensor)> = Vec::new();
    let mut banks: BTreeMap<u32, Vec<(String, Tensor)>> = BTreeMap::new();
    let proto_name = m.prototypes.space.name.clone();
    m.visit(&mut |p| {
        if p.name == proto_name {
            return;
        }
        if is_subject_param(&p.name) {
            let s = subject_of(&p.name).expect("adapter names carry a subject id");
            banks
                .entry(s)
                .or_default()
                .push((p.name.clone(), p.value.clone()));
        } else {
            shared.push((p.name.clone(), p.value.clone()));
        }
    });
    m.visit_buffers(&mut |name, t| shared.push((name.to_string(), t.clone())));
    for s in &m.subjects {
        banks.entry(*s).or_default();
    }

    w.u32(shared.len() as u32);
    for (name, t) in &shared {
        write_record(&mut w, name, t);
    }
    w.u32(banks.len() as u32);
    for (s, recs) in &banks {
        w.u32(*s);
        w.u32(recs.len() as u32);
        for (name, t) in recs {
            write_record(&mut w, name, t);
        }
    }
    let protos = &m.prototypes.space.value;
    w.u32(protos.rows() as u32);
    w.u32(protos.cols() as u32);
    for v in protos.data() {
        w.f32(*v as f32);
    }
    w.finish()
}

pub fn read_checkpoint(data: &[u8]) -> Result<Checkpoint> {
    check_header(data, MAGIC, VERSION)?;
    let mut r = Reader::new(data);
    r.take(8)?;
    let curvature = r.f64()?;
    let config_text = r.text_block()?.to_string();
    let meta_text = r.text_block()?.to_string();
    let mut records: HashMap<String, Tensor> = HashMap::new();
    let push = |records: &mut HashMap<String, Tensor>, (name, t): (String, Tensor)| {
        if records.insert(name.clone(), t).is_some() {
            return Err(FormatError::Malformed(format!("duplicate record {name}")));
        }
        Ok(())
    };
    let n_shared = r.u32()?;
    for _ in 0..n_shared {
        let rec = read_record(&mut r)?;
        push(&mut records, rec)?;
    }
    let n_banks = r.u32()?;
    let mut subjects = Vec::new();
    for _ in 0..n_banks {
        subjects.push(r.u32()?);
        let n = r.u32()?;
        for _ in 0..n {
            let rec = read_record(&mut r)?;
            push(&mut records, rec)?;
        }
    }
    let classes = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut proto = Vec::new();
    for _ in 0..classes.saturating_mul(dim) {
        proto.push(r.f32()? as f64);
    }
    if r.remaining() < 4 {
        return Err(FormatError::Truncated {
            needed: r.pos() + 4,
            found: data.len(),
        }
        .into());
    }
    if r.remaining() > 4 {
        return Err(FormatError::Malformed(format!(
            "{} unexpected trailing bytes",
            r.remaining() - 4
        ))
        .into());
    }
    check_crc(data)?;

    let config = LatteConfig::from_text(&config_text)
        .map_err(|e| FormatError::Malformed(format!("config block: {e}")))?;
    if config.curvature.to_bits() != curvature.to_bits() {
        return Err(FormatError::Malformed("curvature disagrees with config".into()).into());
    }
    let metadata = parse_kv_lines(&meta_text)
        .map_err(|e| FormatError::Malformed(format!("metadata block: {e}")))?;
    let mut model = LatteModel::new(&config, &subjects, 0)
        .map_err(|e| FormatError::Malformed(format!("config block: {e}")))?;

    let proto_name = model.prototypes.space.name.clone();
    let mut missing: Option<String> = None;
    model.visit_mut(&mut |p| {
        if p.name == proto_name {
            return;
        }
        match records.remove(&p.name) {
            Some(t) if t.shape() == p.value.shape() => p.value = t,
            _ => {
                missing.get_or_insert_with(|| p.name.clone());
            }
        }
    });
    model.visit_buffers_mut(&mut |name, t| match records.remove(name) {
        Some(v) if v.shape() == t.shape() => *t = v,
        _ => {
            missing.get_or_insert_with(|| name.to_string());
        }
    });
    if let Some(name) = missing {
        return Err(FormatError::Malformed(format!("missing or misshapen record {name}")).into());
    }
    if let Some(name) = records.keys().min() {
        return Err(FormatError::Malformed(format!("unexpected record {name}")).into());
    }
    if model.prototypes.space.value.shape() != (classes, dim) {
        return Err(FormatError::Malformed("prototype block shape".into()).into());
    }
    model.prototypes.space.value = Tensor::from_vec(classes, dim, proto);
    Ok(Checkpoint { model, metadata })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = std::fs::read(path)?;
    read_checkpoint(&data)
}
