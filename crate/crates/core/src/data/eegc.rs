//! `EEGC` dataset files.
//!
//! Layout (little-endian): magic `EEGC`, version `u32`; meta block of
//! channels, timesteps, classes, subjects, sessions and task code (`u32`
//! each); trial count `u64`; per trial subject, session and label (`u32`)
//! followed by `C × T` `f32` samples; CRC32 of all preceding bytes.

use std::path::Path;

use super::{Dataset, DatasetMeta, EegTrial, TaskTag};
use crate::binio::{check_crc, check_header, Reader, Writer};
use crate::error::{FormatError, Result};

pub const MAGIC: &[u8; 4] = b"EEGC";
pub const VERSION: u32 = 1;
const HEADER: usize = 8 + 6 * 4 + 8;

pub fn write_eegc(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let m = &ds.meta;
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    for v in [m.channels, m.timesteps, m.classes, m.subjects, m.sessions] {
        w.u32(v as u32);
    }
    w.u32(m.task.code());
    w.u64(ds.trials.len() as u64);
    for t in &ds.trials {
        w.u32(t.subject);
        w.u32(t.session);
        w.u32(t.label);
        for v in &t.samples {
            w.f32(*v);
        }
    }
    Ok(w.finish())
}

pub fn read_eegc(data: &[u8]) -> Result<Dataset> {
    check_header(data, MAGIC, VERSION)?;
    let mut r = Reader::new(data);
    r.take(8)?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let code = r.u32()?;
    let task = TaskTag::from_code(code)
        .ok_or_else(|| FormatError::Malformed(format!("unknown task code {code}")))?;
    let count = r.u64()?;
    let [channels, timesteps, classes, subjects, sessions] = dims;
    let record = 12 + 4 * channels * timesteps;
    let needed = (count as u128) * (record as u128) + HEADER as u128 + 4;
    if needed > data.len() as u128 {
        return Err(FormatError::Truncated {
            needed: usize::try_from(needed).unwrap_or(usize::MAX),
            found: data.len(),
        }
        .into());
    }
    if needed < data.len() as u128 {
        return Err(FormatError::Malformed(format!(
            "{} unexpected trailing bytes",
            data.len() as u128 - needed
        ))
        .into());
    }
    check_crc(data)?;

    let mut trials = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let subject = r.u32()?;
        let session = r.u32()?;
        let label = r.u32()?;
        let mut samples = Vec::with_capacity(channels * timesteps);
        for _ in 0..channels * timesteps {
            samples.push(r.f32()?);
        }
        trials.push(EegTrial {
            samples,
            label,
            subject,
            session,
        });
    }
    let ds = Dataset {
        meta: DatasetMeta {
            channels,
            timesteps,
            classes,
            subjects,
            sessions,
            task,
        },
        trials,
    };
    ds.validate()
        .map_err(|e| FormatError::Malformed(e.to_string()))?;
    Ok(ds)
}

pub fn save_eegc(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, write_eegc(ds)?)?;
    Ok(())
}

pub fn load_eegc(path: &Path) -> Result<Dataset> {
    read_eegc(&std::fs::read(path)?)
}
