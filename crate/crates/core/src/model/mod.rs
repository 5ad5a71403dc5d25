//! The end-to-end classifier and its pretraining decoder.

mod checkpoint;
mod config;
mod decoder;
mod latte;
mod patching;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
};
pub use config::{bad_value, fmt_f64, parse_bool, parse_kv_lines, parse_num, LatteConfig};
pub use decoder::PretrainDecoder;
pub use latte::{Batch, LatteModel, ParameterReport, STAGES};
pub use patching::{patch_layout, Patches};
