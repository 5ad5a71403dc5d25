use crate::error::{LatteError, Result};

/// `w` evenly spread windows of length `L = ⌈T/w⌉` over a length-`T`
/// sequence; window `i` (0-based) starts at `⌊i·(T−L)/max(w−1, 1)⌋`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patches {
    pub len: usize,
    pub offsets: Vec<usize>,
}

pub fn patch_layout(t: usize, w: usize) -> Result<Patches> {
    if w == 0 || w > t {
        return Err(LatteError::InvalidArgument(format!(
            "window count {w} must lie in 1..={t}"
        )));
    }
    let len = t.div_ceil(w);
    let denom = (w - 1).max(1);
    let offsets = (0..w).map(|i| i * (t - len) / denom).collect();
    Ok(Patches { len, offsets })
}

impl Patches {
    /// Source row, within one sequence, of every patched row.
    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.offsets
            .iter()
            .flat_map(move |&o| (0..self.len).map(move |l| o + l))
    }
}
