use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{LatteError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    /// First session trains (one trial in eight validates), the rest test.
    InstanceWise,
    /// First four sessions train (one trial in four validates), the rest test.
    SessionWise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitScheme {
    pub kind: SplitKind,
    /// Every `val_every`-th training trial goes to validation.
    pub val_every: usize,
    pub train_sessions: usize,
}

impl SplitScheme {
    pub fn new(kind: SplitKind) -> Self {
        match kind {
            SplitKind::InstanceWise => Self {
                kind,
                val_every: 8,
                train_sessions: 1,
            },
            SplitKind::SessionWise => Self {
                kind,
                val_every: 4,
                train_sessions: 4,
            },
        }
    }
}

/// Indices into the source dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits per subject by session; validation trials are drawn stratified by
/// label from the training sessions.
pub fn split_dataset(ds: &Dataset, scheme: &SplitScheme, seed: u64) -> Result<Splits> {
    if scheme.val_every == 0 || scheme.train_sessions == 0 {
        return Err(LatteError::InvalidArgument(
            "split needs val_every >= 1 and train_sessions >= 1".into(),
        ));
    }
    let mut by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, t) in ds.trials.iter().enumerate() {
        by_subject.entry(t.subject).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Splits::default();
    for (subject, idx) in by_subject {
        let mut sessions: Vec<u32> = idx.iter().map(|&i| ds.trials[i].session).collect();
        sessions.sort_unstable();
        sessions.dedup();
        if sessions.len() <= scheme.train_sessions {
            return Err(LatteError::InvalidArgument(format!(
                "subject {subject} has {} session(s); this split needs at least {}",
                sessions.len(),
                scheme.train_sessions + 1
            )));
        }
        let train_sessions = &sessions[..scheme.train_sessions];
        let mut by_label: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &i in &idx {
            let t = &ds.trials[i];
            if train_sessions.contains(&t.session) {
                by_label.entry(t.label).or_default().push(i);
            } else {
                out.test.push(i);
            }
        }
        let mut ordered = Vec::new();
        for (_, mut group) in by_label {
            group.shuffle(&mut rng);
            ordered.extend(group);
        }
        for (p, i) in ordered.into_iter().enumerate() {
            if p % scheme.val_every == scheme.val_every - 1 {
                out.val.push(i);
            } else {
                out.train.push(i);
            }
        }
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}
