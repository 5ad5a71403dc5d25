use std::collections::BTreeMap;

/// Rows of a batch grouped by subject id, in ascending id order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubjectRows {
    pub rows: usize,
    pub groups: Vec<(u32, Vec<usize>)>,
}

impl SubjectRows {
    /// Each trial contributes `per_trial` consecutive rows.
    pub fn from_trials(subjects: &[u32], per_trial: usize) -> Self {
        let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &s) in subjects.iter().enumerate() {
            map.entry(s)
                .or_default()
                .extend(i * per_trial..(i + 1) * per_trial);
        }
        Self {
            rows: subjects.len() * per_trial,
            groups: map.into_iter().collect(),
        }
    }

    pub fn subjects(&self) -> impl Iterator<Item = u32> + '_ {
        self.groups.iter().map(|(s, _)| *s)
    }
}

/// How adapter banks treat subject ids they do not hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdapterPolicy {
    /// Unknown ids are an error (training).
    Strict,
    /// Unknown ids get a zero adapter (evaluation, held-out subjects).
    ZeroForUnknown,
    /// No adapter contribution for any row.
    Off,
}
