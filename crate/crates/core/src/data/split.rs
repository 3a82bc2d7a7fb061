//! Subject-dependent and subject-independent train/validation/test splits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::Dataset;
use crate::error::{invalid, Error, Result};
use crate::params::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// Samples are shuffled individually; a subject may appear in every split.
    SubjectDependent,
    /// Whole subjects are assigned to exactly one split.
    SubjectIndependent,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::SubjectDependent => "sd",
            Protocol::SubjectIndependent => "si",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sd" => Ok(Protocol::SubjectDependent),
            "si" => Ok(Protocol::SubjectIndependent),
            other => Err(invalid(format!("unknown split protocol {other:?}, expected sd or si"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub protocol: Protocol,
    /// `(train, val, test)` fractions summing to one.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            protocol: Protocol::SubjectIndependent,
            ratios: [0.6, 0.2, 0.2],
            seed: 0,
        }
    }
}

/// Sample indices of each part, in assignment order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles within each class, then interleaves classes by relative rank so
/// that every prefix holds roughly the overall class proportions.
fn stratified_order(classes: &[usize], rng: &mut Rng) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (unit, &k) in classes.iter().enumerate() {
        by_class.entry(k).or_default().push(unit);
    }
    let mut keyed = Vec::with_capacity(classes.len());
    for (&k, units) in by_class.iter_mut() {
        units.shuffle(rng);
        let n = units.len() as f64;
        for (rank, &unit) in units.iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / n, k, unit));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, unit)| unit).collect()
}

fn part_sizes(n: usize, ratios: [f64; 3], at_least_one: bool) -> [usize; 3] {
    let floor = |r: f64| (r * n as f64 + 1e-9).floor() as usize;
    let (mut train, mut val) = (floor(ratios[0]), floor(ratios[1]));
    if at_least_one {
        train = train.max(1);
        val = val.max(1);
        while train + val > n - 1 {
            if train >= val {
                train -= 1;
            } else {
                val -= 1;
            }
        }
    }
    [train, val, n - train - val]
}

pub fn split_indices(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    if ds.is_empty() {
        return Err(invalid("cannot split an empty dataset"));
    }
    if spec.ratios.iter().any(|&r| !(r > 0.0)) || (spec.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("split ratios must be positive and sum to 1, got {:?}", spec.ratios)));
    }
    let mut rng = Rng::seed_from_u64(spec.seed);
    let parts: [Vec<usize>; 3] = match spec.protocol {
        Protocol::SubjectDependent => {
            let order = stratified_order(&ds.labels(), &mut rng);
            let [a, b, _] = part_sizes(order.len(), spec.ratios, false);
            [order[..a].to_vec(), order[a..a + b].to_vec(), order[a + b..].to_vec()]
        }
        Protocol::SubjectIndependent => {
            let subjects = ds.subjects();
            if subjects.len() < 3 {
                return Err(invalid(format!(
                    "subject-independent split needs at least 3 subjects, found {}",
                    subjects.len()
                )));
            }
            let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for (i, s) in ds.samples().iter().enumerate() {
                members.entry(s.subject).or_default().push(i);
            }
            // A subject's class is its most frequent label, lowest on ties.
            let classes: Vec<usize> = subjects
                .iter()
                .map(|id| {
                    let mut counts = vec![0usize; ds.n_classes()];
                    for &i in &members[id] {
                        counts[ds.samples()[i].label] += 1;
                    }
                    (0..counts.len()).fold(0, |best, k| if counts[k] > counts[best] { k } else { best })
                })
                .collect();
            let order = stratified_order(&classes, &mut rng);
            let [a, b, _] = part_sizes(order.len(), spec.ratios, true);
            let gather = |units: &[usize]| units.iter().flat_map(|&u| members[&subjects[u]].clone()).collect();
            [gather(&order[..a]), gather(&order[a..a + b]), gather(&order[a + b..])]
        }
    };
    let [train, val, test] = parts;
    Ok(Split { train, val, test })
}

/// `(train, val, test)` datasets.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let s = split_indices(ds, spec)?;
    Ok((ds.subset(&s.train), ds.subset(&s.val), ds.subset(&s.test)))
}
