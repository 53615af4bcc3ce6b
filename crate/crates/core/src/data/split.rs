use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::{Sample, SampleSet, Split};
use crate::error::{Error, Result};
use crate::seed;

/// Reassigns every sample's split by subject so no subject straddles two
/// splits. `ratios` are the train/val/test shares of subjects.
pub fn split_subject_disjoint(samples: Vec<Sample>, ratios: [f64; 3], seed: u64) -> Result<SampleSet> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut subjects: Vec<String> = samples
        .iter()
        .map(|s| s.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let wanted = ratios.iter().filter(|&&r| r > 0.0).count();
    if subjects.len() < wanted {
        return Err(Error::Data(format!(
            "{} subjects cannot fill {wanted} non-empty splits",
            subjects.len()
        )));
    }
    subjects.shuffle(&mut seed::rng(seed::derive(seed, seed::stream::SPLIT)));
    let counts = apportion(subjects.len(), &ratios);

    let mut assignment = std::collections::HashMap::new();
    let mut it = subjects.into_iter();
    for (split, n) in Split::ALL.into_iter().zip(counts) {
        for subject in it.by_ref().take(n) {
            assignment.insert(subject, split);
        }
    }
    let samples = samples
        .into_iter()
        .map(|mut s| {
            s.split = assignment[&s.subject_id];
            s
        })
        .collect();
    Ok(SampleSet::new(samples))
}

/// Largest-remainder apportionment; every positive ratio gets at least one.
fn apportion(total: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = total - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).unwrap();
            counts[donor] -= 1;
            counts[i] = 1;
        }
    }
    counts
}
