//! AUROC, multi-run aggregation and salience entropy.

use serde::{Deserialize, Serialize};

use crate::data::SaliencyMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    /// Higher means more anomalous.
    pub score: f64,
    pub label: u8,
}

impl ScoredSample {
    pub fn new(score: f64, label: u8) -> Self {
        Self { score, label }
    }
}

/// Mann–Whitney AUROC with ties counted as half, via one sort.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Data(format!("non-finite score {}", s.score)));
    }
    let pos = samples.iter().filter(|s| s.label == 1).count() as u128;
    let neg = samples.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    // twice the Mann–Whitney U, kept integral so the result is exact
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    for group in sorted.chunk_by(|a, b| a.score == b.score) {
        let p = group.iter().filter(|s| s.label == 1).count() as u128;
        let n = group.len() as u128 - p;
        twice_u += 2 * p * neg_below + p * n;
        neg_below += n;
    }
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// Arithmetic mean and sample standard deviation; std is 0 for one value.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("cannot aggregate an empty list".into()));
    }
    // Welford
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let std = if values.len() > 1 {
        (m2 / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, std))
}

/// Shannon entropy of the map treated as a distribution, divided by
/// `ln(pixel count)`; 0 for single-pixel maps.
pub fn salience_entropy(map: &SaliencyMap) -> Result<f64> {
    let total = map.sum();
    if total <= 0.0 {
        return Err(Error::UndefinedMetric("salience entropy of an all-zero map".into()));
    }
    let n = map.values().len();
    if n == 1 {
        return Ok(0.0);
    }
    let h: f64 = map
        .values()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok((h / (n as f64).ln()).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scored(scores: &[f64], labels: &[u8]) -> Vec<ScoredSample> {
        scores.iter().zip(labels).map(|(&s, &l)| ScoredSample::new(s, l)).collect()
    }

    fn brute_force(s: &[ScoredSample]) -> f64 {
        let (mut num, mut den) = (0u64, 0u64);
        for p in s.iter().filter(|s| s.label == 1) {
            for n in s.iter().filter(|s| s.label == 0) {
                den += 2;
                num += match p.score.partial_cmp(&n.score).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
        num as f64 / den as f64
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&scored(&[0.9, 0.1], &[1, 0])).unwrap(), 1.0);
        assert_eq!(auroc(&scored(&[0.3; 6], &[1, 0, 1, 0, 0, 1])).unwrap(), 0.5);
        assert!(matches!(auroc(&scored(&[0.1, 0.2], &[1, 1])), Err(Error::UndefinedMetric(_))));
        assert!(auroc(&scored(&[f64::NAN, 0.2], &[1, 0])).is_err());
    }

    #[test]
    fn auroc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s: Vec<ScoredSample> = (0..50)
                .map(|i| ScoredSample::new(rng.random_range(0..12) as f64 / 4.0, (i % 3 == 0) as u8))
                .collect();
            assert_eq!(auroc(&s).unwrap(), brute_force(&s));
        }
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[0.9]).unwrap(), (0.9, 0.0));
        let (m, s) = aggregate(&[0.8, 1.0]).unwrap();
        assert!((m - 0.9).abs() < 1e-15 && (s - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(aggregate(&[0.7; 4]).unwrap().1, 0.0);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn aggregate_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..10).map(|_| rng.random()).collect();
        let mean = v.iter().sum::<f64>() / 10.0;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9.0;
        let (m, s) = aggregate(&v).unwrap();
        assert!((m - mean).abs() < 1e-12 && (s - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        let uniform = SaliencyMap::new(4, 4, vec![0.3; 16]).unwrap();
        assert!((salience_entropy(&uniform).unwrap() - 1.0).abs() < 1e-12);
        let mut hot = vec![0.0; 16];
        hot[5] = 0.8;
        assert_eq!(salience_entropy(&SaliencyMap::new(4, 4, hot).unwrap()).unwrap(), 0.0);
        assert!(matches!(
            salience_entropy(&SaliencyMap::zeros(4, 4)),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn entropy_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v: Vec<f32> = (0..64).map(|_| rng.random()).collect();
        let total: f64 = v.iter().map(|&x| x as f64).sum();
        let mut h = 0.0;
        for &x in &v {
            let p = x as f64 / total;
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        let got = salience_entropy(&SaliencyMap::new(8, 8, v).unwrap()).unwrap();
        assert!((got - h / 64f64.ln()).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn auroc_monotone_invariant(raw in prop::collection::vec((0u8..20, any::<bool>()), 2..60)) {
            let mut s: Vec<ScoredSample> = raw.iter().map(|&(v, l)| ScoredSample::new(v as f64, l as u8)).collect();
            s[0].label = 0;
            s[1].label = 1;
            let base = auroc(&s).unwrap();
            let t: Vec<ScoredSample> = s.iter().map(|x| ScoredSample::new(x.score.powi(3) * 2.0 + 1.0, x.label)).collect();
            prop_assert_eq!(auroc(&t).unwrap(), base);
            let e: Vec<ScoredSample> = s.iter().map(|x| ScoredSample::new((x.score / 7.0).exp(), x.label)).collect();
            prop_assert_eq!(auroc(&e).unwrap(), base);
            prop_assert_eq!(base, brute_force(&s));
        }

        #[test]
        fn auroc_flip_symmetry(raw in prop::collection::vec((-50i32..50, any::<bool>()), 2..60)) {
            let mut s: Vec<ScoredSample> = raw.iter().map(|&(v, l)| ScoredSample::new(v as f64 / 8.0, l as u8)).collect();
            s[0].label = 0;
            s[1].label = 1;
            let flipped: Vec<ScoredSample> = s.iter().map(|x| ScoredSample::new(-x.score, 1 - x.label)).collect();
            prop_assert_eq!(auroc(&s).unwrap(), auroc(&flipped).unwrap());
        }

        #[test]
        fn mean_within_range(v in prop::collection::vec(-1e3f64..1e3, 1..30)) {
            let (m, s) = aggregate(&v).unwrap();
            let lo = v.iter().cloned().fold(f64::MAX, f64::min);
            let hi = v.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
            prop_assert!(s >= 0.0);
        }

        #[test]
        fn entropy_scale_invariant(v in prop::collection::vec(0.0f32..0.5, 4..40), k in 0.1f32..2.0) {
            prop_assume!(v.iter().any(|&x| x > 0.0));
            let n = v.len();
            let a = salience_entropy(&SaliencyMap::new(n, 1, v.clone()).unwrap()).unwrap();
            let scaled: Vec<f32> = v.iter().map(|&x| x * k).collect();
            let b = salience_entropy(&SaliencyMap::new(n, 1, scaled).unwrap()).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
