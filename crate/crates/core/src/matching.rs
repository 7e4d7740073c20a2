//! Nearest-neighbour descriptor matching and threshold sweeps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::Descriptor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L2,
    L1,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::L2 => "l2",
            Metric::L1 => "l1",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "euclidean" => Ok(Metric::L2),
            "l1" | "manhattan" => Ok(Metric::L1),
            _ => Err(Error::InvalidArgument(format!("unknown metric '{s}' (expected l2 or l1)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub i: usize,
    pub j: usize,
    pub d: f64,
}

pub fn raw_distance(p: &[f64], q: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::L2 => p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        Metric::L1 => p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum(),
    }
}

/// Distance between two descriptors; `+inf` if either is degenerate.
pub fn distance(p: &Descriptor, q: &Descriptor, metric: Metric) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(p.dim(), q.dim()));
    }
    if p.degenerate || q.degenerate {
        return Ok(f64::INFINITY);
    }
    Ok(raw_distance(&p.values, &q.values, metric))
}

/// For every query in `a`, its nearest neighbour in `b` (ties to the smaller
/// index), sorted ascending by distance with a stable order. Queries with no
/// finite-distance neighbour, such as degenerate descriptors, produce no candidate.
pub fn match_all(a: &[Descriptor], b: &[Descriptor], metric: Metric) -> Result<Vec<MatchCandidate>> {
    if let (Some(p), Some(q)) = (a.first(), b.first()) {
        if let Some(bad) = a.iter().chain(b).find(|d| d.dim() != p.dim()) {
            return Err(Error::DimensionMismatch(p.dim().max(q.dim()), bad.dim()));
        }
    }
    let mut out: Vec<MatchCandidate> = a
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            if p.degenerate {
                return None;
            }
            let mut best: Option<(usize, f64)> = None;
            for (j, q) in b.iter().enumerate() {
                if q.degenerate {
                    continue;
                }
                let d = raw_distance(&p.values, &q.values, metric);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            best.map(|(j, d)| MatchCandidate { i, j, d })
        })
        .collect();
    out.sort_by(|x, y| x.d.total_cmp(&y.d));
    Ok(out)
}

/// Prefix lengths of the distance-sorted candidates at which the threshold
/// admits a new distance value; equal distances fall into one cut.
pub fn threshold_sweep(cands: &[MatchCandidate]) -> Vec<usize> {
    let mut cuts = Vec::new();
    for k in 1..=cands.len() {
        if k == cands.len() || cands[k].d != cands[k - 1].d {
            cuts.push(k);
        }
    }
    cuts
}

/// `i,j,distance,label` rows; the label column is empty when unknown.
pub fn write_matches_csv<W: Write>(mut w: W, cands: &[MatchCandidate], labels: Option<&[bool]>) -> std::io::Result<()> {
    writeln!(w, "i,j,distance,label")?;
    for (k, c) in cands.iter().enumerate() {
        let label = match labels.and_then(|l| l.get(k)) {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        writeln!(w, "{},{},{},{}", c.i, c.j, c.d, label)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::DescriptorKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desc(v: &[f64]) -> Descriptor {
        Descriptor::new(DescriptorKind::Sift, v.to_vec())
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Descriptor> {
        (0..n).map(|_| desc(&(0..dim).map(|_| rng.gen::<f64>()).collect::<Vec<_>>())).collect()
    }

    /// Exhaustive argmin with explicit tie-breaking.
    fn oracle(a: &[Descriptor], b: &[Descriptor], metric: Metric) -> Vec<MatchCandidate> {
        let mut out = Vec::new();
        for (i, p) in a.iter().enumerate() {
            let ds: Vec<f64> = b.iter().map(|q| distance(p, q, metric).unwrap()).collect();
            let min = ds.iter().cloned().fold(f64::INFINITY, f64::min);
            if min.is_finite() {
                let j = ds.iter().position(|&d| d == min).unwrap();
                out.push(MatchCandidate { i, j, d: min });
            }
        }
        out.sort_by(|x, y| x.d.partial_cmp(&y.d).unwrap());
        out
    }

    #[test]
    fn distance_examples() {
        let p = desc(&[0.6, 0.8]);
        assert_eq!(distance(&p, &p, Metric::L2).unwrap(), 0.0);
        let e1 = desc(&[1.0, 0.0]);
        let e2 = desc(&[0.0, 1.0]);
        assert!((distance(&e1, &e2, Metric::L2).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let q = desc(&[0.8, 0.6]);
        assert!((distance(&p, &q, Metric::L1).unwrap() - 0.4).abs() < 1e-15);
        assert!(matches!(distance(&p, &desc(&[1.0]), Metric::L2), Err(Error::DimensionMismatch(2, 1))));
        let z = Descriptor::degenerate(DescriptorKind::Sift, 2);
        assert_eq!(distance(&p, &z, Metric::L2).unwrap(), f64::INFINITY);
    }

    #[test]
    fn self_matching() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_set(&mut rng, 12, 8);
        let m = match_all(&a, &a, Metric::L2).unwrap();
        assert_eq!(m.len(), 12);
        assert!(m.iter().all(|c| c.i == c.j && c.d == 0.0));
        // duplicates: the smaller index wins
        let dup = vec![a[0].clone(), a[0].clone()];
        let m = match_all(&dup, &dup, Metric::L2).unwrap();
        assert!(m.iter().all(|c| c.j == 0));
        assert_eq!(match_all(&a[..3], &a, Metric::L1).unwrap().len(), 3);
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let a = random_set(&mut rng, 20, 16);
            let b = random_set(&mut rng, 30, 16);
            for metric in [Metric::L2, Metric::L1] {
                assert_eq!(match_all(&a, &b, metric).unwrap(), oracle(&a, &b, metric));
            }
        }
    }

    #[test]
    fn degenerate_queries_are_skipped() {
        let mut a = vec![desc(&[1.0, 0.0]), Descriptor::degenerate(DescriptorKind::Sift, 2)];
        let b = vec![Descriptor::degenerate(DescriptorKind::Sift, 2), desc(&[0.0, 1.0])];
        let m = match_all(&a, &b, Metric::L2).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].i, m[0].j), (0, 1));
        a.push(desc(&[1.0]));
        assert!(match_all(&a, &b, Metric::L2).is_err());
    }

    #[test]
    fn sweep_cuts() {
        let c = |d| MatchCandidate { i: 0, j: 0, d };
        let distinct: Vec<_> = [0.1, 0.2, 0.3, 0.4, 0.5].into_iter().map(c).collect();
        assert_eq!(threshold_sweep(&distinct), vec![1, 2, 3, 4, 5]);
        let dup: Vec<_> = [0.1, 0.2, 0.2, 0.3].into_iter().map(c).collect();
        assert_eq!(threshold_sweep(&dup), vec![1, 3, 4]);
        assert!(threshold_sweep(&[]).is_empty());
    }

    #[test]
    fn csv_rows() {
        let cands = [MatchCandidate { i: 2, j: 5, d: 0.25 }, MatchCandidate { i: 0, j: 1, d: 0.5 }];
        let mut buf = Vec::new();
        write_matches_csv(&mut buf, &cands, Some(&[true, false])).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "i,j,distance,label\n2,5,0.25,1\n0,1,0.5,0\n");
    }

    proptest! {
        #[test]
        fn permuting_b_keeps_distances(seed in 0u64..1000, shift in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_set(&mut rng, 10, 6);
            let b = random_set(&mut rng, 10, 6);
            let mut rotated = b.clone();
            rotated.rotate_left(shift);
            let m1 = match_all(&a, &b, Metric::L2).unwrap();
            let m2 = match_all(&a, &rotated, Metric::L2).unwrap();
            let d1: Vec<f64> = m1.iter().map(|c| c.d).collect();
            let d2: Vec<f64> = m2.iter().map(|c| c.d).collect();
            prop_assert_eq!(d1, d2);
            for c in &m2 {
                let orig = m1.iter().find(|x| x.i == c.i).unwrap();
                prop_assert_eq!((c.j + shift) % 10, orig.j);
            }
        }

        #[test]
        fn triangle_inequality(
            x in prop::collection::vec(-1.0f64..1.0, 8),
            y in prop::collection::vec(-1.0f64..1.0, 8),
            z in prop::collection::vec(-1.0f64..1.0, 8),
        ) {
            for m in [Metric::L2, Metric::L1] {
                let (xy, yz, xz) = (raw_distance(&x, &y, m), raw_distance(&y, &z, m), raw_distance(&x, &z, m));
                prop_assert!(xz <= xy + yz + 1e-9);
                prop_assert!((xy - raw_distance(&y, &x, m)).abs() <= 1e-12);
            }
        }
    }
}
