//! Richardson extrapolation of eigenvalues to zero grid spacing.
//!
//! For each index `k` the points `(h(ℓ), λ_k(ℓ))` are interpolated by the
//! polynomial of lowest degree and evaluated at `h = 0` (Neville's scheme,
//! carried along with its derivative).

use std::collections::BTreeMap;
use std::io::Write;

use crate::eigensolver::EigenPair;
use crate::error::{Error, Result};
use crate::lattice::spacing;
use crate::symmetry::SymmetryLabel;

pub const DEFAULT_LEVELS: [u32; 3] = [4, 5, 6];

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationRecord {
    pub k: usize,
    pub levels: Vec<u32>,
    /// `(h, λ_k)` per level, in the order of `levels`.
    pub samples: Vec<(f64, f64)>,
    pub lambda_r: f64,
    pub slope_at_zero: f64,
}

impl ExtrapolationRecord {
    /// `(λ_k(finest) − λ_R)/λ_R`; `None` when `λ_R` vanishes.
    pub fn rel_diff(&self) -> Option<f64> {
        let finest = self.samples.iter().min_by(|a, b| a.0.total_cmp(&b.0))?.1;
        (self.lambda_r.abs() > 1e-9).then(|| (finest - self.lambda_r) / self.lambda_r)
    }
}

/// Value and first derivative at `h = 0` of the interpolating polynomial
/// through 2 to 5 samples with distinct `h`.
pub fn richardson(samples: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = samples.len();
    if !(2..=5).contains(&n) {
        return Err(Error::InvalidArgument(format!("richardson needs 2 to 5 samples, got {n}")));
    }
    for (i, &(h, y)) in samples.iter().enumerate() {
        if !(h.is_finite() && h > 0.0 && y.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample ({h}, {y}) must have finite h > 0 and finite λ")));
        }
        if samples[..i].iter().any(|&(g, _)| g == h) {
            return Err(Error::InvalidArgument(format!("duplicate h = {h}")));
        }
    }
    let x: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let mut p: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mut d = vec![0.0; n];
    // After pass `m`, p[i] holds the interpolant through samples i..=i+m at 0.
    for m in 1..n {
        for i in 0..n - m {
            let j = i + m;
            let w = x[i] - x[j];
            d[i] = (p[i] - x[j] * d[i] - p[i + 1] + x[i] * d[i + 1]) / w;
            p[i] = (-x[j] * p[i] + x[i] * p[i + 1]) / w;
        }
    }
    Ok((p[0], d[0]))
}

/// One record per index `k ≤ k_max`, matching eigenvalues across levels by
/// their sorted position.
pub fn extrapolate_spectrum(
    runs: &BTreeMap<u32, Vec<EigenPair>>,
    k_max: usize,
    levels: &[u32],
) -> Result<Vec<ExtrapolationRecord>> {
    let values: BTreeMap<u32, Vec<f64>> =
        runs.iter().map(|(&l, pairs)| (l, pairs.iter().map(|p| p.value).collect())).collect();
    extrapolate_values(&values, k_max, levels)
}

pub fn extrapolate_values(
    runs: &BTreeMap<u32, Vec<f64>>,
    k_max: usize,
    levels: &[u32],
) -> Result<Vec<ExtrapolationRecord>> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    for &l in levels {
        let have = runs.get(&l).map_or(0, Vec::len);
        if have < k_max {
            return Err(Error::InvalidArgument(format!("level {l} has {have} eigenvalues, {k_max} needed")));
        }
    }
    (1..=k_max)
        .map(|k| {
            let samples: Vec<(f64, f64)> = levels.iter().map(|&l| (spacing(l), runs[&l][k - 1])).collect();
            let (lambda_r, slope_at_zero) = richardson(&samples)?;
            Ok(ExtrapolationRecord { k, levels: levels.to_vec(), samples, lambda_r, slope_at_zero })
        })
        .collect()
}

/// Indices whose symmetry label differs between levels: a sign that sorted
/// order paired up different eigenfunctions.
pub fn label_mismatches(labels: &BTreeMap<u32, Vec<SymmetryLabel>>, k_max: usize) -> Vec<String> {
    (0..k_max)
        .filter_map(|i| {
            let seen: Vec<(u32, SymmetryLabel)> =
                labels.iter().filter_map(|(&l, ls)| ls.get(i).map(|&s| (l, s))).collect();
            let first = seen.first()?.1;
            seen.iter().any(|&(_, s)| s != first).then(|| {
                let detail: Vec<String> = seen.iter().map(|(l, s)| format!("level {l}: {s}")).collect();
                format!("k = {}: symmetry labels differ across levels ({})", i + 1, detail.join(", "))
            })
        })
        .collect()
}

/// CSV with header `k, lambda_l4, lambda_l5, lambda_l6, lambda_R, slope, rel_diff`
/// (one `lambda_l*` column per level).
pub fn write_csv<W: Write>(mut dst: W, records: &[ExtrapolationRecord]) -> Result<()> {
    let levels = records.first().map(|r| r.levels.clone()).unwrap_or_default();
    let mut header = vec!["k".to_string()];
    header.extend(levels.iter().map(|l| format!("lambda_l{l}")));
    header.extend(["lambda_R", "slope", "rel_diff"].map(String::from));
    writeln!(dst, "{}", header.join(", "))?;
    for r in records {
        let mut row = vec![r.k.to_string()];
        row.extend(r.samples.iter().map(|s| format!("{:.10}", s.1)));
        row.push(format!("{:.10}", r.lambda_r));
        row.push(format!("{:.6}", r.slope_at_zero));
        row.push(r.rel_diff().map(|d| format!("{d:.6e}")).unwrap_or_default());
        writeln!(dst, "{}", row.join(", "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_line() {
        let (v, s) = richardson(&[(1.0, 3.0), (0.5, 2.0)]).unwrap();
        assert!((v - 1.0).abs() < 1e-15 && (s - 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_data() {
        let (v, s) = richardson(&[(0.3, 7.5), (0.1, 7.5), (0.2, 7.5)]).unwrap();
        assert!((v - 7.5).abs() < 1e-13 && s.abs() < 1e-11);
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(richardson(&[(1.0, 3.0)]).is_err());
        assert!(richardson(&[(1.0, 3.0), (1.0, 2.0)]).is_err());
        assert!(richardson(&[(0.0, 3.0), (1.0, 2.0)]).is_err());
        assert!(richardson(&[(0.5, f64::NAN), (1.0, 2.0)]).is_err());
        assert!(richardson(&vec![(1.0, 1.0); 6]).is_err());
    }

    #[test]
    fn spectrum_needs_enough_pairs() {
        let mut runs = BTreeMap::new();
        runs.insert(4, vec![1.0, 2.0]);
        runs.insert(5, vec![1.0]);
        assert!(extrapolate_values(&runs, 2, &[4, 5]).is_err());
        assert!(extrapolate_values(&runs, 1, &[4, 6]).is_err());
        let recs = extrapolate_values(&runs, 1, &[4, 5]).unwrap();
        assert_eq!(recs[0].lambda_r, 1.0);
        assert_eq!(recs[0].rel_diff(), Some(0.0));
    }

    #[test]
    fn csv_layout() {
        let mut runs = BTreeMap::new();
        for l in [4, 5, 6] {
            runs.insert(l, vec![0.0, 10.0 + spacing(l)]);
        }
        let recs = extrapolate_values(&runs, 2, &DEFAULT_LEVELS).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k, lambda_l4, lambda_l5, lambda_l6, lambda_R, slope, rel_diff");
        assert!(lines[1].ends_with(", "), "{}", lines[1]);
        assert!(lines[2].starts_with("2, 10.0246913580"), "{}", lines[2]);
        assert!(lines[2].contains(", 10.0000000000, 1.000000, "), "{}", lines[2]);
    }

    #[test]
    fn mismatched_labels_are_reported() {
        let l = |s: &str| s.parse::<SymmetryLabel>().unwrap();
        let mut labels = BTreeMap::new();
        labels.insert(4, vec![l("++1"), l("+-2")]);
        labels.insert(5, vec![l("++1"), l("-+2")]);
        let w = label_mismatches(&labels, 2);
        assert_eq!(w.len(), 1);
        assert!(w[0].starts_with("k = 2"), "{}", w[0]);
    }

    proptest! {
        #[test]
        fn exact_on_polynomials(
            c in proptest::collection::vec(-100.0f64..100.0, 5),
            c0 in 1.0f64..100.0,
            picks in proptest::sample::subsequence((1u32..=7).collect::<Vec<_>>(), 2..=5),
        ) {
            let hs: Vec<f64> = picks.iter().map(|&l| spacing(l)).collect();
            let degree = hs.len() - 1;
            let poly = |h: f64| c0 + (1..=degree).map(|i| c[i - 1] * h.powi(i as i32)).sum::<f64>();
            let samples: Vec<(f64, f64)> = hs.iter().map(|&h| (h, poly(h))).collect();
            let (v, s) = richardson(&samples).unwrap();
            prop_assert!((v - c0).abs() <= 1e-10 * c0, "{} vs {}", v, c0);
            if degree >= 1 {
                prop_assert!((s - c[0]).abs() <= 1e-7 * (1.0 + c[0].abs()));
            }
        }

        #[test]
        fn order_does_not_matter(
            ys in proptest::collection::vec(-50.0f64..50.0, 4),
            shuffle in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let samples: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (spacing(i as u32 + 2), y)).collect();
            let permuted: Vec<(f64, f64)> = shuffle.iter().map(|&i| samples[i]).collect();
            let (a, da) = richardson(&samples).unwrap();
            let (b, db) = richardson(&permuted).unwrap();
            let scale = ys.iter().map(|y| y.abs()).fold(1.0, f64::max);
            prop_assert!((a - b).abs() <= 1e-9 * scale, "{} vs {}", a, b);
            prop_assert!((da - db).abs() <= 1e-7 * scale * 100.0);
        }
    }
}
