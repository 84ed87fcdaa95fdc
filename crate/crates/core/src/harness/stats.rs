use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// x tends to exceed y.
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedRank {
    pub w_plus: f64,
    /// Pairs with a nonzero difference.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Mid-ranks (1-based) of `values`, plus Σ(t³ − t) over tie groups.
fn ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (out, ties)
}

/// Number of subsets of {1..n} with each possible rank sum.
fn subset_sum_counts(n: usize) -> Vec<f64> {
    let max = n * (n + 1) / 2;
    let mut counts = vec![0.0; max + 1];
    counts[0] = 1.0;
    for k in 1..=n {
        for s in (k..=max).rev() {
            counts[s] += counts[s - k];
        }
    }
    counts
}

/// Paired one-sided Wilcoxon signed-rank test. Zero differences are dropped. The exact null
/// distribution is used for up to 50 untied pairs, the normal approximation with tie and
/// continuity corrections otherwise.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], alt: Alternative) -> Result<SignedRank> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch { expected: x.len(), got: y.len() });
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(SignedRank { w_plus: 0.0, n, p_value: 1.0, exact: true });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (r, ties) = ranks(&abs);
    let w_plus: f64 = d.iter().zip(&r).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    // Statistic whose large values favour the alternative.
    let w = match alt {
        Alternative::Greater => w_plus,
        Alternative::Less => total - w_plus,
    };
    if ties == 0.0 && n <= 50 {
        let counts = subset_sum_counts(n);
        let w_int = w.round() as usize;
        let tail: f64 = counts[w_int..].iter().sum();
        let p_value = tail / 2f64.powi(n as i32);
        return Ok(SignedRank { w_plus, n, p_value, exact: true });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    if !(var > 0.0) {
        return Ok(SignedRank { w_plus, n, p_value: 1.0, exact: false });
    }
    let z = (w - mean - 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(SignedRank { w_plus, n, p_value: 1.0 - normal.cdf(z), exact: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of `observed` counts against `probs`. Bins with zero probability
/// are left out; any count in such a bin gives p = 0.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<ChiSquareTest> {
    if observed.len() != probs.len() {
        return Err(Error::ShapeMismatch { expected: probs.len(), got: observed.len() });
    }
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        if p <= 0.0 {
            if o > 0 {
                return Ok(ChiSquareTest { statistic: f64::INFINITY, dof: 0, p_value: 0.0 });
            }
            continue;
        }
        let e = p * total as f64;
        stat += (o as f64 - e).powi(2) / e;
        bins += 1;
    }
    if bins <= 1 || total == 0 {
        return Ok(ChiSquareTest { statistic: 0.0, dof: 0, p_value: 1.0 });
    }
    let dof = bins - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(ChiSquareTest { statistic: stat, dof, p_value: 1.0 - dist.cdf(stat) })
}
