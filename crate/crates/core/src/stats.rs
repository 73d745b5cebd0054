//! Small numeric helpers: exact unit-mass snapping, streaming moments, and
//! distances between probability vectors.

use crate::error::{Error, Result};

/// Checks that `w` sums to one within `tol`, then rescales and adjusts the
/// largest entry so the floating-point sum over the slice (in index order) is
/// exactly 1.0. Exactness matters: generating functions must fix the point 1
/// and kernel rows must conserve mass to reporting precision.
///
/// The index-order sum is a monotone step function of any single entry, and
/// near 1.0 its rounding window is wider than one ulp of the largest entry,
/// so a bit-level search over that entry lands on an exact unit sum even for
/// long vectors whose entries span many orders of magnitude.
pub fn snap_to_unit_mass(w: &mut [f64], tol: f64, what: &str) -> Result<()> {
    let sum: f64 = w.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > tol {
        return Err(Error::Model(format!(
            "{what}: probabilities sum to {sum}, expected 1 within {tol:.1e}"
        )));
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    if w.iter().sum::<f64>() == 1.0 {
        return Ok(());
    }
    // Rounding inside the running sum occasionally makes the step function of
    // one particular entry hop over 1.0 without landing on it, so try the
    // largest entries in turn; each has independently aligned steps. Entries
    // below the floor would be distorted too much relative to their size.
    let mut candidates: Vec<usize> = (0..w.len()).filter(|&i| w[i] >= 1e-9).collect();
    candidates.sort_by(|&a, &b| w[b].total_cmp(&w[a]));
    candidates.truncate(16);
    for idx in candidates {
        if bit_search_unit_sum(w, idx) {
            return Ok(());
        }
    }
    Err(Error::Model(format!(
        "{what}: could not normalize probabilities to unit mass exactly"
    )))
}

/// Adjusts `w[idx]` by whole ulps until the index-order sum equals 1.0
/// exactly, restoring the original value and reporting `false` when no ulp
/// offset achieves it. The sum is monotone in each entry, so an exponential
/// bracket plus bisection over the bit offset visits every attainable value.
fn bit_search_unit_sum(w: &mut [f64], idx: usize) -> bool {
    fn offset_bits(v: f64, k: i64) -> f64 {
        f64::from_bits((v.to_bits() as i64 + k) as u64)
    }
    fn eval(w: &mut [f64], idx: usize, base: f64, k: i64) -> f64 {
        w[idx] = offset_bits(base, k);
        w.iter().sum()
    }

    let base = w[idx];
    let s0 = eval(w, idx, base, 0);
    if s0 == 1.0 {
        return true;
    }
    let sign: i64 = if s0 < 1.0 { 1 } else { -1 };
    let mut lo: i64 = 0;
    let mut hi;
    let mut span: i64 = 1;
    loop {
        hi = sign * span;
        let s = eval(w, idx, base, hi);
        if s == 1.0 {
            return true;
        }
        if (s < 1.0) != (s0 < 1.0) {
            break;
        }
        lo = hi;
        span *= 2;
        if span > (1 << 42) {
            w[idx] = base;
            return false;
        }
    }
    while (hi - lo).abs() > 1 {
        let mid = lo + (hi - lo) / 2;
        let s = eval(w, idx, base, mid);
        if s == 1.0 {
            return true;
        }
        if (s < 1.0) == (s0 < 1.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    w[idx] = base;
    false
}

/// Streaming mean and variance (Welford). Merges associatively so replica
/// blocks accumulated in a fixed order produce deterministic results.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunningStat {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStat {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStat) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n1 = self.n as f64;
        let n2 = other.n as f64;
        let d = other.mean - self.mean;
        let n = n1 + n2;
        self.mean += d * n2 / n;
        self.m2 += other.m2 + d * d * n1 * n2 / n;
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// L1 distance between two equally indexed vectors.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Total-variation distance between two pmfs on the same index set.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * l1_distance(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snap_produces_exact_unit_sum() {
        let mut w = vec![0.1, 0.2, 0.3, 0.4 - 1e-13];
        snap_to_unit_mass(&mut w, 1e-12, "test").unwrap();
        assert_eq!(w.iter().sum::<f64>(), 1.0);
        let mut bad = vec![0.5, 0.6];
        assert!(snap_to_unit_mass(&mut bad, 1e-12, "test").is_err());
    }

    #[test]
    fn running_stat_matches_direct_formulas() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let mut s = RunningStat::default();
        for &x in &xs {
            s.push(x);
        }
        let mean = xs.iter().sum::<f64>() / 4.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
        assert!((s.mean() - mean).abs() < 1e-14);
        assert!((s.variance() - var).abs() < 1e-13);

        let mut a = RunningStat::default();
        let mut b = RunningStat::default();
        for &x in &xs[..2] {
            a.push(x);
        }
        for &x in &xs[2..] {
            b.push(x);
        }
        a.merge(&b);
        assert!((a.mean() - mean).abs() < 1e-14);
        assert!((a.variance() - var).abs() < 1e-13);
    }
}
