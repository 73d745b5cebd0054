//! Barycentric grids on the probability simplex and multilinear
//! interpolation, shared by the transfer-operator eigensolver and the
//! condition checkers.
//!
//! The simplex in `p` coordinates is parametrized by its first `p - 1`
//! coordinates; the grid places nodes at integer multiples of `1/R` in that
//! parametrization. Interpolation is multilinear over the containing cube
//! cell. Cells that straddle the simplex boundary reference lattice corners
//! just outside the simplex; those virtual nodes carry the value of their L1
//! projection back onto the simplex, so interpolated values stay positive and
//! the scheme never extrapolates.

use std::collections::HashMap;

#[derive(Clone, Debug)]
pub(crate) struct SimplexGrid {
    p: usize,
    resolution: usize,
    /// Simplex point associated with each node (virtual nodes projected).
    points: Vec<Vec<f64>>,
    index: HashMap<Vec<u32>, u32>,
}

impl SimplexGrid {
    /// Builds the grid with `resolution` subdivisions per coordinate. For
    /// `p = 1` the simplex is the single point `(1)` and the resolution is
    /// irrelevant.
    pub fn new(p: usize, resolution: usize) -> Self {
        assert!(p >= 1);
        if p == 1 {
            return Self {
                p,
                resolution: 1,
                points: vec![vec![1.0]],
                index: HashMap::from([(Vec::new(), 0)]),
            };
        }
        let r = resolution.max(1);
        // Every cell containing an interior point has corner coordinate sums
        // at most r + (p - 1); enumerate exactly that lattice.
        let mut keys: Vec<Vec<u32>> = Vec::new();
        let mut cur = vec![0u32; p - 1];
        enumerate_bounded(&mut keys, &mut cur, 0, (r + p - 1) as u32);
        keys.sort();
        let mut index = HashMap::with_capacity(keys.len());
        let mut points = Vec::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            index.insert(k.clone(), i as u32);
            points.push(node_point(k, r, p));
        }
        Self { p, resolution: r, points, index }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    /// Multilinear interpolation of grid `values` at a simplex point `x`.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.points.len());
        debug_assert_eq!(x.len(), self.p);
        if self.p == 1 {
            return values[0];
        }
        let r = self.resolution;
        let d = self.p - 1;
        let mut base = vec![0u32; d];
        let mut frac = vec![0.0f64; d];
        for i in 0..d {
            let u = (x[i].clamp(0.0, 1.0)) * r as f64;
            let mut b = u.floor();
            if b as usize >= r {
                b = (r - 1) as f64;
            }
            base[i] = b as u32;
            frac[i] = (u - b).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        let mut corner = vec![0u32; d];
        for mask in 0..(1usize << d) {
            let mut w = 1.0;
            for i in 0..d {
                if mask & (1 << i) != 0 {
                    corner[i] = base[i] + 1;
                    w *= frac[i];
                } else {
                    corner[i] = base[i];
                    w *= 1.0 - frac[i];
                }
            }
            if w == 0.0 {
                continue;
            }
            let idx = *self
                .index
                .get(corner.as_slice())
                .expect("interpolation corner enumerated by construction");
            acc += w * values[idx as usize];
        }
        acc
    }
}

fn enumerate_bounded(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, budget: u32) {
    if pos == cur.len() {
        out.push(cur.clone());
        return;
    }
    for k in 0..=budget {
        cur[pos] = k;
        enumerate_bounded(out, cur, pos + 1, budget - k);
    }
}

/// The simplex point of a lattice node; nodes outside the simplex (key sum
/// beyond the resolution) are projected by dropping the (negative) last
/// coordinate and renormalizing.
fn node_point(key: &[u32], r: usize, p: usize) -> Vec<f64> {
    let sum: u32 = key.iter().sum();
    let mut x = Vec::with_capacity(p);
    if (sum as usize) <= r {
        for &k in key {
            x.push(k as f64 / r as f64);
        }
        x.push((r as u32 - sum) as f64 / r as f64);
    } else {
        for &k in key {
            x.push(k as f64 / sum as f64);
        }
        x.push(0.0);
    }
    x
}

/// All points of the barycentric grid with `resolution` subdivisions lying
/// exactly on the simplex in `p` coordinates (coordinate sums equal to one).
/// If the point count would exceed `cap`, the resolution is halved until it
/// fits; the actual resolution used is returned alongside.
pub(crate) fn simplex_points(p: usize, resolution: usize, cap: usize) -> (Vec<Vec<f64>>, usize) {
    assert!(p >= 1);
    if p == 1 {
        return (vec![vec![1.0]], 1);
    }
    let mut r = resolution.max(1);
    while count_points(p, r) > cap && r > 1 {
        r /= 2;
    }
    let mut out = Vec::new();
    let mut cur = vec![0u32; p];
    compositions(&mut out, &mut cur, 0, r as u32, r);
    (out, r)
}

fn count_points(p: usize, r: usize) -> usize {
    // C(r + p - 1, p - 1), saturating.
    let mut acc: usize = 1;
    for i in 0..p - 1 {
        acc = acc.saturating_mul(r + p - 1 - i);
        acc /= i + 1;
    }
    acc
}

fn compositions(out: &mut Vec<Vec<f64>>, cur: &mut Vec<u32>, pos: usize, left: u32, r: usize) {
    if pos == cur.len() - 1 {
        cur[pos] = left;
        out.push(cur.iter().map(|&k| k as f64 / r as f64).collect());
        return;
    }
    for k in 0..=left {
        cur[pos] = k;
        compositions(out, cur, pos + 1, left - k, r);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_exact_at_nodes_and_linear_between() {
        let g = SimplexGrid::new(2, 10);
        // Values of a linear function a*x1 + b*x2 at the grid nodes; linear
        // functions are reproduced exactly by multilinear interpolation.
        let f = |x: &[f64]| 3.0 * x[0] - 2.0 * x[1];
        let values: Vec<f64> = (0..g.len()).map(|i| f(g.point(i))).collect();
        for &t in &[0.0, 0.05, 0.31, 0.777, 1.0] {
            let x = [t, 1.0 - t];
            assert!((g.interpolate(&values, &x) - f(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn three_type_grid_interpolates_interior_points() {
        let g = SimplexGrid::new(3, 8);
        let f = |x: &[f64]| 1.0 + 0.5 * x[0] + 0.25 * x[1] - 0.125 * x[2];
        let values: Vec<f64> = (0..g.len()).map(|i| f(g.point(i))).collect();
        let x = [0.3, 0.45, 0.25];
        assert!((g.interpolate(&values, &x) - f(&x)).abs() < 1e-12);
    }

    #[test]
    fn exact_simplex_points_sum_to_one() {
        let (pts, r) = simplex_points(3, 6, 10_000);
        assert_eq!(r, 6);
        assert_eq!(pts.len(), 28);
        for x in &pts {
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
