//! Invariant checks shared by the property suite and the acceptance gate.
//! Monte Carlo checks take an explicit seed so callers can run a seed
//! matrix; oracle checks are deterministic and take none.

use mbpre_core::envmodel::pgf_eval;
use mbpre_core::fixtures;
use mbpre_core::lyapunov::{estimate_y, SamplingMethod, SpectrumConfig};
use mbpre_core::oracle::{
    build_chain, survival_series, yaglom_exact_with, YAGLOM_TOL,
};
use mbpre_core::simulate::{survival_mc, yaglom_mc, SurvivalEstimator};
use mbpre_core::EnvModel;

pub fn fixture_set() -> Vec<(&'static str, EnvModel, usize)> {
    vec![
        ("f1", fixtures::f1(), 8),
        ("f2", fixtures::f2(), 8),
        ("f3", fixtures::f3(), 12),
    ]
}

/// Kernel rows plus leak conserve probability on every fixture chain.
pub fn kernel_rows_conserve_mass() {
    for (name, model, k) in fixture_set() {
        let chain = build_chain(&model, k).unwrap();
        for (x, row) in chain.rows.iter().enumerate() {
            let total: f64 = row.iter().sum::<f64>() + chain.leak[x];
            assert!((total - 1.0).abs() <= 1e-12, "{name} row {x}: total {total}");
        }
    }
}

/// Generating functions fix the all-ones point exactly.
pub fn pgf_fixes_one() {
    for (name, model, _) in fixture_set() {
        let ones = vec![1.0; model.p()];
        for (e, state) in model.states().iter().enumerate() {
            let img = pgf_eval(state, &ones).unwrap();
            for (i, v) in img.iter().enumerate() {
                assert_eq!(*v, 1.0, "{name} env {e} component {i}");
            }
        }
    }
}

/// Survival brackets are ordered, land in the unit interval, and both ends
/// are non-increasing in the horizon.
pub fn survival_brackets_ordered_monotone() {
    for (name, model, k) in fixture_set() {
        let chain = build_chain(&model, k).unwrap();
        let mut start = vec![0u64; model.p()];
        start[0] = 1;
        let series = survival_series(&chain, &start, 30).unwrap();
        let mut prev = (1.0f64, 1.0f64);
        for (n, &(lo, hi)) in series.iter().enumerate() {
            assert!(
                0.0 <= lo && lo <= hi && hi <= 1.0,
                "{name} n={n}: bracket ({lo}, {hi})"
            );
            assert!(
                lo <= prev.0 + 1e-15 && hi <= prev.1 + 1e-15,
                "{name} n={n}: bracket grew"
            );
            prev = (lo, hi);
        }
    }
}

/// Survival from a composite start is subadditive in its lines, and the
/// shortfall is bounded by pairwise intersections (inclusion-exclusion:
/// the chance that two given lines both survive equals the sum of their
/// single-line survivals minus the survival of the merged start).
pub fn additive_bounds_hold() {
    let f3 = fixtures::f3();
    let chain = build_chain(&f3, 14).unwrap();
    let n = 16;
    let eps = 1e-11;
    let surv =
        |z: &[u64]| -> f64 { survival_series(&chain, z, n).unwrap()[n].0 };
    let single = [surv(&[1, 0]), surv(&[0, 1])];
    for z in [[1u64, 1u64], [2, 0], [2, 1]] {
        let joint = surv(&z);
        let linear: f64 = z[0] as f64 * single[0] + z[1] as f64 * single[1];
        assert!(joint <= linear + eps, "start {z:?}: union above the line sum");
        let mut pair_bound = 0.0;
        for i in 0..2usize {
            for j in i..2usize {
                let count = if i == j {
                    (z[i] * z[i].saturating_sub(1) / 2) as f64
                } else {
                    (z[i] * z[j]) as f64
                };
                if count == 0.0 {
                    continue;
                }
                let mut merged = [0u64; 2];
                merged[i] += 1;
                merged[j] += 1;
                let both = single[i] + single[j] - surv(&merged);
                pair_bound += count * both;
            }
        }
        assert!(
            linear - joint <= pair_bound + eps,
            "start {z:?}: shortfall {} above pair bound {pair_bound}",
            linear - joint
        );
    }
}

/// The quasi-stationary law does not depend on the seeding start.
pub fn yaglom_start_invariance() {
    let f3 = fixtures::f3();
    let chain = build_chain(&f3, 14).unwrap();
    let a = yaglom_exact_with(&chain, &[1, 0], YAGLOM_TOL, 1.0).unwrap();
    let b = yaglom_exact_with(&chain, &[0, 2], YAGLOM_TOL, 1.0).unwrap();
    let l1: f64 = a.t.iter().zip(&b.t).map(|(x, y)| (x - y).abs()).sum();
    assert!(l1 <= 1e-8, "start dependence {l1}");
    assert!((a.rate - b.rate).abs() <= 1e-10);
}

/// Monte Carlo estimates agree with the oracle within a generous multiple
/// of their standard errors.
pub fn mc_agrees_with_oracle(seed: u64) {
    let f1 = fixtures::f1();
    let est = survival_mc(&f1, &[1], 8, 40_000, seed, SurvivalEstimator::Indicator).unwrap();
    let exact = 0.5f64.powi(8);
    assert!(
        (est.value - exact).abs() <= 5.0 * est.stderr,
        "seed {seed}: indicator {} vs {exact} (stderr {})",
        est.value,
        est.stderr
    );

    let f3 = fixtures::f3();
    let chain = build_chain(&f3, 14).unwrap();
    let series = survival_series(&chain, &[1, 0], 6).unwrap();
    let (lo, hi) = series[6];
    let est = survival_mc(&f3, &[1, 0], 6, 40_000, seed, SurvivalEstimator::Quenched).unwrap();
    let mid = 0.5 * (lo + hi);
    assert!(
        (est.value - mid).abs() <= 5.0 * est.stderr + (hi - lo),
        "seed {seed}: quenched {} vs {mid} (stderr {})",
        est.value,
        est.stderr
    );
}

/// The tilted estimator is unbiased: it agrees with direct sampling of the
/// same moment within combined error bars.
pub fn tilted_agrees_with_direct(seed: u64) {
    let f3 = fixtures::f3();
    let cfg = SpectrumConfig::default();
    let direct =
        estimate_y(&f3, &[1.0, 0.0], 6, 30_000, seed, SamplingMethod::Direct, &cfg).unwrap();
    let tilted =
        estimate_y(&f3, &[1.0, 0.0], 6, 30_000, seed ^ 0x9e37, SamplingMethod::Tilted, &cfg)
            .unwrap();
    let tol = 5.0 * direct.stderr.hypot(tilted.stderr);
    assert!(
        (direct.value - tilted.value).abs() <= tol,
        "seed {seed}: direct {} vs tilted {} (tol {tol})",
        direct.value,
        tilted.value
    );
}

/// The same seed reproduces results bit for bit.
pub fn repeat_runs_bitwise_identical(seed: u64) {
    let f3 = fixtures::f3();
    let a = survival_mc(&f3, &[1, 0], 8, 20_000, seed, SurvivalEstimator::Indicator).unwrap();
    let b = survival_mc(&f3, &[1, 0], 8, 20_000, seed, SurvivalEstimator::Indicator).unwrap();
    assert!(a.value == b.value && a.stderr == b.stderr, "seed {seed}: drifting estimate");
    let y1 = yaglom_mc(&f3, &[1, 0], 6, 20_000, seed).unwrap();
    let y2 = yaglom_mc(&f3, &[1, 0], 6, 20_000, seed).unwrap();
    assert_eq!(y1.pmf, y2.pmf, "seed {seed}: drifting histogram");
}

/// Runs every invariant, the seeded ones once per seed. Each test binary
/// compiles this module independently; only the acceptance binary calls the
/// aggregate entry point.
#[allow(dead_code)]
pub fn run_matrix(seeds: &[u64]) {
    kernel_rows_conserve_mass();
    pgf_fixes_one();
    survival_brackets_ordered_monotone();
    additive_bounds_hold();
    yaglom_start_invariance();
    for &seed in seeds {
        mc_agrees_with_oracle(seed);
        tilted_agrees_with_direct(seed);
        repeat_runs_bitwise_identical(seed);
    }
}
