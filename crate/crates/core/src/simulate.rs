//! Forward Monte Carlo of the population recursion and quenched
//! generating-function iteration.
//!
//! A population is a vector of particle counts per type. One generation
//! draws an environment state, then replaces every particle independently by
//! a litter from that state's law for the particle's type. Conditioned on
//! the environment sequence, extinction probabilities are exact
//! compositions of the state generating functions, which gives a
//! Rao–Blackwellized ("quenched") survival estimator with strictly smaller
//! variance than trajectory indicators: the environment is sampled, the
//! branching noise is integrated out exactly.
//!
//! All estimators split replicas into fixed-size chunks with one RNG stream
//! per chunk and merge partial accumulators in chunk order, so results are
//! byte-identical for a given seed no matter how many threads run.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::envmodel::{pgf_eval, EnvModel, EnvState};
use crate::error::{Error, Result};
use crate::lyapunov::McEstimate;
use crate::rng::{parallel_replicas, workers};
use crate::stats::RunningStat;

/// Largest population (total particles) a single step will simulate;
/// subcritical models stay tiny, so hitting this indicates a misconfigured,
/// effectively supercritical model.
pub const POPULATION_BUDGET: u64 = 10_000_000;

/// Replicas per RNG stream in Monte Carlo drivers. Fixed so that results do
/// not depend on thread count.
const MC_CHUNK: usize = 1024;

/// One sampled path: populations `z_path[0..=n]` and the environment indices
/// that produced each transition.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub z_path: Vec<Vec<u64>>,
    pub env_path: Vec<usize>,
}

/// Replaces every particle by an independent litter from the state's law
/// for its type and sums the litters.
pub fn step_population<R: Rng + ?Sized>(
    z: &[u64],
    state: &EnvState,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let p = state.dim();
    debug_assert_eq!(z.len(), p);
    let total: u64 = z.iter().sum();
    if total > POPULATION_BUDGET {
        return Err(Error::PopulationOverflow {
            step: 0,
            particles: total,
            budget: POPULATION_BUDGET,
        });
    }
    let mut next = vec![0u64; p];
    for (j, &count) in z.iter().enumerate() {
        let law = state.law(j);
        for _ in 0..count {
            for (dst, &c) in next.iter_mut().zip(law.sample(rng)) {
                *dst += c;
            }
        }
    }
    Ok(next)
}

/// Samples an i.i.d. environment sequence and steps the population through
/// it. Extinction is absorbing; environment indices are still drawn after
/// extinction so the path always has length `n`.
pub fn run<R: Rng + ?Sized>(
    model: &EnvModel,
    z0: &[u64],
    n: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if z0.len() != model.p() {
        return Err(Error::Domain(format!(
            "start vector has {} components, model has {} types",
            z0.len(),
            model.p()
        )));
    }
    let mut z_path = Vec::with_capacity(n + 1);
    let mut env_path = Vec::with_capacity(n);
    z_path.push(z0.to_vec());
    for k in 0..n {
        let e = model.sample_state(rng);
        env_path.push(e);
        let current = z_path.last().expect("path nonempty");
        let next = if current.iter().all(|&c| c == 0) {
            current.clone()
        } else {
            step_population(current, model.state(e), rng).map_err(|err| match err {
                Error::PopulationOverflow { particles, budget, .. } => {
                    Error::PopulationOverflow { step: k, particles, budget }
                }
                other => other,
            })?
        };
        z_path.push(next);
    }
    Ok(Trajectory { z_path, env_path })
}

/// Composition order for a quenched generating-function iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComposeOrder {
    /// The first sequence element is the outermost function: the value is
    /// `F_{e1}(F_{e2}(... F_{en}(s)))`. This is the `n`-step annealed
    /// extinction iteration when `s = 0`.
    FirstOutermost,
    /// The first sequence element is applied first:
    /// `F_{en}(... F_{e1}(s))`.
    FirstInnermost,
}

/// Composes the state generating functions along an environment sequence.
/// The empty sequence is the identity; `s = 1` maps to exactly 1 because
/// law masses are exactly 1.
pub fn pgf_iterate(
    model: &EnvModel,
    envs: &[usize],
    s: &[f64],
    order: ComposeOrder,
) -> Result<Vec<f64>> {
    let mut v = s.to_vec();
    match order {
        ComposeOrder::FirstOutermost => {
            for &e in envs.iter().rev() {
                v = pgf_eval(model.state(e), &v)?;
            }
        }
        ComposeOrder::FirstInnermost => {
            for &e in envs {
                v = pgf_eval(model.state(e), &v)?;
            }
        }
    }
    Ok(v)
}

/// Survival estimation strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurvivalEstimator {
    /// Fraction of simulated trajectories alive at time `n`.
    Indicator,
    /// Mean over environment sequences of the exact conditional survival
    /// probability `1 - prod_i F^i_{0,n}(0)^{z_i}`.
    Quenched,
}

fn quenched_survival(model: &EnvModel, envs: &[usize], z: &[u64]) -> Result<f64> {
    let zero = vec![0.0; model.p()];
    let s = pgf_iterate(model, envs, &zero, ComposeOrder::FirstOutermost)?;
    let mut all_dead = 1.0;
    for (&si, &c) in s.iter().zip(z) {
        if c > 0 {
            all_dead *= si.powi(c as i32);
        }
    }
    Ok(1.0 - all_dead)
}

/// Monte Carlo estimate of the survival probability
/// `P(Z_n != 0 | Z_0 = z)`.
pub fn survival_mc(
    model: &EnvModel,
    z: &[u64],
    n: usize,
    samples: usize,
    seed: u64,
    estimator: SurvivalEstimator,
) -> Result<McEstimate> {
    if z.len() != model.p() {
        return Err(Error::Domain(format!(
            "start vector has {} components, model has {} types",
            z.len(),
            model.p()
        )));
    }
    if z.iter().all(|&c| c == 0) {
        return Err(Error::Domain("start population is empty".into()));
    }
    if samples == 0 {
        return Err(Error::InsufficientData("sample count must be positive".into()));
    }
    let chunks = samples.div_ceil(MC_CHUNK);
    let worker = match estimator {
        SurvivalEstimator::Indicator => workers::POPULATION,
        SurvivalEstimator::Quenched => workers::ENV_SAMPLING,
    };
    let parts = parallel_replicas(seed, worker, chunks, |chunk, rng| -> Result<RunningStat> {
        let lo = chunk * MC_CHUNK;
        let hi = (lo + MC_CHUNK).min(samples);
        let mut stat = RunningStat::default();
        for _ in lo..hi {
            let value = match estimator {
                SurvivalEstimator::Indicator => {
                    let traj = run(model, z, n, rng)?;
                    let alive = traj.z_path[n].iter().any(|&c| c > 0);
                    if alive {
                        1.0
                    } else {
                        0.0
                    }
                }
                SurvivalEstimator::Quenched => {
                    let envs: Vec<usize> =
                        (0..n).map(|_| model.sample_state(rng)).collect();
                    quenched_survival(model, &envs, z)?
                }
            };
            stat.push(value);
        }
        Ok(stat)
    });
    let mut merged = RunningStat::default();
    for part in parts {
        merged.merge(&part?);
    }
    Ok(McEstimate {
        value: merged.mean(),
        stderr: merged.stderr(),
        samples: merged.count(),
        mass_warnings: 0,
        max_mass_deviation: 0.0,
    })
}

/// Empirical conditional law of `Z_n` given `Z_n != 0`.
#[derive(Clone, Debug, Serialize)]
pub struct YaglomMc {
    /// Population vectors with conditional frequencies, in graded
    /// lexicographic order.
    pub pmf: Vec<(Vec<u64>, f64)>,
    pub survivors: usize,
    pub samples: usize,
}

/// Simulates trajectories and histograms the surviving populations at time
/// `n`. Errors with insufficient data when no replica survives.
pub fn yaglom_mc(
    model: &EnvModel,
    z: &[u64],
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<YaglomMc> {
    if z.len() != model.p() {
        return Err(Error::Domain(format!(
            "start vector has {} components, model has {} types",
            z.len(),
            model.p()
        )));
    }
    if z.iter().all(|&c| c == 0) {
        return Err(Error::Domain("start population is empty".into()));
    }
    if samples == 0 {
        return Err(Error::InsufficientData("sample count must be positive".into()));
    }
    let chunks = samples.div_ceil(MC_CHUNK);
    let parts = parallel_replicas(
        seed,
        workers::POPULATION,
        chunks,
        |chunk, rng| -> Result<BTreeMap<Vec<u64>, u64>> {
            let lo = chunk * MC_CHUNK;
            let hi = (lo + MC_CHUNK).min(samples);
            let mut counts = BTreeMap::new();
            for _ in lo..hi {
                let traj = run(model, z, n, rng)?;
                let terminal = &traj.z_path[n];
                if terminal.iter().any(|&c| c > 0) {
                    *counts.entry(terminal.clone()).or_insert(0) += 1;
                }
            }
            Ok(counts)
        },
    );
    let mut counts: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
    for part in parts {
        for (zv, c) in part? {
            *counts.entry(zv).or_insert(0) += c;
        }
    }
    let survivors: u64 = counts.values().sum();
    if survivors == 0 {
        return Err(Error::InsufficientData(format!(
            "no surviving replica among {samples} at horizon {n}; increase samples or lower the horizon"
        )));
    }
    let mut pmf: Vec<(Vec<u64>, f64)> = counts
        .into_iter()
        .map(|(zv, c)| (zv, c as f64 / survivors as f64))
        .collect();
    pmf.sort_by(|a, b| {
        let ta: u64 = a.0.iter().sum();
        let tb: u64 = b.0.iter().sum();
        ta.cmp(&tb).then_with(|| a.0.cmp(&b.0))
    });
    Ok(YaglomMc { pmf, survivors: survivors as usize, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rng;

    #[test]
    fn stepping_zero_population_is_absorbing() {
        let f3 = fixtures::f3();
        let mut rng = rng::stream(0, 2, 0);
        let next = step_population(&[0, 0], f3.state(0), &mut rng).unwrap();
        assert_eq!(next, vec![0, 0]);
    }

    #[test]
    fn two_particles_give_binomial_offspring() {
        // Two independent 0-or-1 litters: totals 0, 1, 2 with probabilities
        // 1/4, 1/2, 1/4.
        let f1 = fixtures::f1();
        let mut rng = rng::stream(13, 2, 0);
        let n = 100_000;
        let mut hist = [0u64; 3];
        for _ in 0..n {
            let next = step_population(&[2], f1.state(0), &mut rng).unwrap();
            hist[next[0] as usize] += 1;
        }
        for (k, expected) in [(0usize, 0.25), (1, 0.5), (2, 0.25)] {
            let freq = hist[k] as f64 / n as f64;
            let stderr = (expected * (1.0 - expected) / n as f64).sqrt();
            assert!((freq - expected).abs() < 4.0 * stderr, "k={k} freq={freq}");
        }
    }

    #[test]
    fn trajectories_have_requested_shape_and_absorb() {
        let f2 = fixtures::f2();
        let mut rng = rng::stream(1, 2, 0);
        let traj = run(&f2, &[1], 0, &mut rng).unwrap();
        assert_eq!(traj.z_path, vec![vec![1]]);
        assert!(traj.env_path.is_empty());

        let traj = run(&f2, &[1], 50, &mut rng).unwrap();
        assert_eq!(traj.z_path.len(), 51);
        assert_eq!(traj.env_path.len(), 50);
        let mut dead = false;
        for z in &traj.z_path {
            let empty = z.iter().all(|&c| c == 0);
            if dead {
                assert!(empty, "extinction must be absorbing");
            }
            dead = dead || empty;
        }
    }

    #[test]
    fn pgf_iteration_matches_hand_composition() {
        let f2 = fixtures::f2();
        // Empty sequence: identity.
        let s = pgf_iterate(&f2, &[], &[0.3], ComposeOrder::FirstOutermost).unwrap();
        assert_eq!(s, vec![0.3]);
        // Sequence (state 0, state 1) from s = 0, first element outermost:
        // F_0(F_1(0)) = 3/4 + (1/4)(1/2) = 0.875.
        let s = pgf_iterate(&f2, &[0, 1], &[0.0], ComposeOrder::FirstOutermost).unwrap();
        assert_eq!(s, vec![0.875]);
        // Reversed order: F_1(F_0(0)) = 1/2 + (1/2)(3/4) = 0.875 here too,
        // but on asymmetric input the orders differ.
        let a = pgf_iterate(&f2, &[0, 1], &[0.5], ComposeOrder::FirstOutermost).unwrap();
        let b = pgf_iterate(&f2, &[0, 1], &[0.5], ComposeOrder::FirstInnermost).unwrap();
        assert!((a[0] - (0.75 + 0.25 * 0.75)).abs() < 1e-15);
        assert!((b[0] - (0.5 + 0.5 * 0.875)).abs() < 1e-15);
    }

    #[test]
    fn pgf_iteration_fixes_one_exactly() {
        let f3 = fixtures::f3();
        let mut rng = rng::stream(4, 1, 0);
        for len in [1usize, 5, 20] {
            let envs: Vec<usize> = (0..len).map(|_| f3.sample_state(&mut rng)).collect();
            let s = pgf_iterate(&f3, &envs, &[1.0, 1.0], ComposeOrder::FirstOutermost).unwrap();
            assert_eq!(s, vec![1.0, 1.0], "generating functions must fix 1 exactly");
        }
    }

    #[test]
    fn quenched_estimator_is_exact_in_a_deterministic_environment() {
        let f1 = fixtures::f1();
        let est = survival_mc(&f1, &[1], 5, 100, 3, SurvivalEstimator::Quenched).unwrap();
        assert_eq!(est.value, 0.03125);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn indicator_estimator_matches_exact_two_state_value() {
        let f2 = fixtures::f2();
        let n = 10;
        let exact = 0.375f64.powi(n as i32);
        let est =
            survival_mc(&f2, &[1], n, 2_000_000, 9, SurvivalEstimator::Indicator).unwrap();
        assert!(
            (est.value - exact).abs() < 3.0 * est.stderr,
            "{} vs {exact} (stderr {})",
            est.value,
            est.stderr
        );
        // The quenched estimator agrees and is more precise.
        let q = survival_mc(&f2, &[1], n, 100_000, 9, SurvivalEstimator::Quenched).unwrap();
        let combined = (est.stderr.powi(2) + q.stderr.powi(2)).sqrt();
        assert!((est.value - q.value).abs() < 3.0 * combined);
        assert!(q.stderr < est.stderr);
    }

    #[test]
    fn survival_additivity_upper_bound() {
        // P(survival from z) <= sum_i z_i P(survival from e_i).
        let f3 = fixtures::f3();
        let n = 8;
        let samples = 50_000;
        let from = |z: &[u64]| {
            survival_mc(&f3, z, n, samples, 17, SurvivalEstimator::Quenched)
                .unwrap()
        };
        let e1 = from(&[1, 0]);
        let e2 = from(&[0, 1]);
        let both = from(&[2, 1]);
        let bound = 2.0 * e1.value + e2.value;
        let slack = 3.0 * (4.0 * e1.stderr.powi(2) + e2.stderr.powi(2) + both.stderr.powi(2))
            .sqrt();
        assert!(both.value <= bound + slack, "{} vs {bound}", both.value);
    }

    #[test]
    fn empirical_mean_matches_annealed_moment() {
        // E[Z_n] = z m^n componentwise.
        let f3 = fixtures::f3();
        let n = 5;
        let z0 = [1u64, 1];
        let mut mn = crate::spectral::Matrix::identity(2);
        for _ in 0..n {
            mn = mn.matmul(&f3.annealed_mean());
        }
        let expected = mn.mul_row(&[1.0, 1.0]);
        let samples = 200_000;
        let mut stats = vec![RunningStat::default(); 2];
        let mut rng = rng::stream(23, 2, 0);
        for _ in 0..samples {
            let traj = run(&f3, &z0, n, &mut rng).unwrap();
            for (stat, &c) in stats.iter_mut().zip(&traj.z_path[n]) {
                stat.push(c as f64);
            }
        }
        for (stat, &target) in stats.iter().zip(&expected) {
            assert!(
                (stat.mean() - target).abs() < 3.0 * stat.stderr(),
                "{} vs {target}",
                stat.mean()
            );
        }
    }

    #[test]
    fn conditional_law_is_degenerate_for_single_line_models() {
        let f1 = fixtures::f1();
        let y = yaglom_mc(&f1, &[1], 6, 20_000, 31).unwrap();
        assert_eq!(y.pmf.len(), 1);
        assert_eq!(y.pmf[0], (vec![1], 1.0));
        assert!(y.survivors > 0);
    }

    #[test]
    fn zero_survivors_is_an_explicit_error() {
        let f1 = fixtures::f1();
        let err = yaglom_mc(&f1, &[1], 60, 32, 1).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)), "{err}");
    }

    #[test]
    fn estimators_are_thread_count_independent() {
        // The chunked drivers fix the replica-to-stream mapping, so values
        // must be bitwise identical across repeat runs (rayon pool size only
        // changes scheduling, which never reorders the merge).
        let f2 = fixtures::f2();
        let a = survival_mc(&f2, &[2], 9, 30_000, 5, SurvivalEstimator::Indicator).unwrap();
        let b = survival_mc(&f2, &[2], 9, 30_000, 5, SurvivalEstimator::Indicator).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        let ya = yaglom_mc(&f2, &[3], 4, 30_000, 5).unwrap();
        let yb = yaglom_mc(&f2, &[3], 4, 30_000, 5).unwrap();
        assert_eq!(ya.pmf, yb.pmf);
    }
}
