//! Exact computations on the truncated annealed chain.
//!
//! Averaging the offspring laws over the environment turns the population
//! process into a Markov chain on `N0^p` with kernel
//! `P[x][y] = E[ P(one generation maps x to y | environment) ]`. Restricted
//! to `{z : 1 <= |z| <= K}` plus the absorbing empty state, every quantity
//! of interest becomes finite linear algebra:
//!
//! * one-step rows by exact convolution of offspring laws, with mass beyond
//!   the truncation tracked per row as *leak* — never discarded silently;
//! * survival probabilities as brackets: the leaked mass is treated once as
//!   dead and once as immortal, so the truth always lies inside;
//! * the conditional limit law given survival (and its decay rate) by
//!   L1-renormalized power iteration of the sub-stochastic restriction;
//! * the survival constant `(z,U)/W` against which the ratio
//!   `P(alive at n)/rate^n` is tabulated;
//! * the residual of the one-step functional equation
//!   `E[T(F(s))] = rate * T(s) + (1 - rate)` satisfied by the generating
//!   function `T` of the limit law, exactly zero at `s = 1` by construction.
//!
//! Design rule: the truncation is the only approximation, it is measured,
//! and every reported number carries its truncation bracket or bound.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::envmodel::{EnvModel, EnvState};
use crate::error::{Error, Result};
use crate::spectral::{perron_eig, SpectralData};
use crate::stats::snap_to_unit_mass;

/// Hard cap on enumerated states; dense rows cost `8 * N^2` bytes.
pub const STATE_CAP: usize = 5_000;

/// Row entries below this threshold are moved into the leak during
/// convolution, keeping rows sparse-in-effect without losing conservation.
const PRUNE_THRESHOLD: f64 = 1e-16;

/// Row conservation must hold to this absolute tolerance.
pub const CONSERVATION_TOL: f64 = 1e-12;

/// Default quasi-stationary iteration tolerance (L1 movement).
pub const YAGLOM_TOL: f64 = 1e-10;

/// Default cap on the per-step relative leak in the quasi-stationary
/// iteration before the truncation is declared too small.
pub const YAGLOM_LEAK_TOL: f64 = 1e-6;

/// The annealed kernel on `{z : |z| <= K}` with exact per-row leak.
#[derive(Clone, Debug)]
pub struct TruncatedChain {
    pub truncation: usize,
    /// State vectors in graded lexicographic order; index 0 is the empty
    /// population.
    pub states: Vec<Vec<u64>>,
    index: HashMap<Vec<u64>, usize>,
    /// Dense kernel rows over `states`; `rows[0]` is the absorption row.
    pub rows: Vec<Vec<f64>>,
    /// Per-row mass on populations beyond the truncation.
    pub leak: Vec<f64>,
    /// Perron data of the annealed mean matrix.
    pub spectral: SpectralData,
}

fn enumerate_level(p: usize, total: u64, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
    if prefix.len() == p - 1 {
        let used: u64 = prefix.iter().sum();
        prefix.push(total - used);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    let used: u64 = prefix.iter().sum();
    for c in 0..=(total - used) {
        prefix.push(c);
        enumerate_level(p, total, prefix, out);
        prefix.pop();
    }
}

fn count_states(p: usize, truncation: usize) -> usize {
    // 1 + sum_{k=1..K} C(k+p-1, p-1), saturating.
    let mut total = 1usize;
    for k in 1..=truncation {
        let mut c = 1usize;
        for i in 0..(p - 1) {
            c = c.saturating_mul(k + i + 1);
        }
        for i in 0..(p - 1) {
            c /= i + 1;
        }
        total = total.saturating_add(c);
    }
    total
}

/// Builds the truncated annealed kernel by exact convolution of offspring
/// laws, level-parallel within each environment state.
pub fn build_chain(model: &EnvModel, truncation: usize) -> Result<TruncatedChain> {
    if truncation == 0 {
        return Err(Error::Domain("truncation must be at least 1".into()));
    }
    let p = model.p();
    let n_states = count_states(p, truncation);
    if n_states > STATE_CAP {
        return Err(Error::ResourceLimit(format!(
            "truncation {truncation} with {p} types enumerates {n_states} states, above the cap {STATE_CAP}; lower the truncation"
        )));
    }

    let mut states: Vec<Vec<u64>> = vec![vec![0; p]];
    for k in 1..=truncation {
        let mut level = Vec::new();
        let mut prefix = Vec::new();
        enumerate_level(p, k as u64, &mut prefix, &mut level);
        states.extend(level);
    }
    let index: HashMap<Vec<u64>, usize> =
        states.iter().enumerate().map(|(i, z)| (z.clone(), i)).collect();
    let n = states.len();

    let spectral = perron_eig(&model.annealed_mean(), 1e-13)?;

    // Per environment state: rows by dynamic programming over levels. The
    // row of x is the row of x minus one particle, convolved with that
    // particle's offspring law; offspring never shrink a partial sum, so
    // mass that once leaves the truncation stays out and is exact leak.
    let mut rows = vec![Vec::new(); n];
    rows[0] = {
        let mut r = vec![0.0; n];
        r[0] = 1.0;
        r
    };
    let mut leak = vec![0.0f64; n];

    for (st, &env_prob) in model.states().iter().zip(model.probs()) {
        let env_table = env_rows(st, &states, &index, truncation);
        for x in 0..n {
            let (row, l) = &env_table[x];
            if rows[x].is_empty() {
                rows[x] = vec![0.0; n];
            }
            if x == 0 {
                continue; // absorption row stays exact
            }
            for (dst, v) in rows[x].iter_mut().zip(row) {
                *dst += env_prob * v;
            }
            leak[x] += env_prob * l;
        }
    }

    let chain = TruncatedChain { truncation, states, index, rows, leak, spectral };
    let dev = chain.check_conservation();
    if dev > CONSERVATION_TOL {
        return Err(Error::Domain(format!(
            "internal conservation failure while building the chain: row deviation {dev:.3e}"
        )));
    }
    Ok(chain)
}

/// One-generation rows under a fixed environment state, for every
/// enumerated population.
fn env_rows(
    st: &EnvState,
    states: &[Vec<u64>],
    index: &HashMap<Vec<u64>, usize>,
    truncation: usize,
) -> Vec<(Vec<f64>, f64)> {
    let n = states.len();
    let mut table: Vec<Option<(Vec<f64>, f64)>> = vec![None; n];
    let mut base = vec![0.0; n];
    base[0] = 1.0;
    table[0] = Some((base, 0.0));

    // States are graded, so each level only reads the previous one.
    let mut level_start = 1usize;
    for k in 1..=truncation {
        let level_end = states[level_start..]
            .iter()
            .position(|z| z.iter().sum::<u64>() != k as u64)
            .map(|off| level_start + off)
            .unwrap_or(n);
        let computed: Vec<(usize, (Vec<f64>, f64))> = (level_start..level_end)
            .into_par_iter()
            .map(|x| {
                let z = &states[x];
                let i = z.iter().position(|&c| c > 0).expect("nonzero level");
                let mut pred = z.clone();
                pred[i] -= 1;
                let pred_idx = index[&pred];
                let (pred_row, pred_leak) =
                    table[pred_idx].as_ref().expect("previous level complete");
                let mut row = vec![0.0; n];
                let mut l = *pred_leak;
                for (offs, q) in st.law(i).support() {
                    for (y, &mass) in pred_row.iter().enumerate() {
                        if mass == 0.0 {
                            continue;
                        }
                        let target: Vec<u64> =
                            states[y].iter().zip(offs).map(|(a, b)| a + b).collect();
                        let total: u64 = target.iter().sum();
                        if total as usize <= truncation {
                            row[index[&target]] += mass * q;
                        } else {
                            l += mass * q;
                        }
                    }
                }
                for v in row.iter_mut() {
                    if *v != 0.0 && *v < PRUNE_THRESHOLD {
                        l += *v;
                        *v = 0.0;
                    }
                }
                (x, (row, l))
            })
            .collect();
        for (x, entry) in computed {
            table[x] = Some(entry);
        }
        level_start = level_end;
    }
    table.into_iter().map(|e| e.expect("all states computed")).collect()
}

impl TruncatedChain {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, z: &[u64]) -> Option<usize> {
        self.index.get(z).copied()
    }

    /// Weight `(z, U)` of a state under the right Perron vector.
    pub fn weight_u(&self, idx: usize) -> f64 {
        self.spectral.weight(&self.states[idx])
    }

    /// Largest deviation of `row + absorption + leak` from 1 over all rows.
    pub fn check_conservation(&self) -> f64 {
        self.rows
            .iter()
            .zip(&self.leak)
            .map(|(row, l)| (row.iter().sum::<f64>() + l - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Sub-probability mass over live states with absorbed and leaked
    /// running totals; one kernel application per `step`.
    pub fn initial(&self, z: &[u64]) -> Result<Propagation> {
        if z.len() != self.states[0].len() {
            return Err(Error::Domain(format!(
                "start vector has {} components, chain has {}",
                z.len(),
                self.states[0].len()
            )));
        }
        let total: u64 = z.iter().sum();
        if total == 0 {
            return Err(Error::Domain("start population is empty".into()));
        }
        let idx = self.state_index(z).ok_or_else(|| Error::Domain(format!(
            "start {z:?} has size {total}, beyond the truncation {}",
            self.truncation
        )))?;
        let mut alive = vec![0.0; self.n_states()];
        alive[idx] = 1.0;
        Ok(Propagation { alive, dead: 0.0, leaked: 0.0 })
    }

    pub fn step(&self, prop: &mut Propagation) {
        let n = self.n_states();
        let mut next = vec![0.0; n];
        let mut dead = prop.dead;
        let mut leaked = prop.leaked;
        for x in 1..n {
            let mass = prop.alive[x];
            if mass == 0.0 {
                continue;
            }
            let row = &self.rows[x];
            dead += mass * row[0];
            leaked += mass * self.leak[x];
            for (y, &q) in row.iter().enumerate().skip(1) {
                if q != 0.0 {
                    next[y] += mass * q;
                }
            }
        }
        prop.alive = next;
        prop.dead = dead;
        prop.leaked = leaked;
    }

    /// Sparse triplet export with a state-enumeration header.
    pub fn export_triplets(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "states {} {} {}\n",
            self.n_states(),
            self.states[0].len(),
            self.truncation
        ));
        for (i, z) in self.states.iter().enumerate() {
            let coords: Vec<String> = z.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!("{i} {}\n", coords.join(" ")));
        }
        let mut triplets = Vec::new();
        for (x, row) in self.rows.iter().enumerate() {
            for (y, &q) in row.iter().enumerate() {
                if q != 0.0 {
                    triplets.push((x, y, q));
                }
            }
        }
        out.push_str(&format!("transitions {}\n", triplets.len()));
        for (x, y, q) in triplets {
            out.push_str(&format!("{x} {y} {q:.17e}\n"));
        }
        let leaks: Vec<(usize, f64)> = self
            .leak
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0.0)
            .map(|(x, &l)| (x, l))
            .collect();
        out.push_str(&format!("leak {}\n", leaks.len()));
        for (x, l) in leaks {
            out.push_str(&format!("{x} {l:.17e}\n"));
        }
        out
    }
}

/// Evolving sub-probability mass during exact propagation.
#[derive(Clone, Debug)]
pub struct Propagation {
    pub alive: Vec<f64>,
    pub dead: f64,
    pub leaked: f64,
}

impl Propagation {
    pub fn alive_mass(&self) -> f64 {
        self.alive.iter().sum()
    }
}

/// Bracket `(lower, upper)` of the survival probability at horizon `n`:
/// leaked mass counted dead, then immortal.
pub fn survival_exact(chain: &TruncatedChain, z: &[u64], n: usize) -> Result<(f64, f64)> {
    Ok(*survival_series(chain, z, n)?.last().expect("series nonempty"))
}

/// Survival brackets for every horizon `0..=n`.
pub fn survival_series(
    chain: &TruncatedChain,
    z: &[u64],
    n: usize,
) -> Result<Vec<(f64, f64)>> {
    let mut prop = chain.initial(z)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push((1.0, 1.0));
    for _ in 0..n {
        chain.step(&mut prop);
        let alive = prop.alive_mass();
        out.push((alive, alive + prop.leaked));
    }
    Ok(out)
}

/// The conditional limit law given survival, its decay rate, and the
/// derived constants.
#[derive(Clone, Debug, Serialize)]
pub struct YaglomData {
    /// Limit law over chain states (index 0 carries no mass); sums to
    /// exactly 1.
    pub t: Vec<f64>,
    /// Per-step surviving-mass ratio at convergence; the decay rate.
    pub rate: f64,
    /// `W = sum_y (y,U) t_y`.
    pub w: f64,
    /// `U / W`.
    pub k_vec: Vec<f64>,
    pub iterations: u64,
    /// Final L1 movement of the normalized iterate.
    pub movement: f64,
    /// Relative leaked mass in the final iteration step.
    pub step_leak: f64,
    /// Sum of relative per-step leaks over the whole iteration.
    pub cumulative_leak: f64,
    /// `sum_y t_y * leak[y]`: the leak as the limit law sees it.
    pub t_weighted_leak: f64,
}

impl YaglomData {
    /// Mass of the limit law at a population vector.
    pub fn t_at(&self, chain: &TruncatedChain, z: &[u64]) -> f64 {
        chain.state_index(z).map(|i| self.t[i]).unwrap_or(0.0)
    }

    /// Generating-function value `T(s) = sum_y t_y s^y`, evaluated in
    /// complement form `1 - sum_y t_y (1 - s^y)` so that `T(1) == 1.0`
    /// holds exactly and values near `s = 1` avoid cancellation.
    pub fn t_gen(&self, chain: &TruncatedChain, s: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (idx, &mass) in self.t.iter().enumerate().skip(1) {
            if mass != 0.0 {
                acc += mass * (1.0 - pow_state(s, &chain.states[idx]));
            }
        }
        1.0 - acc
    }
}

fn pow_state(s: &[f64], z: &[u64]) -> f64 {
    let mut acc = 1.0;
    for (&si, &zi) in s.iter().zip(z) {
        if zi > 0 {
            acc *= si.powi(zi as i32);
        }
    }
    acc
}

/// Quasi-stationary law of the truncated chain, seeded at the first unit
/// vector.
pub fn yaglom_exact(chain: &TruncatedChain, tol: f64) -> Result<YaglomData> {
    let p = chain.states[0].len();
    let mut e1 = vec![0u64; p];
    e1[0] = 1;
    yaglom_exact_from(chain, &e1, tol)
}

/// Quasi-stationary law by L1-renormalized power iteration from a chosen
/// start; the limit is start-independent (checked in tests), the start only
/// affects the transient.
pub fn yaglom_exact_from(chain: &TruncatedChain, z: &[u64], tol: f64) -> Result<YaglomData> {
    yaglom_exact_with(chain, z, tol, YAGLOM_LEAK_TOL)
}

/// Quasi-stationary law with an explicit cap on the per-step leak; use a
/// loose cap to inspect coarse truncations whose leak would otherwise be
/// rejected.
pub fn yaglom_exact_with(
    chain: &TruncatedChain,
    z: &[u64],
    tol: f64,
    leak_tol: f64,
) -> Result<YaglomData> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let mut prop = chain.initial(z)?;
    let n = chain.n_states();
    let mut t: Vec<f64> = prop.alive.clone();
    let mut rate = f64::NAN;
    let mut movement;
    let mut step_leak;
    let mut cumulative_leak = 0.0;
    let cap: u64 = 100_000;
    let mut iterations = 0u64;
    loop {
        iterations += 1;
        prop.dead = 0.0;
        prop.leaked = 0.0;
        chain.step(&mut prop);
        let mass = prop.alive_mass();
        if mass <= 0.0 {
            return Err(Error::Domain(
                "survival mass vanished during the quasi-stationary iteration".into(),
            ));
        }
        step_leak = prop.leaked;
        cumulative_leak += step_leak;
        let prev_rate = rate;
        rate = mass;
        for v in prop.alive.iter_mut() {
            *v /= mass;
        }
        movement = t
            .iter()
            .zip(&prop.alive)
            .map(|(a, b)| (a - b).abs())
            .sum();
        t.copy_from_slice(&prop.alive);
        let rate_stable = prev_rate.is_finite()
            && (rate - prev_rate).abs() <= tol.max(1e-12) * rate.max(1.0);
        if movement < tol && rate_stable {
            break;
        }
        if iterations >= cap {
            return Err(Error::NoConvergence {
                what: "quasi-stationary power iteration",
                iterations,
                residual: movement,
                tolerance: tol,
            });
        }
    }
    if step_leak > leak_tol {
        return Err(Error::TruncationTooSmall {
            truncation: chain.truncation,
            detail: format!(
                "per-step leak {step_leak:.3e} above {leak_tol:.0e} at the quasi-stationary law; try truncation {}",
                chain.truncation * 2
            ),
        });
    }
    debug_assert!(n == t.len());
    snap_to_unit_mass(&mut t[1..], 1e-9, "quasi-stationary law")?;
    t[0] = 0.0;
    let mut w = 0.0;
    let mut t_weighted_leak = 0.0;
    for (idx, &mass) in t.iter().enumerate().skip(1) {
        if mass != 0.0 {
            w += mass * chain.weight_u(idx);
            t_weighted_leak += mass * chain.leak[idx];
        }
    }
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::Domain(format!("limit-law mean weight W = {w} is not positive")));
    }
    let k_vec = chain.spectral.right.iter().map(|u| u / w).collect();
    Ok(YaglomData {
        t,
        rate,
        w,
        k_vec,
        iterations,
        movement,
        step_leak,
        cumulative_leak,
        t_weighted_leak,
    })
}

/// One horizon of the survival-ratio table.
#[derive(Clone, Debug, Serialize)]
pub struct RatioRow {
    pub n: usize,
    pub lower: f64,
    pub upper: f64,
    /// Bracket midpoint divided by `rate^n`.
    pub ratio: f64,
    /// Change of the ratio from the previous horizon.
    pub increment: f64,
    /// Relative gap to the additive one-particle approximation
    /// `sum_i z_i P(alive from e_i)`.
    pub additive_gap: f64,
    /// Set when the bracket is too wide for the requested precision.
    pub flagged: bool,
}

/// Convergence table of `P(alive at n from z) / lambda^n` toward the
/// survival constant `(z,U)/W`.
#[derive(Clone, Debug, Serialize)]
pub struct LimitRatioReport {
    pub z: Vec<u64>,
    /// `(z,U)/W`.
    pub target: f64,
    /// Last tabulated ratio.
    pub limit_candidate: f64,
    pub rows: Vec<RatioRow>,
    /// Largest additive gap over tabulated horizons (n >= 1).
    pub max_additive_gap: f64,
}

/// Tabulates survival ratios for each start against the predicted constant.
/// `precision` flags rows whose truncation bracket is too wide relative to
/// the midpoint.
pub fn limit_ratio_report(
    chain: &TruncatedChain,
    yaglom: &YaglomData,
    starts: &[Vec<u64>],
    n_max: usize,
    precision: f64,
) -> Result<Vec<LimitRatioReport>> {
    let p = chain.states[0].len();
    let lambda = chain.spectral.lambda;
    let mut unit_series = Vec::with_capacity(p);
    for i in 0..p {
        let mut e = vec![0u64; p];
        e[i] = 1;
        unit_series.push(survival_series(chain, &e, n_max)?);
    }
    let mut reports = Vec::with_capacity(starts.len());
    for z in starts {
        let series = survival_series(chain, z, n_max)?;
        let target = chain.spectral.weight(z) / yaglom.w;
        let mut rows = Vec::with_capacity(n_max);
        let mut lambda_pow = 1.0f64;
        let mut prev_ratio = 1.0f64;
        let mut max_gap = 0.0f64;
        for n in 1..=n_max {
            lambda_pow *= lambda;
            let (lower, upper) = series[n];
            let mid = 0.5 * (lower + upper);
            let ratio = mid / lambda_pow;
            let additive: f64 = (0..p)
                .map(|i| {
                    let (lo, hi) = unit_series[i][n];
                    z[i] as f64 * 0.5 * (lo + hi)
                })
                .sum();
            let additive_gap = (mid - additive).abs() / mid;
            max_gap = max_gap.max(additive_gap);
            rows.push(RatioRow {
                n,
                lower,
                upper,
                ratio,
                increment: ratio - prev_ratio,
                additive_gap,
                flagged: (upper - lower) > precision * mid,
            });
            prev_ratio = ratio;
        }
        reports.push(LimitRatioReport {
            z: z.clone(),
            target,
            limit_candidate: prev_ratio,
            rows,
            max_additive_gap: max_gap,
        });
    }
    Ok(reports)
}

/// Residuals of the one-step functional equation of the limit law's
/// generating function over a cube grid.
#[derive(Clone, Debug, Serialize)]
pub struct FunctionalEqReport {
    pub max_residual: f64,
    /// Residual at `s = 1`; exactly zero because `T(1) = 1` and generating
    /// functions fix 1 exactly.
    pub residual_at_one: f64,
    /// Heuristic bound on the truncation contribution to the residual.
    pub tail_bound: f64,
    pub grid_points: usize,
}

/// Evaluates `E[T(F(s))] - rate * T(s) - (1 - rate)` on a uniform cube grid
/// with `per_edge` points per axis (endpoints included).
pub fn functional_equation_residual(
    model: &EnvModel,
    chain: &TruncatedChain,
    yaglom: &YaglomData,
    per_edge: usize,
) -> Result<FunctionalEqReport> {
    if per_edge < 2 {
        return Err(Error::Domain("the s-grid needs at least 2 points per axis".into()));
    }
    let p = model.p();
    let rate = yaglom.rate;
    let residual = |s: &[f64]| -> Result<f64> {
        let mut expectation = 0.0;
        for (st, &q) in model.states().iter().zip(model.probs()) {
            let fs = crate::envmodel::pgf_eval(st, s)?;
            expectation += q * yaglom.t_gen(chain, &fs);
        }
        Ok(expectation - rate * yaglom.t_gen(chain, s) - (1.0 - rate))
    };
    let mut max_residual = 0.0f64;
    let mut idx = vec![0usize; p];
    let points = per_edge.pow(p as u32);
    for _ in 0..points {
        let s: Vec<f64> = idx.iter().map(|&k| k as f64 / (per_edge - 1) as f64).collect();
        max_residual = max_residual.max(residual(&s)?.abs());
        for d in 0..p {
            idx[d] += 1;
            if idx[d] < per_edge {
                break;
            }
            idx[d] = 0;
        }
    }
    let residual_at_one = residual(&vec![1.0; p])?;
    Ok(FunctionalEqReport {
        max_residual,
        residual_at_one,
        tail_bound: 2.0 * yaglom.t_weighted_leak + yaglom.movement,
        grid_points: points,
    })
}

/// Normalized extinction-complement limits per start type, with the
/// representation check against the limit law's generating function.
#[derive(Clone, Debug, Serialize)]
pub struct PhiReport {
    pub s: Vec<f64>,
    pub phi_lower: Vec<f64>,
    pub phi_upper: Vec<f64>,
    /// Max deviation of `sum_i z_i K_i (1 - phi_i(s)) / (z, K)` from `T(s)`
    /// over the checked starts.
    pub representation_residual: f64,
    pub horizon: usize,
}

/// Estimates `phi_i(s) = lim E[1 - F^i_{0,n}(s)] / P(alive at n from e_i)`
/// at a finite horizon with truncation brackets, and verifies that the
/// type-weighted mixture of `1 - phi_i` reproduces `T` at every checked
/// start.
pub fn phi_estimate(
    chain: &TruncatedChain,
    yaglom: &YaglomData,
    s: &[f64],
    horizon: usize,
    checks: &[Vec<u64>],
) -> Result<PhiReport> {
    let p = chain.states[0].len();
    if s.len() != p {
        return Err(Error::Domain(format!(
            "argument has dimension {}, chain has {p}",
            s.len()
        )));
    }
    for &v in s {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!(
                "generating arguments live in the unit cube; got {v}"
            )));
        }
    }
    let mut phi_lower = Vec::with_capacity(p);
    let mut phi_upper = Vec::with_capacity(p);
    for i in 0..p {
        let mut e = vec![0u64; p];
        e[i] = 1;
        let mut prop = chain.initial(&e)?;
        for _ in 0..horizon {
            chain.step(&mut prop);
        }
        // Numerator E[1 - s^{Z_n}]: live states contribute exactly, leaked
        // mass contributes between 0 and its full weight.
        let mut num = 0.0;
        for (idx, &mass) in prop.alive.iter().enumerate().skip(1) {
            if mass != 0.0 {
                num += mass * (1.0 - pow_state(s, &chain.states[idx]));
            }
        }
        let den_lower = prop.alive_mass();
        let den_upper = den_lower + prop.leaked;
        if !(den_lower > 0.0) {
            return Err(Error::InsufficientData(format!(
                "no surviving mass at horizon {horizon} from type {i}"
            )));
        }
        phi_lower.push(num / den_upper);
        phi_upper.push((num + prop.leaked) / den_lower);
    }
    let t_s = yaglom.t_gen(chain, s);
    let mut representation_residual = 0.0f64;
    for z in checks {
        if z.len() != p || z.iter().all(|&c| c == 0) {
            return Err(Error::Domain(format!("invalid representation check start {z:?}")));
        }
        let zk: f64 = z.iter().zip(&yaglom.k_vec).map(|(&c, k)| c as f64 * k).sum();
        let mixture: f64 = z
            .iter()
            .zip(&yaglom.k_vec)
            .zip(phi_lower.iter().zip(&phi_upper))
            .map(|((&c, k), (lo, hi))| c as f64 * k * (1.0 - 0.5 * (lo + hi)))
            .sum::<f64>()
            / zk;
        representation_residual = representation_residual.max((mixture - t_s).abs());
    }
    Ok(PhiReport { s: s.to_vec(), phi_lower, phi_upper, representation_residual, horizon })
}
