//! The moment curve of random mean-matrix products and the associated
//! change of measure.
//!
//! For a direction `x` on the type simplex and the random mean matrix `M` of
//! one environment draw, the one-step transform
//!
//! ```text
//! (P_t g)(x) = sum_e prob_e * |M_e x|^t * g(M_e x / |M_e x|)
//! ```
//!
//! has a dominant eigenpair `(lambda(t), r_t)` with `r_t` strictly positive
//! on the simplex. The eigenvalue is the moment curve: `n`-step products
//! satisfy `E[ |M_1 ... M_n x|^t ] ~ lambda(t)^n` up to direction-uniform
//! constants. Its logarithm is convex, and the log-derivative at `t = 1`
//! separates decay regimes: with `lambda(1) < 1`, a negative derivative
//! means the population mean decays at rate `lambda(1)` and conditioning on
//! survival has a nondegenerate limit (the strongly subcritical regime).
//!
//! At `t = 1` the eigenfunction is exactly linear, `r_1(x) = (V, x)` for the
//! left Perron eigenvector `V` of the expected mean matrix, so the grid
//! discretization below reproduces `lambda(1)` to iteration tolerance: the
//! multilinear interpolant is exact on linear functions.
//!
//! Reweighting each environment draw by `|M_e x|^t r_t(M_e ∘ x) / (lambda(t)
//! r_t(x))` tilts the environment toward survival-friendly draws while the
//! recorded per-step weights invert the tilted path density exactly, so
//! importance-sampling estimates stay unbiased even on a coarse grid — the
//! grid quality only affects variance.

use rand::Rng;
use serde::Serialize;

use crate::envmodel::{pgf_eval, EnvModel};
use crate::error::{Error, Result};
use crate::grid::SimplexGrid;
use crate::rng::{parallel_replicas, workers};
use crate::stats::RunningStat;

/// Unnormalized tilted selection mass may drift from 1 by interpolation
/// error; deviations beyond this threshold are counted as warnings.
pub const MASS_WARN_THRESHOLD: f64 = 1e-3;

/// Disagreement between the coarse and refined slope estimates beyond this
/// gap flags the derivative as unreliable.
pub const SLOPE_GAP_FLAG: f64 = 1e-3;

/// Half-width of the indifference zone around zero when classifying the
/// sign of the log-derivative.
const SLOPE_MARGIN: f64 = 1e-4;

/// Half-width of the indifference zone around 1 when classifying
/// `lambda(1)`.
const LAMBDA_MARGIN: f64 = 1e-9;

/// Tunables for the transfer-operator discretization. `grid_per_edge = 0`
/// selects the default resolution: 401 points per edge with two types, 41
/// with three or more (one type is exact and needs no grid).
#[derive(Clone, Debug)]
pub struct SpectrumConfig {
    pub grid_per_edge: usize,
    pub tol: f64,
    pub max_iterations: u64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { grid_per_edge: 0, tol: 1e-12, max_iterations: 100_000 }
    }
}

/// Dominant eigenpair of the one-step transform at a fixed tilt.
#[derive(Clone, Debug)]
pub struct RTheta {
    pub theta: f64,
    pub lambda: f64,
    pub iterations: u64,
    /// Sup-norm residual of the eigen-equation on the grid.
    pub residual: f64,
    pub min_value: f64,
    pub max_value: f64,
    grid: SimplexGrid,
    values: Vec<f64>,
}

impl RTheta {
    /// Eigenfunction value at a simplex direction, by multilinear
    /// interpolation; normalized so the grid maximum is 1.
    pub fn r(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Computes the dominant eigenpair of the one-step transform at tilt
/// `theta` by power iteration on a barycentric grid.
pub fn lambda_r_theta(model: &EnvModel, theta: f64, cfg: &SpectrumConfig) -> Result<RTheta> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Domain(format!("tilt must be a positive real, got {theta}")));
    }
    let p = model.p();
    if p == 1 {
        // The simplex is a single point and the transform is the scalar
        // moment: lambda(t) = sum_e prob_e * m_e^t with r identically 1.
        let lambda: f64 = model
            .states()
            .iter()
            .zip(model.probs())
            .map(|(st, &q)| q * st.mean().get(0, 0).powf(theta))
            .sum();
        return Ok(RTheta {
            theta,
            lambda,
            iterations: 0,
            residual: 0.0,
            min_value: 1.0,
            max_value: 1.0,
            grid: SimplexGrid::new(1, 1),
            values: vec![1.0; SimplexGrid::new(1, 1).len()],
        });
    }

    let per_edge = if cfg.grid_per_edge == 0 {
        if p == 2 {
            401
        } else {
            41
        }
    } else {
        cfg.grid_per_edge
    };
    let grid = SimplexGrid::new(p, per_edge.saturating_sub(1).max(1));
    let nodes = grid.len();
    let n_states = model.states().len();

    // The grid is static, so the image direction and stretch of every
    // (node, state) pair are fixed across iterations.
    let mut stretch = vec![0.0f64; nodes * n_states];
    let mut image = vec![Vec::new(); nodes * n_states];
    for i in 0..nodes {
        let x = grid.point(i);
        for (e, st) in model.states().iter().enumerate() {
            let y = st.mean().mul_col(x);
            let mass: f64 = y.iter().sum();
            let idx = i * n_states + e;
            if mass > 0.0 {
                stretch[idx] = mass.powf(theta);
                image[idx] = y.iter().map(|v| v / mass).collect();
            }
        }
    }

    let mut g = vec![1.0f64; nodes];
    let mut iterations = 0u64;
    loop {
        iterations += 1;
        let mut h = vec![0.0f64; nodes];
        for i in 0..nodes {
            let mut acc = 0.0;
            for (e, &q) in model.probs().iter().enumerate() {
                let idx = i * n_states + e;
                if stretch[idx] > 0.0 {
                    acc += q * stretch[idx] * grid.interpolate(&g, &image[idx]);
                }
            }
            h[i] = acc;
        }
        // Ratio brackets of the dominant eigenvalue for the positive
        // discretized operator.
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..nodes {
            if h[i] <= 0.0 {
                return Err(Error::Domain(
                    "one-step transform vanishes at a grid direction; the model mean matrices kill the simplex"
                        .into(),
                ));
            }
            let ratio = h[i] / g[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        let lambda = 0.5 * (lo + hi);
        if hi - lo <= cfg.tol * lambda.max(1.0) || iterations >= cfg.max_iterations {
            let residual = h
                .iter()
                .zip(&g)
                .map(|(hv, gv)| (hv - lambda * gv).abs())
                .fold(0.0, f64::max);
            if hi - lo > cfg.tol * lambda.max(1.0) {
                return Err(Error::NoConvergence {
                    what: "tilt-spectrum power iteration",
                    iterations,
                    residual,
                    tolerance: cfg.tol,
                });
            }
            let max = h.iter().copied().fold(0.0, f64::max);
            let values: Vec<f64> = h.iter().map(|v| v / max).collect();
            let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
            return Ok(RTheta {
                theta,
                lambda,
                iterations,
                residual,
                min_value,
                max_value: 1.0,
                grid,
                values,
            });
        }
        let max = h.iter().copied().fold(0.0, f64::max);
        for v in &mut h {
            *v /= max;
        }
        g = h;
    }
}

/// Central-difference estimate of the log-derivative of the moment curve at
/// tilt 1, with one Richardson refinement.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SlopeEstimate {
    pub slope: f64,
    /// Central difference at step `h`.
    pub coarse: f64,
    /// Central difference at step `h/2`.
    pub fine: f64,
    pub h: f64,
    /// Set when coarse and fine disagree beyond [`SLOPE_GAP_FLAG`].
    pub flagged: bool,
}

pub fn lambda_prime_at_one(
    model: &EnvModel,
    h: f64,
    cfg: &SpectrumConfig,
) -> Result<SlopeEstimate> {
    if !(h > 0.0 && h <= 0.5) {
        return Err(Error::Domain(format!("difference step must lie in (0, 0.5], got {h}")));
    }
    let log_lambda = |t: f64| -> Result<f64> {
        Ok(lambda_r_theta(model, t, cfg)?.lambda.ln())
    };
    let central = |hh: f64| -> Result<f64> {
        Ok((log_lambda(1.0 + hh)? - log_lambda(1.0 - hh)?) / (2.0 * hh))
    };
    let coarse = central(h)?;
    let fine = central(h / 2.0)?;
    let slope = (4.0 * fine - coarse) / 3.0;
    Ok(SlopeEstimate { slope, coarse, fine, h, flagged: (fine - coarse).abs() > SLOPE_GAP_FLAG })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criticality {
    StronglySubcritical,
    OtherSubcritical,
    CriticalOrSupercritical,
    Inconclusive,
}

impl std::fmt::Display for Criticality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Criticality::StronglySubcritical => "strongly-subcritical",
            Criticality::OtherSubcritical => "other-subcritical",
            Criticality::CriticalOrSupercritical => "critical-or-supercritical",
            Criticality::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Classification {
    pub regime: Criticality,
    pub lambda1: f64,
    pub slope: Option<SlopeEstimate>,
}

/// Labels the decay regime from `lambda(1)` and the log-derivative at 1.
/// Estimates inside the decision margins yield `Inconclusive` rather than a
/// silent guess.
pub fn classify(model: &EnvModel, cfg: &SpectrumConfig) -> Result<Classification> {
    let lambda1 = lambda_r_theta(model, 1.0, cfg)?.lambda;
    if lambda1 >= 1.0 {
        return Ok(Classification {
            regime: Criticality::CriticalOrSupercritical,
            lambda1,
            slope: None,
        });
    }
    if 1.0 - lambda1 <= LAMBDA_MARGIN {
        return Ok(Classification { regime: Criticality::Inconclusive, lambda1, slope: None });
    }
    let slope = lambda_prime_at_one(model, 0.05, cfg)?;
    let uncertainty = SLOPE_MARGIN.max((slope.fine - slope.coarse).abs());
    let regime = if slope.slope < -uncertainty {
        Criticality::StronglySubcritical
    } else if slope.slope > uncertainty {
        Criticality::OtherSubcritical
    } else {
        Criticality::Inconclusive
    };
    Ok(Classification { regime, lambda1, slope: Some(slope) })
}

/// The moment curve sampled on a tilt grid, with slope and regime label.
#[derive(Clone, Debug, Serialize)]
pub struct ThetaSpectrum {
    pub thetas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub log_lambdas: Vec<f64>,
    /// Max/min ratio of the eigenfunction per tilt (1 exactly when p = 1).
    pub r_ratios: Vec<f64>,
    pub slope: SlopeEstimate,
    pub classification: Classification,
}

pub fn theta_spectrum(
    model: &EnvModel,
    thetas: &[f64],
    cfg: &SpectrumConfig,
) -> Result<ThetaSpectrum> {
    if thetas.is_empty() {
        return Err(Error::Domain("tilt grid is empty".into()));
    }
    let mut lambdas = Vec::with_capacity(thetas.len());
    let mut r_ratios = Vec::with_capacity(thetas.len());
    for &t in thetas {
        let rt = lambda_r_theta(model, t, cfg)?;
        lambdas.push(rt.lambda);
        r_ratios.push(rt.max_value / rt.min_value);
    }
    let log_lambdas = lambdas.iter().map(|l| l.ln()).collect();
    let slope = lambda_prime_at_one(model, 0.05, cfg)?;
    let classification = classify(model, cfg)?;
    Ok(ThetaSpectrum { thetas: thetas.to_vec(), lambdas, log_lambdas, r_ratios, slope, classification })
}

/// One tilted environment draw.
#[derive(Clone, Debug)]
pub struct TiltedStep {
    pub env: usize,
    /// Image direction of the drawn state's mean matrix.
    pub direction: Vec<f64>,
    /// Log of the original-over-tilted density ratio for this draw; summing
    /// along a path and exponentiating inverts the tilt exactly.
    pub log_weight: f64,
    /// Deviation of the unnormalized selection mass from 1.
    pub mass_deviation: f64,
}

/// Samples environment states under the tilt defined by an eigenpair,
/// counting grid-coarseness warnings.
pub struct TiltedSampler<'a> {
    model: &'a EnvModel,
    rt: &'a RTheta,
    pub mass_warnings: u64,
    pub max_mass_deviation: f64,
}

impl<'a> TiltedSampler<'a> {
    pub fn new(model: &'a EnvModel, rt: &'a RTheta) -> Self {
        Self { model, rt, mass_warnings: 0, max_mass_deviation: 0.0 }
    }

    /// Draws a state with probability proportional to
    /// `prob_e * |M_e x|^theta * r(M_e ∘ x) / (lambda * r(x))`, renormalized.
    pub fn step<R: Rng + ?Sized>(&mut self, x: &[f64], rng: &mut R) -> Result<TiltedStep> {
        let theta = self.rt.theta;
        let r_x = self.rt.r(x);
        if !(r_x > 0.0) {
            return Err(Error::Domain(format!(
                "eigenfunction vanishes at direction {x:?}; tilt undefined there"
            )));
        }
        let n_states = self.model.states().len();
        let mut weights = Vec::with_capacity(n_states);
        let mut dirs = Vec::with_capacity(n_states);
        let mut total = 0.0;
        for (st, &q) in self.model.states().iter().zip(self.model.probs()) {
            let y = st.mean().mul_col(x);
            let mass: f64 = y.iter().sum();
            if mass > 0.0 {
                let dir: Vec<f64> = y.iter().map(|v| v / mass).collect();
                let w = q * mass.powf(theta) * self.rt.r(&dir)
                    / (self.rt.lambda * r_x);
                weights.push((w, mass));
                dirs.push(dir);
            } else {
                weights.push((0.0, 0.0));
                dirs.push(Vec::new());
            }
            total += weights.last().unwrap().0;
        }
        if !(total > 0.0) {
            return Err(Error::Domain(
                "tilted selection mass vanishes; every state kills the current direction".into(),
            ));
        }
        let deviation = (total - 1.0).abs();
        if deviation > MASS_WARN_THRESHOLD {
            self.mass_warnings += 1;
        }
        if deviation > self.max_mass_deviation {
            self.max_mass_deviation = deviation;
        }
        let u: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut env = n_states - 1;
        for (e, (w, _)) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                env = e;
                break;
            }
        }
        let (w_env, mass_env) = weights[env];
        debug_assert!(w_env > 0.0);
        let dir = std::mem::take(&mut dirs[env]);
        // Original/tilted density ratio: prob_e / (w_e / total).
        let log_weight = total.ln() + self.rt.lambda.ln() + r_x.ln()
            - theta * mass_env.ln()
            - self.rt.r(&dir).ln();
        Ok(TiltedStep { env, direction: dir, log_weight, mass_deviation: deviation })
    }
}

/// How a Monte Carlo functional is sampled: under the model's own
/// environment law, or under the tilted law with exact reweighting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMethod {
    Direct,
    Tilted,
}

/// A Monte Carlo estimate with its standard error and tilt diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub mass_warnings: u64,
    pub max_mass_deviation: f64,
}

fn check_theta_bar(model: &EnvModel, theta_bar: &[f64]) -> Result<f64> {
    if theta_bar.len() != model.p() {
        return Err(Error::Domain(format!(
            "exponent vector has {} components, model has {} types",
            theta_bar.len(),
            model.p()
        )));
    }
    for &t in theta_bar {
        if !t.is_finite() || (t != 0.0 && t < 1.0) {
            return Err(Error::Domain(format!(
                "exponent components must be 0 or at least 1, got {t}"
            )));
        }
    }
    let total: f64 = theta_bar.iter().sum();
    if total < 1.0 {
        return Err(Error::Domain(format!(
            "exponent components must sum to at least 1, got {total}"
        )));
    }
    Ok(total)
}

/// Extinction-complement values after `n` steps of a fixed environment
/// sequence: component `i` is `1 - F^i(0)` for the composition applied in
/// path order (the first entry of `envs` is applied last).
fn complement_at_zero(model: &EnvModel, envs: &[usize]) -> Result<Vec<f64>> {
    let mut s = vec![0.0; model.p()];
    for &e in envs.iter().rev() {
        s = pgf_eval(model.state(e), &s)?;
    }
    Ok(s.into_iter().map(|v| 1.0 - v).collect())
}

fn weighted_moment(complement: &[f64], theta_bar: &[f64]) -> f64 {
    let mut f = 1.0;
    for (&d, &t) in complement.iter().zip(theta_bar) {
        if t == 0.0 {
            continue;
        }
        if t == 1.0 {
            f *= d;
        } else {
            f *= d.powf(t);
        }
    }
    f
}

fn reduce_replicas(
    rows: Vec<Result<(f64, u64, f64)>>,
) -> Result<McEstimate> {
    let mut stat = RunningStat::default();
    let mut warnings = 0u64;
    let mut max_dev = 0.0f64;
    for row in rows {
        let (value, warn, dev) = row?;
        stat.push(value);
        warnings += warn;
        max_dev = max_dev.max(dev);
    }
    Ok(McEstimate {
        value: stat.mean(),
        stderr: stat.stderr(),
        samples: stat.count(),
        mass_warnings: warnings,
        max_mass_deviation: max_dev,
    })
}

/// Estimates the mixed extinction-complement moment
/// `E[ prod_i (1 - F^i_{0,n}(0))^{theta_bar_i} ]`
/// by sampling environment sequences, either directly or under the tilt at
/// `|theta_bar|`.
pub fn estimate_y(
    model: &EnvModel,
    theta_bar: &[f64],
    n: usize,
    samples: usize,
    seed: u64,
    method: SamplingMethod,
    cfg: &SpectrumConfig,
) -> Result<McEstimate> {
    let total = check_theta_bar(model, theta_bar)?;
    if samples == 0 {
        return Err(Error::InsufficientData("sample count must be positive".into()));
    }
    match method {
        SamplingMethod::Direct => {
            let rows = parallel_replicas(seed, workers::TILTED, samples, |_, rng| {
                let envs: Vec<usize> = (0..n).map(|_| model.sample_state(rng)).collect();
                let complement = complement_at_zero(model, &envs)?;
                Ok((weighted_moment(&complement, theta_bar), 0u64, 0.0f64))
            });
            reduce_replicas(rows)
        }
        SamplingMethod::Tilted => {
            let rt = lambda_r_theta(model, total, cfg)?;
            let x0: Vec<f64> = theta_bar.iter().map(|t| t / total).collect();
            let rows = parallel_replicas(seed, workers::TILTED, samples, |_, rng| {
                let mut sampler = TiltedSampler::new(model, &rt);
                let mut x = x0.clone();
                let mut envs = Vec::with_capacity(n);
                let mut log_weight = 0.0;
                for _ in 0..n {
                    let step = sampler.step(&x, rng)?;
                    envs.push(step.env);
                    log_weight += step.log_weight;
                    x = step.direction;
                }
                let complement = complement_at_zero(model, &envs)?;
                let value = log_weight.exp() * weighted_moment(&complement, theta_bar);
                Ok((value, sampler.mass_warnings, sampler.max_mass_deviation))
            });
            reduce_replicas(rows)
        }
    }
}

/// Estimates the survival probability after `n` steps from initial
/// population `z`, `E[ 1 - prod_i F^i_{0,n}(0)^{z_i} ]`, under the tilt at 1.
pub fn survival_tilted(
    model: &EnvModel,
    z: &[u64],
    n: usize,
    samples: usize,
    seed: u64,
    cfg: &SpectrumConfig,
) -> Result<McEstimate> {
    if z.len() != model.p() {
        return Err(Error::Domain(format!(
            "start vector has {} components, model has {} types",
            z.len(),
            model.p()
        )));
    }
    let size: u64 = z.iter().sum();
    if size == 0 {
        return Err(Error::Domain("start population is empty".into()));
    }
    if samples == 0 {
        return Err(Error::InsufficientData("sample count must be positive".into()));
    }
    let rt = lambda_r_theta(model, 1.0, cfg)?;
    let x0: Vec<f64> = z.iter().map(|&c| c as f64 / size as f64).collect();
    let rows = parallel_replicas(seed, workers::TILTED, samples, |_, rng| {
        let mut sampler = TiltedSampler::new(model, &rt);
        let mut x = x0.clone();
        let mut envs = Vec::with_capacity(n);
        let mut log_weight = 0.0;
        for _ in 0..n {
            let step = sampler.step(&x, rng)?;
            envs.push(step.env);
            log_weight += step.log_weight;
            x = step.direction;
        }
        let complement = complement_at_zero(model, &envs)?;
        let mut all_dead = 1.0;
        for (&d, &c) in complement.iter().zip(z) {
            if c > 0 {
                all_dead *= (1.0 - d).powi(c as i32);
            }
        }
        Ok((log_weight.exp() * (1.0 - all_dead), sampler.mass_warnings, sampler.max_mass_deviation))
    });
    reduce_replicas(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::spectral::perron_eig;

    fn closed_form_two_state(theta: f64) -> f64 {
        (0.25f64.powf(theta) + 0.5f64.powf(theta)) / 2.0
    }

    #[test]
    fn scalar_moment_curve_matches_closed_form() {
        let f2 = fixtures::f2();
        let cfg = SpectrumConfig::default();
        for theta in [0.5, 1.0, 1.5, 2.0] {
            let rt = lambda_r_theta(&f2, theta, &cfg).unwrap();
            assert!(
                (rt.lambda - closed_form_two_state(theta)).abs() < 1e-14,
                "theta {theta}: {} vs {}",
                rt.lambda,
                closed_form_two_state(theta)
            );
        }
        assert!((lambda_r_theta(&f2, 2.0, &cfg).unwrap().lambda - 5.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn grid_moment_at_one_matches_perron_root() {
        // The eigenfunction at tilt 1 is linear, which the multilinear grid
        // reproduces exactly, so the two eigenvalue computations agree to
        // iteration tolerance.
        let f3 = fixtures::f3();
        let rt = lambda_r_theta(&f3, 1.0, &SpectrumConfig::default()).unwrap();
        let spec = perron_eig(&f3.annealed_mean(), 1e-13).unwrap();
        assert!(
            (rt.lambda - spec.lambda).abs() < 1e-9,
            "{} vs {}",
            rt.lambda,
            spec.lambda
        );
        assert!(rt.min_value > 0.0);
    }

    #[test]
    fn log_curve_is_convex_on_grid() {
        let f3 = fixtures::f3();
        let cfg = SpectrumConfig::default();
        let thetas = [0.5, 1.0, 1.5, 2.0];
        let spec = theta_spectrum(&f3, &thetas, &cfg).unwrap();
        for w in spec.log_lambdas.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-6, "convexity violated: {w:?}");
        }
        for ratio in &spec.r_ratios {
            assert!(ratio.is_finite() && *ratio >= 1.0);
        }
    }

    #[test]
    fn slope_matches_analytic_derivatives() {
        let cfg = SpectrumConfig::default();
        // Single state: the log-curve is linear with slope ln(1/2), and
        // central differences are exact up to rounding.
        let f1 = fixtures::f1();
        let s1 = lambda_prime_at_one(&f1, 0.05, &cfg).unwrap();
        assert!((s1.slope - 0.5f64.ln()).abs() < 1e-9, "{}", s1.slope);
        assert!(!s1.flagged);

        // Two states: the analytic derivative is -(4/3) ln 2.
        let f2 = fixtures::f2();
        let s2 = lambda_prime_at_one(&f2, 0.05, &cfg).unwrap();
        let exact = -(4.0 / 3.0) * 2.0f64.ln();
        assert!((s2.slope - exact).abs() < 1e-5, "{} vs {exact}", s2.slope);
    }

    #[test]
    fn classification_labels_fixtures() {
        let cfg = SpectrumConfig::default();
        for model in [fixtures::f1(), fixtures::f2(), fixtures::f3()] {
            let c = classify(&model, &cfg).unwrap();
            assert_eq!(c.regime, Criticality::StronglySubcritical, "{c:?}");
        }
        // Mean exactly 1: critical, labeled inclusively.
        let law = crate::envmodel::OffspringLaw::new(1, vec![(vec![0], 0.5), (vec![2], 0.5)])
            .unwrap();
        let st = crate::envmodel::EnvState::new(vec![law]).unwrap();
        let crit = crate::envmodel::EnvModel::new(vec![st], vec![1.0]).unwrap();
        let c = classify(&crit, &cfg).unwrap();
        assert_eq!(c.regime, Criticality::CriticalOrSupercritical);
    }

    #[test]
    fn tilted_selection_matches_hand_computation() {
        // Two-state scalar model at tilt 1: selection probabilities are
        // (1/2)(1/4)/(3/8) = 1/3 and (1/2)(1/2)/(3/8) = 2/3.
        let f2 = fixtures::f2();
        let cfg = SpectrumConfig::default();
        let rt = lambda_r_theta(&f2, 1.0, &cfg).unwrap();
        let mut sampler = TiltedSampler::new(&f2, &rt);
        let mut rng = crate::rng::stream(3, 9, 0);
        let n = 60_000;
        let mut count0 = 0u64;
        for _ in 0..n {
            let step = sampler.step(&[1.0], &mut rng).unwrap();
            if step.env == 0 {
                count0 += 1;
            }
            assert!(step.mass_deviation < 1e-12);
        }
        assert_eq!(sampler.mass_warnings, 0);
        let freq = count0 as f64 / n as f64;
        let stderr = (2.0f64 / 9.0 / n as f64).sqrt();
        assert!((freq - 1.0 / 3.0).abs() < 4.0 * stderr, "freq {freq}");
    }

    #[test]
    fn tilted_moment_estimate_has_zero_variance_on_linear_laws() {
        // With single-or-none litters the complement at zero is the exact
        // product of the drawn means, which the weights invert exactly.
        let f2 = fixtures::f2();
        let cfg = SpectrumConfig::default();
        let n = 20;
        let est = estimate_y(&f2, &[1.0], n, 64, 7, SamplingMethod::Tilted, &cfg).unwrap();
        let exact = 0.375f64.powi(n as i32);
        assert!(
            (est.value - exact).abs() <= 1e-9 * exact,
            "{} vs {exact}",
            est.value
        );
        assert!(est.stderr <= 1e-9 * exact, "stderr {}", est.stderr);

        // Squared complements average the squared means: the tilt at 2 is
        // also exact.
        let est2 = estimate_y(&f2, &[2.0], 10, 64, 7, SamplingMethod::Tilted, &cfg).unwrap();
        let exact2 = (5.0f64 / 32.0).powi(10);
        assert!((est2.value - exact2).abs() <= 1e-9 * exact2);
    }

    #[test]
    fn direct_estimate_agrees_with_exact_value() {
        let f2 = fixtures::f2();
        let cfg = SpectrumConfig::default();
        let n = 5;
        let est = estimate_y(&f2, &[1.0], n, 200_000, 21, SamplingMethod::Direct, &cfg).unwrap();
        let exact = 0.375f64.powi(n as i32);
        assert!(
            (est.value - exact).abs() < 3.0 * est.stderr + 1e-12,
            "{} vs {exact} (stderr {})",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn tilted_survival_is_deterministic_in_a_single_state_model() {
        // One state means no tilt randomness at all: every path returns the
        // same exact value 2^-n.
        let f1 = fixtures::f1();
        let cfg = SpectrumConfig::default();
        let est = survival_tilted(&f1, &[1], 30, 100, 5, &cfg).unwrap();
        let exact = 0.5f64.powi(30);
        assert!((est.value - exact).abs() < 1e-15 * exact.max(1.0), "{}", est.value);
        assert!(est.stderr == 0.0 || est.stderr < 1e-12 * exact);
    }

    #[test]
    fn estimators_reject_bad_arguments() {
        let f2 = fixtures::f2();
        let cfg = SpectrumConfig::default();
        assert!(estimate_y(&f2, &[0.5], 5, 10, 0, SamplingMethod::Direct, &cfg).is_err());
        assert!(estimate_y(&f2, &[0.0], 5, 10, 0, SamplingMethod::Direct, &cfg).is_err());
        assert!(estimate_y(&f2, &[1.0, 1.0], 5, 10, 0, SamplingMethod::Direct, &cfg).is_err());
        assert!(survival_tilted(&f2, &[0], 5, 10, 0, &cfg).is_err());
        assert!(lambda_r_theta(&f2, 0.0, &cfg).is_err());
        assert!(lambda_prime_at_one(&f2, 0.6, &cfg).is_err());
    }
}
