//! Offspring laws, environment states, and the i.i.d. environment
//! distribution, together with the model-file loader and the admissibility
//! checkers.
//!
//! A model consists of `p` particle types and finitely many environment
//! states drawn i.i.d. each generation. A state holds one finite-support
//! offspring law per parent type. Restricting to finite supports keeps every
//! moment an exact finite sum and makes the truncated-chain oracle exact.
//!
//! The admissibility report covers six conditions:
//!
//! * positive moments of the mean-matrix norm exist for every exponent
//!   (automatic with finite supports; values reported),
//! * no invariant proper union of subspaces for the mean matrices
//!   (heuristically falsified only, never certified),
//! * mean-matrix entries strictly positive with a bounded max/min ratio,
//! * the semigroup generated by the mean matrices contains an element that
//!   expands every direction of the simplex (certified by sampling),
//! * a finite mixed moment of the mean norm and the log of the normalized
//!   second-moment statistic,
//! * every offspring law puts positive mass on the empty litter.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::simplex_points;
use crate::rng::{self, workers};
use crate::spectral::Matrix;
use crate::stats::{snap_to_unit_mass, RunningStat};

/// Input probabilities must sum to one within this tolerance; they are then
/// renormalized to an exactly unit floating-point sum.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Offspring counts per component are capped so that powers and convolution
/// index arithmetic stay safely inside integer range.
const MAX_COMPONENT: u64 = 1 << 20;

/// A finite-support probability law on offspring vectors in `N0^p`.
#[derive(Clone, Debug, PartialEq)]
pub struct OffspringLaw {
    p: usize,
    /// Distinct offspring vectors with their probabilities; probabilities
    /// sum to exactly 1.0 in index order.
    support: Vec<(Vec<u64>, f64)>,
    /// Cumulative probabilities for sampling.
    cum: Vec<f64>,
}

impl OffspringLaw {
    pub fn new(p: usize, mut support: Vec<(Vec<u64>, f64)>) -> Result<Self> {
        if p == 0 {
            return Err(Error::Model("law dimension must be at least 1".into()));
        }
        if support.is_empty() {
            return Err(Error::Model("offspring law has empty support".into()));
        }
        let mut seen = BTreeSet::new();
        for (z, q) in &support {
            if z.len() != p {
                return Err(Error::Model(format!(
                    "offspring vector {z:?} has length {}, expected {p}",
                    z.len()
                )));
            }
            if z.iter().any(|&c| c > MAX_COMPONENT) {
                return Err(Error::Model(format!(
                    "offspring count in {z:?} exceeds the supported maximum {MAX_COMPONENT}"
                )));
            }
            if !q.is_finite() || *q < 0.0 {
                return Err(Error::Model(format!(
                    "probability {q} of offspring vector {z:?} must be finite and nonnegative"
                )));
            }
            if !seen.insert(z.clone()) {
                return Err(Error::Model(format!(
                    "offspring vector {z:?} appears twice in one law"
                )));
            }
        }
        let mut probs: Vec<f64> = support.iter().map(|(_, q)| *q).collect();
        snap_to_unit_mass(&mut probs, MASS_TOLERANCE, "offspring law")?;
        for ((_, q), snapped) in support.iter_mut().zip(&probs) {
            *q = *snapped;
        }
        let mut cum = Vec::with_capacity(support.len());
        let mut acc = 0.0;
        for (_, q) in &support {
            acc += q;
            cum.push(acc);
        }
        Ok(Self { p, support, cum })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn support(&self) -> &[(Vec<u64>, f64)] {
        &self.support
    }

    pub fn mass_at_zero(&self) -> f64 {
        self.support
            .iter()
            .find(|(z, _)| z.iter().all(|&c| c == 0))
            .map(|(_, q)| *q)
            .unwrap_or(0.0)
    }

    /// Largest total litter size in the support.
    pub fn max_total(&self) -> u64 {
        self.support
            .iter()
            .map(|(z, _)| z.iter().sum())
            .max()
            .unwrap_or(0)
    }

    /// Generating-function value `sum_z q_z * prod_j s_j^{z_j}` for
    /// `s` in the unit cube. Exactly 1 at `s = 1` because the stored
    /// probabilities sum to exactly 1.
    pub fn pgf(&self, s: &[f64]) -> f64 {
        debug_assert_eq!(s.len(), self.p);
        let mut acc = 0.0;
        for (z, q) in &self.support {
            let mut term = *q;
            for (sj, &zj) in s.iter().zip(z) {
                if zj > 0 {
                    term *= sj.powi(zj as i32);
                }
            }
            acc += term;
        }
        acc
    }

    /// One draw from the law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[u64] {
        let u: f64 = rng.gen();
        let idx = match self.cum.iter().position(|&c| u < c) {
            Some(i) => i,
            None => self.support.len() - 1,
        };
        &self.support[idx].0
    }
}

/// One environment state: an offspring law per parent type, with cached
/// first and second moments.
#[derive(Clone, Debug)]
pub struct EnvState {
    laws: Vec<OffspringLaw>,
    mean: Matrix,
    hessians: Vec<Matrix>,
    t_stat: f64,
}

impl EnvState {
    pub fn new(laws: Vec<OffspringLaw>) -> Result<Self> {
        let p = laws.len();
        if p == 0 {
            return Err(Error::Model("environment state has no offspring laws".into()));
        }
        for (i, law) in laws.iter().enumerate() {
            if law.dim() != p {
                return Err(Error::Model(format!(
                    "law {i} has dimension {}, expected {p} (one law per type)",
                    law.dim()
                )));
            }
        }
        let mut mean = Matrix::zero(p);
        for (i, law) in laws.iter().enumerate() {
            for (z, q) in law.support() {
                for (j, &zj) in z.iter().enumerate() {
                    if zj > 0 {
                        mean.set(i, j, mean.get(i, j) + q * zj as f64);
                    }
                }
            }
        }
        let mean_norm = mean.op_norm();
        if mean_norm <= 0.0 {
            return Err(Error::Model(
                "degenerate environment state: every type dies childless almost surely".into(),
            ));
        }
        // Second factorial moments of law k: entry (i, j) is
        // E[z_i * (z_j - [i == j])], the Hessian of the generating function
        // of law k at s = 1.
        let mut hessians = Vec::with_capacity(p);
        for law in &laws {
            let mut b = Matrix::zero(p);
            for (z, q) in law.support() {
                for i in 0..p {
                    for j in 0..p {
                        let factor = z[i] as f64 * (z[j] as f64 - if i == j { 1.0 } else { 0.0 });
                        if factor != 0.0 {
                            b.set(i, j, b.get(i, j) + q * factor);
                        }
                    }
                }
            }
            hessians.push(b);
        }
        let t_stat =
            hessians.iter().map(Matrix::op_norm).sum::<f64>() / (mean_norm * mean_norm);
        Ok(Self { laws, mean, hessians, t_stat })
    }

    pub fn dim(&self) -> usize {
        self.laws.len()
    }

    pub fn laws(&self) -> &[OffspringLaw] {
        &self.laws
    }

    pub fn law(&self, parent_type: usize) -> &OffspringLaw {
        &self.laws[parent_type]
    }

    /// Mean-offspring matrix: row `i`, column `j` is the expected number of
    /// type-`j` children of a type-`i` parent.
    pub fn mean(&self) -> &Matrix {
        &self.mean
    }

    /// Second-factorial-moment matrices, one per parent type.
    pub fn hessians(&self) -> &[Matrix] {
        &self.hessians
    }

    /// Normalized second-moment statistic: the sum of Hessian norms divided
    /// by the squared mean norm. Zero exactly when every law is at most
    /// single-child per coordinate.
    pub fn t_stat(&self) -> f64 {
        self.t_stat
    }
}

/// Evaluates all `p` generating functions of a state at `s` in the unit cube.
pub fn pgf_eval(state: &EnvState, s: &[f64]) -> Result<Vec<f64>> {
    if s.len() != state.dim() {
        return Err(Error::Domain(format!(
            "argument has dimension {}, state has {}",
            s.len(),
            state.dim()
        )));
    }
    for &v in s {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!(
                "generating functions are evaluated on the unit cube; got coordinate {v}"
            )));
        }
    }
    Ok(state.laws.iter().map(|law| law.pgf(s)).collect())
}

/// The full model: type count, environment states, and their probabilities.
#[derive(Clone, Debug)]
pub struct EnvModel {
    p: usize,
    states: Vec<EnvState>,
    probs: Vec<f64>,
    cum: Vec<f64>,
}

impl EnvModel {
    pub fn new(states: Vec<EnvState>, probs: Vec<f64>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Model("model has no environment states".into()));
        }
        let p = states[0].dim();
        for (e, st) in states.iter().enumerate() {
            if st.dim() != p {
                return Err(Error::Model(format!(
                    "environment state {e} has dimension {}, state 0 has {p}",
                    st.dim()
                )));
            }
        }
        if probs.len() != states.len() {
            return Err(Error::Model(format!(
                "{} state probabilities for {} states",
                probs.len(),
                states.len()
            )));
        }
        for (e, &q) in probs.iter().enumerate() {
            if !q.is_finite() || q < 0.0 {
                return Err(Error::Model(format!(
                    "probability {q} of environment state {e} must be finite and nonnegative"
                )));
            }
        }
        let mut probs = probs;
        snap_to_unit_mass(&mut probs, MASS_TOLERANCE, "environment distribution")?;
        let mut cum = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &q in &probs {
            acc += q;
            cum.push(acc);
        }
        Ok(Self { p, states, probs, cum })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn states(&self) -> &[EnvState] {
        &self.states
    }

    pub fn state(&self, e: usize) -> &EnvState {
        &self.states[e]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// One environment-state index distributed per the model probabilities.
    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        match self.cum.iter().position(|&c| u < c) {
            Some(i) => i,
            None => self.states.len() - 1,
        }
    }

    /// Expected mean matrix over the environment, `sum_e prob_e * M_e`.
    pub fn annealed_mean(&self) -> Matrix {
        let mut m = Matrix::zero(self.p);
        for (st, &q) in self.states.iter().zip(&self.probs) {
            m = m.add_scaled(q, st.mean());
        }
        m
    }

    /// Largest one-particle litter size over all states and types.
    pub fn max_offspring_total(&self) -> u64 {
        self.states
            .iter()
            .flat_map(|st| st.laws().iter().map(OffspringLaw::max_total))
            .max()
            .unwrap_or(0)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::Model(format!("model file: {e}")))?;
        file.build()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Model(format!("cannot read model file {}: {e}", path.display()))
        })?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Model(msg) => Error::Model(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            p: self.p,
            states: self
                .states
                .iter()
                .zip(&self.probs)
                .map(|(st, &q)| StateFile {
                    prob: q,
                    laws: st
                        .laws()
                        .iter()
                        .map(|law| {
                            law.support()
                                .iter()
                                .map(|(z, q)| AtomFile { z: z.clone(), prob: *q })
                                .collect()
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }
}

#[derive(Serialize, Deserialize)]
struct AtomFile {
    z: Vec<u64>,
    prob: f64,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    prob: f64,
    laws: Vec<Vec<AtomFile>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    p: usize,
    states: Vec<StateFile>,
}

impl ModelFile {
    fn build(self) -> Result<EnvModel> {
        if self.p == 0 {
            return Err(Error::Model("\"p\" must be at least 1".into()));
        }
        let mut states = Vec::with_capacity(self.states.len());
        let mut probs = Vec::with_capacity(self.states.len());
        for (e, sf) in self.states.into_iter().enumerate() {
            if sf.laws.len() != self.p {
                return Err(Error::Model(format!(
                    "states[{e}].laws has {} entries, expected p = {}",
                    sf.laws.len(),
                    self.p
                )));
            }
            let mut laws = Vec::with_capacity(sf.laws.len());
            for (j, atoms) in sf.laws.into_iter().enumerate() {
                let support: Vec<(Vec<u64>, f64)> =
                    atoms.into_iter().map(|a| (a.z, a.prob)).collect();
                let law = OffspringLaw::new(self.p, support).map_err(|err| match err {
                    Error::Model(msg) => {
                        Error::Model(format!("states[{e}].laws[{j}]: {msg}"))
                    }
                    other => other,
                })?;
                laws.push(law);
            }
            let state = EnvState::new(laws).map_err(|err| match err {
                Error::Model(msg) => Error::Model(format!("states[{e}]: {msg}")),
                other => other,
            })?;
            states.push(state);
            probs.push(sf.prob);
        }
        EnvModel::new(states, probs)
    }
}

// ---------------------------------------------------------------------------
// Admissibility checks
// ---------------------------------------------------------------------------

/// Tunables for [`check_conditions`]. `grid_per_edge = 0` selects the default
/// resolution (201 points per edge for two types, 21 otherwise).
#[derive(Clone, Debug)]
pub struct CheckConfig {
    pub seed: u64,
    pub theta_grid: Vec<f64>,
    pub epsilon: f64,
    pub h5_samples: usize,
    /// Maximum number of factors in sampled semigroup products.
    pub product_length: usize,
    pub grid_per_edge: usize,
    /// Cap on the number of sampled products.
    pub product_cap: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            theta_grid: vec![0.5, 1.0, 1.5, 2.0],
            epsilon: 0.5,
            h5_samples: 10_000,
            product_length: 6,
            grid_per_edge: 0,
            product_cap: 4096,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ThetaMoment {
    pub theta: f64,
    pub value: f64,
}

/// Moment condition: for finite-support models every positive exponent
/// admits a finite mean-norm moment, so the admissible interval is the whole
/// positive ray; the sampled values are exact weighted sums.
#[derive(Clone, Debug, Serialize)]
pub struct H1Report {
    pub pass: bool,
    pub moments: Vec<ThetaMoment>,
}

/// Irreducibility-type condition. Only falsifiable by exhibiting an invariant
/// proper union of subspaces; `falsified = false` means "not falsified".
#[derive(Clone, Debug, Serialize)]
pub struct H2Report {
    pub falsified: bool,
    pub witness: Option<String>,
    pub products_checked: usize,
}

/// Entry-ratio condition: all mean-matrix entries strictly positive with the
/// reported max/min ratio.
#[derive(Clone, Debug, Serialize)]
pub struct H3Report {
    pub pass: bool,
    pub gamma: Option<f64>,
    pub offending_state: Option<usize>,
}

/// Expansion condition: some sampled semigroup element stretches every
/// simplex direction; `delta` is the best certified log-stretch.
#[derive(Clone, Debug, Serialize)]
pub struct H4Report {
    pub pass: bool,
    pub delta: f64,
    pub witness_length: usize,
    pub products_checked: usize,
    pub grid_resolution: usize,
}

/// Mixed-moment condition, estimated by Monte Carlo. States whose
/// second-moment statistic vanishes contribute zero and are flagged.
#[derive(Clone, Debug, Serialize)]
pub struct H5Report {
    pub estimate: f64,
    pub stderr: f64,
    pub epsilon: f64,
    pub samples: usize,
    pub flagged_states: Vec<usize>,
}

/// Extinction condition: every law must put positive mass on the empty
/// litter.
#[derive(Clone, Debug, Serialize)]
pub struct H6Report {
    pub pass: bool,
    /// `(state index, law index)` pairs with no mass at zero.
    pub offending: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub h1: H1Report,
    pub h2: H2Report,
    pub h3: H3Report,
    pub h4: H4Report,
    pub h5: H5Report,
    pub h6: H6Report,
    /// True when every falsifiable condition passes and nothing was
    /// falsified heuristically.
    pub pass: bool,
}

/// Runs all six admissibility checks.
pub fn check_conditions(model: &EnvModel, cfg: &CheckConfig) -> Result<ConditionReport> {
    let h1 = check_h1(model, &cfg.theta_grid);
    let products = sample_products(model, cfg.product_length, cfg.product_cap);
    let h2 = check_h2(model, &products);
    let h3 = check_h3(model);
    let h4 = check_h4(model, &products, cfg.grid_per_edge);
    let h5 = check_h5(model, cfg);
    let h6 = check_h6(model);
    let pass = h1.pass && !h2.falsified && h3.pass && h4.pass && h6.pass;
    Ok(ConditionReport { h1, h2, h3, h4, h5, h6, pass })
}

fn check_h1(model: &EnvModel, theta_grid: &[f64]) -> H1Report {
    let moments = theta_grid
        .iter()
        .map(|&theta| ThetaMoment {
            theta,
            value: model
                .states()
                .iter()
                .zip(model.probs())
                .map(|(st, &q)| q * st.mean().op_norm().powf(theta))
                .sum(),
        })
        .collect();
    H1Report { pass: true, moments }
}

/// All products of state mean matrices with up to `max_len` factors, capped.
fn sample_products(model: &EnvModel, max_len: usize, cap: usize) -> Vec<(Matrix, usize)> {
    let gens: Vec<&Matrix> = model.states().iter().map(EnvState::mean).collect();
    let mut out: Vec<(Matrix, usize)> = gens.iter().map(|g| ((*g).clone(), 1)).collect();
    let mut frontier: Vec<Matrix> = gens.iter().map(|g| (*g).clone()).collect();
    for len in 2..=max_len {
        let mut next = Vec::new();
        for h in &frontier {
            for g in &gens {
                if out.len() + next.len() >= cap {
                    break;
                }
                next.push(h.matmul(g));
            }
        }
        if next.is_empty() {
            break;
        }
        out.extend(next.iter().cloned().map(|m| (m, len)));
        frontier = next;
    }
    out
}

fn check_h2(model: &EnvModel, products: &[(Matrix, usize)]) -> H2Report {
    let p = model.p();
    let checked = products.len();
    if p == 1 {
        // One-dimensional cone: no proper nonzero subspace exists.
        return H2Report { falsified: false, witness: None, products_checked: checked };
    }
    let gens: Vec<&Matrix> = model.states().iter().map(EnvState::mean).collect();

    // Invariant coordinate subspace: the support closure of some coordinate
    // under every generator stays proper.
    let mut support_sum = Matrix::zero(p);
    for g in &gens {
        support_sum = support_sum.add_scaled(1.0, g);
    }
    for start in 0..p {
        let mut in_set = vec![false; p];
        in_set[start] = true;
        let mut changed = true;
        while changed {
            changed = false;
            for j in 0..p {
                if !in_set[j] {
                    continue;
                }
                for i in 0..p {
                    if !in_set[i] && support_sum.get(i, j) > 0.0 {
                        in_set[i] = true;
                        changed = true;
                    }
                }
            }
        }
        if in_set.iter().any(|&b| !b) {
            let members: Vec<usize> =
                (0..p).filter(|&i| in_set[i]).collect();
            return H2Report {
                falsified: true,
                witness: Some(format!(
                    "coordinate subspace spanned by types {members:?} is invariant under every state mean"
                )),
                products_checked: checked,
            };
        }
    }

    // Monomial columns: every generator maps each coordinate line to a
    // coordinate line, so the union of coordinate lines is invariant.
    let monomial = gens.iter().all(|g| {
        (0..p).all(|j| (0..p).filter(|&i| g.get(i, j) > 0.0).count() <= 1)
    });
    if monomial {
        return H2Report {
            falsified: true,
            witness: Some(
                "every state mean has at most one positive entry per column; the union of coordinate lines is invariant"
                    .into(),
            ),
            products_checked: checked,
        };
    }

    // Common eigendirection across all generators: a common right
    // eigenvector spans an invariant line, a common left eigenvector defines
    // an invariant hyperplane. Candidates: coordinate axes plus
    // eigendirections of generators and of sampled products (both eigenlines
    // in dimension two, the dominant one otherwise).
    let transposed: Vec<Matrix> = gens.iter().map(|g| transpose(g)).collect();
    let sources: Vec<&Matrix> = gens
        .iter()
        .copied()
        .chain(products.iter().map(|(m, _)| m))
        .collect();
    for left in [false, true] {
        let mut candidates: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                let mut e = vec![0.0; p];
                e[i] = 1.0;
                e
            })
            .collect();
        for m in &sources {
            let m = if left { transpose(m) } else { (*m).clone() };
            candidates.extend(eigen_lines(&m));
        }
        let acting: Vec<&Matrix> = if left {
            transposed.iter().collect()
        } else {
            gens.clone()
        };
        if let Some(unit) = common_eigendirection(&acting, &candidates) {
            let kind = if left {
                "the orthogonal hyperplane of a common left eigendirection"
            } else {
                "the line of a common right eigendirection"
            };
            return H2Report {
                falsified: true,
                witness: Some(format!(
                    "{kind} {unit:?} is invariant under every state mean"
                )),
                products_checked: checked,
            };
        }
    }

    H2Report { falsified: false, witness: None, products_checked: checked }
}

fn transpose(m: &Matrix) -> Matrix {
    let p = m.dim();
    let mut t = Matrix::zero(p);
    for i in 0..p {
        for j in 0..p {
            t.set(j, i, m.get(i, j));
        }
    }
    t
}

/// First candidate direction that every matrix in `acting` maps into its own
/// span (mapping to zero counts as staying in the span).
fn common_eigendirection(acting: &[&Matrix], candidates: &[Vec<f64>]) -> Option<Vec<f64>> {
    'cand: for cand in candidates {
        let norm = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 0.0 {
            continue;
        }
        let unit: Vec<f64> = cand.iter().map(|v| v / norm).collect();
        for g in acting {
            let w = g.mul_col(&unit);
            let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if wn <= 1e-14 {
                continue; // maps into the line through zero; still invariant
            }
            let cosine = w.iter().zip(&unit).map(|(a, b)| a * b).sum::<f64>() / wn;
            if cosine.abs() < 1.0 - 1e-10 {
                continue 'cand;
            }
        }
        return Some(unit);
    }
    None
}

/// Real eigendirections of a small nonnegative matrix: exact in dimension
/// two, dominant direction by short power iteration otherwise.
fn eigen_lines(m: &Matrix) -> Vec<Vec<f64>> {
    let p = m.dim();
    if p == 2 {
        let (a, b, c, d) = (m.get(0, 0), m.get(0, 1), m.get(1, 0), m.get(1, 1));
        let disc = ((a - d) * (a - d) + 4.0 * b * c).sqrt();
        let mut lines = Vec::new();
        for lambda in [(a + d + disc) / 2.0, (a + d - disc) / 2.0] {
            // (a - lambda) x + b y = 0
            let line = if b.abs() > 1e-14 {
                vec![b, lambda - a]
            } else if c.abs() > 1e-14 {
                vec![lambda - d, c]
            } else {
                // diagonal: coordinate axes already in the candidate list
                continue;
            };
            lines.push(line);
        }
        lines
    } else {
        let mut x = vec![1.0 / p as f64; p];
        for _ in 0..200 {
            let y = m.mul_col(&x);
            let s: f64 = y.iter().map(|v| v.abs()).sum();
            if s <= 0.0 {
                return Vec::new();
            }
            x = y.into_iter().map(|v| v / s).collect();
        }
        vec![x]
    }
}

fn check_h3(model: &EnvModel) -> H3Report {
    let mut gamma: f64 = 1.0;
    for (e, st) in model.states().iter().enumerate() {
        let lo = st.mean().min_entry();
        let hi = st.mean().max_entry();
        if lo <= 0.0 {
            return H3Report { pass: false, gamma: None, offending_state: Some(e) };
        }
        gamma = gamma.max(hi / lo);
    }
    H3Report { pass: true, gamma: Some(gamma), offending_state: None }
}

fn check_h4(model: &EnvModel, products: &[(Matrix, usize)], grid_per_edge: usize) -> H4Report {
    let p = model.p();
    let per_edge = if grid_per_edge == 0 {
        if p == 2 {
            201
        } else {
            21
        }
    } else {
        grid_per_edge
    };
    let (points, resolution) = simplex_points(p, per_edge.saturating_sub(1).max(1), 200_000);
    let mut best = f64::NEG_INFINITY;
    let mut best_len = 0;
    for (h, len) in products {
        // Row action: |x h| = x . (row sums of h); minimize over the grid.
        let row_sums: Vec<f64> = (0..p).map(|i| h.row(i).iter().sum()).collect();
        let mut worst = f64::INFINITY;
        for x in &points {
            let mass: f64 = x.iter().zip(&row_sums).map(|(a, b)| a * b).sum();
            let v = if mass > 0.0 { mass.ln() } else { f64::NEG_INFINITY };
            if v < worst {
                worst = v;
            }
        }
        if worst > best {
            best = worst;
            best_len = *len;
        }
    }
    H4Report {
        pass: best > 0.0,
        delta: best,
        witness_length: best_len,
        products_checked: products.len(),
        grid_resolution: resolution,
    }
}

fn check_h5(model: &EnvModel, cfg: &CheckConfig) -> H5Report {
    let flagged: Vec<usize> = model
        .states()
        .iter()
        .enumerate()
        .filter(|(_, st)| st.t_stat() == 0.0)
        .map(|(e, _)| e)
        .collect();
    let mut rng = rng::stream(cfg.seed, workers::CONDITION_CHECK, 0);
    let mut stat = RunningStat::default();
    for _ in 0..cfg.h5_samples {
        let e = model.sample_state(&mut rng);
        let st = model.state(e);
        let value = if st.t_stat() == 0.0 {
            0.0
        } else {
            st.mean().op_norm() * st.t_stat().ln().abs().powf(1.0 + cfg.epsilon)
        };
        stat.push(value);
    }
    H5Report {
        estimate: stat.mean(),
        stderr: stat.stderr(),
        epsilon: cfg.epsilon,
        samples: cfg.h5_samples,
        flagged_states: flagged,
    }
}

fn check_h6(model: &EnvModel) -> H6Report {
    let mut offending = Vec::new();
    for (e, st) in model.states().iter().enumerate() {
        for (j, law) in st.laws().iter().enumerate() {
            if law.mass_at_zero() <= 0.0 {
                offending.push((e, j));
            }
        }
    }
    H6Report { pass: offending.is_empty(), offending }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn pgf_values_on_simple_laws() {
        let f1 = fixtures::f1();
        let s0 = pgf_eval(f1.state(0), &[0.0]).unwrap();
        assert_eq!(s0[0], 0.5);
        let s1 = pgf_eval(f1.state(0), &[1.0]).unwrap();
        assert_eq!(s1[0], 1.0);

        let f2 = fixtures::f2();
        let a = pgf_eval(f2.state(0), &[0.4]).unwrap();
        assert!((a[0] - 0.85).abs() < 1e-15);
        assert!(pgf_eval(f2.state(0), &[1.2]).is_err());
    }

    #[test]
    fn moments_of_simple_laws() {
        let f1 = fixtures::f1();
        assert_eq!(f1.state(0).mean().get(0, 0), 0.5);
        assert_eq!(f1.state(0).hessians()[0].get(0, 0), 0.0);
        assert_eq!(f1.state(0).t_stat(), 0.0);

        // Litter of zero or two with equal probability: mean 1, second
        // factorial moment 1, normalized statistic 1.
        let law = OffspringLaw::new(1, vec![(vec![0], 0.5), (vec![2], 0.5)]).unwrap();
        let st = EnvState::new(vec![law]).unwrap();
        assert_eq!(st.mean().get(0, 0), 1.0);
        assert_eq!(st.hessians()[0].get(0, 0), 1.0);
        assert_eq!(st.t_stat(), 1.0);
    }

    #[test]
    fn annealed_mean_averages_states() {
        let f2 = fixtures::f2();
        let m = f2.annealed_mean();
        assert_eq!(m.get(0, 0), 0.375);
        let f1 = fixtures::f1();
        assert_eq!(f1.annealed_mean().get(0, 0), 0.5);
    }

    #[test]
    fn sampling_matches_state_probabilities() {
        let f2 = fixtures::f2();
        let mut rng = crate::rng::stream(11, 1, 0);
        let n = 100_000;
        let mut count0 = 0u64;
        for _ in 0..n {
            if f2.sample_state(&mut rng) == 0 {
                count0 += 1;
            }
        }
        let freq = count0 as f64 / n as f64;
        let stderr = (0.25f64 / n as f64).sqrt();
        assert!((freq - 0.5).abs() < 3.0 * stderr, "freq {freq}");

        // Determinism: the same stream reproduces the same draws.
        let mut r1 = crate::rng::stream(5, 1, 7);
        let mut r2 = crate::rng::stream(5, 1, 7);
        for _ in 0..100 {
            assert_eq!(f2.sample_state(&mut r1), f2.sample_state(&mut r2));
        }
    }

    #[test]
    fn conditions_on_scalar_fixtures() {
        let f1 = fixtures::f1();
        let rep = check_conditions(&f1, &CheckConfig::default()).unwrap();
        assert!(rep.h1.pass);
        assert!(!rep.h2.falsified);
        assert!(rep.h3.pass);
        assert_eq!(rep.h3.gamma, Some(1.0));
        assert!(rep.h6.pass);
        // A uniformly contracting scalar environment certifies no expansion.
        assert!(!rep.h4.pass);
        assert_eq!(rep.h5.flagged_states, vec![0]);
    }

    #[test]
    fn h6_fails_without_mass_at_zero() {
        let law = OffspringLaw::new(1, vec![(vec![1], 1.0)]).unwrap();
        let st = EnvState::new(vec![law]).unwrap();
        let model = EnvModel::new(vec![st], vec![1.0]).unwrap();
        let rep = check_conditions(&model, &CheckConfig::default()).unwrap();
        assert!(!rep.h6.pass);
        assert_eq!(rep.h6.offending, vec![(0, 0)]);
        assert!(!rep.pass);
    }

    #[test]
    fn h2_falsified_for_diagonal_supports() {
        let mk = |m00: f64, m11: f64| {
            let law0 = OffspringLaw::new(
                2,
                vec![(vec![0, 0], 1.0 - m00 / 2.0), (vec![2, 0], m00 / 2.0)],
            )
            .unwrap();
            let law1 = OffspringLaw::new(
                2,
                vec![(vec![0, 0], 1.0 - m11 / 2.0), (vec![0, 2], m11 / 2.0)],
            )
            .unwrap();
            EnvState::new(vec![law0, law1]).unwrap()
        };
        let model = EnvModel::new(vec![mk(0.6, 0.9), mk(0.8, 0.5)], vec![0.5, 0.5]).unwrap();
        let rep = check_conditions(&model, &CheckConfig::default()).unwrap();
        assert!(rep.h2.falsified, "diagonal mean matrices leave coordinate lines invariant");
    }

    #[test]
    fn model_json_roundtrip_and_errors() {
        let f3 = fixtures::f3();
        let text = f3.to_json_string();
        let back = EnvModel::from_json_str(&text).unwrap();
        assert_eq!(back.p(), f3.p());
        assert_eq!(back.probs(), f3.probs());
        for (a, b) in back.states().iter().zip(f3.states()) {
            assert_eq!(a.mean(), b.mean());
        }

        let bad_syntax = EnvModel::from_json_str("{ \"p\": 1, ");
        let msg = format!("{}", bad_syntax.unwrap_err());
        assert!(msg.contains("line"), "syntax errors carry positions: {msg}");

        let bad_mass = r#"{"p":1,"states":[{"prob":1.0,"laws":[[{"z":[0],"prob":0.6},{"z":[1],"prob":0.5}]]}]}"#;
        let err = format!("{}", EnvModel::from_json_str(bad_mass).unwrap_err());
        assert!(err.contains("states[0].laws[0]"), "semantic errors carry paths: {err}");
    }
}
