//! Built-in reference models with closed-form or hand-checked quantities.
//!
//! These three models anchor the test suite: every estimator and oracle in
//! the crate is exercised against at least one of them.
//!
//! * [`f1`] — one type, one environment state. Each particle leaves zero or
//!   one child with probability 1/2 each, so the population can never grow
//!   and survival from one particle is exactly `2^-n` after `n` steps.
//!   Conditioned on survival the population is the single surviving line,
//!   so the conditional law is a point mass at 1.
//! * [`f2`] — one type, two equally likely environment states with
//!   single-or-none litters (child probabilities 1/4 and 1/2). Averaging the
//!   two states gives survival `(3/8)^n` exactly, and the moment curve is
//!   the two-point average `((1/4)^t + (1/2)^t) / 2` in closed form.
//! * [`f3`] — two types, two environment states (one mild, one productive),
//!   all mean entries positive. The expected mean matrix is
//!   `[[0.479, 0.179], [0.165, 0.479]]` with spectral radius
//!   `0.479 + sqrt(0.179 * 0.165) ≈ 0.650857`. The productive state has row
//!   sums 1.05, so a single factor already stretches every direction of the
//!   simplex. Multi-child litters are kept rare, which makes the
//!   conditional limit law decay fast in the population size: truncating
//!   the state space at total size 40 leaves a per-step leak below `1e-9`,
//!   so truncated answers carry far more precision than the tolerances used
//!   against them. This is the generic fixture: nothing about it is
//!   closed-form, and the truncated-chain oracle supplies its ground truth.

use crate::envmodel::{EnvModel, EnvState, OffspringLaw};

fn law(p: usize, atoms: &[(&[u64], f64)]) -> OffspringLaw {
    OffspringLaw::new(
        p,
        atoms.iter().map(|(z, q)| (z.to_vec(), *q)).collect(),
    )
    .expect("fixture laws are valid")
}

/// One type, one state: litter 0 or 1 with probability 1/2 each.
///
/// Survival from a single particle is `2^-n`; the conditional law given
/// survival is a point mass at population 1, and the decay rate equals the
/// mean litter size 1/2.
pub fn f1() -> EnvModel {
    let st = EnvState::new(vec![law(1, &[(&[0], 0.5), (&[1], 0.5)])])
        .expect("fixture state is valid");
    EnvModel::new(vec![st], vec![1.0]).expect("fixture model is valid")
}

/// One type, two equally likely states with litter 0 or 1.
///
/// State 0 produces a child with probability 1/4, state 1 with probability
/// 1/2. With at most one child per particle, the population started from one
/// particle stays a single line, and survival after `n` steps averages to
/// `((1/4) + (1/2))^n / 2^n = (3/8)^n` exactly. The moment curve is
/// `lambda(t) = ((1/4)^t + (1/2)^t) / 2` with `lambda(1) = 3/8` and
/// `lambda(2) = 5/32`.
pub fn f2() -> EnvModel {
    let st_a = EnvState::new(vec![law(1, &[(&[0], 0.75), (&[1], 0.25)])])
        .expect("fixture state is valid");
    let st_b = EnvState::new(vec![law(1, &[(&[0], 0.5), (&[1], 0.5)])])
        .expect("fixture state is valid");
    EnvModel::new(vec![st_a, st_b], vec![0.5, 0.5]).expect("fixture model is valid")
}

/// Two types, two states: the generic strongly subcritical fixture.
///
/// State 0 (probability 0.7) has mean matrix `[[0.35, 0.14], [0.12, 0.35]]`;
/// state 1 (probability 0.3) has mean matrix `[[0.78, 0.27], [0.27, 0.78]]`
/// whose row sums of 1.05 certify expansion in one factor. All eight mean
/// entries are positive, every law puts mass on the empty litter, and both
/// states have multi-child atoms so the second-moment statistic is
/// positive — but the multi-child atoms are rare (total mass 0.02 in the
/// mild state, 0.20 in the productive one), keeping the conditional limit
/// law tightly concentrated at small populations. The expected mean matrix
/// `[[0.479, 0.179], [0.165, 0.479]]` has spectral radius about `0.650857`,
/// small enough to decay fast but large enough that conditioning on
/// survival at moderate depths stays observable in simulation.
pub fn f3() -> EnvModel {
    let st_mild = EnvState::new(vec![
        law(
            2,
            &[
                (&[0, 0], 0.52),
                (&[1, 0], 0.33),
                (&[0, 1], 0.14),
                (&[2, 0], 0.01),
            ],
        ),
        law(
            2,
            &[
                (&[0, 0], 0.54),
                (&[0, 1], 0.33),
                (&[1, 0], 0.12),
                (&[0, 2], 0.01),
            ],
        ),
    ])
    .expect("fixture state is valid");
    let st_productive = EnvState::new(vec![
        law(
            2,
            &[
                (&[0, 0], 0.05),
                (&[1, 0], 0.63),
                (&[0, 1], 0.22),
                (&[2, 0], 0.05),
                (&[1, 1], 0.05),
            ],
        ),
        law(
            2,
            &[
                (&[0, 0], 0.05),
                (&[0, 1], 0.63),
                (&[1, 0], 0.22),
                (&[0, 2], 0.05),
                (&[1, 1], 0.05),
            ],
        ),
    ])
    .expect("fixture state is valid");
    EnvModel::new(vec![st_mild, st_productive], vec![0.7, 0.3])
        .expect("fixture model is valid")
}
