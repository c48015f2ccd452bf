//! Built-in reference chains and random instance generators used by tests,
//! the verification suite, and the CLI `fixtures` lookup.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::effective::CvAssignment;
use crate::error::{Error, Result};
use crate::operator::TransitionModel;
use crate::tpt::SetPair;

/// Two-state chain `[[0.9, 0.1], [0.2, 0.8]]` with `mu = (2/3, 1/3)`;
/// reversible by the detailed-balance check `2/3 * 0.1 = 1/3 * 0.2`.
pub fn two_state() -> TransitionModel {
    TransitionModel::from_matrix(DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]), 1.0)
        .expect("fixture is valid")
}

/// Three-state birth–death chain with `mu = (1/4, 1/2, 1/4)` and spectrum
/// `(1, 1/2, 0)`.
pub fn bd3() -> TransitionModel {
    TransitionModel::from_matrix(
        DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.25, 0.5, 0.25, 0.0, 0.5, 0.5]),
        1.0,
    )
    .expect("fixture is valid")
}

/// Four-state birth–death chain (stay 1/2, hop 1/4, reflecting ends) with
/// uniform stationary distribution.
pub fn bd4() -> TransitionModel {
    TransitionModel::from_matrix(
        DMatrix::from_row_slice(
            4,
            4,
            &[
                0.75, 0.25, 0.0, 0.0, //
                0.25, 0.5, 0.25, 0.0, //
                0.0, 0.25, 0.5, 0.25, //
                0.0, 0.0, 0.25, 0.75,
            ],
        ),
        1.0,
    )
    .expect("fixture is valid")
}

/// Deterministic 3-cycle `i -> i+1 mod 3`: uniform mu, maximally
/// non-reversible (detailed-balance residual 1/3).
pub fn cycle3() -> TransitionModel {
    TransitionModel::from_matrix(
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
        1.0,
    )
    .expect("fixture is valid")
}

/// Non-reversible but aperiodic 3-state chain biased around the cycle.
pub fn biased_cycle3() -> TransitionModel {
    TransitionModel::from_matrix(
        DMatrix::from_row_slice(3, 3, &[0.2, 0.7, 0.1, 0.1, 0.2, 0.7, 0.7, 0.1, 0.2]),
        1.0,
    )
    .expect("fixture is valid")
}

/// Fixture lookup by the names the CLI exposes.
pub fn by_name(name: &str) -> Result<TransitionModel> {
    match name {
        "2st" => Ok(two_state()),
        "bd3" => Ok(bd3()),
        "bd4" => Ok(bd4()),
        "cycle3" => Ok(cycle3()),
        "biased-cycle3" => Ok(biased_cycle3()),
        other => Err(Error::Config(format!("unknown fixture '{other}'"))),
    }
}

pub const FIXTURE_NAMES: &[&str] = &["2st", "bd3", "bd4", "cycle3", "biased-cycle3"];

/// Random reversible chain on `n` states with strictly positive entries:
/// rows of a random symmetric weight matrix, so detailed balance holds with
/// `mu` proportional to the row sums.
pub fn random_reversible(rng: &mut ChaCha8Rng, n: usize) -> TransitionModel {
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let w = rng.gen_range(0.05..1.0);
            s[(i, j)] = w;
            s[(j, i)] = w;
        }
    }
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let row_sum: f64 = s.row(i).iter().sum();
        for j in 0..n {
            p[(i, j)] = s[(i, j)] / row_sum;
        }
    }
    TransitionModel::from_matrix(p, 1.0).expect("random reversible chain is valid")
}

/// Random ergodic (generally non-reversible) chain with positive entries.
pub fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> TransitionModel {
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        for j in 0..n {
            p[(i, j)] = row[j] / s;
        }
    }
    TransitionModel::from_matrix(p, 1.0).expect("random chain is valid")
}

/// Random disjoint nonempty set pair leaving at least one interior state.
pub fn random_set_pair(rng: &mut ChaCha8Rng, n: usize) -> SetPair {
    assert!(n >= 3);
    loop {
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0u8..4)).collect();
        // labels: 0 -> A, 1 -> B, 2/3 -> interior
        let a: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
        let b: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
        let interior = n - a.len() - b.len();
        if !a.is_empty() && !b.is_empty() && interior > 0 {
            return SetPair::new(a, b, n).expect("generated pair is valid");
        }
        labels.clear();
    }
}

/// Random surjective bin assignment of `n` states onto `k` bins.
pub fn random_assignment(rng: &mut ChaCha8Rng, n: usize, k: usize) -> CvAssignment {
    assert!(k >= 1 && k <= n);
    loop {
        let bin_of: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let mut seen = vec![false; k];
        for &b in &bin_of {
            seen[b] = true;
        }
        if seen.iter().all(|&s| s) {
            return CvAssignment::new(bin_of, k).expect("generated assignment is valid");
        }
    }
}

/// Random surjective map between bin sets, used for composed CVs.
pub fn random_surjection(rng: &mut ChaCha8Rng, from: usize, to: usize) -> Vec<usize> {
    assert!(to >= 1 && to <= from);
    loop {
        let f: Vec<usize> = (0..from).map(|_| rng.gen_range(0..to)).collect();
        let mut seen = vec![false; to];
        for &b in &f {
            seen[b] = true;
        }
        if seen.iter().all(|&s| s) {
            return f;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn named_fixtures_resolve() {
        for name in FIXTURE_NAMES {
            let m = by_name(name).unwrap();
            m.validate().unwrap();
        }
        assert!(by_name("nope").is_err());
    }

    #[test]
    fn fixture_stationary_distributions() {
        let m = two_state();
        assert!((m.mu()[0] - 2.0 / 3.0).abs() < 1e-12);
        let m = bd3();
        assert!((m.mu()[0] - 0.25).abs() < 1e-12);
        assert!((m.mu()[1] - 0.5).abs() < 1e-12);
        let m = bd4();
        for i in 0..4 {
            assert!((m.mu()[i] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn random_reversible_is_reversible() {
        let mut rng = seeded(5);
        for _ in 0..20 {
            let n = rng.gen_range(3..=12);
            let m = random_reversible(&mut rng, n);
            assert!(m.detailed_balance_residual() < 1e-14);
        }
    }
}
