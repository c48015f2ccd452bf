//! Transition statistics between two metastable sets: the committor, the
//! transition rate by flux, energy, and trajectory-count routes, and the
//! variational energy decomposition around the committor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::TransitionModel;
use crate::spectral::dirichlet_energy;

/// Disjoint nonempty source/target sets of state indices. The complement may
/// be empty (two-state chains); the committor is then fixed by its boundary
/// values alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetPair {
    a: Vec<usize>,
    b: Vec<usize>,
    n: usize,
}

impl SetPair {
    pub fn new(mut a: Vec<usize>, mut b: Vec<usize>, n: usize) -> Result<Self> {
        a.sort_unstable();
        a.dedup();
        b.sort_unstable();
        b.dedup();
        if a.is_empty() || b.is_empty() {
            return Err(Error::Config("sets A and B must be nonempty".into()));
        }
        if a.iter().chain(&b).any(|&s| s >= n) {
            return Err(Error::Config(format!(
                "set index out of range for {n} states"
            )));
        }
        if a.iter().any(|s| b.binary_search(s).is_ok()) {
            return Err(Error::Config("sets A and B must be disjoint".into()));
        }
        Ok(Self { a, b, n })
    }

    pub fn a(&self) -> &[usize] {
        &self.a
    }

    pub fn b(&self) -> &[usize] {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn in_a(&self, s: usize) -> bool {
        self.a.binary_search(&s).is_ok()
    }

    pub fn in_b(&self, s: usize) -> bool {
        self.b.binary_search(&s).is_ok()
    }

    /// States outside both sets, in increasing order.
    pub fn interior(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&s| !self.in_a(s) && !self.in_b(s))
            .collect()
    }
}

/// Committor `q(x)`: probability of reaching B before A. Solves
/// `(I - P_II) q_I = P_IB 1` on the interior with `q = 0` on A, `q = 1` on B.
pub fn committor(model: &TransitionModel, sets: &SetPair) -> Result<Vec<f64>> {
    let n = model.n();
    if sets.n() != n {
        return Err(Error::Config(
            "set pair built for a different state count".into(),
        ));
    }
    let interior = sets.interior();
    let mut q = vec![0.0; n];
    for &s in sets.b() {
        q[s] = 1.0;
    }
    if !interior.is_empty() {
        let k = interior.len();
        let p = model.p();
        let mut mat = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for (r, &x) in interior.iter().enumerate() {
            for (c, &y) in interior.iter().enumerate() {
                mat[(r, c)] = (if x == y { 1.0 } else { 0.0 }) - p[(x, y)];
            }
            rhs[r] = sets.b().iter().map(|&y| p[(x, y)]).sum();
        }
        let lu = mat.lu();
        let sol = lu.solve(&rhs).ok_or(Error::SingularInterior)?;
        for (r, &x) in interior.iter().enumerate() {
            q[x] = sol[r];
        }
        // residual of the harmonic equation on the interior
        let mut worst: f64 = 0.0;
        for &x in &interior {
            let pq: f64 = (0..n).map(|y| p[(x, y)] * q[y]).sum();
            worst = worst.max((pq - q[x]).abs());
        }
        if worst > 1e-10 {
            return Err(Error::Invariant(format!(
                "committor residual {worst:.3e} exceeds 1e-10"
            )));
        }
    }
    for (x, &v) in q.iter().enumerate() {
        if !(-1e-12..=1.0 + 1e-12).contains(&v) {
            return Err(Error::Invariant(format!(
                "committor q[{x}] = {v} outside [0, 1]"
            )));
        }
    }
    Ok(q)
}

/// Flux-form rates: `k_A = sum_{x in A} mu_x sum_y p(x,y) q(y)` and the
/// mirrored `k_B = sum_{x in B} mu_x sum_y p(x,y) (1 - q(y))`; the two agree
/// for any ergodic chain.
pub fn rate_flux(model: &TransitionModel, sets: &SetPair, q: &[f64]) -> (f64, f64) {
    let n = model.n();
    let p = model.p();
    let mu = model.mu();
    let k_a: f64 = sets
        .a()
        .iter()
        .map(|&x| mu[x] * (0..n).map(|y| p[(x, y)] * q[y]).sum::<f64>())
        .sum();
    let k_b: f64 = sets
        .b()
        .iter()
        .map(|&x| mu[x] * (0..n).map(|y| p[(x, y)] * (1.0 - q[y])).sum::<f64>())
        .sum();
    (k_a, k_b)
}

/// Energy-form rate: the Dirichlet energy of the committor.
pub fn rate_energy(model: &TransitionModel, q: &[f64]) -> f64 {
    dirichlet_energy(model, q)
}

/// Counted rate from a state-index chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateCount {
    /// Reactive segments per step, `segments / n_steps`.
    pub rate: f64,
    /// Batch-means standard error over 20 contiguous windows.
    pub stderr: f64,
    pub segments: usize,
    pub n_steps: usize,
    /// Set when the chain never visits A, leaving the estimate vacuous.
    pub never_visited_a: bool,
}

/// Count reactive segments (start in A, end in B, strictly outside both in
/// between) over the first `n_steps` steps of the chain. A segment counts
/// when its start index is below `n_steps`; it may complete later in the
/// chain.
pub fn rate_count(chain: &[usize], sets: &SetPair, n_steps: usize) -> Result<RateCount> {
    if chain.len() < n_steps + 1 {
        return Err(Error::Config(format!(
            "chain has {} points, need n_steps + 1 = {}",
            chain.len(),
            n_steps + 1
        )));
    }
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be positive".into()));
    }
    let mut starts: Vec<usize> = Vec::new();
    let mut pending: Option<usize> = None;
    let mut visited_a = false;
    for (i, &s) in chain.iter().enumerate() {
        if sets.in_a(s) {
            visited_a = true;
            pending = Some(i); // restart the attempt on every A visit
        } else if sets.in_b(s) {
            if let Some(start) = pending.take() {
                if start < n_steps {
                    starts.push(start);
                }
            }
        }
    }
    let segments = starts.len();
    let n_batches = 20usize.min(n_steps);
    let blen = n_steps / n_batches;
    let mut batch_counts = vec![0.0; n_batches];
    for &s in &starts {
        let b = (s / blen).min(n_batches - 1);
        batch_counts[b] += 1.0;
    }
    let rates: Vec<f64> = batch_counts
        .iter()
        .enumerate()
        .map(|(b, c)| {
            let len = if b == n_batches - 1 {
                n_steps - blen * (n_batches - 1)
            } else {
                blen
            };
            c / len as f64
        })
        .collect();
    let stderr = if n_batches < 2 {
        f64::INFINITY // a single window carries no spread information
    } else {
        let mean = rates.iter().sum::<f64>() / n_batches as f64;
        let var =
            rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n_batches - 1) as f64;
        (var / n_batches as f64).sqrt()
    };
    Ok(RateCount {
        rate: segments as f64 / n_steps as f64,
        stderr,
        segments,
        n_steps,
        never_visited_a: !visited_a,
    })
}

/// Energy split around the committor:
/// `E(f) = k_AB + E(f - q)` for any `f` with `f = 0` on A and `f = 1` on B.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyDecomposition {
    pub energy_f: f64,
    pub rate: f64,
    pub energy_residual: f64,
}

pub fn energy_decomposition(
    model: &TransitionModel,
    sets: &SetPair,
    f: &[f64],
) -> Result<EnergyDecomposition> {
    for &x in sets.a() {
        if f[x].abs() > 1e-12 {
            return Err(Error::Config(format!("f[{x}] = {} but A requires 0", f[x])));
        }
    }
    for &x in sets.b() {
        if (f[x] - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("f[{x}] = {} but B requires 1", f[x])));
        }
    }
    let q = committor(model, sets)?;
    let energy_f = dirichlet_energy(model, f);
    let rate = rate_energy(model, &q);
    let diff: Vec<f64> = f.iter().zip(&q).map(|(a, b)| a - b).collect();
    let energy_residual = dirichlet_energy(model, &diff);
    let gap = (energy_f - rate - energy_residual).abs();
    if gap > 1e-10 {
        return Err(Error::Invariant(format!(
            "energy decomposition violated by {gap:.3e}"
        )));
    }
    Ok(EnergyDecomposition {
        energy_f,
        rate,
        energy_residual,
    })
}

/// Combined committor-and-rates summary with the three matrix routes checked
/// against each other.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TptResult {
    pub q: Vec<f64>,
    pub k_flux_a: f64,
    pub k_flux_b: f64,
    pub k_energy: f64,
    pub k_count: Option<RateCount>,
}

/// Rates by all matrix routes; flux-A, flux-B agree within 1e-12 and the
/// energy route within 1e-10 (reversible models).
pub fn analyze(model: &TransitionModel, sets: &SetPair) -> Result<TptResult> {
    let q = committor(model, sets)?;
    let (k_flux_a, k_flux_b) = rate_flux(model, sets, &q);
    if (k_flux_a - k_flux_b).abs() > 1e-12 {
        return Err(Error::Invariant(format!(
            "flux rates disagree: {k_flux_a} vs {k_flux_b}"
        )));
    }
    let k_energy = rate_energy(model, &q);
    // the energy identity needs no reversibility: the non-reversible part of
    // the operator is antisymmetric in the mu pairing and drops out of E(q)
    if (k_flux_a - k_energy).abs() > 1e-10 {
        return Err(Error::Invariant(format!(
            "flux and energy rates disagree: {k_flux_a} vs {k_energy}"
        )));
    }
    Ok(TptResult {
        q,
        k_flux_a,
        k_flux_b,
        k_energy,
        k_count: None,
    })
}

impl TptResult {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "state,committor")?;
        for (i, q) in self.q.iter().enumerate() {
            writeln!(w, "{i},{q}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::operator::{sample_chain, TransitionModel};
    use crate::rng::seeded;
    use crate::spectral::ergodic_energy;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn pair(a: &[usize], b: &[usize], n: usize) -> SetPair {
        SetPair::new(a.to_vec(), b.to_vec(), n).unwrap()
    }

    #[test]
    fn set_pair_validation() {
        assert!(SetPair::new(vec![0], vec![0], 3).is_err());
        assert!(SetPair::new(vec![], vec![1], 3).is_err());
        assert!(SetPair::new(vec![0], vec![5], 3).is_err());
        let p = pair(&[0], &[2], 4);
        assert_eq!(p.interior(), vec![1, 3]);
    }

    #[test]
    fn committor_hand_values() {
        let m = fixtures::bd3();
        let q = committor(&m, &pair(&[0], &[2], 3)).unwrap();
        assert_eq!(q[0], 0.0);
        assert!((q[1] - 0.5).abs() < 1e-12);
        assert_eq!(q[2], 1.0);

        let m = fixtures::bd4();
        let q = committor(&m, &pair(&[0], &[3], 4)).unwrap();
        assert!((q[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((q[2] - 2.0 / 3.0).abs() < 1e-12);

        // asymmetric interior row: 0.6 q1 = 0.4
        let p = DMatrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.2, 0.4, 0.4, 0.1, 0.2, 0.7]);
        let m = TransitionModel::from_matrix(p, 1.0).unwrap();
        let q = committor(&m, &pair(&[0], &[2], 3)).unwrap();
        assert!((q[1] - 2.0 / 3.0).abs() < 1e-12, "q1 = {}", q[1]);
    }

    #[test]
    fn committor_with_empty_interior() {
        let m = fixtures::two_state();
        let q = committor(&m, &pair(&[0], &[1], 2)).unwrap();
        assert_eq!(q, vec![0.0, 1.0]);
    }

    #[test]
    fn rates_hand_values() {
        let m = fixtures::two_state();
        let sets = pair(&[0], &[1], 2);
        let q = committor(&m, &sets).unwrap();
        let (ka, kb) = rate_flux(&m, &sets, &q);
        assert!((ka - 1.0 / 15.0).abs() < 1e-15);
        assert!((kb - 1.0 / 15.0).abs() < 1e-15);
        assert!((rate_energy(&m, &q) - 1.0 / 15.0).abs() < 1e-15);

        let m = fixtures::bd3();
        let sets = pair(&[0], &[2], 3);
        let q = committor(&m, &sets).unwrap();
        let (ka, _) = rate_flux(&m, &sets, &q);
        assert!((ka - 1.0 / 16.0).abs() < 1e-15);
        assert!((rate_energy(&m, &q) - 1.0 / 16.0).abs() < 1e-15);

        let m = fixtures::bd4();
        let sets = pair(&[0], &[3], 4);
        let q = committor(&m, &sets).unwrap();
        let (ka, kb) = rate_flux(&m, &sets, &q);
        assert!((ka - 1.0 / 48.0).abs() < 1e-15);
        assert!((kb - 1.0 / 48.0).abs() < 1e-15);
        assert!((rate_energy(&m, &q) - 1.0 / 48.0).abs() < 1e-15);
    }

    #[test]
    fn rate_triple_agreement_on_random_chains() {
        let mut rng = seeded(71);
        for trial in 0..200 {
            let n = rng.gen_range(4..=12);
            // the identities hold with and without detailed balance
            let m = if trial % 4 == 0 {
                fixtures::random_chain(&mut rng, n)
            } else {
                fixtures::random_reversible(&mut rng, n)
            };
            let sets = fixtures::random_set_pair(&mut rng, n);
            let q = committor(&m, &sets).unwrap();
            let (ka, kb) = rate_flux(&m, &sets, &q);
            let ke = rate_energy(&m, &q);
            assert!((ka - kb).abs() < 1e-12, "flux mismatch {ka} vs {kb}");
            assert!((ka - ke).abs() < 1e-10, "energy mismatch {ka} vs {ke}");
            for &v in &q {
                assert!((-1e-12..=1.0 + 1e-12).contains(&v));
            }
        }
    }

    #[test]
    fn count_convention_forced_chains() {
        // a, i, b, i, a : one segment
        let sets = pair(&[0], &[2], 3);
        let rc = rate_count(&[0, 1, 2, 1, 0], &sets, 4).unwrap();
        assert_eq!(rc.segments, 1);
        assert!((rc.rate - 0.25).abs() < 1e-15);

        // a, i, a, i, b : the A visit at step 2 restarts the attempt
        let rc = rate_count(&[0, 1, 0, 1, 2], &sets, 4).unwrap();
        assert_eq!(rc.segments, 1);
        assert!((rc.rate - 0.25).abs() < 1e-15);

        // never visiting A is flagged
        let rc = rate_count(&[1, 1, 2, 1, 2], &sets, 4).unwrap();
        assert_eq!(rc.segments, 0);
        assert!(rc.never_visited_a);
    }

    #[test]
    fn counted_rate_matches_matrix_rate() {
        let m = fixtures::bd4();
        let sets = pair(&[0], &[3], 4);
        let chain = sample_chain(&m, 1_000_000, 2, 0);
        let rc = rate_count(&chain, &sets, 1_000_000).unwrap();
        let exact = 1.0 / 48.0;
        assert!(
            (rc.rate - exact).abs() < 3.0 * rc.stderr,
            "rate {} +- {} vs exact {exact}",
            rc.rate,
            rc.stderr
        );
    }

    /// The flux identities hold without reversibility; the counted rate on a
    /// biased cycle agrees with them.
    #[test]
    fn counted_rate_on_non_reversible_chain() {
        let m = fixtures::biased_cycle3();
        assert!(m.detailed_balance_residual() > 1e-3);
        let sets = pair(&[0], &[2], 3);
        let q = committor(&m, &sets).unwrap();
        let (ka, kb) = rate_flux(&m, &sets, &q);
        assert!((ka - kb).abs() < 1e-14, "flux symmetry {ka} vs {kb}");
        // the energy route holds without detailed balance as well
        assert!((rate_energy(&m, &q) - ka).abs() < 1e-14);
        let chain = sample_chain(&m, 500_000, 41, 0);
        let rc = rate_count(&chain, &sets, 500_000).unwrap();
        assert!(
            (rc.rate - ka).abs() < 3.0 * rc.stderr,
            "count {} +- {} vs flux {ka}",
            rc.rate,
            rc.stderr
        );
    }

    #[test]
    fn energy_decomposition_identity() {
        let m = fixtures::bd4();
        let sets = pair(&[0], &[3], 4);
        // f = q: residual vanishes
        let q = committor(&m, &sets).unwrap();
        let d = energy_decomposition(&m, &sets, &q).unwrap();
        assert!(d.energy_residual < 1e-15);
        assert!((d.energy_f - d.rate).abs() < 1e-15);

        // hand-computed split for f = (0, 1/2, 1/2, 1)
        let d = energy_decomposition(&m, &sets, &[0.0, 0.5, 0.5, 1.0]).unwrap();
        assert!((d.energy_f - 1.0 / 32.0).abs() < 1e-15);
        assert!((d.rate - 1.0 / 48.0).abs() < 1e-15);
        assert!((d.energy_residual - 1.0 / 96.0).abs() < 1e-15);

        // random f in F_AB stays above the committor energy
        let mut rng = seeded(14);
        for _ in 0..50 {
            let f = vec![0.0, rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5), 1.0];
            let d = energy_decomposition(&m, &sets, &f).unwrap();
            assert!(d.energy_f >= d.rate - 1e-12);
        }
    }

    #[test]
    fn committor_minimizes_trajectory_variation() {
        let m = fixtures::bd4();
        let sets = pair(&[0], &[3], 4);
        let q = committor(&m, &sets).unwrap();
        let chain = sample_chain(&m, 400_000, 3, 0);
        let eq = ergodic_energy(&chain, &q).unwrap();
        let mut rng = seeded(23);
        for _ in 0..5 {
            let f = vec![0.0, rng.gen_range(-0.3..1.3), rng.gen_range(-0.3..1.3), 1.0];
            let ef = ergodic_energy(&chain, &f).unwrap();
            let slack = 3.0 * (eq.stderr + ef.stderr);
            assert!(
                eq.value <= ef.value + slack,
                "committor variation {} vs f variation {}",
                eq.value,
                ef.value
            );
        }
    }

    #[test]
    fn analyze_bundles_the_routes() {
        let m = fixtures::bd3();
        let sets = pair(&[0], &[2], 3);
        let r = analyze(&m, &sets).unwrap();
        assert!((r.k_flux_a - 0.0625).abs() < 1e-15);
        assert!((r.k_energy - 0.0625).abs() < 1e-15);
    }
}
