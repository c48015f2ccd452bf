//! Spectral analysis of reversible transition models in the mu-weighted
//! geometry: eigen-decomposition, Dirichlet forms and energies, variational
//! and VAMP-1 scores, implied timescales, and the ergodic estimator of the
//! Dirichlet energy from trajectory increments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::TransitionModel;

/// Detailed-balance residual beyond which an eigensolve is refused.
pub const REVERSIBILITY_TOL: f64 = 1e-8;
/// Tolerance on the mean-zero / orthonormality constraints of trial tuples.
pub const CONSTRAINT_TOL: f64 = 1e-6;

/// Mu-weighted inner product of two state functions.
pub fn mu_inner(model: &TransitionModel, f: &[f64], h: &[f64]) -> f64 {
    let mu = model.mu();
    (0..model.n()).map(|i| mu[i] * f[i] * h[i]).sum()
}

/// Apply the transfer operator: `(Pf)_i = sum_j p_ij f_j`.
pub fn apply(model: &TransitionModel, f: &[f64]) -> Vec<f64> {
    let n = model.n();
    let p = model.p();
    (0..n)
        .map(|i| (0..n).map(|j| p[(i, j)] * f[j]).sum())
        .collect()
}

/// Eigenvalues in descending order with mu-orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    /// `lambda_0 >= lambda_1 >= ...`, `lambda_0 = 1`.
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the eigenvector of `eigenvalues[i]`, normalized so
    /// `<phi_i, phi_j>_mu = delta_ij`; the largest-magnitude entry of each
    /// column is positive (first such entry on ties).
    pub eigenvectors: DMatrix<f64>,
    /// Stationary weights defining the geometry.
    pub mu: DVector<f64>,
}

impl SpectralResult {
    pub fn eigenvector(&self, i: usize) -> Vec<f64> {
        self.eigenvectors.column(i).iter().cloned().collect()
    }

    /// CSV rows: index, eigenvalue, implied timescale at the given lag.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, lag: f64) -> Result<()> {
        writeln!(w, "index,eigenvalue,implied_timescale")?;
        let ts = implied_timescales(&self.eigenvalues, lag);
        for (i, (ev, t)) in self.eigenvalues.iter().zip(&ts).enumerate() {
            match t {
                Some(t) if t.is_finite() => writeln!(w, "{i},{ev},{t}")?,
                Some(_) => writeln!(w, "{i},{ev},inf")?,
                None => writeln!(w, "{i},{ev},undefined")?,
            }
        }
        Ok(())
    }
}

/// Leading `m` eigenpairs (counting the trivial pair at 1) of a reversible
/// model, computed through the symmetrized matrix `D^{1/2} P D^{-1/2}`.
pub fn solve_spectrum(model: &TransitionModel, m: usize) -> Result<SpectralResult> {
    let n = model.n();
    if m < 1 || m > n {
        return Err(Error::Config(format!(
            "eigenpair count {m} out of range 1..={n}"
        )));
    }
    let residual = model.detailed_balance_residual();
    if residual > REVERSIBILITY_TOL {
        return Err(Error::NotReversible {
            residual,
            tol: REVERSIBILITY_TOL,
        });
    }
    let s = model.symmetrize(model.p());
    let eigen = s.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let sqrt_mu: Vec<f64> = model.mu().iter().map(|v| v.sqrt()).collect();
    let mut eigenvalues = Vec::with_capacity(m);
    let mut eigenvectors = DMatrix::zeros(n, m);
    for (col, &idx) in order.iter().take(m).enumerate() {
        eigenvalues.push(eigen.eigenvalues[idx]);
        let u = eigen.eigenvectors.column(idx);
        let mut phi: Vec<f64> = (0..n).map(|i| u[i] / sqrt_mu[i]).collect();
        let mut max_abs = 0.0;
        let mut max_at = 0;
        for (i, &v) in phi.iter().enumerate() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                max_at = i;
            }
        }
        if phi[max_at] < 0.0 {
            for v in phi.iter_mut() {
                *v = -*v;
            }
        }
        for i in 0..n {
            eigenvectors[(i, col)] = phi[i];
        }
    }
    let result = SpectralResult {
        eigenvalues,
        eigenvectors,
        mu: model.mu().clone(),
    };
    validate_spectrum(model, &result)?;
    Ok(result)
}

fn validate_spectrum(model: &TransitionModel, r: &SpectralResult) -> Result<()> {
    if (r.eigenvalues[0] - 1.0).abs() > 1e-10 {
        return Err(Error::Invariant(format!(
            "leading eigenvalue {} is not 1",
            r.eigenvalues[0]
        )));
    }
    for &ev in &r.eigenvalues {
        if !(ev > -1.0 && ev <= 1.0 + 1e-10) {
            return Err(Error::Invariant(format!("eigenvalue {ev} outside (-1, 1]")));
        }
    }
    // the constant-eigenvector check only binds when the leading eigenvalue
    // is simple; in a degenerate top eigenspace any orthonormal basis is fine
    if r.eigenvalues.len() > 1 && r.eigenvalues[1] < 1.0 - 1e-8 {
        let phi0 = r.eigenvectors.column(0);
        let spread = phi0.max() - phi0.min();
        if spread > 1e-8 {
            return Err(Error::Invariant(format!(
                "leading eigenvector is not constant (spread {spread:.3e})"
            )));
        }
    }
    for i in 0..r.eigenvalues.len() {
        for j in i..r.eigenvalues.len() {
            let fi: Vec<f64> = r.eigenvectors.column(i).iter().cloned().collect();
            let fj: Vec<f64> = r.eigenvectors.column(j).iter().cloned().collect();
            let g = mu_inner(model, &fi, &fj);
            let target = if i == j { 1.0 } else { 0.0 };
            if (g - target).abs() > 1e-8 {
                return Err(Error::Invariant(format!(
                    "eigenvectors {i},{j} not mu-orthonormal: gram {g}"
                )));
            }
        }
    }
    Ok(())
}

/// Dirichlet form
/// `E(f, h) = (1/2) sum_{x,y} mu_x p(x,y) (f_y - f_x)(h_y - h_x)`.
pub fn dirichlet_form(model: &TransitionModel, f: &[f64], h: &[f64]) -> f64 {
    let n = model.n();
    let p = model.p();
    let mu = model.mu();
    let mut acc = 0.0;
    for x in 0..n {
        let mut inner = 0.0;
        for y in 0..n {
            inner += p[(x, y)] * (f[y] - f[x]) * (h[y] - h[x]);
        }
        acc += mu[x] * inner;
    }
    let form = 0.5 * acc;
    // operator route <(I - T^rev) f, h>_mu must agree
    #[cfg(debug_assertions)]
    {
        let (rev, _) = model.decompose();
        let tf: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| rev[(i, j)] * f[j]).sum::<f64>())
            .collect();
        let op_route: f64 = (0..n).map(|i| mu[i] * (f[i] - tf[i]) * h[i]).sum();
        debug_assert!(
            (form - op_route).abs() <= 1e-10 * (1.0 + form.abs()),
            "dirichlet form routes disagree: {form} vs {op_route}"
        );
    }
    form
}

/// Dirichlet energy `E(f) = E(f, f)`.
pub fn dirichlet_energy(model: &TransitionModel, f: &[f64]) -> f64 {
    dirichlet_form(model, f, f)
}

/// Weights `w_1 >= w_2 >= ... >= w_m > 0` for multi-function objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights(Vec<f64>);

impl ObjectiveWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Config("weights must be nonempty".into()));
        }
        for pair in w.windows(2) {
            if pair[0] < pair[1] {
                return Err(Error::Config(format!(
                    "weights must be non-increasing, got {:?}",
                    w
                )));
            }
        }
        if *w.last().unwrap() <= 0.0 {
            return Err(Error::Config("weights must be positive".into()));
        }
        Ok(Self(w))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_constraints(model: &TransitionModel, fs: &[Vec<f64>]) -> Result<()> {
    let ones = vec![1.0; model.n()];
    let mut offenders = Vec::new();
    for (i, f) in fs.iter().enumerate() {
        let mean = mu_inner(model, f, &ones);
        if mean.abs() > CONSTRAINT_TOL {
            offenders.push(format!("mean(f{i}) = {mean:.3e}"));
        }
    }
    for i in 0..fs.len() {
        for j in i..fs.len() {
            let g = mu_inner(model, &fs[i], &fs[j]);
            let target = if i == j { 1.0 } else { 0.0 };
            if (g - target).abs() > CONSTRAINT_TOL {
                offenders.push(format!("gram({i},{j}) = {g:.6}"));
            }
        }
    }
    if offenders.is_empty() {
        Ok(())
    } else {
        Err(Error::ConstraintViolation(offenders.join(", ")))
    }
}

/// Weighted sum of Dirichlet energies `sum_i w_i E(f_i)` over a trial tuple
/// satisfying the mean-zero and mu-orthonormality constraints. Violations
/// are reported, never silently fixed.
pub fn variational_score(
    model: &TransitionModel,
    fs: &[Vec<f64>],
    weights: &ObjectiveWeights,
) -> Result<f64> {
    if fs.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} functions but {} weights",
            fs.len(),
            weights.len()
        )));
    }
    check_constraints(model, fs)?;
    Ok(fs
        .iter()
        .zip(weights.as_slice())
        .map(|(f, w)| w * dirichlet_energy(model, f))
        .sum())
}

/// VAMP-1 style score `sum_i w_i <f_i, T f_i>_mu` under the same constraints;
/// complements the variational score as `vamp1 + variational = sum_i w_i`.
pub fn vamp1_score(
    model: &TransitionModel,
    fs: &[Vec<f64>],
    weights: &ObjectiveWeights,
) -> Result<f64> {
    if fs.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} functions but {} weights",
            fs.len(),
            weights.len()
        )));
    }
    check_constraints(model, fs)?;
    Ok(fs
        .iter()
        .zip(weights.as_slice())
        .map(|(f, w)| {
            let tf = apply(model, f);
            w * mu_inner(model, f, &tf)
        })
        .sum())
}

/// Monte Carlo estimate with a batch-means standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

const N_BATCHES: usize = 20;

fn batch_stderr(batch_values: &[f64]) -> f64 {
    let b = batch_values.len() as f64;
    let mean = batch_values.iter().sum::<f64>() / b;
    let var = batch_values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (b - 1.0);
    (var / b).sqrt()
}

/// Ergodic-average estimate of the Dirichlet energy from a state-index
/// chain: `(2N)^{-1} sum_n |f(X_{n+1}) - f(X_n)|^2`, with a 20-batch
/// batch-means standard error.
pub fn ergodic_energy(chain: &[usize], f: &[f64]) -> Result<Estimate> {
    ergodic_energy_weighted(
        chain,
        std::slice::from_ref(&f.to_vec()),
        &ObjectiveWeights::uniform(1),
    )
}

/// Vector-valued version: `sum_i w_i` times the per-component ergodic
/// estimate, pooled into one batch-means standard error.
pub fn ergodic_energy_weighted(
    chain: &[usize],
    fs: &[Vec<f64>],
    weights: &ObjectiveWeights,
) -> Result<Estimate> {
    let n_trans = chain.len().saturating_sub(1);
    if n_trans < N_BATCHES {
        return Err(Error::Config(format!(
            "chain has {n_trans} transitions; need at least {N_BATCHES}"
        )));
    }
    if fs.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} functions but {} weights",
            fs.len(),
            weights.len()
        )));
    }
    let step = |n: usize| -> f64 {
        fs.iter()
            .zip(weights.as_slice())
            .map(|(f, w)| {
                let d = f[chain[n + 1]] - f[chain[n]];
                w * d * d
            })
            .sum()
    };
    let total: f64 = (0..n_trans).map(step).sum();
    let value = total / (2.0 * n_trans as f64);
    let blen = n_trans / N_BATCHES;
    let batches: Vec<f64> = (0..N_BATCHES)
        .map(|b| {
            let s: f64 = (b * blen..(b + 1) * blen).map(step).sum();
            s / (2.0 * blen as f64)
        })
        .collect();
    Ok(Estimate {
        value,
        stderr: batch_stderr(&batches),
    })
}

/// Ergodic energy of a continuous trajectory through a grid: points are
/// binned to cells, `f` is read per cell index, and transitions touching
/// points outside the grid are skipped rather than bridged.
pub fn ergodic_energy_binned(
    traj: &crate::sim::Trajectory,
    grid: &crate::grid::Grid,
    f: &[f64],
) -> Result<Estimate> {
    let cells: Vec<Option<usize>> = (0..traj.n_points())
        .map(|i| grid.locate(traj.point(i)))
        .collect();
    let increments: Vec<f64> = cells
        .windows(2)
        .filter_map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some(f[b] - f[a]),
            _ => None,
        })
        .collect();
    let n_trans = increments.len();
    if n_trans < N_BATCHES {
        return Err(Error::Config(format!(
            "trajectory yields {n_trans} in-grid transitions; need at least {N_BATCHES}"
        )));
    }
    let total: f64 = increments.iter().map(|d| d * d).sum();
    let value = total / (2.0 * n_trans as f64);
    let blen = n_trans / N_BATCHES;
    let batches: Vec<f64> = (0..N_BATCHES)
        .map(|b| {
            let s: f64 = increments[b * blen..(b + 1) * blen]
                .iter()
                .map(|d| d * d)
                .sum();
            s / (2.0 * blen as f64)
        })
        .collect();
    Ok(Estimate {
        value,
        stderr: batch_stderr(&batches),
    })
}

/// Implied timescales `-lag / ln(lambda)` for eigenvalues in `(0, 1)`;
/// `None` marks nonpositive eigenvalues, `+inf` eigenvalues at 1.
pub fn implied_timescales(eigenvalues: &[f64], lag: f64) -> Vec<Option<f64>> {
    eigenvalues
        .iter()
        .map(|&ev| {
            if ev <= 0.0 {
                None
            } else if ev >= 1.0 {
                Some(f64::INFINITY)
            } else {
                Some(-lag / ev.ln())
            }
        })
        .collect()
}

/// Mu-orthonormalize a tuple of candidate functions against the constant
/// function and each other (Gram–Schmidt in the mu inner product). Test
/// helper for generating constraint-satisfying trial tuples.
pub fn orthonormalize(model: &TransitionModel, raw: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let ones = vec![1.0; model.n()];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(raw.len());
    for cand in raw {
        let mut v = cand.clone();
        let mean = mu_inner(model, &v, &ones);
        for x in v.iter_mut() {
            *x -= mean;
        }
        for b in &basis {
            let c = mu_inner(model, &v, b);
            for (x, bx) in v.iter_mut().zip(b) {
                *x -= c * bx;
            }
        }
        let norm = mu_inner(model, &v, &v).sqrt();
        if norm < 1e-10 {
            return None;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        basis.push(v);
    }
    Some(basis)
}
