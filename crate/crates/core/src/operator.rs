//! Construction and basic calculus of row-stochastic transition models:
//! analytic Euler–Maruyama kernels on grids, count estimates from
//! trajectories, stationary vectors, adjoints, and the
//! reversible/non-reversible splitting.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::potential::Potential;
use crate::rng::{seeded, uniform_f64};
use crate::sim::Trajectory;

const MODEL_MAGIC: &[u8; 4] = b"EFDM";

/// Row-sum tolerance for stochastic matrices.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance for stationarity of mu.
pub const STATIONARITY_TOL: f64 = 1e-10;

/// Where a model's transition matrix came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum ModelSource {
    /// Midpoint-quadrature discretization of an analytic kernel.
    Analytic,
    /// Count estimate from a trajectory; `n_transitions` pairs were used and
    /// `symmetrized` records whether detailed balance was imposed.
    Counts {
        n_transitions: usize,
        symmetrized: bool,
    },
    /// Hand-specified matrix (fixtures, deserialized artifacts).
    Explicit,
}

/// Finite-state Markov model: a row-stochastic matrix `p`, its stationary
/// distribution `mu`, and the lag time the chain was sampled at.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    p: DMatrix<f64>,
    mu: DVector<f64>,
    /// Lag time in physical units (step count times dt for sampled chains).
    pub lag: f64,
    pub source: ModelSource,
    /// Grid behind the states, when the model discretizes a continuous system.
    pub grid: Option<Grid>,
    /// Raw transition counts for count-estimated models (pre-symmetrization),
    /// kept for statistical error estimates.
    pub counts: Option<DMatrix<f64>>,
    /// Map from model state index to original cell index when never-visited
    /// cells were pruned.
    pub state_to_cell: Option<Vec<usize>>,
}

impl TransitionModel {
    /// Number of states.
    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    /// Crate-internal constructor for derived models (effective chains,
    /// adjoint processes) whose stationary vector is already known.
    pub(crate) fn from_parts(p: DMatrix<f64>, mu: DVector<f64>, lag: f64) -> Self {
        Self {
            p,
            mu,
            lag,
            source: ModelSource::Explicit,
            grid: None,
            counts: None,
            state_to_cell: None,
        }
    }

    /// Build from an explicit stochastic matrix; `mu` is computed by GTH
    /// elimination and all invariants are checked.
    pub fn from_matrix(p: DMatrix<f64>, lag: f64) -> Result<Self> {
        let mu = stationary_vector(&p)?;
        let model = Self {
            p,
            mu,
            lag,
            source: ModelSource::Explicit,
            grid: None,
            counts: None,
            state_to_cell: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Check the stochastic-matrix and stationarity invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.p.ncols() != n || self.mu.len() != n {
            return Err(Error::Invariant("model dimensions disagree".into()));
        }
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let v = self.p[(i, j)];
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::Invariant(format!(
                        "p[{i},{j}] = {v} is not a probability"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Invariant(format!(
                    "row {i} sums to {sum}, off by {:.3e}",
                    (sum - 1.0).abs()
                )));
            }
        }
        let mut mu_sum = 0.0;
        for i in 0..n {
            if self.mu[i].is_nan() || self.mu[i] <= 0.0 {
                return Err(Error::Invariant(format!(
                    "mu[{i}] = {} is not positive",
                    self.mu[i]
                )));
            }
            mu_sum += self.mu[i];
        }
        if (mu_sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Invariant(format!("mu sums to {mu_sum}")));
        }
        let residual = (self.p.transpose() * &self.mu - &self.mu).abs().max();
        if residual > STATIONARITY_TOL {
            return Err(Error::Invariant(format!(
                "mu is not stationary: residual {residual:.3e}"
            )));
        }
        Ok(())
    }

    /// Adjoint transition matrix `p*(x, y) = p(y, x) mu(y) / mu(x)`; the
    /// returned matrix is row-stochastic and leaves `mu` invariant.
    pub fn adjoint(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.p[(j, i)] * self.mu[j] / self.mu[i])
    }

    /// Splitting into the reversible part `(p + p*)/2` and the non-reversible
    /// complement `p - rev`, which equals `(p - p*)/2` up to one rounding.
    pub fn decompose(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let adj = self.adjoint();
        let rev = (&self.p + &adj) * 0.5;
        let non = &self.p - &rev;
        (rev, non)
    }

    /// Model with the same `mu` whose matrix is the reversible part of `p`.
    pub fn reversibilized(&self) -> Result<Self> {
        let (rev, _) = self.decompose();
        let model = Self {
            p: rev,
            mu: self.mu.clone(),
            lag: self.lag,
            source: self.source.clone(),
            grid: self.grid.clone(),
            counts: None,
            state_to_cell: self.state_to_cell.clone(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Max over state pairs of `|mu_i p_ij - mu_j p_ji|`.
    pub fn detailed_balance_residual(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let r = (self.mu[i] * self.p[(i, j)] - self.mu[j] * self.p[(j, i)]).abs();
                worst = worst.max(r);
            }
        }
        worst
    }

    /// Symmetrized representation `D^{1/2} M D^{-1/2}` of a matrix sharing
    /// this model's stationary weights, with exact symmetry enforced.
    pub fn symmetrize(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n();
        let sqrt_mu: Vec<f64> = self.mu.iter().map(|v| v.sqrt()).collect();
        let mut s = DMatrix::from_fn(n, n, |i, j| sqrt_mu[i] * m[(i, j)] / sqrt_mu[j]);
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        s
    }
}

/// Outcome of the spectral-positivity check on the reversible part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonnegativityReport {
    pub nonnegative: bool,
    pub min_eigenvalue: f64,
    /// Set when the smallest eigenvalue violates the open bound `> -1`
    /// expected of ergodic chains (periodic or otherwise degenerate input).
    pub outside_spectral_range: bool,
}

/// Positive-semidefiniteness of the mu-symmetrized reversible part
/// (tolerance -1e-10), with the smallest eigenvalue reported.
pub fn nonnegativity_check(model: &TransitionModel) -> NonnegativityReport {
    let (rev, _) = model.decompose();
    let s = model.symmetrize(&rev);
    let eigen = s.symmetric_eigenvalues();
    let min_eigenvalue = eigen.iter().cloned().fold(f64::INFINITY, f64::min);
    NonnegativityReport {
        nonnegative: min_eigenvalue >= -1e-10,
        min_eigenvalue,
        outside_spectral_range: min_eigenvalue <= -1.0 + 1e-12,
    }
}

/// Stationary distribution by Grassmann–Taksar–Heyman elimination.
///
/// GTH uses no subtractions, so it stays componentwise accurate even for
/// stiff chains whose off-diagonal entries underflow toward the subnormal
/// range. Cost is O(n^3) dense; the toolkit's scales stay below ~10^4 states.
pub fn stationary_vector(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::Config(
            "stationary_vector needs a square matrix".into(),
        ));
    }
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let mut w = p.clone();
    // fold state k into the chain on states < k
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| w[(k, j)]).sum();
        if s.is_nan() || s <= 0.0 {
            return Err(Error::NotIrreducible { state: k });
        }
        for i in 0..k {
            w[(i, k)] /= s;
        }
        for i in 0..k {
            let wik = w[(i, k)];
            if wik == 0.0 {
                continue;
            }
            for j in 0..k {
                w[(i, j)] += wik * w[(k, j)];
            }
        }
    }
    let mut mu = vec![0.0; n];
    mu[0] = 1.0;
    for k in 1..n {
        mu[k] = (0..k).map(|i| mu[i] * w[(i, k)]).sum();
        if !mu[k].is_finite() {
            return Err(Error::NotIrreducible { state: k });
        }
    }
    let total: f64 = mu.iter().sum();
    Ok(DVector::from_iterator(n, mu.into_iter().map(|v| v / total)))
}

/// Error function, Abramowitz–Stegun 7.1.26 (absolute error below 1.5e-7);
/// plenty for the 10% truncation guard.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Standard normal CDF.
fn phi(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Transition model from the analytic Euler–Maruyama kernel
/// `exp(-beta |y - x + grad V(x) dt|^2 / (4 dt))` evaluated at cell centers
/// (midpoint quadrature) and row-renormalized.
///
/// Rows whose one-step Gaussian places more than 10% of its true mass
/// outside the grid are rejected; smaller losses are folded back by the
/// renormalization.
pub fn build_analytic_em(
    pot: &Potential,
    beta: f64,
    dt: f64,
    grid: &Grid,
) -> Result<TransitionModel> {
    pot.validate()?;
    if pot.dim() != grid.dim() {
        return Err(Error::Config(format!(
            "potential dimension {} does not match grid dimension {}",
            pot.dim(),
            grid.dim()
        )));
    }
    if beta.is_nan() || dt.is_nan() || beta <= 0.0 || dt <= 0.0 {
        return Err(Error::Config("beta and dt must be positive".into()));
    }
    let n = grid.len();
    let d = grid.dim() as i32;
    let centers = grid.centers();
    let vol = grid.cell_volume();
    let norm = (beta / (4.0 * std::f64::consts::PI * dt)).powi(d).sqrt();
    let sigma = (2.0 * dt / beta).sqrt();
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let g = pot.grad(&centers[i]);
        let target: Vec<f64> = centers[i]
            .iter()
            .zip(&g)
            .map(|(c, gk)| c - gk * dt)
            .collect();
        // exact per-axis Gaussian mass outside the box
        let inside: f64 = grid
            .axes()
            .iter()
            .zip(&target)
            .map(|(axis, &t)| phi((axis.hi - t) / sigma) - phi((axis.lo - t) / sigma))
            .product();
        let outside = (1.0 - inside).max(0.0);
        if outside > 0.10 {
            return Err(Error::Truncation {
                row: i,
                mass_outside: outside * 100.0,
            });
        }
        let mut row_mass = 0.0;
        for j in 0..n {
            let dist2: f64 = centers[j]
                .iter()
                .zip(&target)
                .map(|(c, t)| (c - t) * (c - t))
                .sum();
            let w = norm * (-beta * dist2 / (4.0 * dt)).exp() * vol;
            p[(i, j)] = w;
            row_mass += w;
        }
        for j in 0..n {
            p[(i, j)] /= row_mass;
        }
    }
    let mu = stationary_vector(&p)?;
    let model = TransitionModel {
        p,
        mu,
        lag: dt,
        source: ModelSource::Analytic,
        grid: Some(grid.clone()),
        counts: None,
        state_to_cell: None,
    };
    model.validate()?;
    Ok(model)
}

/// Count-based estimate from a chain of state indices over `n_states` states.
///
/// Consecutive pairs feed a count matrix; with `reversible` the counts are
/// symmetrized as `(C + C^T)/2` before row normalization. States never
/// appearing in the chain are dropped and recorded in `state_to_cell`.
pub fn build_counts_from_indices(
    chain: &[usize],
    n_states: usize,
    reversible: bool,
    lag: f64,
) -> Result<TransitionModel> {
    if chain.len() < 2 {
        return Err(Error::Config(
            "count estimation needs at least 2 chain points".into(),
        ));
    }
    let mut counts = DMatrix::zeros(n_states, n_states);
    let mut visited = vec![false; n_states];
    for w in chain.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a >= n_states || b >= n_states {
            return Err(Error::Config(format!(
                "chain index out of range: {} (n_states {n_states})",
                a.max(b)
            )));
        }
        counts[(a, b)] += 1.0;
        visited[a] = true;
        visited[b] = true;
    }
    let kept: Vec<usize> = (0..n_states).filter(|&s| visited[s]).collect();
    let m = kept.len();
    let raw = DMatrix::from_fn(m, m, |i, j| counts[(kept[i], kept[j])]);
    let effective = if reversible {
        (&raw + raw.transpose()) * 0.5
    } else {
        raw.clone()
    };
    let mut p = DMatrix::zeros(m, m);
    for i in 0..m {
        let row_sum: f64 = effective.row(i).iter().sum();
        if row_sum <= 0.0 {
            return Err(Error::DisconnectedState { state: kept[i] });
        }
        for j in 0..m {
            p[(i, j)] = effective[(i, j)] / row_sum;
        }
    }
    let mu = stationary_vector(&p)?;
    let model = TransitionModel {
        p,
        mu,
        lag,
        source: ModelSource::Counts {
            n_transitions: chain.len() - 1,
            symmetrized: reversible,
        },
        grid: None,
        counts: Some(raw),
        state_to_cell: Some(kept),
    };
    model.validate()?;
    Ok(model)
}

/// Map a trajectory onto grid cells; points outside the grid break the chain
/// into segments and the pairs touching them are skipped.
pub fn cell_chain(traj: &Trajectory, grid: &Grid) -> Vec<Option<usize>> {
    (0..traj.n_points())
        .map(|i| grid.locate(traj.point(i)))
        .collect()
}

/// Count-based estimate from a continuous trajectory binned on a grid.
pub fn build_counts(traj: &Trajectory, grid: &Grid, reversible: bool) -> Result<TransitionModel> {
    let cells = cell_chain(traj, grid);
    let inside = cells.iter().flatten().count();
    if inside < 2 {
        return Err(Error::Config(
            "fewer than 2 trajectory points fall inside the grid".into(),
        ));
    }
    let n_states = grid.len();
    let mut counts = DMatrix::zeros(n_states, n_states);
    let mut visited = vec![false; n_states];
    let mut n_transitions = 0usize;
    for w in cells.windows(2) {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            counts[(a, b)] += 1.0;
            visited[a] = true;
            visited[b] = true;
            n_transitions += 1;
        }
    }
    if n_transitions == 0 {
        return Err(Error::Config(
            "no consecutive trajectory pairs inside the grid".into(),
        ));
    }
    let kept: Vec<usize> = (0..n_states).filter(|&s| visited[s]).collect();
    let m = kept.len();
    let raw = DMatrix::from_fn(m, m, |i, j| counts[(kept[i], kept[j])]);
    let effective = if reversible {
        (&raw + raw.transpose()) * 0.5
    } else {
        raw.clone()
    };
    let mut p = DMatrix::zeros(m, m);
    for i in 0..m {
        let row_sum: f64 = effective.row(i).iter().sum();
        if row_sum <= 0.0 {
            return Err(Error::DisconnectedState { state: kept[i] });
        }
        for j in 0..m {
            p[(i, j)] = effective[(i, j)] / row_sum;
        }
    }
    let mu = stationary_vector(&p)?;
    let model = TransitionModel {
        p,
        mu,
        lag: traj.sample_interval(),
        source: ModelSource::Counts {
            n_transitions,
            symmetrized: reversible,
        },
        grid: Some(grid.clone()),
        counts: Some(raw),
        state_to_cell: Some(kept),
    };
    model.validate()?;
    Ok(model)
}

/// Sample a state-index chain of `n_steps` transitions from the model,
/// starting at `x0`, by inverse-CDF draws on each row.
pub fn sample_chain(model: &TransitionModel, n_steps: usize, seed: u64, x0: usize) -> Vec<usize> {
    let n = model.n();
    assert!(x0 < n, "start state out of range");
    // cumulative rows built lazily on first visit, then binary search per
    // step; metastable chains touch few rows
    let mut cum: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut rng = seeded(seed);
    let mut chain = Vec::with_capacity(n_steps + 1);
    let mut x = x0;
    chain.push(x);
    for _ in 0..n_steps {
        let row = cum[x].get_or_insert_with(|| {
            let mut acc = 0.0;
            let mut row: Vec<f64> = (0..n)
                .map(|j| {
                    acc += model.p[(x, j)];
                    acc
                })
                .collect();
            row[n - 1] = 1.0 + 1e-15;
            row
        });
        let u = uniform_f64(&mut rng);
        x = row.partition_point(|&c| c <= u).min(n - 1);
        chain.push(x);
    }
    chain
}

impl TransitionModel {
    /// Serialize as a JSON header plus a little-endian row-major f64 matrix
    /// file (magic `EFDM`, n u64, then the n*n matrix entries). The header
    /// carries grid, lag, and source; `mu` is recomputed on load by the
    /// deterministic GTH elimination.
    pub fn save(&self, json_path: &Path, matrix_path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            n: usize,
            lag: f64,
            #[serde(flatten)]
            source: &'a ModelSource,
            grid: &'a Option<Grid>,
            state_to_cell: &'a Option<Vec<usize>>,
            matrix_file: String,
        }
        let header = Header {
            n: self.n(),
            lag: self.lag,
            source: &self.source,
            grid: &self.grid,
            state_to_cell: &self.state_to_cell,
            matrix_file: matrix_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        let json =
            serde_json::to_string_pretty(&header).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(json_path, json + "\n")?;
        let mut w = BufWriter::new(std::fs::File::create(matrix_path)?);
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        for i in 0..self.n() {
            for j in 0..self.n() {
                w.write_all(&self.p[(i, j)].to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(json_path: &Path, matrix_path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            n: usize,
            lag: f64,
            #[serde(flatten)]
            source: ModelSource,
            grid: Option<Grid>,
            state_to_cell: Option<Vec<usize>>,
        }
        let header: Header = serde_json::from_str(&std::fs::read_to_string(json_path)?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut r = std::fs::File::open(matrix_path)?;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("bad model magic".into()));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let n = u64::from_le_bytes(u64buf) as usize;
        if n != header.n {
            return Err(Error::Format("header and matrix sizes disagree".into()));
        }
        let mut entries = vec![0.0; n * n];
        let mut buf = [0u8; 8];
        for e in entries.iter_mut() {
            r.read_exact(&mut buf)?;
            *e = f64::from_le_bytes(buf);
        }
        let p = DMatrix::from_row_slice(n, n, &entries);
        let mu = stationary_vector(&p)?;
        let model = TransitionModel {
            p,
            mu,
            lag: header.lag,
            source: header.source,
            grid: header.grid,
            counts: None,
            state_to_cell: header.state_to_cell,
        };
        model.validate()?;
        Ok(model)
    }

    /// CSV export of the stationary distribution.
    pub fn write_mu_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "state,mu")?;
        for i in 0..self.n() {
            writeln!(w, "{i},{}", self.mu[i])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::sim::{simulate_em, SimConfig};

    #[test]
    fn gth_matches_hand_solved_two_state() {
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let mu = stationary_vector(&p).unwrap();
        assert!((mu[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((mu[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gth_rejects_reducible_chains() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            stationary_vector(&p),
            Err(Error::NotIrreducible { .. })
        ));
    }

    #[test]
    fn adjoint_of_reversible_model_is_itself() {
        let m = fixtures::two_state();
        let adj = m.adjoint();
        for i in 0..2 {
            for j in 0..2 {
                assert!((adj[(i, j)] - m.p()[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_rows_are_stochastic() {
        let m = fixtures::biased_cycle3();
        let adj = m.adjoint();
        for i in 0..3 {
            let s: f64 = adj.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-10, "row {i} sums to {s}");
        }
        // invariance of mu under the adjoint
        let res = (adj.transpose() * m.mu() - m.mu()).abs().max();
        assert!(res < 1e-12);
    }

    #[test]
    fn adjoint_involution() {
        let m = fixtures::biased_cycle3();
        let adj = m.adjoint();
        let model2 = TransitionModel {
            p: adj,
            mu: m.mu().clone(),
            lag: 1.0,
            source: ModelSource::Explicit,
            grid: None,
            counts: None,
            state_to_cell: None,
        };
        let back = model2.adjoint();
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[(i, j)] - m.p()[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decompose_splits_exactly() {
        let m = fixtures::cycle3();
        let (rev, non) = m.decompose();
        // reversible model: non part vanishes
        let m2 = fixtures::two_state();
        let (_, non2) = m2.decompose();
        assert!(non2.abs().max() < 1e-12);
        // splitting reassembles p exactly (complement is computed as p - rev)
        let back = &rev + &non;
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(back[(i, j)].to_bits(), m.p()[(i, j)].to_bits());
            }
        }
        // deterministic cycle with uniform mu: rev = (p + p^T)/2
        let expected = (m.p() + m.p().transpose()) * 0.5;
        assert!((&rev - expected).abs().max() < 1e-12);
        // mu-weighted symmetrized reversible part is symmetric
        let s = m.symmetrize(&rev);
        assert!((&s - s.transpose()).abs().max() < 1e-10);
    }

    #[test]
    fn detailed_balance_residuals() {
        assert!(fixtures::two_state().detailed_balance_residual() < 1e-15);
        let r = fixtures::cycle3().detailed_balance_residual();
        assert!((r - 1.0 / 3.0).abs() < 1e-15, "cycle residual {r}");
    }

    #[test]
    fn nonnegativity_identity_and_flip() {
        let id =
            TransitionModel::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), 1.0);
        // identity is reducible; build via explicit fields instead
        assert!(id.is_err());
        let near_id = TransitionModel::from_matrix(
            DMatrix::from_row_slice(2, 2, &[0.999, 0.001, 0.001, 0.999]),
            1.0,
        )
        .unwrap();
        let rep = nonnegativity_check(&near_id);
        assert!(rep.nonnegative);
        assert!(rep.min_eigenvalue > 0.99);

        // periodic flip chain: eigenvalue -1, flagged outside (-1, 1]
        let flip = TransitionModel {
            p: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            mu: DVector::from_vec(vec![0.5, 0.5]),
            lag: 1.0,
            source: ModelSource::Explicit,
            grid: None,
            counts: None,
            state_to_cell: None,
        };
        let rep = nonnegativity_check(&flip);
        assert!(!rep.nonnegative);
        assert!((rep.min_eigenvalue + 1.0).abs() < 1e-12);
        assert!(rep.outside_spectral_range);
    }

    #[test]
    fn analytic_em_rows_sum_to_one() {
        let grid = Grid::new_1d(-2.0, 2.0, 24).unwrap();
        let m = build_analytic_em(&Potential::DoubleWell1d, 2.0, 0.02, &grid).unwrap();
        for i in 0..m.n() {
            let s: f64 = m.p().row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        m.validate().unwrap();
    }

    /// The AR(1) kernel of the harmonic well satisfies continuum detailed
    /// balance exactly, so the discretized model is reversible to roundoff.
    #[test]
    fn analytic_em_harmonic_is_reversible() {
        let grid = Grid::new_1d(-5.0, 5.0, 20).unwrap();
        let pot = Potential::Harmonic {
            stiffness: 1.0,
            dim: 1,
        };
        let m = build_analytic_em(&pot, 1.0, 0.05, &grid).unwrap();
        assert!(m.detailed_balance_residual() < 1e-6);
        let rep = nonnegativity_check(&m);
        assert!(rep.nonnegative, "min eigenvalue {}", rep.min_eigenvalue);
    }

    /// Low-temperature proxy: mu concentrates on the two minimum cells.
    /// beta = 700 is the largest inverse temperature whose barrier-cell mass
    /// (~e^{-beta}) stays above the smallest positive f64; the grid puts the
    /// minima on cell centers with spacing small enough that neighbor
    /// couplings stay representable too.
    #[test]
    fn analytic_em_low_temperature_concentrates_on_minima() {
        let beta = 700.0;
        let dt = 1e-3;
        // 50 cells of width 1/19.5 so that +-1 are cell centers
        let h = 1.0 / 19.5;
        let half = 25.0 * h;
        let grid = Grid::new_1d(-half, half, 50).unwrap();
        let pot = Potential::DoubleWell1d;
        let m = build_analytic_em(&pot, beta, dt, &grid).unwrap();
        let i_left = grid.locate(&[-1.0]).unwrap();
        let i_right = grid.locate(&[1.0]).unwrap();
        let mass = m.mu()[i_left] + m.mu()[i_right];
        assert!(mass > 0.99, "minimum-cell mass {mass}");
        // Laplace oracle: cell weights e^{-beta V(center)} normalized
        let weights: Vec<f64> = (0..grid.len())
            .map(|i| (-beta * pot.eval(&grid.center(i))).exp())
            .collect();
        let z: f64 = weights.iter().sum();
        let oracle = (weights[i_left] + weights[i_right]) / z;
        assert!(
            (mass - oracle).abs() < 5e-3,
            "mass {mass} vs Laplace oracle {oracle}"
        );
    }

    #[test]
    fn analytic_em_rejects_truncating_grids() {
        // grid far from covering the kernel: huge dt pushes mass outside
        let grid = Grid::new_1d(-0.5, 0.5, 8).unwrap();
        let pot = Potential::Harmonic {
            stiffness: 1.0,
            dim: 1,
        };
        match build_analytic_em(&pot, 0.05, 2.0, &grid) {
            Err(Error::Truncation { .. }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn counts_from_forced_chains() {
        // alternating chain forces the flip matrix
        let m = build_counts_from_indices(&[0, 1, 0, 1, 0], 2, true, 1.0);
        // flip chain is periodic -> GTH still solves it (irreducible)
        let m = m.unwrap();
        assert!((m.p()[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((m.p()[(1, 0)] - 1.0).abs() < 1e-15);

        // a,a,b leaves state b with no outgoing counts
        match build_counts_from_indices(&[0, 0, 1], 2, false, 1.0) {
            Err(Error::DisconnectedState { state: 1 }) => {}
            other => panic!("expected disconnected state, got {other:?}"),
        }
    }

    #[test]
    fn counts_prune_unvisited_states() {
        let m = build_counts_from_indices(&[0, 2, 0, 2, 2, 0], 4, true, 1.0).unwrap();
        assert_eq!(m.n(), 2);
        assert_eq!(m.state_to_cell.as_ref().unwrap(), &vec![0, 2]);
        m.validate().unwrap();
    }

    /// Count estimates converge to the analytic kernel entries.
    #[test]
    fn counts_match_analytic_kernel_oracle() {
        let pot = Potential::DoubleWell1d;
        let beta = 2.0;
        let dt = 0.05;
        let grid = Grid::new_1d(-1.6, 1.6, 32).unwrap();
        let oracle = build_analytic_em(&pot, beta, dt, &grid).unwrap();
        let cfg = SimConfig::new(beta, dt, 77, 120_000, vec![1.0]).with_guard(16.0);
        let traj = simulate_em(&pot, &cfg).unwrap();
        let est = build_counts(&traj, &grid, false).unwrap();
        let map = est.state_to_cell.as_ref().unwrap();
        let counts = est.counts.as_ref().unwrap();
        let mut checked = 0;
        for i in 0..est.n() {
            let row_total: f64 = counts.row(i).iter().sum();
            for j in 0..est.n() {
                let c = counts[(i, j)];
                if c < 25.0 {
                    continue; // too few samples for a Gaussian error bar
                }
                let p_hat = est.p()[(i, j)];
                let p_ref = oracle.p()[(map[i], map[j])];
                let se = (p_hat * (1.0 - p_hat) / row_total).sqrt();
                assert!(
                    (p_hat - p_ref).abs() < 3.0 * se + 0.01,
                    "entry ({i},{j}): est {p_hat} vs oracle {p_ref}, se {se}"
                );
                checked += 1;
            }
        }
        assert!(checked > 20, "only {checked} entries had enough samples");
    }

    #[test]
    fn sampled_chain_matches_stationary_distribution() {
        let m = fixtures::bd3();
        let chain = sample_chain(&m, 200_000, 12, 0);
        let mut occ = [0.0; 3];
        for &s in &chain {
            occ[s] += 1.0;
        }
        let total = chain.len() as f64;
        for (i, &count) in occ.iter().enumerate() {
            assert!(
                (count / total - m.mu()[i]).abs() < 0.01,
                "state {i}: {} vs {}",
                count / total,
                m.mu()[i]
            );
        }
    }

    #[test]
    fn model_roundtrip_is_byte_stable() {
        let dir = std::env::temp_dir().join("effdyn-model-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let m = fixtures::bd4();
        let j1 = dir.join("m.json");
        let b1 = dir.join("m.bin");
        m.save(&j1, &b1).unwrap();
        let back = TransitionModel::load(&j1, &b1).unwrap();
        assert_eq!(back.p(), m.p());
        assert_eq!(back.mu(), m.mu());
        let j2 = dir.join("m2.json");
        let b2 = dir.join("m2.bin");
        back.save(&j2, &b2).unwrap();
        assert_eq!(std::fs::read(&b1).unwrap(), std::fs::read(&b2).unwrap());
        let norm = |p: &Path| {
            std::fs::read_to_string(p)
                .unwrap()
                .replace("m2.bin", "m.bin")
        };
        assert_eq!(norm(&j1), norm(&j2));
    }
}
