//! Reversibility check for the position marginal of Langevin dynamics: the
//! chain of subsampled positions satisfies detailed balance with respect to
//! the Gibbs density `exp(-beta V)`, which this module verifies statistically
//! from count estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::operator::{build_counts, ModelSource, TransitionModel};
use crate::potential::Potential;
use crate::sim::{simulate_langevin, subsample, SimConfig};

/// Count-estimated transition model of the Langevin position marginal at lag
/// `lag` steps. Reversibility is measured, not imposed: the counts are not
/// symmetrized.
pub fn marginal_model(
    pot: &Potential,
    cfg: &SimConfig,
    lag: usize,
    grid: &Grid,
) -> Result<TransitionModel> {
    let traj = simulate_langevin(pot, cfg)?;
    let sub = subsample(&traj, lag)?;
    build_counts(&sub, grid, false)
}

/// Detailed-balance verdict against a reference stationary density.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceReport {
    /// Largest absolute detailed-balance defect
    /// `|pi_i p_ij - pi_j p_ji|` over state pairs.
    pub residual: f64,
    /// Standard error of the defect at the maximizing pair, pooled from the
    /// binomial noise of both directed counts; zero for analytic models.
    pub stderr: f64,
    /// Number of observed transitions behind the estimate (0 for analytic).
    pub n_samples: usize,
    /// Pass when the residual is within `5 * stderr` (count models) or the
    /// absolute tolerance 1e-6 (noise-free models).
    pub verdict: bool,
}

const ANALYTIC_TOL: f64 = 1e-6;

/// Check `pi_i p_ij = pi_j p_ji` against the grid-normalized reference
/// density. For count-estimated models the verdict compares the residual to
/// five pooled standard errors of the count noise; models without counts are
/// held to the absolute tolerance 1e-6 instead.
pub fn detailed_balance_report(model: &TransitionModel, pi_ref: &[f64]) -> Result<BalanceReport> {
    let n = model.n();
    if pi_ref.len() != n {
        return Err(Error::Config(format!(
            "reference density has {} entries for {n} states",
            pi_ref.len()
        )));
    }
    let total: f64 = pi_ref.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Config(
            "reference density must have positive mass".into(),
        ));
    }
    let pi: Vec<f64> = pi_ref.iter().map(|v| v / total).collect();
    let p = model.p();
    let counts = model.counts.as_ref();
    let row_totals: Option<Vec<f64>> =
        counts.map(|c| (0..n).map(|i| c.row(i).iter().sum()).collect());
    let mut residual: f64 = 0.0;
    let mut stderr = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let defect = (pi[i] * p[(i, j)] - pi[j] * p[(j, i)]).abs();
            if defect > residual {
                residual = defect;
                if let Some(rt) = &row_totals {
                    let var_ij = p[(i, j)] * (1.0 - p[(i, j)]) / rt[i].max(1.0);
                    let var_ji = p[(j, i)] * (1.0 - p[(j, i)]) / rt[j].max(1.0);
                    stderr = (pi[i] * pi[i] * var_ij + pi[j] * pi[j] * var_ji).sqrt();
                }
            }
        }
    }
    let n_samples = match &model.source {
        ModelSource::Counts { n_transitions, .. } => *n_transitions,
        _ => 0,
    };
    let verdict = if counts.is_some() {
        residual < 5.0 * stderr
    } else {
        residual < ANALYTIC_TOL
    };
    Ok(BalanceReport {
        residual,
        stderr,
        n_samples,
        verdict,
    })
}

/// Grid-normalized Gibbs cell masses `int_cell exp(-beta V)` by 32-point
/// midpoint sub-quadrature per axis. A chain binned onto cells is reversible
/// with respect to the exact cell masses, so the reference must integrate
/// over cells rather than sample centers.
pub fn gibbs_reference(pot: &Potential, beta: f64, grid: &Grid) -> Vec<f64> {
    const SUBDIV: usize = 32;
    let axes = grid.axes();
    let w: Vec<f64> = (0..grid.len())
        .map(|i| {
            let center = grid.center(i);
            match grid.dim() {
                1 => {
                    let h = axes[0].width();
                    (0..SUBDIV)
                        .map(|s| {
                            let x = center[0] - h / 2.0 + (s as f64 + 0.5) * h / SUBDIV as f64;
                            (-beta * pot.eval(&[x])).exp()
                        })
                        .sum::<f64>()
                        / SUBDIV as f64
                }
                2 => {
                    let hx = axes[0].width();
                    let hy = axes[1].width();
                    let mut acc = 0.0;
                    for sx in 0..SUBDIV {
                        let x = center[0] - hx / 2.0 + (sx as f64 + 0.5) * hx / SUBDIV as f64;
                        for sy in 0..SUBDIV {
                            let y = center[1] - hy / 2.0 + (sy as f64 + 0.5) * hy / SUBDIV as f64;
                            acc += (-beta * pot.eval(&[x, y])).exp();
                        }
                    }
                    acc / (SUBDIV * SUBDIV) as f64
                }
                _ => unreachable!(),
            }
        })
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Gibbs reference restricted to the states a pruned count model kept.
pub fn gibbs_reference_for(
    model: &TransitionModel,
    pot: &Potential,
    beta: f64,
) -> Result<Vec<f64>> {
    let grid = model
        .grid
        .as_ref()
        .ok_or_else(|| Error::Config("model carries no grid".into()))?;
    let full = gibbs_reference(pot, beta, grid);
    Ok(match &model.state_to_cell {
        Some(map) => map.iter().map(|&c| full[c]).collect(),
        None => full,
    })
}

/// One row of the data-doubling study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_steps: usize,
    pub residual: f64,
    pub stderr: f64,
    pub verdict: bool,
}

/// Rerun the marginal estimate at doubling trajectory lengths and report the
/// detailed-balance residual of each run; Monte Carlo noise makes it shrink
/// like `1/sqrt(N)` until integrator bias takes over.
pub fn scaling_study(
    pot: &Potential,
    base: &SimConfig,
    lag: usize,
    grid: &Grid,
    doublings: usize,
) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::with_capacity(doublings + 1);
    for k in 0..=doublings {
        let cfg = SimConfig {
            n_steps: base.n_steps << k,
            seed: base.seed + k as u64,
            ..base.clone()
        };
        let model = marginal_model(pot, &cfg, lag, grid)?;
        let pi = gibbs_reference_for(&model, pot, cfg.beta)?;
        let report = detailed_balance_report(&model, &pi)?;
        rows.push(ScalingRow {
            n_steps: cfg.n_steps,
            residual: report.residual,
            stderr: report.stderr,
            verdict: report.verdict,
        });
    }
    Ok(rows)
}
