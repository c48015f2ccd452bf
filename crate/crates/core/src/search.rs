//! Collective-variable optimization over parametric families and the
//! eigenvalue / transition-rate comparison reports between a full model and
//! its effective dynamics.

use serde::{Deserialize, Serialize};

use crate::effective::{build_effective, lift, CvAssignment};
use crate::error::{Error, Result};
use crate::kl::kl_score;
use crate::operator::TransitionModel;
use crate::spectral::{dirichlet_energy, solve_spectrum, ObjectiveWeights};
use crate::tpt::{committor, rate_energy, rate_flux, SetPair};

/// Parametric family of CV assignments to scan over.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CvFamily {
    /// Linear projections of a 2D grid onto directions `(cos t, sin t)` for
    /// `n_angles` values of `t` uniform in `[0, pi)`, binned into `k` bins.
    #[serde(rename = "linear-angle-2d")]
    LinearAngle2d { k: usize, n_angles: usize },
    /// A single axis-aligned coordinate assignment per axis of the grid.
    Coordinate { k: usize },
    /// Explicit list of assignments, parametrized by index.
    ExplicitList { assignments: Vec<CvAssignment> },
}

impl CvFamily {
    /// Parameter values and the assignments they induce. Parameters whose
    /// assignment degenerates below two bins are dropped here and reported
    /// by `scan` as skipped.
    pub fn instantiate(
        &self,
        grid: Option<&Grid>,
        n_states: usize,
    ) -> Result<Vec<(f64, CvAssignment)>> {
        match self {
            CvFamily::LinearAngle2d { k, n_angles } => {
                let grid = grid.ok_or_else(|| {
                    Error::Config("linear-angle family needs a model with a grid".into())
                })?;
                if *n_angles == 0 {
                    return Err(Error::Config("n_angles must be positive".into()));
                }
                let mut out = Vec::with_capacity(*n_angles);
                for j in 0..*n_angles {
                    let theta = std::f64::consts::PI * j as f64 / *n_angles as f64;
                    let cv = CvAssignment::linear_angle(grid, theta, *k)?;
                    out.push((theta, cv));
                }
                Ok(out)
            }
            CvFamily::Coordinate { k } => {
                let grid = grid.ok_or_else(|| {
                    Error::Config("coordinate family needs a model with a grid".into())
                })?;
                (0..grid.dim())
                    .map(|axis| Ok((axis as f64, CvAssignment::coordinate(grid, axis, *k)?)))
                    .collect()
            }
            CvFamily::ExplicitList { assignments } => {
                for cv in assignments {
                    if cv.n() != n_states {
                        return Err(Error::Config(format!(
                            "assignment covers {} states, model has {n_states}",
                            cv.n()
                        )));
                    }
                }
                Ok(assignments
                    .iter()
                    .enumerate()
                    .map(|(i, cv)| (i as f64, cv.clone()))
                    .collect())
            }
        }
    }
}

use crate::grid::Grid;

/// Timescale objective `sum_i w_i (1 - lambda~_i)` over the first `m`
/// nontrivial eigenvalues of the effective model. Effective spectra shorter
/// than `m` are padded with eigenvalue 0, the worst value consistent with
/// the ordering.
pub fn timescale_objective(
    model: &TransitionModel,
    cv: &CvAssignment,
    weights: &ObjectiveWeights,
    m: usize,
) -> Result<f64> {
    if weights.len() != m {
        return Err(Error::Config(format!(
            "{m} eigenvalues but {} weights",
            weights.len()
        )));
    }
    let eff = build_effective(model, cv)?;
    let k = eff.model.n();
    let avail = m.min(k - 1);
    let spec = solve_spectrum(&eff.model, avail + 1)?;
    let mut obj = 0.0;
    for i in 0..m {
        let lambda = if i < avail {
            spec.eigenvalues[i + 1]
        } else {
            0.0
        };
        obj += weights.as_slice()[i] * (1.0 - lambda);
    }
    Ok(obj)
}

/// One row of the eigenvalue comparison: full eigenvalue `lambda_i` against
/// effective eigenvalue `lambda~_j`, with the residual of the exact identity
/// `lambda_i - lambda~_j = E(lift(phi~_j) - phi_i) - (1 - lambda_i) ||lift(phi~_j) - phi_i||_mu^2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EigenGapRow {
    pub i: usize,
    pub j: usize,
    pub lambda_full: f64,
    pub lambda_eff: f64,
    pub identity_residual: f64,
}

/// Eigenvalue comparison between a reversible model and its effective
/// dynamics: the ordered gaps `lambda~_i <= lambda_i` and the full small
/// matrix of claim-2 identity residuals for `i, j <= m`.
pub fn eigen_comparison(
    model: &TransitionModel,
    cv: &CvAssignment,
    m: usize,
) -> Result<Vec<EigenGapRow>> {
    let eff = build_effective(model, cv)?;
    let n = model.n();
    let k = eff.model.n();
    let m_full = m.min(n - 1);
    let m_eff = m.min(k - 1);
    let spec = solve_spectrum(model, m_full + 1)?;
    let spec_eff = solve_spectrum(&eff.model, m_eff + 1)?;
    let mu = model.mu();
    let mut rows = Vec::new();
    for i in 1..=m_full {
        let phi = spec.eigenvector(i);
        let lambda = spec.eigenvalues[i];
        for j in 1..=m_eff {
            let lifted = lift(cv, &spec_eff.eigenvector(j));
            let diff: Vec<f64> = lifted.iter().zip(&phi).map(|(a, b)| a - b).collect();
            let energy = dirichlet_energy(model, &diff);
            let norm2: f64 = (0..n).map(|x| mu[x] * diff[x] * diff[x]).sum();
            let predicted = energy - (1.0 - lambda) * norm2;
            rows.push(EigenGapRow {
                i,
                j,
                lambda_full: lambda,
                lambda_eff: spec_eff.eigenvalues[j],
                identity_residual: ((lambda - spec_eff.eigenvalues[j]) - predicted).abs(),
            });
        }
    }
    Ok(rows)
}

/// Transition-rate comparison for sets defined through the CV map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateComparison {
    pub k_full: f64,
    pub k_eff: f64,
    /// `E(q - lift(q~))`; the exact excess of the effective rate.
    pub gap: f64,
    pub q: Vec<f64>,
    pub q_eff: Vec<f64>,
}

/// Compare the full rate `k_AB` with the effective rate for
/// `A = preimage(A~)`, `B = preimage(B~)`; the identity
/// `k~ = k_AB + E(q - lift(q~))` is checked to 1e-10.
pub fn rate_comparison(
    model: &TransitionModel,
    cv: &CvAssignment,
    a_bins: &[usize],
    b_bins: &[usize],
) -> Result<RateComparison> {
    let eff = build_effective(model, cv)?;
    let sets_red = SetPair::new(a_bins.to_vec(), b_bins.to_vec(), cv.k())?;
    let sets_full = SetPair::new(cv.preimage(a_bins), cv.preimage(b_bins), model.n())?;
    let q = committor(model, &sets_full)?;
    let q_eff = committor(&eff.model, &sets_red)?;
    let k_full = rate_energy(model, &q);
    let (k_flux, _) = rate_flux(model, &sets_full, &q);
    if (k_full - k_flux).abs() > 1e-10 {
        return Err(Error::Invariant(format!(
            "full-rate routes disagree: {k_full} vs {k_flux}"
        )));
    }
    let k_eff = rate_energy(&eff.model, &q_eff);
    let (k_eff_flux, _) = rate_flux(&eff.model, &sets_red, &q_eff);
    if (k_eff - k_eff_flux).abs() > 1e-10 {
        return Err(Error::Invariant(format!(
            "effective-rate routes disagree: {k_eff} vs {k_eff_flux}"
        )));
    }
    let lifted = lift(cv, &q_eff);
    let diff: Vec<f64> = q.iter().zip(&lifted).map(|(a, b)| a - b).collect();
    let gap = dirichlet_energy(model, &diff);
    if (k_eff - k_full - gap).abs() > 1e-10 {
        return Err(Error::Invariant(format!(
            "rate identity violated: k_eff {k_eff} vs k_full {k_full} + gap {gap}"
        )));
    }
    Ok(RateComparison {
        k_full,
        k_eff,
        gap,
        q,
        q_eff,
    })
}

/// Objective to drive a scan with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Timescale,
    Kl,
}

/// One evaluated scan point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanPoint {
    pub param: f64,
    /// Objective value; `None` when the assignment degenerated below 2 bins.
    pub objective: Option<f64>,
    /// Leading nontrivial effective eigenvalues (up to `m`).
    pub lambdas: Vec<f64>,
    /// Rate comparison columns when the scan config carries a compatible
    /// set pair.
    pub k_full: Option<f64>,
    pub k_eff: Option<f64>,
    pub gap: Option<f64>,
    /// Assignment provenance (bin merges etc.).
    pub provenance: Option<String>,
}

/// Scan outcome: the full objective curve and its argmin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub points: Vec<ScanPoint>,
    /// Index into `points` of the smallest objective; ties break to the
    /// smallest parameter.
    pub argmin: usize,
}

/// Scan configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanConfig {
    pub objective: Objective,
    /// Number of eigenvalues for the timescale objective (and report).
    pub m: usize,
    /// Weights for the timescale objective; uniform when omitted.
    pub weights: Option<Vec<f64>>,
    /// Optional rate tracking: full-state sets that must be fiber unions of
    /// every assignment in the family to be reported for it.
    pub rate_sets: Option<(Vec<usize>, Vec<usize>)>,
}

impl ScanConfig {
    pub fn new(objective: Objective, m: usize) -> Self {
        Self {
            objective,
            m,
            weights: None,
            rate_sets: None,
        }
    }
}

/// Evaluate the objective over every family parameter. Deterministic: the
/// curve depends only on the model, family, and config.
pub fn scan(model: &TransitionModel, family: &CvFamily, config: &ScanConfig) -> Result<ScanResult> {
    scan_with_threads(model, family, config, 1)
}

/// Parallel scan: points are independent and evaluated on up to `threads`
/// workers; assembly is ordered by parameter index, so the curve does not
/// depend on the thread count.
pub fn scan_with_threads(
    model: &TransitionModel,
    family: &CvFamily,
    config: &ScanConfig,
    threads: usize,
) -> Result<ScanResult> {
    let weights = match &config.weights {
        Some(w) => ObjectiveWeights::new(w.clone())?,
        None => ObjectiveWeights::uniform(config.m),
    };
    let params = family.instantiate(model.grid.as_ref(), model.n())?;
    let threads = threads.max(1).min(params.len().max(1));
    let mut slots: Vec<Option<Result<ScanPoint>>> = (0..params.len()).map(|_| None).collect();
    if threads <= 1 {
        for (slot, (param, cv)) in slots.iter_mut().zip(&params) {
            *slot = Some(evaluate_point(model, config, &weights, *param, cv));
        }
    } else {
        let results: Vec<(usize, Result<ScanPoint>)> = std::thread::scope(|scope| {
            let chunks: Vec<Vec<usize>> = (0..threads)
                .map(|t| (t..params.len()).step_by(threads).collect())
                .collect();
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|idxs| {
                    let params = &params;
                    let weights = &weights;
                    scope.spawn(move || {
                        idxs.into_iter()
                            .map(|i| {
                                let (param, cv) = &params[i];
                                (i, evaluate_point(model, config, weights, *param, cv))
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().unwrap())
                .collect()
        });
        for (i, r) in results {
            slots[i] = Some(r);
        }
    }
    let mut points = Vec::with_capacity(slots.len());
    for slot in slots {
        points.push(slot.expect("all scan points evaluated")?);
    }
    if points.iter().all(|p| p.objective.is_none()) {
        return Err(Error::DegenerateFamily);
    }
    let argmin = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.objective.map(|o| (i, o)))
        .min_by(|(ia, oa), (ib, ob)| oa.partial_cmp(ob).unwrap().then(ia.cmp(ib)))
        .map(|(i, _)| i)
        .unwrap();
    Ok(ScanResult { points, argmin })
}

fn evaluate_point(
    model: &TransitionModel,
    config: &ScanConfig,
    weights: &ObjectiveWeights,
    param: f64,
    cv: &CvAssignment,
) -> Result<ScanPoint> {
    if cv.k() < 2 {
        return Ok(ScanPoint {
            param,
            objective: None,
            lambdas: Vec::new(),
            k_full: None,
            k_eff: None,
            gap: None,
            provenance: cv.provenance.clone(),
        });
    }
    let eff = build_effective(model, cv)?;
    let avail = config.m.min(eff.model.n() - 1);
    let spec = solve_spectrum(&eff.model, avail + 1)?;
    let lambdas: Vec<f64> = (1..=avail).map(|i| spec.eigenvalues[i]).collect();
    let objective = match config.objective {
        Objective::Timescale => timescale_objective(model, cv, weights, config.m)?,
        Objective::Kl => kl_score(model, cv)?,
    };
    let (mut k_full, mut k_eff, mut gap) = (None, None, None);
    if let Some((a, b)) = &config.rate_sets {
        if let Some(cmp) = rate_columns(model, cv, a, b)? {
            k_full = Some(cmp.k_full);
            k_eff = Some(cmp.k_eff);
            gap = Some(cmp.gap);
        }
    }
    Ok(ScanPoint {
        param,
        objective: Some(objective),
        lambdas,
        k_full,
        k_eff,
        gap,
        provenance: cv.provenance.clone(),
    })
}

/// Bins of a full-state set when the set is exactly a union of fibers of
/// the assignment; `None` otherwise.
pub fn compatible_bins(cv: &CvAssignment, set: &[usize]) -> Option<Vec<usize>> {
    let mut bins: Vec<usize> = set.iter().map(|&s| cv.bin_of(s)).collect();
    bins.sort_unstable();
    bins.dedup();
    let preimage = cv.preimage(&bins);
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    (preimage == sorted).then_some(bins)
}

/// Rate comparison for full-state sets, when both are fiber unions of the
/// assignment and stay disjoint in bin space; `None` otherwise.
pub fn rate_comparison_for_state_sets(
    model: &TransitionModel,
    cv: &CvAssignment,
    a: &[usize],
    b: &[usize],
) -> Result<Option<RateComparison>> {
    let (Some(a_bins), Some(b_bins)) = (compatible_bins(cv, a), compatible_bins(cv, b)) else {
        return Ok(None);
    };
    if a_bins.iter().any(|z| b_bins.contains(z)) {
        return Ok(None);
    }
    Ok(Some(rate_comparison(model, cv, &a_bins, &b_bins)?))
}

/// Rate columns for a scan point.
fn rate_columns(
    model: &TransitionModel,
    cv: &CvAssignment,
    a: &[usize],
    b: &[usize],
) -> Result<Option<RateComparison>> {
    rate_comparison_for_state_sets(model, cv, a, b)
}

/// CSV export of a scan curve: `param, objective, lambda_1..m, k_full,
/// k_eff, gap`; blank fields where a column does not apply.
pub fn write_scan_csv<W: std::io::Write>(result: &ScanResult, m: usize, mut w: W) -> Result<()> {
    let mut header = String::from("param,objective");
    for i in 1..=m {
        header.push_str(&format!(",lambda_{i}"));
    }
    header.push_str(",k_full,k_eff,gap");
    writeln!(w, "{header}")?;
    for p in &result.points {
        let mut row = format!("{}", p.param);
        match p.objective {
            Some(o) => row.push_str(&format!(",{o}")),
            None => row.push(','),
        }
        for i in 0..m {
            match p.lambdas.get(i) {
                Some(l) => row.push_str(&format!(",{l}")),
                None => row.push(','),
            }
        }
        for v in [p.k_full, p.k_eff, p.gap] {
            match v {
                Some(v) => row.push_str(&format!(",{v}")),
                None => row.push(','),
            }
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}
