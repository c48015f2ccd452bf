//! Effective (reduced) Markov models induced by a collective-variable
//! assignment: conditional measures on fibers, the reduced transition
//! matrix, lifting and projection of functions, and the operator-level
//! identities tying the reduced model to the full one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::operator::TransitionModel;

/// Surjective map from full states onto a smaller bin set, with fibers
/// derived. Provenance records how parametric assignments were built.
///
/// Serializes as `bin_of` + `k` + `provenance` only; fibers are rebuilt and
/// revalidated on deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CvAssignmentRepr", into = "CvAssignmentRepr")]
pub struct CvAssignment {
    bin_of: Vec<usize>,
    k: usize,
    fibers: Vec<Vec<usize>>,
    pub provenance: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CvAssignmentRepr {
    bin_of: Vec<usize>,
    k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

impl From<CvAssignment> for CvAssignmentRepr {
    fn from(cv: CvAssignment) -> Self {
        Self {
            bin_of: cv.bin_of,
            k: cv.k,
            provenance: cv.provenance,
        }
    }
}

impl TryFrom<CvAssignmentRepr> for CvAssignment {
    type Error = Error;

    fn try_from(repr: CvAssignmentRepr) -> Result<Self> {
        let mut cv = CvAssignment::new(repr.bin_of, repr.k)?;
        cv.provenance = repr.provenance;
        Ok(cv)
    }
}

impl CvAssignment {
    pub fn new(bin_of: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("bin count must be positive".into()));
        }
        let mut fibers: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (state, &b) in bin_of.iter().enumerate() {
            if b >= k {
                return Err(Error::Config(format!(
                    "state {state} assigned to bin {b} >= {k}"
                )));
            }
            fibers[b].push(state);
        }
        if let Some(bin) = fibers.iter().position(|f| f.is_empty()) {
            return Err(Error::EmptyFiber { bin });
        }
        Ok(Self {
            bin_of,
            k,
            fibers,
            provenance: None,
        })
    }

    /// Identity assignment (every state its own bin).
    pub fn identity(n: usize) -> Self {
        Self::new((0..n).collect(), n).expect("identity assignment is valid")
    }

    /// Single-bin assignment collapsing the whole space.
    pub fn single_bin(n: usize) -> Self {
        Self::new(vec![0; n], 1).expect("single-bin assignment is valid")
    }

    /// Assignment from fiber lists (a lump), e.g. `[[0], [1, 2]]`.
    pub fn from_fibers(fibers: &[Vec<usize>], n: usize) -> Result<Self> {
        let mut bin_of = vec![usize::MAX; n];
        for (b, fiber) in fibers.iter().enumerate() {
            for &s in fiber {
                if s >= n {
                    return Err(Error::Config(format!("fiber state {s} out of range")));
                }
                if bin_of[s] != usize::MAX {
                    return Err(Error::Config(format!("state {s} assigned twice")));
                }
                bin_of[s] = b;
            }
        }
        if let Some(s) = bin_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::Config(format!(
                "state {s} is not assigned to any bin"
            )));
        }
        Self::new(bin_of, fibers.len())
    }

    /// Linear projection assignment on a 2D grid: cell centers are projected
    /// on the direction `(cos theta, sin theta)` and binned uniformly into
    /// `k` bins over the projected range. Empty bins are merged with their
    /// nearest nonempty neighbor (recorded in the provenance).
    pub fn linear_angle(grid: &Grid, theta: f64, k: usize) -> Result<Self> {
        if grid.dim() != 2 {
            return Err(Error::Config(
                "linear-angle assignments need a 2D grid".into(),
            ));
        }
        if k < 2 {
            return Err(Error::Config("linear-angle assignments need k >= 2".into()));
        }
        let (c, s) = (theta.cos(), theta.sin());
        let proj: Vec<f64> = grid.centers().iter().map(|p| c * p[0] + s * p[1]).collect();
        let lo = proj.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo || hi.is_nan() || lo.is_nan() {
            return Err(Error::Config("projected centers are degenerate".into()));
        }
        let width = (hi - lo) / k as f64;
        let raw: Vec<usize> = proj
            .iter()
            .map(|&v| (((v - lo) / width) as usize).min(k - 1))
            .collect();
        let mut occupied = vec![false; k];
        for &b in &raw {
            occupied[b] = true;
        }
        // merge empty bins into the nearest occupied one, then compact
        let mut target = vec![0usize; k];
        let occupied_bins: Vec<usize> = (0..k).filter(|&b| occupied[b]).collect();
        for (b, t) in target.iter_mut().enumerate() {
            *t = *occupied_bins
                .iter()
                .min_by_key(|&&o| (o as isize - b as isize).unsigned_abs())
                .unwrap();
        }
        let mut compact = vec![usize::MAX; k];
        for (rank, &b) in occupied_bins.iter().enumerate() {
            compact[b] = rank;
        }
        let bin_of: Vec<usize> = raw.iter().map(|&b| compact[target[b]]).collect();
        let merged = k - occupied_bins.len();
        let mut cv = Self::new(bin_of, occupied_bins.len())?;
        cv.provenance = Some(if merged == 0 {
            format!("linear-angle theta={theta} k={k}")
        } else {
            format!("linear-angle theta={theta} k={k} merged={merged}")
        });
        Ok(cv)
    }

    /// Axis-aligned coordinate assignment on a grid (axis 0 or 1).
    pub fn coordinate(grid: &Grid, axis: usize, k: usize) -> Result<Self> {
        if axis >= grid.dim() {
            return Err(Error::Config(format!(
                "axis {axis} out of range for a {}D grid",
                grid.dim()
            )));
        }
        if grid.dim() == 1 {
            // project on the only axis
            let mut cv = Self::linear_angle_1d(grid, k)?;
            cv.provenance = Some(format!("coordinate axis={axis} k={k}"));
            return Ok(cv);
        }
        let theta = if axis == 0 {
            0.0
        } else {
            std::f64::consts::FRAC_PI_2
        };
        let mut cv = Self::linear_angle(grid, theta, k)?;
        cv.provenance = Some(format!("coordinate axis={axis} k={k}"));
        Ok(cv)
    }

    fn linear_angle_1d(grid: &Grid, k: usize) -> Result<Self> {
        let proj: Vec<f64> = grid.centers().iter().map(|p| p[0]).collect();
        let lo = proj.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / k as f64;
        let raw: Vec<usize> = proj
            .iter()
            .map(|&v| (((v - lo) / width) as usize).min(k - 1))
            .collect();
        Self::new(raw, k)
    }

    /// Compose with a surjective map on bins: `state -> f(bin_of(state))`.
    pub fn compose(&self, f: &[usize], k_out: usize) -> Result<Self> {
        if f.len() != self.k {
            return Err(Error::Config(format!(
                "map has {} entries for {} bins",
                f.len(),
                self.k
            )));
        }
        let bin_of: Vec<usize> = self.bin_of.iter().map(|&b| f[b]).collect();
        Self::new(bin_of, k_out)
    }

    pub fn n(&self) -> usize {
        self.bin_of.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bin_of(&self, state: usize) -> usize {
        self.bin_of[state]
    }

    pub fn bins(&self) -> &[usize] {
        &self.bin_of
    }

    pub fn fiber(&self, bin: usize) -> &[usize] {
        &self.fibers[bin]
    }

    /// Preimage of a set of bins as full-state indices.
    pub fn preimage(&self, bins: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = bins.iter().flat_map(|&b| self.fibers[b].clone()).collect();
        out.sort_unstable();
        out
    }
}

/// Reduced model induced by a CV assignment: the effective transition matrix
/// over bins plus the conditional distribution of each fiber.
#[derive(Debug, Clone)]
pub struct EffectiveModel {
    pub model: TransitionModel,
    pub cv: CvAssignment,
    /// `conditionals[z][local]` is `mu_z` over `cv.fiber(z)`.
    pub conditionals: Vec<Vec<f64>>,
}

/// Build the effective dynamics of `model` under `cv`:
/// `mu_z(x) = mu(x) / mu~(z)` on each fiber and
/// `p~(z, w) = sum_{x in fiber z} mu_z(x) sum_{y in fiber w} p(x, y)`.
pub fn build_effective(model: &TransitionModel, cv: &CvAssignment) -> Result<EffectiveModel> {
    let n = model.n();
    if cv.n() != n {
        return Err(Error::Config(format!(
            "assignment covers {} states, model has {n}",
            cv.n()
        )));
    }
    let k = cv.k();
    let mu = model.mu();
    let p = model.p();
    let mu_red: Vec<f64> = (0..k)
        .map(|z| cv.fiber(z).iter().map(|&x| mu[x]).sum())
        .collect();
    let conditionals: Vec<Vec<f64>> = (0..k)
        .map(|z| cv.fiber(z).iter().map(|&x| mu[x] / mu_red[z]).collect())
        .collect();
    let mut p_red = DMatrix::zeros(k, k);
    for z in 0..k {
        for (local, &x) in cv.fiber(z).iter().enumerate() {
            let weight = conditionals[z][local];
            for w in 0..k {
                let mass: f64 = cv.fiber(w).iter().map(|&y| p[(x, y)]).sum();
                p_red[(z, w)] += weight * mass;
            }
        }
    }
    let reduced =
        TransitionModel::from_parts(p_red, nalgebra::DVector::from_vec(mu_red), model.lag);
    reduced.validate()?;
    Ok(EffectiveModel {
        model: reduced,
        cv: cv.clone(),
        conditionals,
    })
}

impl EffectiveModel {
    /// Conditional distribution `mu_z` over the fiber of `z`, indexed like
    /// `cv.fiber(z)`.
    pub fn conditional(&self, z: usize) -> &[f64] {
        &self.conditionals[z]
    }

    /// Lift a bin function to states: `(lift f~)(x) = f~(xi(x))`.
    pub fn lift(&self, f_red: &[f64]) -> Vec<f64> {
        lift(&self.cv, f_red)
    }

    /// Project a state function to bins: `(project f)(z) = E_{mu_z} f`.
    pub fn project(&self, f: &[f64]) -> Vec<f64> {
        (0..self.cv.k())
            .map(|z| {
                self.cv
                    .fiber(z)
                    .iter()
                    .zip(&self.conditionals[z])
                    .map(|(&x, &w)| w * f[x])
                    .sum()
            })
            .collect()
    }
}

/// Lift a bin function through an assignment without conditionals.
pub fn lift(cv: &CvAssignment, f_red: &[f64]) -> Vec<f64> {
    (0..cv.n()).map(|x| f_red[cv.bin_of(x)]).collect()
}

/// Residuals of the operator-lifting identities:
/// `r1 = ||P~ f~ - project(P lift(f~))||_inf` and
/// `r2 = |<P~ f~, h~>_mu~ - <P lift(f~), lift(h~)>_mu|`.
pub fn lemma_identity_check(
    model: &TransitionModel,
    eff: &EffectiveModel,
    f_red: &[f64],
    h_red: &[f64],
) -> (f64, f64) {
    let pf_red = crate::spectral::apply(&eff.model, f_red);
    let f_full = eff.lift(f_red);
    let pf_full = crate::spectral::apply(model, &f_full);
    let projected = eff.project(&pf_full);
    let r1 = pf_red
        .iter()
        .zip(&projected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let h_full = eff.lift(h_red);
    let lhs = crate::spectral::mu_inner(&eff.model, &pf_red, h_red);
    let rhs = crate::spectral::mu_inner(model, &pf_full, &h_full);
    (r1, (lhs - rhs).abs())
}

/// Adjoint of the effective matrix, `p~*(z, w) = p~(w, z) mu~(w) / mu~(z)`;
/// equal to the effective dynamics of the adjoint process.
pub fn effective_adjoint(eff: &EffectiveModel) -> DMatrix<f64> {
    eff.model.adjoint()
}

/// Effective dynamics of the adjoint process: the dual construction route
/// for the effective adjoint.
pub fn effective_of_adjoint(model: &TransitionModel, cv: &CvAssignment) -> Result<DMatrix<f64>> {
    let adj_model = TransitionModel::from_parts(model.adjoint(), model.mu().clone(), model.lag);
    adj_model.validate()?;
    let eff = build_effective(&adj_model, cv)?;
    Ok(eff.model.p().clone())
}

/// Max-norm gap between reducing in one step with `f o xi` and reducing in
/// two steps (first `xi`, then `f`); zero by the commutative diagram.
pub fn compose_check(
    model: &TransitionModel,
    cv: &CvAssignment,
    f: &[usize],
    k_out: usize,
) -> Result<f64> {
    let composed = cv.compose(f, k_out)?;
    let direct = build_effective(model, &composed)?;
    let staged_inner = build_effective(model, cv)?;
    let outer = CvAssignment::new(f.to_vec(), k_out)?;
    let staged = build_effective(&staged_inner.model, &outer)?;
    let mut worst: f64 = (direct.model.p() - staged.model.p()).abs().max();
    for z in 0..k_out {
        worst = worst.max((direct.model.mu()[z] - staged.model.mu()[z]).abs());
    }
    Ok(worst)
}
