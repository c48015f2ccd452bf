//! Trajectory generation for the toy systems: overdamped (Euler–Maruyama)
//! and underdamped Langevin integrators, plus lag-time subsampling and
//! trajectory export.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::rng::GaussianStream;

const TRAJ_MAGIC: &[u8; 4] = b"EFDT";

/// Parameters for a single simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Inverse temperature (1/energy).
    pub beta: f64,
    /// Integrator step size (time).
    pub dt: f64,
    /// Friction (1/time); used by the Langevin integrator only.
    pub gamma: f64,
    /// RNG seed; one trajectory per seed.
    pub seed: u64,
    /// Number of integration steps; the trajectory has `n_steps + 1` points.
    pub n_steps: usize,
    /// Initial position.
    pub x0: Vec<f64>,
    /// Initial velocity (Langevin).
    pub v0: Vec<f64>,
    /// Abort when any |coordinate| exceeds this radius. Callers working on a
    /// grid set it to 10x the grid extent.
    pub guard: f64,
}

impl SimConfig {
    pub fn new(beta: f64, dt: f64, seed: u64, n_steps: usize, x0: Vec<f64>) -> Self {
        let d = x0.len();
        Self {
            beta,
            dt,
            gamma: 1.0,
            seed,
            n_steps,
            x0,
            v0: vec![0.0; d],
            guard: 1e3,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_guard(mut self, guard: f64) -> Self {
        self.guard = guard;
        self
    }

    fn validate(&self, pot: &Potential) -> Result<()> {
        pot.validate()?;
        if self.beta.is_nan() || self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.dt.is_nan() || self.dt <= 0.0 || !self.dt.is_finite() {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 || !self.gamma.is_finite() {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.n_steps < 1 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if self.x0.len() != pot.dim() {
            return Err(Error::Config(format!(
                "x0 has dimension {}, potential expects {}",
                self.x0.len(),
                pot.dim()
            )));
        }
        if self.v0.len() != pot.dim() {
            return Err(Error::Config(format!(
                "v0 has dimension {}, potential expects {}",
                self.v0.len(),
                pot.dim()
            )));
        }
        Ok(())
    }
}

/// A simulated or subsampled path: `n_steps + 1` points of dimension `dim`,
/// flattened row-major, with optional velocities for Langevin runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    /// Flattened positions, `len() == (n_points) * dim`.
    pub positions: Vec<f64>,
    /// Flattened velocities when produced by the Langevin integrator.
    pub velocities: Option<Vec<f64>>,
    /// Integrator step size.
    pub dt: f64,
    /// Subsampling lag in steps (1 for raw trajectories).
    pub lag: usize,
}

impl Trajectory {
    pub fn n_points(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> Option<&[f64]> {
        self.velocities
            .as_ref()
            .map(|v| &v[i * self.dim..(i + 1) * self.dim])
    }

    /// Effective time between stored points.
    pub fn sample_interval(&self) -> f64 {
        self.dt * self.lag as f64
    }
}

fn check_guard(x: &[f64], guard: f64, step: usize) -> Result<()> {
    for &c in x {
        if !c.is_finite() || c.abs() > guard {
            return Err(Error::SimulationBlowup {
                step,
                magnitude: c.abs(),
                guard,
            });
        }
    }
    Ok(())
}

/// Euler–Maruyama integration of overdamped dynamics with an injected noise
/// stream: `x' = x - grad V(x) dt + sqrt(2 dt / beta) w`.
///
/// The noise closure must return independent standard Gaussians, one per
/// coordinate per step. Exposed so tests can negate or replay the stream.
pub fn simulate_em_with(
    pot: &Potential,
    cfg: &SimConfig,
    noise: &mut dyn FnMut() -> f64,
) -> Result<Trajectory> {
    cfg.validate(pot)?;
    let d = pot.dim();
    let amp = (2.0 * cfg.dt / cfg.beta).sqrt();
    let mut x = cfg.x0.clone();
    check_guard(&x, cfg.guard, 0)?;
    let mut positions = Vec::with_capacity((cfg.n_steps + 1) * d);
    positions.extend_from_slice(&x);
    for step in 1..=cfg.n_steps {
        let g = pot.grad(&x);
        for k in 0..d {
            x[k] += -g[k] * cfg.dt + amp * noise();
        }
        check_guard(&x, cfg.guard, step)?;
        positions.extend_from_slice(&x);
    }
    Ok(Trajectory {
        dim: d,
        positions,
        velocities: None,
        dt: cfg.dt,
        lag: 1,
    })
}

/// Euler–Maruyama integration of overdamped (Brownian) dynamics.
pub fn simulate_em(pot: &Potential, cfg: &SimConfig) -> Result<Trajectory> {
    let mut stream = GaussianStream::new(cfg.seed);
    simulate_em_with(pot, cfg, &mut || stream.next_gaussian())
}

/// Euler–Maruyama integration of underdamped Langevin dynamics on the
/// position/velocity pair; velocities are retained.
///
/// `v' = v - (grad V(x) + gamma v) dt + sqrt(2 gamma dt / beta) w`,
/// `x' = x + v dt`.
pub fn simulate_langevin(pot: &Potential, cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate(pot)?;
    let d = pot.dim();
    let mut stream = GaussianStream::new(cfg.seed);
    let amp = (2.0 * cfg.gamma * cfg.dt / cfg.beta).sqrt();
    let mut x = cfg.x0.clone();
    let mut v = cfg.v0.clone();
    check_guard(&x, cfg.guard, 0)?;
    let mut positions = Vec::with_capacity((cfg.n_steps + 1) * d);
    let mut velocities = Vec::with_capacity((cfg.n_steps + 1) * d);
    positions.extend_from_slice(&x);
    velocities.extend_from_slice(&v);
    for step in 1..=cfg.n_steps {
        let g = pot.grad(&x);
        for k in 0..d {
            v[k] += -(g[k] + cfg.gamma * v[k]) * cfg.dt + amp * stream.next_gaussian();
            x[k] += v[k] * cfg.dt;
        }
        check_guard(&x, cfg.guard, step)?;
        positions.extend_from_slice(&x);
        velocities.extend_from_slice(&v);
    }
    Ok(Trajectory {
        dim: d,
        positions,
        velocities: Some(velocities),
        dt: cfg.dt,
        lag: 1,
    })
}

/// Keep every `lag`-th point (indices 0, lag, 2·lag, …).
pub fn subsample(traj: &Trajectory, lag: usize) -> Result<Trajectory> {
    let len = traj.n_points();
    if lag == 0 {
        return Err(Error::Config("lag must be at least 1".into()));
    }
    if lag >= len {
        return Err(Error::EmptyOutput { lag, len });
    }
    if lag == 1 {
        return Ok(traj.clone());
    }
    let d = traj.dim;
    let take = |data: &Vec<f64>| -> Vec<f64> {
        (0..len)
            .step_by(lag)
            .flat_map(|i| data[i * d..(i + 1) * d].to_vec())
            .collect()
    };
    Ok(Trajectory {
        dim: d,
        positions: take(&traj.positions),
        velocities: traj.velocities.as_ref().map(take),
        dt: traj.dt,
        lag: traj.lag * lag,
    })
}

impl Trajectory {
    /// Binary column export: little-endian header
    /// (magic `EFDT`, version u32, d u32, has_velocities u32, n_points u64,
    /// dt f64, lag u64) followed by positions and, if present, velocities as
    /// row-major little-endian f64.
    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(TRAJ_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.velocities.is_some() as u32).to_le_bytes())?;
        w.write_all(&(self.n_points() as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&(self.lag as u64).to_le_bytes())?;
        for &p in &self.positions {
            w.write_all(&p.to_le_bytes())?;
        }
        if let Some(vels) = &self.velocities {
            for &v in vels {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TRAJ_MAGIC {
            return Err(Error::Format("bad trajectory magic".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != 1 {
            return Err(Error::Format(format!(
                "unsupported trajectory version {version}"
            )));
        }
        r.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let has_v = u32::from_le_bytes(u32buf) != 0;
        r.read_exact(&mut u64buf)?;
        let n_points = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u64buf)?;
        let dt = f64::from_le_bytes(u64buf);
        r.read_exact(&mut u64buf)?;
        let lag = u64::from_le_bytes(u64buf) as usize;
        let mut read_block = |count: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count);
            let mut buf = [0u8; 8];
            for _ in 0..count {
                r.read_exact(&mut buf)?;
                out.push(f64::from_le_bytes(buf));
            }
            Ok(out)
        };
        let positions = read_block(n_points * dim)?;
        let velocities = if has_v {
            Some(read_block(n_points * dim)?)
        } else {
            None
        };
        Ok(Trajectory {
            dim,
            positions,
            velocities,
            dt,
            lag,
        })
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        self.write_binary(std::fs::File::create(path)?)
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        Self::read_binary(std::fs::File::open(path)?)
    }

    /// CSV export, one row per stored point.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let mut header = String::from("step");
        for k in 0..self.dim {
            header.push_str(&format!(",x{k}"));
        }
        if self.velocities.is_some() {
            for k in 0..self.dim {
                header.push_str(&format!(",v{k}"));
            }
        }
        writeln!(w, "{header}")?;
        for i in 0..self.n_points() {
            let mut row = format!("{}", i * self.lag);
            for &p in self.point(i) {
                row.push_str(&format!(",{p}"));
            }
            if let Some(v) = self.velocity(i) {
                for &c in v {
                    row.push_str(&format!(",{c}"));
                }
            }
            writeln!(w, "{row}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty trajectory csv".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        let dim = cols.iter().filter(|c| c.starts_with('x')).count();
        let has_v = cols.iter().any(|c| c.starts_with('v'));
        if dim == 0 {
            return Err(Error::Format(
                "trajectory csv has no position columns".into(),
            ));
        }
        let mut positions = Vec::new();
        let mut velocities = Vec::new();
        let mut steps = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|e| Error::Format(e.to_string())))
                .collect::<Result<_>>()?;
            let want = 1 + dim * if has_v { 2 } else { 1 };
            if vals.len() != want {
                return Err(Error::Format(format!(
                    "trajectory csv row has {} fields, expected {want}",
                    vals.len()
                )));
            }
            steps.push(vals[0] as usize);
            positions.extend_from_slice(&vals[1..1 + dim]);
            if has_v {
                velocities.extend_from_slice(&vals[1 + dim..1 + 2 * dim]);
            }
        }
        let lag = if steps.len() > 1 {
            steps[1] - steps[0]
        } else {
            1
        };
        Ok(Trajectory {
            dim,
            positions,
            velocities: if has_v { Some(velocities) } else { None },
            dt: f64::NAN, // not carried by the csv format
            lag: lag.max(1),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic() -> Potential {
        Potential::Harmonic {
            stiffness: 1.0,
            dim: 1,
        }
    }

    #[test]
    fn em_is_deterministic_for_fixed_seed() {
        let cfg = SimConfig::new(1.0, 0.01, 99, 2000, vec![0.5]);
        let a = simulate_em(&harmonic(), &cfg).unwrap();
        let b = simulate_em(&harmonic(), &cfg).unwrap();
        assert_eq!(a.positions, b.positions);
        let cfg2 = SimConfig { seed: 100, ..cfg };
        let c = simulate_em(&harmonic(), &cfg2).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn langevin_is_deterministic_for_fixed_seed() {
        let cfg = SimConfig::new(1.0, 0.005, 4, 1000, vec![0.2]).with_gamma(2.0);
        let a = simulate_langevin(&harmonic(), &cfg).unwrap();
        let b = simulate_langevin(&harmonic(), &cfg).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.velocities, b.velocities);
    }

    /// Sign-flipping the noise stream flips the whole trajectory for an even
    /// potential when the start is flipped too.
    #[test]
    fn noise_negation_flips_even_potential_trajectories() {
        let pot = Potential::DoubleWell1d;
        let cfg = SimConfig::new(2.0, 0.005, 11, 500, vec![0.3]);
        let plus = simulate_em(&pot, &cfg).unwrap();
        let cfg_neg = SimConfig {
            x0: vec![-0.3],
            ..cfg
        };
        let mut stream = GaussianStream::new(11);
        let minus = simulate_em_with(&pot, &cfg_neg, &mut || -stream.next_gaussian()).unwrap();
        for (a, b) in plus.positions.iter().zip(&minus.positions) {
            assert_eq!(a.to_bits(), (-b).to_bits());
        }
    }

    /// Harmonic EM chain is the AR(1) recursion x' = (1 - dt) x + noise with
    /// stationary variance 2 dt / (beta (1 - (1-dt)^2)).
    #[test]
    fn em_harmonic_variance_matches_ar1_oracle() {
        let beta = 1.0;
        let dt = 0.01;
        let n = 1_000_000;
        let cfg = SimConfig::new(beta, dt, 2024, n, vec![0.0]);
        let traj = simulate_em(&harmonic(), &cfg).unwrap();
        let a: f64 = 1.0 - dt;
        let exact = 2.0 * dt / (beta * (1.0 - a * a));
        // batch-means standard error of the variance estimate
        let n_batches = 20;
        let blen = traj.n_points() / n_batches;
        let vars: Vec<f64> = (0..n_batches)
            .map(|b| {
                let s = &traj.positions[b * blen..(b + 1) * blen];
                let m = s.iter().sum::<f64>() / blen as f64;
                s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / blen as f64
            })
            .collect();
        let mean_var = vars.iter().sum::<f64>() / n_batches as f64;
        let sd = (vars.iter().map(|v| (v - mean_var).powi(2)).sum::<f64>()
            / (n_batches - 1) as f64)
            .sqrt();
        let se = sd / (n_batches as f64).sqrt();
        assert!(
            (mean_var - exact).abs() < 3.0 * se,
            "variance {mean_var} vs oracle {exact} (se {se})"
        );
    }

    /// Double-well symmetry: the chain spends half its time on each side.
    #[test]
    fn em_double_well_sides_are_balanced() {
        let cfg = SimConfig::new(3.0, 0.005, 31, 10_000_000, vec![1.0]);
        let traj = simulate_em(&Potential::DoubleWell1d, &cfg).unwrap();
        let n_batches = 20;
        let blen = traj.n_points() / n_batches;
        let fracs: Vec<f64> = (0..n_batches)
            .map(|b| {
                let s = &traj.positions[b * blen..(b + 1) * blen];
                s.iter().filter(|&&x| x > 0.0).count() as f64 / blen as f64
            })
            .collect();
        let mean = fracs.iter().sum::<f64>() / n_batches as f64;
        let sd =
            (fracs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n_batches - 1) as f64).sqrt();
        let se = sd / (n_batches as f64).sqrt();
        assert!(
            (mean - 0.5).abs() < 3.0 * se,
            "fraction above zero {mean} (se {se})"
        );
    }

    /// Equilibrium velocity marginal of Langevin is Gaussian with variance
    /// 1/beta, up to O(dt) integrator bias.
    #[test]
    fn langevin_velocity_variance_matches_equilibrium() {
        let beta = 1.0;
        let cfg = SimConfig::new(beta, 0.005, 17, 2_000_000, vec![0.0]).with_gamma(1.0);
        let traj = simulate_langevin(&harmonic(), &cfg).unwrap();
        let v = traj.velocities.as_ref().unwrap();
        let n_batches = 20;
        let blen = v.len() / n_batches;
        let vars: Vec<f64> = (0..n_batches)
            .map(|b| {
                let s = &v[b * blen..(b + 1) * blen];
                s.iter().map(|x| x * x).sum::<f64>() / blen as f64
            })
            .collect();
        let mean = vars.iter().sum::<f64>() / n_batches as f64;
        let sd =
            (vars.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n_batches - 1) as f64).sqrt();
        let se = sd / (n_batches as f64).sqrt();
        // allow the documented O(dt) discretization bias on top of noise
        let bias_allowance = 2.0 * cfg.dt;
        assert!(
            (mean - 1.0 / beta).abs() < 3.0 * se + bias_allowance,
            "velocity variance {mean} (se {se})"
        );
    }

    /// Large-friction Langevin matches overdamped sampling of the same
    /// potential: position histograms agree within a frozen tolerance
    /// (oracle run: max bin gap ~4e-3 at these lengths).
    #[test]
    fn langevin_overdamped_limit_histograms_agree() {
        let pot = Potential::DoubleWell1d;
        let beta = 2.0;
        let gamma = 50.0;
        // gamma-rescaled time: Langevin over total time T*gamma behaves like
        // overdamped over T
        let lan_cfg = SimConfig::new(beta, 0.002, 5, 4_000_000, vec![1.0]).with_gamma(gamma);
        let em_cfg = SimConfig::new(beta, 0.004, 6, 2_000_000, vec![1.0]);
        let lan = simulate_langevin(&pot, &lan_cfg).unwrap();
        let em = simulate_em(&pot, &em_cfg).unwrap();
        let hist = |t: &Trajectory| -> Vec<f64> {
            let mut h = [0.0; 16];
            let (lo, hi) = (-1.6, 1.6);
            let mut kept = 0usize;
            for i in 0..t.n_points() {
                let x = t.point(i)[0];
                if x >= lo && x < hi {
                    h[((x - lo) / (hi - lo) * 16.0) as usize] += 1.0;
                    kept += 1;
                }
            }
            h.iter().map(|c| c / kept as f64).collect()
        };
        let hl = hist(&lan);
        let he = hist(&em);
        let max_gap = hl
            .iter()
            .zip(&he)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_gap < 0.012, "histogram gap {max_gap}");
    }

    #[test]
    fn guard_aborts_diverging_runs() {
        // dt far beyond the stability limit of the stiff harmonic well
        let pot = Potential::Harmonic {
            stiffness: 100.0,
            dim: 1,
        };
        let cfg = SimConfig::new(1.0, 0.5, 7, 10_000, vec![1.0]).with_guard(50.0);
        match simulate_em(&pot, &cfg) {
            Err(Error::SimulationBlowup { step, .. }) => assert!(step > 0),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn subsample_arithmetic() {
        let mk = |n: usize| Trajectory {
            dim: 1,
            positions: (0..n).map(|i| i as f64).collect(),
            velocities: None,
            dt: 0.1,
            lag: 1,
        };
        let t = subsample(&mk(11), 5).unwrap();
        assert_eq!(t.positions, vec![0.0, 5.0, 10.0]);
        assert_eq!(t.lag, 5);
        let t = subsample(&mk(9), 4).unwrap();
        assert_eq!(t.positions, vec![0.0, 4.0, 8.0]);
        let t = subsample(&mk(6), 1).unwrap();
        assert_eq!(t.positions, (0..6).map(|i| i as f64).collect::<Vec<_>>());
        match subsample(&mk(4), 4) {
            Err(Error::EmptyOutput { lag: 4, len: 4 }) => {}
            other => panic!("expected empty-output error, got {other:?}"),
        }
    }

    #[test]
    fn binary_roundtrip_is_exact() {
        let cfg = SimConfig::new(1.0, 0.01, 50, 100, vec![0.1, -0.2]).with_gamma(3.0);
        let pot = Potential::Harmonic {
            stiffness: 1.0,
            dim: 2,
        };
        let traj = simulate_langevin(&pot, &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_binary(&mut buf).unwrap();
        let back = Trajectory::read_binary(buf.as_slice()).unwrap();
        assert_eq!(traj, back);
    }

    #[test]
    fn csv_roundtrip_preserves_positions() {
        let cfg = SimConfig::new(1.0, 0.01, 51, 50, vec![0.3]);
        let traj = simulate_em(&harmonic(), &cfg).unwrap();
        let sub = subsample(&traj, 5).unwrap();
        let mut buf = Vec::new();
        sub.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.positions, sub.positions);
        assert_eq!(back.lag, sub.lag);
    }
}
