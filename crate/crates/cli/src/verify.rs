//! The `verify-all` suite: a deterministic battery of the toolkit's exact
//! identities and statistical checks, with one report entry per invariant.

use serde::Serialize;
use serde_json::json;

use effdyn::effective::{build_effective, lift, CvAssignment};
use effdyn::kl::{kl_of_candidate, kl_score, mutual_information, optimal_factorization};
use effdyn::search::{eigen_comparison, rate_comparison};
use effdyn::spectral::{dirichlet_energy, orthonormalize, vamp1_score, variational_score};
use effdyn::tpt::{committor, rate_count, rate_energy, rate_flux, SetPair};
use effdyn::{fixtures, sample_chain, solve_spectrum, ObjectiveWeights, Result};

use crate::run::{write_json, RunContext};

#[derive(Debug, Serialize)]
struct CheckEntry {
    name: String,
    pass: bool,
    detail: String,
}

struct Suite {
    entries: Vec<CheckEntry>,
}

impl Suite {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.entries.push(CheckEntry {
            name: name.to_string(),
            pass,
            detail,
        });
    }

    fn run(&mut self, name: &str, body: impl FnOnce() -> Result<(bool, String)>) {
        match body() {
            Ok((pass, detail)) => self.check(name, pass, detail),
            Err(e) => self.check(name, false, format!("error: {e}")),
        }
    }
}

pub fn cmd_verify_all(ctx: &RunContext) -> Result<i32> {
    let seed = ctx.seed;
    let mut suite = Suite {
        entries: Vec::new(),
    };

    suite.run("fixture-spectra", || {
        let s = solve_spectrum(&fixtures::bd3(), 3)?;
        let expect = [1.0, 0.5, 0.0];
        let worst = s
            .eigenvalues
            .iter()
            .zip(expect)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok((worst < 1e-12, format!("bd3 eigenvalue error {worst:.2e}")))
    });

    suite.run("fixture-committor-rates", || {
        let m = fixtures::bd4();
        let sets = SetPair::new(vec![0], vec![3], 4)?;
        let q = committor(&m, &sets)?;
        let (ka, kb) = rate_flux(&m, &sets, &q);
        let ke = rate_energy(&m, &q);
        let ok = (q[1] - 1.0 / 3.0).abs() < 1e-12
            && (q[2] - 2.0 / 3.0).abs() < 1e-12
            && (ka - 1.0 / 48.0).abs() < 1e-14
            && (kb - ka).abs() < 1e-14
            && (ke - ka).abs() < 1e-14;
        Ok((ok, format!("q = {q:?}, k = {ka}")))
    });

    suite.run("fixture-effective-rate-identity", || {
        let m = fixtures::bd4();
        let cv = CvAssignment::from_fibers(&[vec![0], vec![1, 2], vec![3]], 4)?;
        let cmp = rate_comparison(&m, &cv, &[0], &[2])?;
        let ok = (cmp.k_full - 1.0 / 48.0).abs() < 1e-14
            && (cmp.k_eff - 1.0 / 32.0).abs() < 1e-14
            && (cmp.gap - 1.0 / 96.0).abs() < 1e-14
            && (cmp.q_eff[1] - 0.5).abs() < 1e-14
            && (cmp.k_eff - cmp.k_full - cmp.gap).abs() < 1e-12;
        Ok((
            ok,
            format!(
                "k = {}, k_eff = {}, gap = {}",
                cmp.k_full, cmp.k_eff, cmp.gap
            ),
        ))
    });

    suite.run("rate-triple-agreement", || {
        let mut rng = effdyn::rng::seeded(seed ^ 0x5eed0001);
        let mut worst: f64 = 0.0;
        for _ in 0..60 {
            use rand::Rng;
            let n = rng.gen_range(4..=12);
            let m = fixtures::random_reversible(&mut rng, n);
            let sets = fixtures::random_set_pair(&mut rng, n);
            let q = committor(&m, &sets)?;
            let (ka, kb) = rate_flux(&m, &sets, &q);
            let ke = rate_energy(&m, &q);
            worst = worst.max((ka - kb).abs()).max((ka - ke).abs());
        }
        Ok((worst < 1e-10, format!("worst disagreement {worst:.2e}")))
    });

    suite.run("counted-rate", || {
        let m = fixtures::bd4();
        let sets = SetPair::new(vec![0], vec![3], 4)?;
        let chain = sample_chain(&m, 300_000, seed ^ 0x5eed0002, 0);
        let rc = rate_count(&chain, &sets, 300_000)?;
        let gap = (rc.rate - 1.0 / 48.0).abs();
        Ok((
            gap < 3.0 * rc.stderr,
            format!("count {} +- {} vs 1/48", rc.rate, rc.stderr),
        ))
    });

    suite.run("variational-bound", || {
        use rand::Rng;
        let mut rng = effdyn::rng::seeded(seed ^ 0x5eed0003);
        let mut worst_violation: f64 = 0.0;
        let mut done = 0;
        while done < 60 {
            let n = rng.gen_range(4..=12);
            let m = fixtures::random_reversible(&mut rng, n);
            let s = solve_spectrum(&m, n)?;
            let mcount = rng.gen_range(1..=3.min(n - 1));
            let raw: Vec<Vec<f64>> = (0..mcount)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let Some(fs) = orthonormalize(&m, &raw) else {
                continue;
            };
            let w = ObjectiveWeights::uniform(mcount);
            let score = variational_score(&m, &fs, &w)?;
            let vamp = vamp1_score(&m, &fs, &w)?;
            let bound: f64 = (1..=mcount).map(|i| 1.0 - s.eigenvalues[i]).sum();
            worst_violation = worst_violation
                .max(bound - score)
                .max((score + vamp - mcount as f64).abs());
            done += 1;
        }
        Ok((
            worst_violation < 1e-8,
            format!("worst bound/complement violation {worst_violation:.2e}"),
        ))
    });

    suite.run("effective-structure", || {
        use rand::Rng;
        let mut rng = effdyn::rng::seeded(seed ^ 0x5eed0004);
        let mut worst: f64 = 0.0;
        for _ in 0..40 {
            let n = rng.gen_range(4..=12);
            let m = fixtures::random_reversible(&mut rng, n);
            let k = rng.gen_range(2..=n - 1);
            let cv = fixtures::random_assignment(&mut rng, n, k);
            let eff = build_effective(&m, &cv)?;
            eff.model.validate()?;
            worst = worst.max(eff.model.detailed_balance_residual());
            let f_red: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h_red: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (r1, r2) = effdyn::effective::lemma_identity_check(&m, &eff, &f_red, &h_red);
            worst = worst.max(r1).max(r2);
            worst = worst.max(crate::run::adjoint_routes_agree(&m, &cv)?);
            let e_red = dirichlet_energy(&eff.model, &f_red);
            let e_full = dirichlet_energy(&m, &eff.lift(&f_red));
            worst = worst.max((e_red - e_full).abs());
        }
        Ok((
            worst < 1e-10,
            format!("worst structural residual {worst:.2e}"),
        ))
    });

    suite.run("composition-diagram", || {
        use rand::Rng;
        let mut rng = effdyn::rng::seeded(seed ^ 0x5eed0005);
        let mut worst: f64 = 0.0;
        for _ in 0..40 {
            let n = rng.gen_range(5..=12);
            let m = fixtures::random_reversible(&mut rng, n);
            let k = rng.gen_range(3..=n - 1);
            let cv = fixtures::random_assignment(&mut rng, n, k);
            let k_out = rng.gen_range(2..k);
            let f = fixtures::random_surjection(&mut rng, k, k_out);
            worst = worst.max(effdyn::effective::compose_check(&m, &cv, &f, k_out)?);
        }
        Ok((
            worst < 1e-12,
            format!("worst composition residual {worst:.2e}"),
        ))
    });

    suite.run("kl-optimality", || {
        use rand::Rng;
        let mut rng = effdyn::rng::seeded(seed ^ 0x5eed0006);
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let n = rng.gen_range(4..=9);
            let m = fixtures::random_reversible(&mut rng, n);
            let k = rng.gen_range(2..=n - 1);
            let cv = fixtures::random_assignment(&mut rng, n, k);
            let score = kl_score(&m, &cv)?;
            let opt = optimal_factorization(&m, &cv)?;
            let at_opt = kl_of_candidate(&m, &cv, &opt)?;
            worst = worst.max((at_opt.value - score).abs());
            for _ in 0..20 {
                let mut cand = opt.clone();
                for z in 0..k {
                    let row: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
                    let s: f64 = row.iter().sum();
                    for (w, v) in row.iter().enumerate() {
                        cand.g_red[(z, w)] = v / s;
                    }
                }
                let r = kl_of_candidate(&m, &cv, &cand)?;
                worst = worst.max(score - r.value);
            }
        }
        // identity CV scores zero, single bin reduces to mutual information
        let m = fixtures::bd3();
        worst = worst.max(kl_score(&m, &CvAssignment::identity(3))?.abs());
        worst =
            worst.max((kl_score(&m, &CvAssignment::single_bin(3))? - mutual_information(&m)).abs());
        Ok((worst < 1e-12, format!("worst kl violation {worst:.2e}")))
    });

    suite.run("eigen-comparison", || {
        use rand::Rng;
        let mut rng = effdyn::rng::seeded(seed ^ 0x5eed0007);
        let mut worst: f64 = 0.0;
        for _ in 0..60 {
            let n = rng.gen_range(4..=12);
            let m = fixtures::random_reversible(&mut rng, n);
            let k = rng.gen_range(2..=n - 1);
            let cv = fixtures::random_assignment(&mut rng, n, k);
            let rows = eigen_comparison(&m, &cv, 3.min(k - 1).max(1))?;
            for r in &rows {
                if r.i == r.j {
                    worst = worst.max(r.lambda_eff - r.lambda_full);
                }
                worst = worst.max(r.identity_residual);
            }
        }
        Ok((
            worst < 1e-8,
            format!("worst comparison residual {worst:.2e}"),
        ))
    });

    suite.run("fiber-constant-preservation", || {
        let m = fixtures::bd3();
        let cv = CvAssignment::from_fibers(&[vec![0, 2], vec![1]], 3)?;
        let eff = build_effective(&m, &cv)?;
        let spec_eff = solve_spectrum(&eff.model, 2)?;
        let spec = solve_spectrum(&m, 3)?;
        let lifted = lift(&cv, &spec_eff.eigenvector(1));
        let phi2 = spec.eigenvector(2);
        let align = lifted
            .iter()
            .zip(&phi2)
            .map(|(a, b)| (a.abs() - b.abs()).abs())
            .fold(0.0_f64, f64::max);
        let ok = spec_eff.eigenvalues[1].abs() < 1e-12 && align < 1e-10;
        Ok((
            ok,
            format!(
                "preserved eigenvalue {}, eigenvector gap {align:.2e}",
                spec_eff.eigenvalues[1]
            ),
        ))
    });

    suite.run("simulation-determinism", || {
        let pot = effdyn::Potential::DoubleWell1d;
        let cfg = effdyn::SimConfig::new(2.0, 0.01, seed ^ 0x5eed0008, 20_000, vec![1.0]);
        let a = effdyn::simulate_em(&pot, &cfg)?;
        let b = effdyn::simulate_em(&pot, &cfg)?;
        Ok((a.positions == b.positions, "two runs bit-identical".into()))
    });

    suite.run("trajectory-losses-finite", || {
        let m = fixtures::bd4();
        let cv = CvAssignment::from_fibers(&[vec![0, 1], vec![2, 3]], 4)?;
        let ok = crate::run::losses_are_finite(&m, &cv, seed ^ 0x5eed0009)?;
        Ok((ok, "losses finite on sampled chain".into()))
    });

    suite.run("langevin-balance", || {
        let pot = effdyn::Potential::Harmonic {
            stiffness: 1.0,
            dim: 1,
        };
        let cfg = effdyn::SimConfig::new(1.0, 0.005, seed ^ 0x5eed000a, 400_000, vec![0.0])
            .with_gamma(1.0)
            .with_guard(40.0);
        let grid = effdyn::Grid::new_1d(-3.5, 3.5, 10)?;
        let model = effdyn::langevin::marginal_model(&pot, &cfg, 50, &grid)?;
        let pi = effdyn::langevin::gibbs_reference_for(&model, &pot, cfg.beta)?;
        let report = effdyn::langevin::detailed_balance_report(&model, &pi)?;
        Ok((
            report.verdict,
            format!(
                "residual {:.3e} vs stderr {:.3e}",
                report.residual, report.stderr
            ),
        ))
    });

    let all_pass = suite.entries.iter().all(|e| e.pass);
    for e in &suite.entries {
        println!("{}: {}", if e.pass { "ok  " } else { "FAIL" }, e.name);
    }
    let report = json!({
        "seed": seed,
        "all_pass": all_pass,
        "checks": suite.entries,
    });
    write_json(&ctx.out_dir, "verify_report.json", &report)?;

    // fixture spectra as stable csv artifacts
    let mut csv = Vec::new();
    solve_spectrum(&fixtures::bd3(), 3)?.write_csv(&mut csv, 1.0)?;
    crate::run::write_atomic(&ctx.out_dir.join("bd3_spectrum.csv"), &csv)?;

    let code = ctx.finish(
        "verify-all",
        &["verify_report.json".into(), "bd3_spectrum.csv".into()],
        &[all_pass],
    )?;
    Ok(if all_pass { code } else { 3 })
}
