//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test -p diffsci --test acceptance -- --nocapture` to see them.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diffsci::bands::BandPlan;
use diffsci::commands::{ablate_problem, Axis, Problem};
use diffsci::config::RunConfig;
use diffsci::cube::even_wavelengths;
use diffsci::metrics;
use diffsci::solver::{
    adjoint_initialization, data_step_closed_form, BaselineConfig, MuSchedule, PlanSpec,
};
use diffsci::*;

const OPERATOR_TOL: f64 = 1e-10;
const OPERATOR_BUDGET: Duration = Duration::from_secs(1);
const CLOSED_FORM_TOL: f64 = 1e-6;
const CLOSED_FORM_BUDGET: Duration = Duration::from_secs(1);
const RECOVERY_TOL: f64 = 1e-10;
const ORACLE_PSNR_DB: f64 = 60.0;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const BASELINE_GAIN_DB: f64 = 3.0;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn line(o: &Outcome) -> String {
    format!(
        "{} {}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.name,
        o.detail
    )
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

/// Dense system matrix straight from the definition: entry
/// `((h, w + d*b), (h, w, b)) = mask(h, w)`, band-major columns.
fn dense_phi(mask: &CodedMask, d: usize, bands: usize) -> DMatrix<f64> {
    let (h, w) = (mask.height(), mask.width());
    let wp = w + d * (bands - 1);
    let mut m = DMatrix::zeros(h * wp, h * w * bands);
    for b in 0..bands {
        for r in 0..h {
            for c in 0..w {
                m[(r * wp + c + d * b, b * h * w + r * w + c)] = mask.get(r, c);
            }
        }
    }
    m
}

fn random_cube(rng: &mut ChaCha8Rng, h: usize, w: usize, b: usize) -> SpectralCube {
    SpectralCube::from_vec(
        h,
        w,
        b,
        even_wavelengths(b, 450.0, 650.0),
        (0..h * w * b).map(|_| rng.random()).collect(),
    )
    .unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> CodedMask {
    CodedMask::new(h, w, (0..h * w).map(|_| rng.random()).collect()).unwrap()
}

fn operator_correctness() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (h, w, b, d) = (
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(1..=4),
            rng.random_range(0..=2),
        );
        let mask = random_mask(&mut rng, h, w);
        let op = CassiOperator::new(mask.clone(), d, b).unwrap();
        let phi = dense_phi(&mask, d, b);
        let x = random_cube(&mut rng, h, w, b);
        let yv: Vec<f64> = (0..phi.nrows()).map(|_| rng.random()).collect();
        let y = Measurement::new(h, op.measurement_width(), d, yv.clone(), 0.0).unwrap();

        let ax = op.apply(&x).unwrap();
        let dense_ax = &phi * DVector::from_column_slice(x.data());
        worst = worst.max(rel(ax.data(), dense_ax.as_slice()));

        let aty = op.adjoint(&y, x.wavelengths()).unwrap();
        let dense_aty = phi.transpose() * DVector::from_column_slice(&yv);
        worst = worst.max(rel(aty.data(), dense_aty.as_slice()));

        let diag = op.diag_phi_phi_t();
        let dense_diag = (&phi * phi.transpose()).diagonal();
        worst = worst.max(rel(&diag.data, dense_diag.as_slice()));

        let lhs: f64 = ax.data().iter().zip(&yv).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE));
    }
    let elapsed = started.elapsed();
    Outcome {
        name: "operator correctness",
        pass: worst <= OPERATOR_TOL && elapsed < OPERATOR_BUDGET,
        detail: format!("worst relative error {worst:.2e} (tol {OPERATOR_TOL:.0e}), {elapsed:.2?}"),
    }
}

fn closed_form_data_step() -> Outcome {
    // only the data step counts toward the budget, not the dense solve
    let mut elapsed = Duration::ZERO;
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = random_mask(&mut rng, 8, 8);
        let op = CassiOperator::new(mask.clone(), 1, 4).unwrap();
        let z = random_cube(&mut rng, 8, 8, 4);
        let yv: Vec<f64> = (0..8 * 11).map(|_| rng.random()).collect();
        let y = Measurement::new(8, 11, 1, yv.clone(), 0.0).unwrap();
        let mu = rng.random_range(0.05..2.0);
        let started = Instant::now();
        let x = data_step_closed_form(&op, &y, &z, mu).unwrap();
        elapsed += started.elapsed();

        let phi = dense_phi(&mask, 1, 4);
        let n = phi.ncols();
        let lhs = phi.transpose() * &phi + DMatrix::identity(n, n) * mu;
        let rhs = phi.transpose() * DVector::from_column_slice(&yv)
            + DVector::from_column_slice(z.data()) * mu;
        let solved = lhs.lu().solve(&rhs).unwrap();
        worst = worst.max(rel(x.data(), solved.as_slice()));
    }
    Outcome {
        name: "closed-form data step",
        pass: worst <= CLOSED_FORM_TOL && elapsed < CLOSED_FORM_BUDGET,
        detail: format!(
            "worst relative error {worst:.2e} (tol {CLOSED_FORM_TOL:.0e}), {elapsed:.2?}"
        ),
    }
}

fn schedule_algebra() -> Outcome {
    let s = DiffusionSchedule::default();
    let monotone = (1..=s.steps()).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = random_cube(&mut rng, 6, 5, 3);
    let mut worst = 0.0f64;
    for t in [1, 10, 250, 600, 999] {
        let eps = schedule::gaussian_like(&x0, &mut rng);
        let xt = s.forward_with_noise(&x0, t, &eps).unwrap();
        // exact score of the forward marginal at x_t
        let k = -1.0 / (1.0 - s.alpha_bar(t)).sqrt();
        let score = eps.map(|e| k * e);
        let back = s.predict_clean(&xt, &score, t).unwrap();
        worst = worst.max(rel(back.data(), x0.data()));
    }

    let eps = schedule::gaussian_like(&x0, &mut rng);
    let step = |seed: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        s.reverse_step(0.0, &x0, &eps, 600, 300, &mut r).unwrap()
    };
    let deterministic = step(1).data() == step(1).data() && step(1).data() == step(2).data();
    Outcome {
        name: "schedule algebra",
        pass: monotone && worst <= RECOVERY_TOL && deterministic,
        detail: format!(
            "alpha_bar monotone {monotone}, recovery error {worst:.2e} (tol {RECOVERY_TOL:.0e}), zeta=0 step bitwise repeatable {deterministic}"
        ),
    }
}

fn band_round_trip() -> Outcome {
    let mut failures = Vec::new();
    for b in [1usize, 2, 3, 6, 28] {
        let mut rng = ChaCha8Rng::seed_from_u64(b as u64);
        let c = random_cube(&mut rng, 4, 5, b);
        let plans = [
            ("sliding", BandPlan::sliding(b).unwrap()),
            (
                "wavelength_matched",
                PlanSpec::default().build(c.wavelengths()).unwrap(),
            ),
            ("partitioned", BandPlan::partitioned(b).unwrap()),
        ];
        for (name, p) in plans {
            let outs: Vec<TriImage> = (0..b).map(|i| p.extract(&c, i).unwrap()).collect();
            if p.recombine(&outs, c.wavelengths()).unwrap() != c {
                failures.push(format!("{name} B={b}"));
            }
        }
    }
    Outcome {
        name: "band adapter round trip",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "exact for B in {1,2,3,6,28}, all plans".into()
        } else {
            failures.join(", ")
        },
    }
}

fn oracle_end_to_end() -> Outcome {
    let truth = synthetic::scene(32, 32, 4, 11).unwrap();
    let op = CassiOperator::new(CodedMask::random_binary(32, 32, 12).unwrap(), 2, 4).unwrap();
    let y = op.apply(&truth).unwrap();
    let cfg = SolverConfig {
        zeta: 0.0,
        sigma_n: 0.0,
        step_count: 20,
        seed: 13,
        ..Default::default()
    };
    let prior = PriorKind::Oracle(OracleTruth::Cube(truth.clone()));
    let started = Instant::now();
    let rec = run_diffsci(
        &cfg,
        &DiffusionSchedule::default(),
        &op,
        &y,
        truth.wavelengths(),
        &prior,
        None,
    )
    .unwrap();
    let elapsed = started.elapsed();
    let psnr = metrics::mean_psnr(&rec.cube, &truth, 1.0).unwrap();
    Outcome {
        name: "oracle end-to-end",
        pass: psnr >= ORACLE_PSNR_DB && elapsed < ORACLE_BUDGET,
        detail: format!("{psnr:.2} dB (need {ORACLE_PSNR_DB}), {elapsed:.2?}"),
    }
}

fn baseline_gain() -> Outcome {
    let truth = synthetic::scene(32, 32, 8, 21).unwrap();
    let op = CassiOperator::new(CodedMask::random_binary(32, 32, 22).unwrap(), 2, 8).unwrap();
    let y = op.simulate(&truth, 0.02, 23).unwrap();
    let cfg = SolverConfig {
        sigma_n: 0.02,
        ..Default::default()
    };
    let base = BaselineConfig {
        iterations: 10,
        mu: MuSchedule::FromSigma(0.1),
        denoise_sigma: 0.1,
    };
    let prior = PriorKind::gaussian_shrink(1.0).unwrap();
    let rec = run_pnp_baseline(
        &cfg,
        &DiffusionSchedule::default(),
        &op,
        &y,
        truth.wavelengths(),
        &prior,
        &base,
        None,
    )
    .unwrap();
    let init = adjoint_initialization(&op, &y, truth.wavelengths()).unwrap();
    let p0 = metrics::mean_psnr(&init, &truth, 1.0).unwrap();
    let p10 = metrics::mean_psnr(&rec.cube, &truth, 1.0).unwrap();
    Outcome {
        name: "prior improves over adjoint baseline",
        pass: p10 - p0 >= BASELINE_GAIN_DB,
        detail: format!("adjoint {p0:.2} dB, 10 iterations {p10:.2} dB, gain {:.2} dB (need {BASELINE_GAIN_DB})", p10 - p0),
    }
}

fn acceleration_direction() -> Outcome {
    let s = DiffusionSchedule::default();
    let mut cells = Vec::new();
    let mut pass = true;
    for seed in 0..5 {
        let truth = synthetic::scene(32, 32, 4, 100 + seed).unwrap();
        let op = CassiOperator::new(CodedMask::random_binary(32, 32, 200 + seed).unwrap(), 2, 4)
            .unwrap();
        let y = op.simulate(&truth, 0.02, 300 + seed).unwrap();
        let prior = PriorKind::gaussian_shrink(1.0).unwrap();
        let run = |accelerate| {
            let cfg = SolverConfig {
                sigma_n: 0.02,
                step_count: 50,
                seed,
                accelerate,
                ..Default::default()
            };
            run_diffsci(&cfg, &s, &op, &y, truth.wavelengths(), &prior, None)
                .unwrap()
                .trace
                .final_residual()
                .unwrap()
        };
        let (on, off) = (run(true), run(false));
        pass &= on <= off;
        cells.push(format!("{on:.3}<={off:.3}"));
    }
    Outcome {
        name: "acceleration direction",
        pass,
        detail: format!(
            "final residual accelerated<=plain per seed: {}",
            cells.join(" ")
        ),
    }
}

fn ablation_table() -> Outcome {
    let values: Vec<String> = ["partitioned", "sliding", "wavelength_matched"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut cfg = RunConfig::default();
    cfg.solver.step_count = 20;
    let schedule = DiffusionSchedule::default();
    let prior = PriorKind::gaussian_shrink(1.0).unwrap();
    let mut sums = [0.0f64; 3];
    let mut ok = true;
    for seed in 0..3 {
        let truth = synthetic::scene(32, 32, 8, 400 + seed).unwrap();
        let op = CassiOperator::new(CodedMask::random_binary(32, 32, 500 + seed).unwrap(), 2, 8)
            .unwrap();
        let y = op.simulate(&truth, 0.01, 600 + seed).unwrap();
        let problem = Problem {
            op,
            y,
            wavelengths: truth.wavelengths().to_vec(),
            truth: Some(truth),
        };
        let table =
            ablate_problem(&cfg, &schedule, &problem, &prior, Axis::PlanKind, &values).unwrap();
        println!(
            "  seed {seed}\n{}",
            table
                .to_text()
                .lines()
                .map(|l| format!("    {l}"))
                .collect::<Vec<_>>()
                .join("\n")
        );
        ok &= table.rows.len() == 3 && table.rows.iter().all(|r| r.error.is_none());
        for (acc, r) in sums.iter_mut().zip(&table.rows) {
            *acc += r.psnr.unwrap_or(f64::NAN) / 3.0;
        }
    }
    let ordered = sums[2] >= sums[1] && sums[1] >= sums[0];
    Outcome {
        name: "ablation harness three-way table",
        pass: ok,
        detail: format!(
            "mean psnr partitioned {:.2}, sliding {:.2}, wavelength_matched {:.2}; ordering wm>=sliding>=partitioned {} (reported only)",
            sums[0], sums[1], sums[2], ordered
        ),
    }
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_diffsci"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn cli_artifacts(dir: &Path) -> Option<Vec<Vec<u8>>> {
    let p = |f: &str| dir.join(f).to_str().unwrap().to_string();
    let ok = run_cli(&[
        "synth",
        "--output",
        &p("truth.msic"),
        "--height",
        "16",
        "--width",
        "16",
        "--bands",
        "4",
        "--seed",
        "3",
    ]) && run_cli(&[
        "simulate",
        "--cube",
        &p("truth.msic"),
        "--mask",
        &p("mask.mask"),
        "--measurement",
        &p("y.meas"),
        "--noise",
        "0.01",
        "--noise-seed",
        "4",
    ]) && run_cli(&[
        "reconstruct",
        "--mask",
        &p("mask.mask"),
        "--measurement",
        &p("y.meas"),
        "--truth",
        &p("truth.msic"),
        "--output",
        &p("x.msic"),
        "--trace",
        &p("trace.jsonl"),
        "--steps",
        "10",
        "--seed",
        "5",
        "--zeta",
        "1",
    ]);
    ok.then(|| {
        ["mask.mask", "y.meas", "x.msic", "trace.jsonl"]
            .iter()
            .map(|f| std::fs::read(dir.join(f)).unwrap())
            .collect()
    })
}

fn cli_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (cli_artifacts(a.path()), cli_artifacts(b.path()));
    let pass = ra.is_some() && ra == rb;
    Outcome {
        name: "cli determinism",
        pass,
        detail: match (&ra, pass) {
            (None, _) => "cli run failed".into(),
            (Some(_), true) => {
                "mask, measurement, cube and trace byte-identical across runs".into()
            }
            (Some(_), false) => "artifacts differ between runs".into(),
        },
    }
}

#[test]
fn acceptance() {
    let checks: [fn() -> Outcome; 9] = [
        operator_correctness,
        closed_form_data_step,
        schedule_algebra,
        band_round_trip,
        oracle_end_to_end,
        baseline_gain,
        acceleration_direction,
        ablation_table,
        cli_determinism,
    ];
    let outcomes: Vec<Outcome> = checks.iter().map(|c| c()).collect();
    for o in &outcomes {
        println!("{}", line(o));
    }
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| o.name)
        .collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
