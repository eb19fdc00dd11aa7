//! Release gate: every shipped guarantee, each as one test with its stated
//! tolerance and runtime budget. The harness prints one pass/fail line per
//! criterion.

use std::fs;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use privynth::lti::{LtiSystem, StackedSystem};
use privynth::{baselines, estimation, hvac, linalg, mechanism, montecarlo, random};
use rand::Rng;

fn observable_stack(
    rng: &mut impl Rng,
    n: usize,
    p: usize,
    horizon: usize,
    radius: f64,
) -> StackedSystem {
    loop {
        let (a, c) = random::random_stable_system(rng, n, p, radius);
        let system = LtiSystem::autonomous(a, c).unwrap();
        let stacked = system.stack(horizon).unwrap();
        if stacked.observability().full_column_rank {
            return stacked;
        }
    }
}

/// Criterion 1: the synthesized covariance reproduces the prescribed
/// confusion to 1e-8 relative on 100 random observable instances, in 10 s.
#[test]
fn criterion_01_prescription_exactness() {
    let started = Instant::now();
    let mut rng = random::master_rng(0xC1);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(2..=6);
        let p = rng.random_range(1..=3);
        let k = rng.random_range(n..=8.max(n));
        let stacked = observable_stack(&mut rng, n, p, k, 0.9);
        let cond = rng.random_range(1.0..=100.0);
        let sigma_v = random::random_spd(&mut rng, n, cond);

        let design = mechanism::design_optimal(&stacked, &sigma_v, None).unwrap();
        // Independent recomputation through the adversary path.
        let achieved = estimation::confusion_covariance(&stacked, &design.sigma).unwrap();
        let residual = linalg::rel_frobenius(&achieved, &sigma_v);
        assert!(
            residual <= 1e-8,
            "case {case}: residual {residual:.3e} exceeds 1e-8"
        );
        worst = worst.max(residual);
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() <= 10.0,
        "runtime {elapsed:?} over the 10 s budget"
    );
    println!("criterion 1 PASS: worst residual {worst:.3e} over 100 instances in {elapsed:?}");
}

/// Criterion 2: the reported optimum level equals the analytic one, no
/// random feasible member exceeds it, and the distortion bound holds.
#[test]
fn criterion_02_optimality_certificates() {
    let mut rng = random::master_rng(0xC2);
    for case in 0..10u64 {
        let n = rng.random_range(2..=4);
        let p = rng.random_range(1..=2);
        let k = rng.random_range(n..=7.max(n));
        let stacked = observable_stack(&mut rng, n, p, k, 0.9);
        let sigma_v = random::random_spd(&mut rng, n, 50.0);
        let design = mechanism::design_optimal(&stacked, &sigma_v, None).unwrap();

        // Reference level from scratch: the smallest precision eigenvalue
        // any feasible design can offer is 1/λ_max(√Σ_v·Wo·√Σ_v).
        let sqrt_sv = linalg::spd_sqrt(&sigma_v, "Sigma_v").unwrap();
        let core = linalg::symmetrize(&(&sqrt_sv * &stacked.gramian * &sqrt_sv));
        let lam_max = linalg::max_eigenvalue_sym(&core);
        let beta_ref = 1.0 / lam_max;
        let scale = beta_ref.max(1.0);
        assert!(
            (design.beta_opt - beta_ref).abs() <= 1e-8 * scale,
            "case {case}: reported level {} vs analytic {beta_ref}",
            design.beta_opt
        );

        // λ_min of the synthesized precision sits at that level.
        let lam_min_precision = 1.0 / linalg::max_eigenvalue_sym(&design.sigma);
        assert!(
            (lam_min_precision - beta_ref).abs() <= 1e-8 * scale,
            "case {case}: precision floor {lam_min_precision} vs {beta_ref}"
        );

        // 200 random members of the feasible family never beat it.
        let family = mechanism::SolutionFamily::build(&stacked, &sigma_v).unwrap();
        let probe = mechanism::probe_beta_optimality(&family, design.beta_opt, 200, 0xBEEF + case);
        assert!(
            probe.certified(1e-8 * scale),
            "case {case}: member exceeded the level by {:.3e}",
            probe.max_min_eigenvalue - probe.bound
        );

        // Distortion certificate: eps_opt = pK·λ_max(Σ_v·Wo), and the
        // default design never spends more than it.
        let pk = stacked.stacked_dim() as f64;
        let eps_ref = pk * lam_max;
        assert!(
            (design.eps_opt - eps_ref).abs() <= 1e-10 * eps_ref.max(1.0),
            "case {case}: eps_opt {} vs {eps_ref}",
            design.eps_opt
        );
        assert!(
            design.trace <= design.eps_opt + 1e-6,
            "case {case}: trace {} over the bound {}",
            design.trace,
            design.eps_opt
        );
    }
    println!("criterion 2 PASS: certificates match analytic levels on 10 instances, 200 probes each");
}

/// Criterion 3: when the release has exactly as many coordinates as the
/// state, the feasible family collapses to a single precision.
#[test]
fn criterion_03_square_release_pins_the_design() {
    let mut rng = random::master_rng(0xC3);
    for case in 0..20u64 {
        let p = rng.random_range(1..=2);
        let k = rng.random_range(2..=4);
        let n = p * k;
        let stacked = observable_stack(&mut rng, n, p, k, 0.9);
        assert_eq!(stacked.stacked_dim(), n);
        let sigma_v = random::random_spd(&mut rng, n, 20.0);
        let family = mechanism::SolutionFamily::build(&stacked, &sigma_v).unwrap();
        let base = family.base_precision();
        let scale = base.amax().max(1.0);

        let pk = stacked.stacked_dim();
        for probe in 0..2 {
            let r = random::standard_normal_matrix(&mut rng, pk, pk) * 5.0;
            let member = family.member(&r);
            let dev = (&member - &base).amax();
            assert!(
                dev <= 1e-10 * scale,
                "case {case} probe {probe}: member deviates by {dev:.3e} (scale {scale:.3e})"
            );
        }
    }
    println!("criterion 3 PASS: 20 square releases, members elementwise equal to the base precision");
}

/// Criterion 4: 1e5 adversary trials land within 5% of the prescription
/// with bias at the unbiased-estimator noise floor, in 60 s.
#[test]
fn criterion_04_monte_carlo_covariance_match() {
    let started = Instant::now();
    let system = LtiSystem::autonomous(
        DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.0, 0.9]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .unwrap();
    let stacked = system.stack(10).unwrap();
    let sigma_v = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
    let design = mechanism::design_optimal(&stacked, &sigma_v, None).unwrap();

    let trials = 100_000;
    let cfg = montecarlo::TrialConfig {
        trials,
        seed: 4,
        gamma: montecarlo::chi2_quantile(2, 0.05).unwrap(),
        alpha: Some(0.05),
        ellipsoid_cov: Some(sigma_v.clone()),
    };
    let x0 = DVector::from_vec(vec![1.0, -2.0]);
    let u = DVector::zeros(10);
    let report =
        montecarlo::run_adversary_trials(&system, 10, &x0, &u, &design.sigma, &cfg).unwrap();

    let rel = linalg::rel_frobenius(&report.empirical_cov, &sigma_v);
    assert!(rel <= 0.05, "empirical covariance off by {rel:.4}");
    let bias_bound = 4.0 * (sigma_v.trace() / trials as f64).sqrt();
    assert!(
        report.mean_bias_norm <= bias_bound,
        "bias {} over {bias_bound}",
        report.mean_bias_norm
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() <= 60.0, "runtime {elapsed:?} over 60 s");
    println!(
        "criterion 4 PASS: rel error {rel:.4}, bias {:.2e} <= {bias_bound:.2e} in {elapsed:?}",
        report.mean_bias_norm
    );
}

/// Criterion 5: the confidence ellipsoid covers the nominal fraction, and
/// the chi-square quantile matches the two-dimensional closed form.
#[test]
fn criterion_05_coverage_calibration() {
    let q = montecarlo::chi2_quantile(2, 0.05).unwrap();
    let closed_form = -2.0 * 0.05f64.ln();
    assert!(
        (q - closed_form).abs() <= 1e-4,
        "chi2 quantile {q} vs closed form {closed_form}"
    );

    let system = LtiSystem::autonomous(
        DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.0, 0.9]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .unwrap();
    let stacked = system.stack(10).unwrap();
    let sigma_v = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
    let design = mechanism::design_optimal(&stacked, &sigma_v, None).unwrap();
    let cfg = montecarlo::TrialConfig {
        trials: 100_000,
        seed: 5,
        gamma: q,
        alpha: Some(0.05),
        ellipsoid_cov: Some(sigma_v.clone()),
    };
    let x0 = DVector::from_vec(vec![0.5, 0.25]);
    let u = DVector::zeros(10);
    let report =
        montecarlo::run_adversary_trials(&system, 10, &x0, &u, &design.sigma, &cfg).unwrap();
    assert!(
        (0.945..=0.955).contains(&report.coverage_rate),
        "coverage {} outside [0.945, 0.955]",
        report.coverage_rate
    );
    println!(
        "criterion 5 PASS: coverage {:.4} at gamma {q:.5}",
        report.coverage_rate
    );
}

/// Criterion 6: isotropic noise scales the inverse gramian exactly, and the
/// infinite-horizon gramian solves its fixed-point equation.
#[test]
fn criterion_06_isotropic_shape_and_steady_state_gramian() {
    let mut rng = random::master_rng(0xC6);
    let stacked = observable_stack(&mut rng, 3, 2, 5, 0.9);
    let wo_inv = linalg::spd_inverse(&stacked.gramian, "gramian").unwrap();
    for sigma in [0.5, 1.0, 10.0] {
        let eye = DMatrix::identity(stacked.stacked_dim(), stacked.stacked_dim()) * sigma;
        let conf = estimation::confusion_covariance(&stacked, &eye).unwrap();
        let expected = &wo_inv * sigma;
        let rel = linalg::rel_frobenius(&conf, &expected);
        assert!(rel <= 1e-10, "sigma {sigma}: shape error {rel:.3e}");
    }

    for seed in 0..20u64 {
        let mut rng = random::master_rng(0x600 + seed);
        let n = rng.random_range(2..=5);
        let p = rng.random_range(1..=2);
        let (a, c) = random::random_stable_system(&mut rng, n, p, 0.8);
        let system = LtiSystem::autonomous(a.clone(), c.clone()).unwrap();
        let w = system.steady_state_gramian().unwrap();
        let residual = (a.transpose() * &w * &a - &w + c.transpose() * &c).norm();
        assert!(
            residual <= 1e-10 * w.norm().max(1.0),
            "seed {seed}: fixed-point residual {residual:.3e}"
        );
    }

    // Finite stacks converge to the steady state once transients die.
    let mut rng = random::master_rng(0xC66);
    let (a, c) = random::random_stable_system(&mut rng, 3, 1, 0.5);
    let system = LtiSystem::autonomous(a, c).unwrap();
    let w_inf = system.steady_state_gramian().unwrap();
    let w_50 = system.stack(50).unwrap().gramian;
    let gap = (&w_50 - &w_inf).norm();
    assert!(gap <= 1e-6, "finite-horizon gap {gap:.3e}");
    println!("criterion 6 PASS: isotropic shape 1e-10, 20 fixed points, horizon-50 gap {gap:.2e}");
}

/// Brute-force oracle for the 2x2 maximum-volume problem: nested grid over
/// SPD matrices with the trace pinned to the budget.
fn oracle_2x2(stacked: &StackedSystem, budget: f64) -> f64 {
    let o = stacked.obs.column(0).into_owned();
    let eval = |a: f64, b: f64| -> Option<f64> {
        let c = budget - a;
        let det = a * c - b * b;
        if a <= 0.0 || c <= 0.0 || det <= 1e-12 {
            return None;
        }
        let q = (c * o[0] * o[0] - 2.0 * b * o[0] * o[1] + a * o[1] * o[1]) / det;
        if q <= 0.0 {
            return None;
        }
        Some(-q.ln())
    };
    let mut best = f64::NEG_INFINITY;
    let (mut a_lo, mut a_hi) = (1e-6, budget - 1e-6);
    let (mut b_lo, mut b_hi) = (-budget / 2.0, budget / 2.0);
    for _ in 0..6 {
        let (mut best_a, mut best_b) = (a_lo, 0.0);
        for i in 0..=160 {
            let a = a_lo + (a_hi - a_lo) * i as f64 / 160.0;
            for j in 0..=160 {
                let b = b_lo + (b_hi - b_lo) * j as f64 / 160.0;
                if let Some(g) = eval(a, b) {
                    if g > best {
                        best = g;
                        best_a = a;
                        best_b = b;
                    }
                }
            }
        }
        let a_span = (a_hi - a_lo) / 10.0;
        let b_span = (b_hi - b_lo) / 10.0;
        a_lo = (best_a - a_span).max(1e-9);
        a_hi = (best_a + a_span).min(budget - 1e-9);
        b_lo = best_b - b_span;
        b_hi = best_b + b_span;
    }
    best
}

fn log_det(m: &DMatrix<f64>) -> f64 {
    let chol = linalg::cholesky_spd(m, "log-det argument").unwrap();
    let l = chol.l();
    2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Criterion 7: entropy maximizer against a brute-force oracle, active
/// budget, gradient-vs-finite-difference agreement, and the matched-budget
/// case-study comparison coming out indefinite.
#[test]
fn criterion_07_entropy_oracle_and_matched_budget_indefiniteness() {
    for (a, c, budget) in [(2.0, 1.0, 10.0), (0.6, 1.5, 4.0), (-1.2, 0.8, 25.0)] {
        let stacked = LtiSystem::autonomous(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, c),
        )
        .unwrap()
        .stack(2)
        .unwrap();
        let design = baselines::design_entropy(&stacked, budget, 5000, 1e-8).unwrap();
        let achieved = log_det(
            &estimation::confusion_covariance(&stacked, &design.sigma).unwrap(),
        );
        let oracle = oracle_2x2(&stacked, budget);
        assert!(
            (achieved - oracle).abs() <= 1e-4,
            "(a={a}, c={c}): achieved {achieved} vs oracle {oracle}"
        );
        assert!(
            (design.sigma.trace() - budget).abs() <= 1e-6 * budget,
            "(a={a}, c={c}): budget not active"
        );
    }

    // The ascent direction of the volume objective against central
    // differences, entry by entry, on a generic instance.
    let mut rng = random::master_rng(0xC7);
    let stacked = observable_stack(&mut rng, 2, 1, 4, 0.9);
    let sigma = random::random_spd(&mut rng, 4, 10.0);
    let objective = |s: &DMatrix<f64>| -> f64 {
        log_det(&estimation::confusion_covariance(&stacked, s).unwrap())
    };
    let chol = linalg::cholesky_spd(&sigma, "Sigma").unwrap();
    let white = chol.solve(&stacked.obs);
    let info = linalg::symmetrize(&(stacked.obs.transpose() * &white));
    let half = linalg::cholesky_spd(&info, "information")
        .unwrap()
        .solve(&white.transpose());
    let analytic = linalg::symmetrize(&(&white * half));
    let h = 1e-5;
    for i in 0..4 {
        for j in 0..4 {
            let mut plus = sigma.clone();
            let mut minus = sigma.clone();
            plus[(i, j)] += h;
            plus[(j, i)] = plus[(i, j)];
            minus[(i, j)] -= h;
            minus[(j, i)] = minus[(i, j)];
            let fd = (objective(&plus) - objective(&minus)) / (4.0 * h);
            // Symmetric perturbations move both (i,j) and (j,i); the
            // diagonal moves once.
            let expected = if i == j {
                2.0 * fd
            } else {
                fd
            };
            assert!(
                (analytic[(i, j)] - expected).abs() <= 1e-5 * analytic.amax().max(1.0),
                "gradient[{i}][{j}] = {} vs finite difference {expected}",
                analytic[(i, j)]
            );
        }
    }

    // Matched budgets on the case study: neither confusion contains the
    // other, so the difference has eigenvalues of both signs.
    let config = hvac::CaseStudyConfig {
        horizon: 3,
        trials: 400,
        ..hvac::CaseStudyConfig::default()
    };
    let outcome = hvac::run_case_study(&config).unwrap();
    let pair = &outcome.comparison.pairs[0];
    let eigs = &pair.difference_eigenvalues;
    assert!(
        eigs.first().copied().unwrap_or(0.0) > 0.0 && eigs.last().copied().unwrap_or(0.0) < 0.0,
        "difference eigenvalues {eigs:?} are not indefinite"
    );
    assert_eq!(pair.containment, baselines::Containment::Incomparable);
    println!(
        "criterion 7 PASS: 3 oracles within 1e-4, gradient matches, matched-budget difference eigenvalues {:?}",
        eigs
    );
}

/// Criterion 8: a prescription built from a hidden per-step design is
/// recovered exactly, with a monotone optimization trace.
#[test]
fn criterion_08_block_diagonal_roundtrip() {
    let mut rng = random::master_rng(0xC8);
    for case in 0..3 {
        let n = 2;
        let p = rng.random_range(1..=2);
        let k = rng.random_range(3..=4);
        let stacked = observable_stack(&mut rng, n, p, k, 0.9);

        let mut hidden = DMatrix::zeros(p * k, p * k);
        for b in 0..k {
            let blk = random::random_spd(&mut rng, p, 5.0);
            hidden.view_mut((b * p, b * p), (p, p)).copy_from(&blk);
        }
        let sigma_v = estimation::confusion_covariance(&stacked, &hidden).unwrap();

        let design = privynth::structured::design_block_diagonal(&stacked, &sigma_v, 500, 1e-8)
            .unwrap();
        assert!(
            design.converged && design.e_blk <= 1e-8,
            "case {case}: e_blk {:.3e}",
            design.e_blk
        );
        for w in design.history.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-12) + 1e-18,
                "case {case}: optimization trace increased from {} to {}",
                w[0],
                w[1]
            );
        }
    }
    println!("criterion 8 PASS: 3 hidden designs recovered to 1e-8 with monotone traces");
}

/// Criterion 9: prescribed zone ellipse has the designed semi-axes, and the
/// residual bar holds across 20 sampled parameter sets, in 30 s.
#[test]
fn criterion_09_hvac_ellipse_and_residuals() {
    let started = Instant::now();
    let outcome = hvac::run_case_study(&hvac::CaseStudyConfig::default()).unwrap();
    let (long, short) = outcome.designed_ellipse.semi_axes;
    assert!(
        (long - 10.0).abs() <= 1e-6 && (short - 4.0).abs() <= 1e-6,
        "semi-axes ({long}, {short}) not (10, 4)"
    );

    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let config = hvac::CaseStudyConfig {
            seed,
            trials: 200,
            ..hvac::CaseStudyConfig::default()
        };
        let outcome = hvac::run_case_study(&config).unwrap();
        assert!(
            outcome.designed.residual <= 1e-8,
            "seed {seed}: residual {:.3e}",
            outcome.designed.residual
        );
        worst = worst.max(outcome.designed.residual);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() <= 30.0, "runtime {elapsed:?} over 30 s");
    println!(
        "criterion 9 PASS: semi-axes (10, 4) within 1e-6, worst residual {worst:.3e} over 20 seeds in {elapsed:?}"
    );
}

/// Criterion 10: identical seeds give byte-identical reports once the
/// timestamp line is dropped.
#[test]
fn criterion_10_byte_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let strip_timestamp = |text: &str| -> String {
        text.lines()
            .filter(|l| !l.contains("timestamp_unix"))
            .collect::<Vec<_>>()
            .join("\n")
    };

    let mut texts = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("cs{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_privynth"))
            .args(["casestudy", "--seed", "7", "--trials", "300"])
            .args(["--out", out.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(status.success());
        texts.push(strip_timestamp(
            &fs::read_to_string(out.join("report.json")).unwrap(),
        ));
    }
    assert_eq!(texts[0].len(), texts[1].len());
    assert!(texts[0] == texts[1], "case-study reports differ beyond the timestamp");

    let sys = tmp.path().join("sys.json");
    fs::write(&sys, r#"{"A": [[0.8, 0.2], [0.0, 0.9]], "C": [[1.0, 0.0]]}"#).unwrap();
    let sv = tmp.path().join("sv.json");
    fs::write(&sv, "[[4.0, 1.0], [1.0, 3.0]]").unwrap();
    let mut texts = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("sim{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_privynth"))
            .args(["simulate", "--system", sys.to_str().unwrap()])
            .args(["--sigma-v", sv.to_str().unwrap()])
            .args(["-K", "8", "--trials", "500", "--seed", "21"])
            .args(["--out", out.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(status.success());
        texts.push(strip_timestamp(
            &fs::read_to_string(out.join("report.json")).unwrap(),
        ));
    }
    assert!(texts[0] == texts[1], "simulate reports differ beyond the timestamp");
    println!("criterion 10 PASS: byte-identical reports for casestudy and simulate reruns");
}
