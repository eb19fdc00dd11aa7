//! Multi-zone thermal case study.
//!
//! Zones exchange heat through pairwise resistances; a forward-Euler
//! discretization gives the released system. Only a subset of zone
//! temperatures is published, and the designer prescribes how precisely an
//! optimal adversary may recover every zone's initial temperature.
//!
//! Case-study parameters are sampled per seed. That is load-bearing: the
//! nominal grid with equal resistances and masses has a graph automorphism
//! swapping the two unmeasured zones, so their temperature difference is
//! invisible at every release length. Sampling breaks the symmetry.
//!
//! Without an ambient leak the network conserves thermal energy, so the
//! state map always carries an eigenvalue at 1 (the uniform-temperature
//! mode) and is at best marginally stable. Coarse time steps push interior
//! modes outside the unit circle; none of the design machinery needs
//! stability, so the builder reports the spectral radius instead of
//! rejecting such models.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::baselines::{self, ComparisonReport, EntropyDesign};
use crate::error::{Error, Result};
use crate::estimation;
use crate::linalg;
use crate::lti::LtiSystem;
use crate::mechanism::{self, NoiseDesign};
use crate::montecarlo::{self, CoverageReport, PlaneEllipse, TrialConfig};
use crate::random;

/// Leak from every zone to a fixed ambient temperature.
#[derive(Debug, Clone, Copy)]
pub struct AmbientLeak {
    pub resistance: f64,
    pub temperature: f64,
}

/// Physical description of the zone network.
#[derive(Debug, Clone)]
pub struct ZoneModel {
    /// Thermal capacitance per zone, joule per kelvin.
    pub thermal_capacitance: DVector<f64>,
    /// Pairwise thermal resistance, kelvin per watt; read only on adjacent
    /// pairs.
    pub resistance: DMatrix<f64>,
    pub adjacency: DMatrix<bool>,
    /// Zones whose temperatures are released, zero-indexed.
    pub measured_zones: Vec<usize>,
    /// Discretization step, seconds.
    pub dt: f64,
    /// Optional leak to ambient; `None` keeps the network closed.
    pub ambient: Option<AmbientLeak>,
}

/// Discretized zone network plus diagnostics.
#[derive(Debug, Clone)]
pub struct ZoneSystem {
    pub system: LtiSystem,
    pub spectral_radius: f64,
    /// `dt · max_i (Σ_j 1/R_ij)/(mc)_i`. Values at or below 1 guarantee
    /// every eigenvalue stays inside the closed unit disk; between 1 and 2
    /// the fastest mode can leave it.
    pub euler_ratio: f64,
    /// True when the closed network conserves mass-weighted temperature.
    pub conserves_energy: bool,
}

/// Two-by-two grid adjacency: links (1,2), (3,4), (1,3), (2,4) one-indexed.
pub fn four_zone_adjacency() -> DMatrix<bool> {
    let mut adj = DMatrix::from_element(4, 4, false);
    for &(a, b) in &[(0usize, 1usize), (2, 3), (0, 2), (1, 3)] {
        adj[(a, b)] = true;
        adj[(b, a)] = true;
    }
    adj
}

/// Four equal zones on the grid: every resistance 0.5, every capacitance
/// 1000, zones 1 and 4 released. Unobservable as-is (see module docs);
/// useful as the nominal center of the sampling ranges.
pub fn nominal_four_zone() -> ZoneModel {
    ZoneModel {
        thermal_capacitance: DVector::from_element(4, 1000.0),
        resistance: DMatrix::from_element(4, 4, 0.5),
        adjacency: four_zone_adjacency(),
        measured_zones: vec![0, 3],
        dt: 360.0,
        ambient: None,
    }
}

fn validate_model(model: &ZoneModel) -> Result<usize> {
    let n = model.thermal_capacitance.len();
    if n == 0 {
        return Err(Error::InvalidInput("model needs at least one zone".into()));
    }
    for (i, &m) in model.thermal_capacitance.iter().enumerate() {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidInput(format!(
                "thermal capacitance of zone {i} must be positive and finite, got {m}"
            )));
        }
    }
    if model.adjacency.nrows() != n || model.adjacency.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "adjacency is {}x{}, zone count is {n}",
            model.adjacency.nrows(),
            model.adjacency.ncols()
        )));
    }
    if model.resistance.nrows() != n || model.resistance.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "resistance matrix is {}x{}, zone count is {n}",
            model.resistance.nrows(),
            model.resistance.ncols()
        )));
    }
    for i in 0..n {
        if model.adjacency[(i, i)] {
            return Err(Error::InvalidInput(format!("zone {i} adjacent to itself")));
        }
        for j in (i + 1)..n {
            if model.adjacency[(i, j)] != model.adjacency[(j, i)] {
                return Err(Error::InvalidInput(format!(
                    "adjacency not symmetric at ({i}, {j})"
                )));
            }
            if model.adjacency[(i, j)] {
                let r = model.resistance[(i, j)];
                if (r - model.resistance[(j, i)]).abs() > 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "resistance not symmetric at ({i}, {j})"
                    )));
                }
                if !(r > 0.0) || !r.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "resistance between zones {i} and {j} must be positive, got {r}"
                    )));
                }
            }
        }
    }
    if !(model.dt > 0.0) || !model.dt.is_finite() {
        return Err(Error::InvalidInput(format!(
            "time step must be positive and finite, got {}",
            model.dt
        )));
    }
    if model.measured_zones.is_empty() {
        return Err(Error::InvalidInput("no zones are measured".into()));
    }
    let mut seen = vec![false; n];
    for &z in &model.measured_zones {
        if z >= n {
            return Err(Error::InvalidInput(format!(
                "measured zone {z} out of range for {n} zones"
            )));
        }
        if seen[z] {
            return Err(Error::InvalidInput(format!("zone {z} measured twice")));
        }
        seen[z] = true;
    }
    if let Some(leak) = model.ambient {
        if !(leak.resistance > 0.0) || !leak.resistance.is_finite() {
            return Err(Error::InvalidInput(format!(
                "ambient resistance must be positive, got {}",
                leak.resistance
            )));
        }
    }
    Ok(n)
}

/// Discretize a zone model: `A = I + dt·M⁻¹·L` with the conductance
/// Laplacian L, `C` selecting the measured rows.
pub fn build_zone_system(model: &ZoneModel) -> Result<ZoneSystem> {
    let n = validate_model(model)?;

    let mut laplacian: DMatrix<f64> = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if model.adjacency[(i, j)] {
                let g = 1.0 / model.resistance[(i, j)];
                laplacian[(i, j)] += g;
                laplacian[(j, i)] += g;
                laplacian[(i, i)] -= g;
                laplacian[(j, j)] -= g;
            }
        }
    }

    let mut euler_ratio = 0.0_f64;
    let mut a = DMatrix::identity(n, n);
    for i in 0..n {
        let scale = model.dt / model.thermal_capacitance[i];
        euler_ratio = euler_ratio.max(scale * -laplacian[(i, i)]);
        for j in 0..n {
            a[(i, j)] += scale * laplacian[(i, j)];
        }
    }
    let p = model.measured_zones.len();
    let mut c = DMatrix::zeros(p, n);
    for (row, &z) in model.measured_zones.iter().enumerate() {
        c[(row, z)] = 1.0;
    }

    let system = match model.ambient {
        None => LtiSystem::autonomous(a, c)?,
        Some(leak) => {
            let mut b = DMatrix::zeros(n, 1);
            for i in 0..n {
                let s = model.dt / (model.thermal_capacitance[i] * leak.resistance);
                a[(i, i)] -= s;
                b[(i, 0)] = s * leak.temperature;
            }
            let d = DMatrix::zeros(p, 1);
            LtiSystem::new(a, b, c, d)?
        }
    };
    let spectral_radius = linalg::spectral_radius(system.a());
    Ok(ZoneSystem {
        system,
        spectral_radius,
        euler_ratio,
        conserves_energy: model.ambient.is_none(),
    })
}

/// Full case-study configuration. Resistances and capacitances are sampled
/// per run from the configured ranges.
#[derive(Debug, Clone)]
pub struct CaseStudyConfig {
    pub n_zones: usize,
    pub adjacency: DMatrix<bool>,
    pub measured_zones: Vec<usize>,
    /// Discretization step, seconds.
    pub dt: f64,
    pub ambient: Option<AmbientLeak>,
    /// Sampling range for pairwise resistances.
    pub r_range: (f64, f64),
    /// Sampling range for zone capacitances.
    pub mc_range: (f64, f64),
    /// Prescribed adversary confusion covariance, one row per zone.
    pub sigma_v: DMatrix<f64>,
    /// Requested release length; grows until the release determines the
    /// initial state.
    pub horizon: usize,
    pub max_horizon: usize,
    /// True initial zone temperatures.
    pub x0: DVector<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Tail mass for the coverage ellipsoid.
    pub alpha: f64,
    /// Level for the reported plane ellipses.
    pub ellipse_gamma: f64,
    /// State pair the ellipses are projected onto.
    pub ellipse_axes: (usize, usize),
    pub ellipse_points: usize,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        CaseStudyConfig {
            n_zones: 4,
            adjacency: four_zone_adjacency(),
            measured_zones: vec![0, 3],
            dt: 360.0,
            ambient: None,
            r_range: (0.4, 0.6),
            mc_range: (950.0, 1050.0),
            sigma_v: DMatrix::from_diagonal(&DVector::from_column_slice(&[
                16.0, 16.0, 100.0, 100.0,
            ])),
            horizon: 10,
            max_horizon: 64,
            x0: DVector::from_column_slice(&[22.0, 21.0, 23.0, 20.0]),
            trials: 2000,
            seed: 7,
            alpha: 0.05,
            ellipse_gamma: 1.0,
            ellipse_axes: (0, 3),
            ellipse_points: 256,
        }
    }
}

fn check_range(name: &str, range: (f64, f64)) -> Result<()> {
    let (lo, hi) = range;
    if !(lo > 0.0) || !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(Error::InvalidInput(format!(
            "{name} range [{lo}, {hi}] must be positive with low <= high"
        )));
    }
    Ok(())
}

/// Draw one zone model from the config's ranges.
pub fn sample_zone_model<R: Rng + ?Sized>(
    config: &CaseStudyConfig,
    rng: &mut R,
) -> Result<ZoneModel> {
    check_range("resistance", config.r_range)?;
    check_range("capacitance", config.mc_range)?;
    let n = config.n_zones;
    if n == 0 {
        return Err(Error::InvalidInput("model needs at least one zone".into()));
    }
    if config.adjacency.nrows() != n || config.adjacency.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "adjacency is {}x{}, zone count is {n}",
            config.adjacency.nrows(),
            config.adjacency.ncols()
        )));
    }
    let mut resistance = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if config.adjacency[(i, j)] {
                let r = rng.random_range(config.r_range.0..=config.r_range.1);
                resistance[(i, j)] = r;
                resistance[(j, i)] = r;
            }
        }
    }
    let thermal_capacitance = DVector::from_iterator(
        n,
        (0..n).map(|_| rng.random_range(config.mc_range.0..=config.mc_range.1)),
    );
    let model = ZoneModel {
        thermal_capacitance,
        resistance,
        adjacency: config.adjacency.clone(),
        measured_zones: config.measured_zones.clone(),
        dt: config.dt,
        ambient: config.ambient,
    };
    validate_model(&model)?;
    Ok(model)
}

/// Everything the case study produces.
#[derive(Debug, Clone)]
pub struct CaseStudyOutcome {
    /// Parameters the run actually used.
    pub model: ZoneModel,
    /// Release length actually used.
    pub horizon: usize,
    pub spectral_radius: f64,
    pub euler_ratio: f64,
    pub designed: NoiseDesign,
    pub entropy: EntropyDesign,
    pub designed_coverage: CoverageReport,
    pub entropy_coverage: CoverageReport,
    pub designed_ellipse: PlaneEllipse,
    pub entropy_ellipse: PlaneEllipse,
    pub comparison: ComparisonReport,
    /// Zone temperatures at each release step, one vector per step.
    pub states: Vec<DVector<f64>>,
    pub clean_output: DVector<f64>,
    /// One released trajectory under each mechanism, same clean output.
    pub noisy_designed: DVector<f64>,
    pub noisy_entropy: DVector<f64>,
    /// Coverage ellipsoid level, the chi-square quantile at `alpha`.
    pub coverage_gamma: f64,
}

/// Run the whole study: sample parameters, design the prescribed mechanism,
/// give the entropy baseline the same distortion budget, simulate the
/// adversary against both, and project both confusion sets onto the
/// configured zone pair.
pub fn run_case_study(config: &CaseStudyConfig) -> Result<CaseStudyOutcome> {
    let mut rng = random::master_rng(config.seed);
    let model = sample_zone_model(config, &mut rng)?;
    let zone = build_zone_system(&model)?;
    let system = &zone.system;
    let n = system.state_dim();
    if config.sigma_v.nrows() != n || config.sigma_v.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "confusion prescription is {}x{}, zone count is {n}",
            config.sigma_v.nrows(),
            config.sigma_v.ncols()
        )));
    }
    if config.x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} entries, zone count is {n}",
            config.x0.len()
        )));
    }
    if config.horizon == 0 {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }

    let mut horizon = config.horizon;
    let stacked = loop {
        let candidate = system.stack(horizon)?;
        if candidate.observability().full_column_rank {
            break candidate;
        }
        horizon += 1;
        if horizon > config.max_horizon {
            return Err(Error::Infeasible(format!(
                "release does not determine the initial state at any length up to {}",
                config.max_horizon
            )));
        }
    };

    let designed = mechanism::design_optimal(&stacked, &config.sigma_v, None)?;
    let entropy = baselines::design_entropy(&stacked, designed.trace, 5000, 1e-6)?;

    let u = match model.ambient {
        None => DVector::zeros(horizon),
        Some(_) => DVector::from_element(horizon, 1.0),
    };
    let coverage_gamma = montecarlo::chi2_quantile(n, config.alpha)?;
    let designed_coverage = montecarlo::run_adversary_trials(
        system,
        horizon,
        &config.x0,
        &u,
        &designed.sigma,
        &TrialConfig {
            trials: config.trials,
            seed: config.seed,
            gamma: coverage_gamma,
            alpha: Some(config.alpha),
            ellipsoid_cov: Some(config.sigma_v.clone()),
        },
    )?;
    let entropy_coverage = montecarlo::run_adversary_trials(
        system,
        horizon,
        &config.x0,
        &u,
        &entropy.sigma,
        &TrialConfig {
            trials: config.trials,
            seed: config.seed,
            gamma: coverage_gamma,
            alpha: Some(config.alpha),
            ellipsoid_cov: None,
        },
    )?;

    let entropy_confusion = estimation::confusion_covariance(&stacked, &entropy.sigma)?;
    let designed_ellipse = montecarlo::project_ellipsoid(
        &designed.achieved_confusion,
        config.ellipse_axes,
        config.ellipse_gamma,
        config.ellipse_points,
    )?;
    let entropy_ellipse = montecarlo::project_ellipsoid(
        &entropy_confusion,
        config.ellipse_axes,
        config.ellipse_gamma,
        config.ellipse_points,
    )?;
    let comparison = baselines::compare_mechanisms(
        &[
            ("prescribed".to_string(), designed.sigma.clone()),
            ("entropy".to_string(), entropy.sigma.clone()),
        ],
        &stacked,
        config.ellipse_gamma,
    )?;

    let mut states = Vec::with_capacity(horizon);
    let mut x = config.x0.clone();
    for k in 0..horizon {
        states.push(x.clone());
        let drive = system.b() * DVector::from_column_slice(&[u[k]]);
        x = system.a() * &x + drive;
    }
    let clean_output = system.simulate(&config.x0, &u, horizon)?;
    // Release samples continue the parameter rng, keeping the whole run a
    // single deterministic stream per seed.
    let designed_sampler = montecarlo::NoiseSampler::new(&designed.sigma)?;
    let entropy_sampler = montecarlo::NoiseSampler::new(&entropy.sigma)?;
    let noisy_designed = &clean_output + designed_sampler.sample(&mut rng);
    let noisy_entropy = &clean_output + entropy_sampler.sample(&mut rng);

    Ok(CaseStudyOutcome {
        model,
        horizon,
        spectral_radius: zone.spectral_radius,
        euler_ratio: zone.euler_ratio,
        designed,
        entropy,
        designed_coverage,
        entropy_coverage,
        designed_ellipse,
        entropy_ellipse,
        comparison,
        states,
        clean_output,
        noisy_designed,
        noisy_entropy,
        coverage_gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::Containment;
    use approx::assert_relative_eq;

    fn two_zone_model() -> ZoneModel {
        let mut adjacency = DMatrix::from_element(2, 2, false);
        adjacency[(0, 1)] = true;
        adjacency[(1, 0)] = true;
        ZoneModel {
            thermal_capacitance: DVector::from_element(2, 1000.0),
            resistance: DMatrix::from_element(2, 2, 0.5),
            adjacency,
            measured_zones: vec![0],
            dt: 360.0,
            ambient: None,
        }
    }

    #[test]
    fn two_zone_discretization_hand_values() {
        let zone = build_zone_system(&two_zone_model()).unwrap();
        let a = zone.system.a();
        assert_relative_eq!(a[(0, 0)], 0.28, epsilon = 1e-12);
        assert_relative_eq!(a[(0, 1)], 0.72, epsilon = 1e-12);
        assert_relative_eq!(a[(1, 0)], 0.72, epsilon = 1e-12);
        assert_relative_eq!(a[(1, 1)], 0.28, epsilon = 1e-12);
        assert_relative_eq!(zone.spectral_radius, 1.0, epsilon = 1e-10);
        assert_relative_eq!(zone.euler_ratio, 0.72, epsilon = 1e-12);
    }

    #[test]
    fn isolated_zones_do_not_evolve() {
        let model = ZoneModel {
            thermal_capacitance: DVector::from_column_slice(&[500.0, 800.0, 1200.0]),
            resistance: DMatrix::zeros(3, 3),
            adjacency: DMatrix::from_element(3, 3, false),
            measured_zones: vec![0, 1, 2],
            dt: 100.0,
            ambient: None,
        };
        let zone = build_zone_system(&model).unwrap();
        assert!((zone.system.a() - DMatrix::identity(3, 3)).norm() == 0.0);
    }

    #[test]
    fn closed_network_conserves_energy_row_sums_and_trajectories() {
        let config = CaseStudyConfig::default();
        let mut rng = random::master_rng(11);
        let model = sample_zone_model(&config, &mut rng).unwrap();
        let zone = build_zone_system(&model).unwrap();
        let a = zone.system.a();
        for i in 0..4 {
            let row_sum: f64 = (0..4).map(|j| a[(i, j)]).sum();
            assert_relative_eq!(row_sum, 1.0, epsilon = 1e-12);
        }
        // Mass-weighted temperature is invariant: mcᵀ A = mcᵀ, and it holds
        // along simulated trajectories.
        let mc = &model.thermal_capacitance;
        let pulled = a.transpose() * mc;
        assert!((pulled - mc).norm() <= 1e-9 * mc.norm());
        let mut x = DVector::from_column_slice(&[22.0, 21.0, 23.0, 20.0]);
        let energy0 = mc.dot(&x);
        for _ in 0..10 {
            x = a * &x;
            assert_relative_eq!(mc.dot(&x), energy0, max_relative = 1e-9);
        }
        assert!(zone.conserves_energy);
    }

    #[test]
    fn closed_network_has_unit_eigenvalue_and_real_spectrum() {
        let config = CaseStudyConfig::default();
        let mut rng = random::master_rng(13);
        let model = sample_zone_model(&config, &mut rng).unwrap();
        let zone = build_zone_system(&model).unwrap();
        let eigs = zone.system.a().complex_eigenvalues();
        let mut found_one = false;
        for e in eigs.iter() {
            // Similar to a symmetric matrix through M^{1/2}.
            assert!(e.im.abs() <= 1e-9);
            if (e.re - 1.0).abs() <= 1e-9 {
                found_one = true;
            }
        }
        assert!(found_one);
    }

    #[test]
    fn coarse_step_leaves_unit_disk_fine_step_does_not() {
        // Two grid neighbors at conductance 2 give dt·4/mc = 1.44: inside
        // the classical Euler bound of 2 yet the fastest mode lands at
        // 1 - 2·1.44 = -1.88.
        let nominal = nominal_four_zone();
        let coarse = build_zone_system(&nominal).unwrap();
        assert_relative_eq!(coarse.euler_ratio, 1.44, epsilon = 1e-12);
        assert_relative_eq!(coarse.spectral_radius, 1.88, epsilon = 1e-9);
        // Ratio at or below 1 keeps the spectrum in the closed unit disk.
        let mut fine = nominal_four_zone();
        fine.dt = 240.0;
        let fine = build_zone_system(&fine).unwrap();
        assert!(fine.euler_ratio <= 1.0);
        assert!(fine.spectral_radius <= 1.0 + 1e-12);
    }

    #[test]
    fn nominal_grid_hides_the_unmeasured_swap_mode() {
        // Equal parameters admit the automorphism swapping zones 2 and 3,
        // so the release never separates them.
        let zone = build_zone_system(&nominal_four_zone()).unwrap();
        for horizon in [2, 4, 10, 30] {
            let report = zone.system.observability(horizon).unwrap();
            assert_eq!(report.rank, 3, "horizon {horizon}");
        }
        // Sampled parameters break the symmetry already at two steps.
        let config = CaseStudyConfig::default();
        let mut rng = random::master_rng(17);
        let model = sample_zone_model(&config, &mut rng).unwrap();
        let sampled = build_zone_system(&model).unwrap();
        assert!(sampled.system.observability(2).unwrap().full_column_rank);
    }

    #[test]
    fn ambient_leak_adds_constant_drive() {
        let mut model = nominal_four_zone();
        model.ambient = Some(AmbientLeak {
            resistance: 10.0,
            temperature: 15.0,
        });
        let zone = build_zone_system(&model).unwrap();
        let a = zone.system.a();
        let b = zone.system.b();
        let s = 360.0 / (1000.0 * 10.0);
        for i in 0..4 {
            let row_sum: f64 = (0..4).map(|j| a[(i, j)]).sum();
            assert_relative_eq!(row_sum, 1.0 - s, epsilon = 1e-12);
            assert_relative_eq!(b[(i, 0)], s * 15.0, epsilon = 1e-12);
        }
        assert!(!zone.conserves_energy);
    }

    #[test]
    fn rejects_malformed_models() {
        let mut model = nominal_four_zone();
        model.resistance[(0, 1)] = 0.0;
        model.resistance[(1, 0)] = 0.0;
        assert!(build_zone_system(&model).is_err());
        let mut model = nominal_four_zone();
        model.adjacency[(0, 1)] = false;
        assert!(build_zone_system(&model).is_err());
        let mut model = nominal_four_zone();
        model.adjacency[(2, 2)] = true;
        assert!(build_zone_system(&model).is_err());
        let mut model = nominal_four_zone();
        model.measured_zones = vec![0, 0];
        assert!(build_zone_system(&model).is_err());
        let mut model = nominal_four_zone();
        model.measured_zones = vec![9];
        assert!(build_zone_system(&model).is_err());
        let mut model = nominal_four_zone();
        model.thermal_capacitance[2] = -5.0;
        assert!(build_zone_system(&model).is_err());
        let bad_range = CaseStudyConfig {
            r_range: (0.6, 0.4),
            ..CaseStudyConfig::default()
        };
        let mut rng = random::master_rng(1);
        assert!(sample_zone_model(&bad_range, &mut rng).is_err());
    }

    #[test]
    fn case_study_meets_prescription_and_projects_expected_axes() {
        let config = CaseStudyConfig::default();
        let outcome = run_case_study(&config).unwrap();
        assert_eq!(outcome.horizon, 10);
        assert!(outcome.designed.residual <= 1e-8);
        // Projection of diag(16, 16, 100, 100) onto zones (1, 4) at level 1.
        assert_relative_eq!(outcome.designed_ellipse.semi_axes.0, 10.0, epsilon = 1e-6);
        assert_relative_eq!(outcome.designed_ellipse.semi_axes.1, 4.0, epsilon = 1e-6);
        // Both mechanisms spend the same distortion budget.
        assert_relative_eq!(
            outcome.entropy.sigma.trace(),
            outcome.designed.trace,
            max_relative = 1e-6
        );
        // Coverage against the prescription is calibrated.
        assert!(outcome.designed_coverage.coverage_rate > 0.92);
        assert!(outcome.designed_coverage.coverage_rate < 0.98);
        // Ten steps of a radius-two system make the kernel noise, and with
        // it the matched budget, so large that the volume-maximal design
        // out-confuses the prescription in every direction.
        assert_eq!(outcome.comparison.pairs.len(), 1);
        assert_eq!(
            outcome.comparison.pairs[0].containment,
            Containment::FirstWithinSecond
        );
        assert_eq!(outcome.states.len(), 10);
        assert_eq!(outcome.clean_output.len(), 20);
        assert_eq!(outcome.noisy_designed.len(), 20);
        assert_eq!(outcome.noisy_entropy.len(), 20);
    }

    #[test]
    fn short_horizon_budgets_leave_mechanisms_incomparable() {
        // At short release lengths the matched budget is modest and the
        // volume-maximal confusion trades directions against the
        // prescription: each mechanism hides more in some direction.
        for seed in [7, 0, 1] {
            let config = CaseStudyConfig {
                horizon: 3,
                trials: 200,
                seed,
                ..CaseStudyConfig::default()
            };
            let outcome = run_case_study(&config).unwrap();
            assert!(outcome.entropy.converged, "seed {seed}");
            assert_eq!(
                outcome.comparison.pairs[0].containment,
                Containment::Incomparable,
                "seed {seed}"
            );
            let eigs = &outcome.comparison.pairs[0].difference_eigenvalues;
            assert!(eigs[0] > 0.0 && eigs[eigs.len() - 1] < 0.0, "seed {seed}");
        }
    }

    #[test]
    fn case_study_is_deterministic_per_seed() {
        let config = CaseStudyConfig::default();
        let first = run_case_study(&config).unwrap();
        let second = run_case_study(&config).unwrap();
        assert_eq!(first.designed.sigma, second.designed.sigma);
        assert_eq!(first.noisy_designed, second.noisy_designed);
        assert_eq!(first.model.resistance, second.model.resistance);
        let other = run_case_study(&CaseStudyConfig {
            seed: 8,
            ..CaseStudyConfig::default()
        })
        .unwrap();
        assert_ne!(first.model.resistance, other.model.resistance);
    }

    #[test]
    fn short_release_escalates_until_state_is_determined() {
        let config = CaseStudyConfig {
            horizon: 1,
            trials: 200,
            ..CaseStudyConfig::default()
        };
        let outcome = run_case_study(&config).unwrap();
        assert_eq!(outcome.horizon, 2);
        assert!(outcome.designed.residual <= 1e-8);
    }

    #[test]
    fn degenerate_ranges_exhaust_escalation() {
        // Point ranges reproduce the symmetric grid, which never becomes
        // observable from zones 1 and 4.
        let config = CaseStudyConfig {
            r_range: (0.5, 0.5),
            mc_range: (1000.0, 1000.0),
            max_horizon: 12,
            ..CaseStudyConfig::default()
        };
        let err = run_case_study(&config).unwrap_err();
        assert!(err.is_infeasible());
    }

    #[test]
    fn randomized_models_keep_residual_tight() {
        for seed in 0..3 {
            let config = CaseStudyConfig {
                trials: 200,
                seed,
                ..CaseStudyConfig::default()
            };
            let outcome = run_case_study(&config).unwrap();
            assert!(outcome.designed.residual <= 1e-8, "seed {seed}");
        }
    }
}
