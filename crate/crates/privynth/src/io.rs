//! JSON and CSV serialization of systems, designs, and reports.
//!
//! Matrices travel as row-major nested arrays of IEEE-754 doubles; the JSON
//! printer emits the shortest representation that parses back to the exact
//! same double, so parse, render, parse is bit-stable for finite values.
//! Struct field order is fixed, which keeps rendered documents byte-stable
//! for identical inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{ComparisonReport, Containment, EntropyDesign, IsotropicDesign};
use crate::error::{Error, Result};
use crate::hvac::{AmbientLeak, CaseStudyConfig, CaseStudyOutcome};
use crate::linalg::{matrix_to_rows, rows_to_matrix};
use crate::lti::LtiSystem;
use crate::mechanism::NoiseDesign;
use crate::montecarlo::{CoverageReport, PlaneEllipse};
use crate::structured::BlockDiagonalDesign;

fn parse_error(what: &str, err: serde_json::Error) -> Error {
    Error::InvalidInput(format!("{what}: {err}"))
}

/// System matrices as a JSON document. `B` and `D` may be omitted for
/// autonomous systems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

impl SystemFile {
    pub fn from_system(system: &LtiSystem) -> Self {
        SystemFile {
            a: matrix_to_rows(system.a()),
            b: Some(matrix_to_rows(system.b())),
            c: matrix_to_rows(system.c()),
            d: Some(matrix_to_rows(system.d())),
            dt: system.dt(),
        }
    }

    pub fn into_system(self) -> Result<LtiSystem> {
        let a = rows_to_matrix(&self.a, "A")?;
        let c = rows_to_matrix(&self.c, "C")?;
        let system = match (self.b, self.d) {
            (None, None) => LtiSystem::autonomous(a, c)?,
            (b, d) => {
                let b = match b {
                    Some(rows) => rows_to_matrix(&rows, "B")?,
                    None => DMatrix::zeros(a.nrows(), 1),
                };
                let d = match d {
                    Some(rows) => rows_to_matrix(&rows, "D")?,
                    None => DMatrix::zeros(c.nrows(), b.ncols()),
                };
                LtiSystem::new(a, b, c, d)?
            }
        };
        Ok(match self.dt {
            Some(dt) => system.with_dt(dt),
            None => system,
        })
    }
}

/// Parse a system JSON document.
pub fn parse_system(text: &str) -> Result<LtiSystem> {
    let file: SystemFile =
        serde_json::from_str(text).map_err(|e| parse_error("system document", e))?;
    file.into_system()
}

/// Render a system as pretty JSON.
pub fn render_system(system: &LtiSystem) -> String {
    serde_json::to_string_pretty(&SystemFile::from_system(system))
        .expect("system serialization is infallible")
}

/// Parse a symmetric matrix document: either bare nested arrays or an
/// object `{"Sigma_v": [[...]]}` / `{"Sigma": [[...]]}`.
pub fn parse_matrix(text: &str, name: &str) -> Result<DMatrix<f64>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum MatrixDoc {
        Bare(Vec<Vec<f64>>),
        Tagged {
            #[serde(rename = "Sigma_v")]
            sigma_v: Option<Vec<Vec<f64>>>,
            #[serde(rename = "Sigma")]
            sigma: Option<Vec<Vec<f64>>>,
        },
    }
    let doc: MatrixDoc =
        serde_json::from_str(text).map_err(|e| parse_error("matrix document", e))?;
    let rows = match doc {
        MatrixDoc::Bare(rows) => rows,
        MatrixDoc::Tagged { sigma_v, sigma } => sigma_v.or(sigma).ok_or_else(|| {
            Error::InvalidInput(format!(
                "matrix document for {name} needs nested arrays or a Sigma_v/Sigma key"
            ))
        })?,
    };
    rows_to_matrix(&rows, name)
}

/// Parse, re-render, and re-parse a system document; true when both parses
/// agree bit-for-bit.
pub fn validate_system_roundtrip(text: &str) -> Result<bool> {
    let first = parse_system(text)?;
    let second = parse_system(&render_system(&first))?;
    Ok(first.a() == second.a()
        && first.b() == second.b()
        && first.c() == second.c()
        && first.d() == second.d()
        && first.dt() == second.dt())
}

/// Wire form of an optimal noise design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MechanismDesignFile {
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
    pub beta_opt: f64,
    pub eps_opt: f64,
    #[serde(rename = "trace_Sigma")]
    pub trace_sigma: f64,
    pub residual: f64,
}

impl MechanismDesignFile {
    pub fn from_design(design: &NoiseDesign) -> Self {
        MechanismDesignFile {
            sigma: matrix_to_rows(&design.sigma),
            beta_opt: design.beta_opt,
            eps_opt: design.eps_opt,
            trace_sigma: design.trace,
            residual: design.residual,
        }
    }
}

/// Wire form of a block-diagonal design: per-block matrices plus
/// convergence metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockDesignFile {
    pub blocks: Vec<Vec<Vec<f64>>>,
    pub e_blk: f64,
    #[serde(rename = "trace_Sigma")]
    pub trace_sigma: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BlockDesignFile {
    pub fn from_design(design: &BlockDiagonalDesign) -> Self {
        BlockDesignFile {
            blocks: design.blocks.iter().map(matrix_to_rows).collect(),
            e_blk: design.e_blk,
            trace_sigma: design.trace,
            iterations: design.iterations,
            converged: design.converged,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyDesignFile {
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
    pub eps_p: f64,
    pub objective_bits: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl EntropyDesignFile {
    pub fn from_design(design: &EntropyDesign) -> Self {
        EntropyDesignFile {
            sigma: matrix_to_rows(&design.sigma),
            eps_p: design.eps_p,
            objective_bits: design.objective_bits,
            kkt_residual: design.kkt_residual,
            iterations: design.iterations,
            converged: design.converged,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsotropicDesignFile {
    pub sigma_scalar: f64,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
    pub confusion: Vec<Vec<f64>>,
}

impl IsotropicDesignFile {
    pub fn from_design(design: &IsotropicDesign) -> Self {
        IsotropicDesignFile {
            sigma_scalar: design.sigma_scalar,
            sigma: matrix_to_rows(&design.sigma),
            confusion: matrix_to_rows(&design.confusion),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageFile {
    pub samples: usize,
    pub coverage_rate: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub mean_bias_norm: f64,
    pub rel_frobenius_error: f64,
    pub empirical_cov: Vec<Vec<f64>>,
    pub target_cov: Vec<Vec<f64>>,
    pub ill_conditioned: bool,
}

impl CoverageFile {
    pub fn from_report(report: &CoverageReport) -> Self {
        CoverageFile {
            samples: report.samples,
            coverage_rate: report.coverage_rate,
            gamma: report.gamma,
            alpha: report.alpha,
            mean_bias_norm: report.mean_bias_norm,
            rel_frobenius_error: report.rel_frobenius_error,
            empirical_cov: matrix_to_rows(&report.empirical_cov),
            target_cov: matrix_to_rows(&report.target_cov),
            ill_conditioned: report.ill_conditioned,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipseFile {
    pub axes: [usize; 2],
    pub gamma: f64,
    pub semi_axes: [f64; 2],
    pub boundary: Vec<[f64; 2]>,
}

impl EllipseFile {
    pub fn from_ellipse(e: &PlaneEllipse) -> Self {
        EllipseFile {
            axes: [e.axes.0, e.axes.1],
            gamma: e.gamma,
            semi_axes: [e.semi_axes.0, e.semi_axes.1],
            boundary: e.boundary.iter().map(|&(x, y)| [x, y]).collect(),
        }
    }
}

/// Ellipse boundary points as CSV with a mechanism label per row.
pub fn ellipses_csv(ellipses: &[(&str, &PlaneEllipse)]) -> String {
    let mut out = String::from("mechanism,x,y\n");
    for (name, ellipse) in ellipses {
        for &(x, y) in &ellipse.boundary {
            out.push_str(&format!("{name},{x},{y}\n"));
        }
    }
    out
}

fn containment_label(c: Containment) -> &'static str {
    match c {
        Containment::FirstWithinSecond => "first-within-second",
        Containment::SecondWithinFirst => "second-within-first",
        Containment::Incomparable => "incomparable",
        Containment::Equal => "equal",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonEntryFile {
    pub name: String,
    #[serde(rename = "trace_Sigma")]
    pub trace_sigma: f64,
    pub log_det_confusion_bits: f64,
    pub min_precision_eigenvalue: f64,
    pub semi_axes: Vec<f64>,
    pub confusion: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonPairFile {
    pub first: String,
    pub second: String,
    pub difference_eigenvalues: Vec<f64>,
    pub containment: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonFile {
    pub gamma: f64,
    pub entries: Vec<ComparisonEntryFile>,
    pub pairs: Vec<ComparisonPairFile>,
}

impl ComparisonFile {
    pub fn from_report(report: &ComparisonReport) -> Self {
        ComparisonFile {
            gamma: report.gamma,
            entries: report
                .entries
                .iter()
                .map(|e| ComparisonEntryFile {
                    name: e.name.clone(),
                    trace_sigma: e.trace,
                    log_det_confusion_bits: e.log_det_confusion_bits,
                    min_precision_eigenvalue: e.min_precision_eigenvalue,
                    semi_axes: e.semi_axes.clone(),
                    confusion: matrix_to_rows(&e.confusion),
                })
                .collect(),
            pairs: report
                .pairs
                .iter()
                .map(|p| ComparisonPairFile {
                    first: p.first.clone(),
                    second: p.second.clone(),
                    difference_eigenvalues: p.difference_eigenvalues.clone(),
                    containment: containment_label(p.containment).to_string(),
                })
                .collect(),
        }
    }
}

/// Comparison table as CSV, one row per design, one semi-axis column per
/// state coordinate.
pub fn comparison_csv(report: &ComparisonReport) -> String {
    let n = report
        .entries
        .first()
        .map(|e| e.semi_axes.len())
        .unwrap_or(0);
    let mut out = String::from("name,trace_Sigma,log_det_confusion_bits");
    for i in 0..n {
        out.push_str(&format!(",semi_axis_{}", i + 1));
    }
    out.push('\n');
    for entry in &report.entries {
        out.push_str(&format!(
            "{},{},{}",
            entry.name, entry.trace, entry.log_det_confusion_bits
        ));
        for axis in &entry.semi_axes {
            out.push_str(&format!(",{axis}"));
        }
        out.push('\n');
    }
    out
}

fn rows_to_bool_matrix(rows: &[Vec<bool>], name: &str) -> Result<DMatrix<bool>> {
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{name} has no rows")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidInput(format!("{name} rows have uneven lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmbientFile {
    pub resistance: f64,
    pub temperature: f64,
}

/// Case-study configuration document. Every field is optional and falls
/// back to the four-zone default.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudyFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_zones: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_zones: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient: Option<AmbientFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_range: Option<[f64; 2]>,
    #[serde(rename = "Sigma_v", default, skip_serializing_if = "Option::is_none")]
    pub sigma_v: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipse_gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipse_axes: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipse_points: Option<usize>,
}

impl CaseStudyFile {
    pub fn into_config(self) -> Result<CaseStudyConfig> {
        let mut config = CaseStudyConfig::default();
        if let Some(n) = self.n_zones {
            config.n_zones = n;
        }
        if let Some(adj) = self.adjacency {
            config.adjacency = rows_to_bool_matrix(&adj, "adjacency")?;
            if self.n_zones.is_none() {
                config.n_zones = config.adjacency.nrows();
            }
        }
        if let Some(m) = self.measured_zones {
            config.measured_zones = m;
        }
        if let Some(dt) = self.dt {
            config.dt = dt;
        }
        if let Some(a) = self.ambient {
            config.ambient = Some(AmbientLeak {
                resistance: a.resistance,
                temperature: a.temperature,
            });
        }
        if let Some([lo, hi]) = self.r_range {
            config.r_range = (lo, hi);
        }
        if let Some([lo, hi]) = self.mc_range {
            config.mc_range = (lo, hi);
        }
        if let Some(rows) = self.sigma_v {
            config.sigma_v = rows_to_matrix(&rows, "Sigma_v")?;
        }
        if let Some(k) = self.horizon {
            config.horizon = k;
        }
        if let Some(k) = self.max_horizon {
            config.max_horizon = k;
        }
        if let Some(x0) = self.x0 {
            config.x0 = DVector::from_vec(x0);
        }
        if let Some(t) = self.trials {
            config.trials = t;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(a) = self.alpha {
            config.alpha = a;
        }
        if let Some(g) = self.ellipse_gamma {
            config.ellipse_gamma = g;
        }
        if let Some([i, j]) = self.ellipse_axes {
            config.ellipse_axes = (i, j);
        }
        if let Some(p) = self.ellipse_points {
            config.ellipse_points = p;
        }
        Ok(config)
    }
}

/// Parse a case-study configuration document.
pub fn parse_case_study_config(text: &str) -> Result<CaseStudyConfig> {
    let file: CaseStudyFile =
        serde_json::from_str(text).map_err(|e| parse_error("case-study document", e))?;
    file.into_config()
}

/// Sampled zone parameters in wire form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoneParametersFile {
    pub thermal_capacitance: Vec<f64>,
    pub resistance: Vec<Vec<f64>>,
    pub measured_zones: Vec<usize>,
    pub dt: f64,
}

/// Full case-study report payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseStudyReportFile {
    pub horizon: usize,
    pub spectral_radius: f64,
    pub euler_ratio: f64,
    pub coverage_gamma: f64,
    pub parameters: ZoneParametersFile,
    pub design: MechanismDesignFile,
    pub entropy: EntropyDesignFile,
    pub designed_coverage: CoverageFile,
    pub entropy_coverage: CoverageFile,
    pub designed_ellipse: EllipseFile,
    pub entropy_ellipse: EllipseFile,
    pub comparison: ComparisonFile,
}

impl CaseStudyReportFile {
    pub fn from_outcome(outcome: &CaseStudyOutcome) -> Self {
        CaseStudyReportFile {
            horizon: outcome.horizon,
            spectral_radius: outcome.spectral_radius,
            euler_ratio: outcome.euler_ratio,
            coverage_gamma: outcome.coverage_gamma,
            parameters: ZoneParametersFile {
                thermal_capacitance: outcome.model.thermal_capacitance.iter().cloned().collect(),
                resistance: matrix_to_rows(&outcome.model.resistance),
                measured_zones: outcome.model.measured_zones.clone(),
                dt: outcome.model.dt,
            },
            design: MechanismDesignFile::from_design(&outcome.designed),
            entropy: EntropyDesignFile::from_design(&outcome.entropy),
            designed_coverage: CoverageFile::from_report(&outcome.designed_coverage),
            entropy_coverage: CoverageFile::from_report(&outcome.entropy_coverage),
            designed_ellipse: EllipseFile::from_ellipse(&outcome.designed_ellipse),
            entropy_ellipse: EllipseFile::from_ellipse(&outcome.entropy_ellipse),
            comparison: ComparisonFile::from_report(&outcome.comparison),
        }
    }
}

/// Released-trajectory table: time, true measured temperatures, and the
/// released values under each mechanism.
pub fn trajectories_csv(outcome: &CaseStudyOutcome) -> String {
    let measured = &outcome.model.measured_zones;
    let p = measured.len();
    let mut out = String::from("t");
    for &z in measured {
        out.push_str(&format!(",true_z{}", z + 1));
    }
    for &z in measured {
        out.push_str(&format!(",prescribed_z{}", z + 1));
    }
    for &z in measured {
        out.push_str(&format!(",entropy_z{}", z + 1));
    }
    out.push('\n');
    for k in 0..outcome.horizon {
        out.push_str(&format!("{}", k as f64 * outcome.model.dt));
        for i in 0..p {
            out.push_str(&format!(",{}", outcome.clean_output[k * p + i]));
        }
        for i in 0..p {
            out.push_str(&format!(",{}", outcome.noisy_designed[k * p + i]));
        }
        for i in 0..p {
            out.push_str(&format!(",{}", outcome.noisy_entropy[k * p + i]));
        }
        out.push('\n');
    }
    out
}

/// Case-study ellipse table for both mechanisms.
pub fn case_study_ellipses_csv(outcome: &CaseStudyOutcome) -> String {
    ellipses_csv(&[
        ("prescribed", &outcome.designed_ellipse),
        ("entropy", &outcome.entropy_ellipse),
    ])
}
