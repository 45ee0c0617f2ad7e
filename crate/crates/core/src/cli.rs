//! Command implementations behind the `qhfilters` binary.
//!
//! Every command reads a [`RunConfig`] (TOML), writes its outputs under
//! `output_dir`, and maps failures to a [`CliError`] whose class fixes the
//! process exit code.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{cond_sweep, write_sweep_csv, CondSweepRow, Formulation, SweepConfig, NULL_THRESHOLD};
use crate::efie::{assemble_operators, far_field, PlaneWave, WaveContext, EPS0, MU0};
use crate::filters::{build_filter, svd_filtered_laplacian, FilterBackend, SamplerKind, SpectralFilterSpec};
use crate::linalg::{self, c64, Csr, SymEigen};
use crate::mesh::{build_basis_topology, compute_stats, resolve_mesh, MeshStats, TriangleMesh};
use crate::precond::{
    solve_preconditioned, BundleMeta, PrecondConfig, PrecondContext, Side, SolveOptions, SolveReport,
};
use crate::qhd::{graph_laplacian, lambda_matrix, projectors, sigma_matrix, IncidenceMatrix};
use crate::Error;

/// Environment variable holding the worker-thread count for dense kernels.
pub const THREADS_ENV: &str = "QHFILTERS_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Config = 2,
    Mesh = 3,
    Numeric = 4,
    Convergence = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub class: ExitClass,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            class: ExitClass::Config,
            message: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class as i32
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let class = match &e {
            Error::Config(_) | Error::InvalidArgument(_) => ExitClass::Config,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::UnsupportedFormat(_)
            | Error::OpenSurface(..)
            | Error::NonManifold(..)
            | Error::Orientation
            | Error::DegenerateTriangle(..)
            | Error::InvalidMesh(_) => ExitClass::Mesh,
            Error::NotConverged { .. } => ExitClass::Convergence,
            Error::NotSpd(_) | Error::Decomposition(_) | Error::ZeroBlock(_) => ExitClass::Numeric,
        };
        CliError {
            class,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Preconditioner settings shared by every formulation; the backend comes
/// from [`RunConfig::backends`] and the seed from [`RunConfig::seed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecondSection {
    pub alpha: usize,
    pub sampler: SamplerKind,
    pub normalized: bool,
    pub norm_tol: f64,
    pub norm_max_iter: usize,
}

impl Default for PrecondSection {
    fn default() -> Self {
        let d = PrecondConfig::default();
        PrecondSection {
            alpha: d.alpha,
            sampler: d.sampler,
            normalized: d.normalized,
            norm_tol: d.norm_tol,
            norm_max_iter: d.norm_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Overrides the per-formulation isolated-value count.
    pub exclude_isolated: Option<usize>,
    pub null_threshold: f64,
    /// Solve every sweep system and record COCG iteration counts.
    pub record_iterations: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            exclude_isolated: None,
            null_threshold: NULL_THRESHOLD,
            record_iterations: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Formulations solved by `solve`; far fields are compared against the first.
    pub formulations: Vec<Formulation>,
    pub tol: f64,
    pub max_iter: usize,
    pub zeroing: bool,
    pub excitation: PlaneWave,
    /// Far-field observation directions.
    pub far_field_directions: Vec<[f64; 3]>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolveOptions::default();
        SolverSection {
            formulations: vec![Formulation::FilteredQh],
            tol: d.tol,
            max_iter: d.max_iter,
            zeroing: d.zeroing,
            excitation: PlaneWave::default(),
            far_field_directions: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]],
        }
    }
}

impl SolverSection {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            zeroing: self.zeroing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub side: Side,
    /// Filtering index; half of `N_X` when absent.
    pub n: Option<usize>,
    pub backend: FilterBackend,
    pub cutoff: Option<f64>,
    /// Largest Laplacian dimension compared against the SVD oracle.
    pub oracle_cap: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            side: Side::Sigma,
            n: None,
            backend: FilterBackend::Chebyshev {
                butterworth_order: 100,
                poly_count: 200,
            },
            cutoff: None,
            oracle_cap: 3000,
        }
    }
}

/// The declarative run description read by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// `gen:` generator strings or mesh file paths.
    pub meshes: Vec<String>,
    pub frequencies: Vec<f64>,
    pub formulations: Vec<Formulation>,
    /// Backends for the filtered formulations; `solve` uses the first.
    pub backends: Vec<FilterBackend>,
    pub precond: PrecondSection,
    pub analysis: AnalysisSection,
    pub solver: SolverSection,
    pub filter: FilterSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sweep = SweepConfig::default();
        RunConfig {
            output_dir: PathBuf::from("out"),
            seed: 0,
            meshes: sweep.meshes,
            frequencies: sweep.frequencies,
            formulations: sweep.formulations,
            backends: sweep.backends,
            precond: PrecondSection::default(),
            analysis: AnalysisSection::default(),
            solver: SolverSection::default(),
            filter: FilterSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.sweep_config().validate()?;
        if self.solver.formulations.is_empty() {
            return Err(CliError::config("solver.formulations is empty"));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(CliError::config(
                "solver tolerance and iteration budget must be positive",
            ));
        }
        self.solver.excitation.validate()?;
        Ok(())
    }

    pub fn precond_config(&self, backend: Option<&FilterBackend>) -> PrecondConfig {
        PrecondConfig {
            alpha: self.precond.alpha,
            backend: backend
                .or(self.backends.first())
                .cloned()
                .unwrap_or(FilterBackend::ExactSvd),
            sampler: self.precond.sampler,
            normalized: self.precond.normalized,
            norm_tol: self.precond.norm_tol,
            norm_max_iter: self.precond.norm_max_iter,
            seed: self.seed,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            meshes: self.meshes.clone(),
            frequencies: self.frequencies.clone(),
            formulations: self.formulations.clone(),
            backends: self.backends.clone(),
            precond: self.precond_config(None),
            exclude_isolated: self.analysis.exclude_isolated,
            null_threshold: self.analysis.null_threshold,
            solve: self.analysis.record_iterations.then(|| self.solver.options()),
        }
    }

    fn output(&self) -> CliResult<&Path> {
        fs::create_dir_all(&self.output_dir).map_err(|e| {
            CliError::config(format!(
                "output directory {} not writable: {e}",
                self.output_dir.display()
            ))
        })?;
        Ok(&self.output_dir)
    }
}

/// Sets the dense-kernel thread count from [`THREADS_ENV`]; one thread when unset.
pub fn configure_threads() -> CliResult<usize> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => 1,
    };
    faer::set_global_parallelism(if n == 1 { faer::Par::Seq } else { faer::Par::rayon(n) });
    Ok(n)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_file(path, text + "\n")
}

fn csr_csv(m: &Csr) -> String {
    let mut s = String::from("row,col,value\n");
    for (i, j, v) in m.triplets() {
        s += &format!("{i},{j},{v:e}\n");
    }
    s
}

fn incidence_csv(x: &IncidenceMatrix) -> String {
    csr_csv(&x.to_csr())
}

fn load(spec: &str) -> CliResult<(TriangleMesh, MeshStats)> {
    let mesh = resolve_mesh(spec)?;
    let stats = compute_stats(&mesh);
    Ok((mesh, stats))
}

#[derive(Debug, Clone, Serialize)]
pub struct DecomposeReport {
    pub mesh: String,
    pub stats: MeshStats,
    pub rank_sigma: usize,
    pub rank_lambda: usize,
    pub dim_h: usize,
    pub trace_p_h: f64,
    pub sigma_t_lambda_max: i64,
    pub idempotency: Residuals,
    pub complementarity: f64,
    pub cross_annihilation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Residuals {
    pub p_sigma: f64,
    pub p_lambda_h: f64,
    pub p_h: f64,
}

/// Σ, Λ, their Laplacians (sparse CSV) and projector diagnostics for one mesh.
pub fn cmd_decompose(mesh_spec: &str, out_dir: &Path) -> CliResult<DecomposeReport> {
    let (mesh, stats) = load(mesh_spec)?;
    let topo = build_basis_topology(&mesh);
    let (s, l) = (sigma_matrix(&topo), lambda_matrix(&topo));
    let p = projectors(&s, &l)?;
    let (sd, ld) = (s.to_dense(), l.to_dense());
    let rank_sigma = linalg::rank(&(sd.transpose() * &sd), 1e-10)?;
    let rank_lambda = linalg::rank(&(ld.transpose() * &ld), 1e-10)?;
    let idem = |a: &linalg::RMat| linalg::frobenius(&(a * a - a)) / linalg::frobenius(a).max(1.0);
    let n = p.dim();
    let sum = &p.p_sigma + &p.p_lambda_h;
    let report = DecomposeReport {
        mesh: mesh_spec.to_string(),
        stats,
        rank_sigma,
        rank_lambda,
        dim_h: n - rank_sigma - rank_lambda,
        trace_p_h: p.harmonic_dim(),
        sigma_t_lambda_max: s
            .transpose_times(&l)
            .iter()
            .flatten()
            .map(|v| v.abs())
            .max()
            .unwrap_or(0),
        idempotency: Residuals {
            p_sigma: idem(&p.p_sigma),
            p_lambda_h: idem(&p.p_lambda_h),
            p_h: idem(&p.p_h),
        },
        complementarity: linalg::frobenius(&(&sum - linalg::RMat::identity(n, n))) / (n as f64).sqrt(),
        cross_annihilation: linalg::frobenius(&(&p.p_sigma * &p.p_lambda_h)),
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("sigma.csv"), incidence_csv(&s))?;
    write_file(&out_dir.join("lambda.csv"), incidence_csv(&l))?;
    for (name, x) in [("sigma_laplacian.csv", &s), ("lambda_laplacian.csv", &l)] {
        let lap = graph_laplacian(x);
        let csr = lap
            .as_sparse()
            .cloned()
            .unwrap_or_else(|| dense_to_csr(&lap.to_dense()));
        write_file(&out_dir.join(name), csr_csv(&csr))?;
    }
    write_json(&out_dir.join("decompose.json"), &report)?;
    Ok(report)
}

fn dense_to_csr(a: &linalg::RMat) -> Csr {
    let mut t = Vec::new();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if a[(i, j)] != 0.0 {
                t.push((i, j, a[(i, j)]));
            }
        }
    }
    Csr::from_triplets(a.nrows(), a.ncols(), &t)
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterReport {
    pub mesh: String,
    pub side: Side,
    pub dim: usize,
    pub n: usize,
    pub backend: String,
    pub cutoff: Option<f64>,
    pub accuracy: Option<f64>,
    /// `‖W_backend − W_svd‖₂`, absent above the oracle cap.
    pub spectral_error: Option<f64>,
    /// `‖P_n − P‖_F / ‖P‖_F` when `n = N_X`.
    pub projector_limit_residual: Option<f64>,
}

/// Builds the configured filter on the first mesh and compares it with the SVD oracle.
pub fn cmd_filter(cfg: &RunConfig) -> CliResult<FilterReport> {
    let spec_str = cfg.meshes.first().ok_or_else(|| CliError::config("no meshes listed"))?;
    let (mesh, _) = load(spec_str)?;
    let topo = build_basis_topology(&mesh);
    let x = match cfg.filter.side {
        Side::Sigma => sigma_matrix(&topo),
        Side::Lambda => lambda_matrix(&topo),
    };
    let lap = graph_laplacian(&x);
    let dim = lap.dim();
    let n = cfg.filter.n.unwrap_or(dim / 2);
    let mut spec = SpectralFilterSpec::new(n, cfg.filter.backend.clone());
    spec.cutoff_estimate = cfg.filter.cutoff;
    spec.validate(dim).map_err(|e| CliError::config(e.to_string()))?;
    let op = build_filter(&lap, &spec)?;
    let (spectral_error, projector_limit_residual) = if dim <= cfg.filter.oracle_cap {
        let w = op.window_dense()?;
        let oracle = svd_filtered_laplacian(&lap, n)?.window_dense()?;
        let err = SymEigen::new(&(&w - &oracle))?.max_abs_eigenvalue();
        let limit = if n == dim {
            let xd = x.to_dense();
            let p = &xd * lap.pinv_dense()? * &w * xd.transpose();
            let base = &xd * lap.pinv_dense()? * xd.transpose();
            Some(linalg::rel_diff(&p, &base))
        } else {
            None
        };
        (Some(err), limit)
    } else {
        (None, None)
    };
    let report = FilterReport {
        mesh: spec_str.clone(),
        side: cfg.filter.side,
        dim,
        n,
        backend: cfg.filter.backend.name().into(),
        cutoff: op.meta.cutoff,
        accuracy: op.meta.accuracy,
        spectral_error,
        projector_limit_residual,
    };
    write_json(&cfg.output()?.join("filter.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub rows: usize,
    pub failed: usize,
    pub csv: PathBuf,
}

/// Runs the condition-number sweep and writes `sweep.csv`; fails if any row failed.
pub fn cmd_sweep(cfg: &RunConfig) -> CliResult<(SweepSummary, Vec<CondSweepRow>)> {
    let rows = cond_sweep(&cfg.sweep_config())?;
    let path = cfg.output()?.join("sweep.csv");
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    write_file(&path, buf)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    let summary = SweepSummary {
        rows: rows.len(),
        failed,
        csv: path,
    };
    if failed > 0 {
        let msgs: Vec<String> = rows
            .iter()
            .filter_map(|r| {
                r.error
                    .as_ref()
                    .map(|e| format!("{} {:e} Hz {}: {e}", r.mesh, r.frequency, r.formulation))
            })
            .collect();
        return Err(CliError {
            class: ExitClass::Numeric,
            message: format!("{failed} of {} sweep rows failed:\n{}", rows.len(), msgs.join("\n")),
        });
    }
    Ok((summary, rows))
}

#[derive(Debug, Clone, Serialize)]
pub struct FormulationSolve {
    pub formulation: Formulation,
    pub solution_file: Option<PathBuf>,
    pub report: Option<SolveReport>,
    pub bundle: Option<BundleMeta>,
    /// `[direction, x, y, z]` with complex components as `[re, im]`.
    pub far_field: Vec<[[f64; 2]; 3]>,
    /// Largest relative far-field difference against the first formulation.
    pub far_field_rel_diff: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub mesh: String,
    pub frequency: f64,
    pub n: usize,
    pub far_field_directions: Vec<[f64; 3]>,
    pub runs: Vec<FormulationSolve>,
}

fn solution_csv(j: &[c64]) -> String {
    let mut s = String::from("index,re,im\n");
    for (i, v) in j.iter().enumerate() {
        s += &format!("{i},{:.16e},{:.16e}\n", v.re, v.im);
    }
    s
}

/// Solves the first mesh at the first frequency with every configured
/// formulation; writes one solution CSV per formulation plus `solve.json`.
///
/// The report is written even when a solve fails.
pub fn cmd_solve(cfg: &RunConfig) -> CliResult<SolveSummary> {
    let spec_str = cfg.meshes.first().ok_or_else(|| CliError::config("no meshes listed"))?;
    let freq = *cfg
        .frequencies
        .first()
        .ok_or_else(|| CliError::config("no frequencies listed"))?;
    let (mesh, _) = load(spec_str)?;
    let topo = build_basis_topology(&mesh);
    let wave = WaveContext::new(freq, EPS0, MU0, cfg.solver.excitation)?;
    let ops = assemble_operators(&mesh, &topo, &wave);
    let out = cfg.output()?.to_path_buf();
    let opts = cfg.solver.options();
    let mut ctx: Option<PrecondContext> = None;
    let mut runs: Vec<FormulationSolve> = Vec::new();
    let mut first_error: Option<CliError> = None;
    for &f in &cfg.solver.formulations {
        let mut run = FormulationSolve {
            formulation: f,
            solution_file: None,
            report: None,
            bundle: None,
            far_field: Vec::new(),
            far_field_rel_diff: None,
            error: None,
        };
        let result = (|| -> CliResult<()> {
            if ctx.is_none() {
                ctx = Some(PrecondContext::new(&mesh, &topo, cfg.precond_config(None))?);
            }
            let ctx = ctx.as_ref().expect("context built");
            let prepared = ctx.prepare(&ops);
            let bundle = f.bundle(ctx, &prepared)?;
            run.bundle = Some(bundle.meta.clone());
            let outcome = solve_preconditioned(&bundle, &prepared, &opts)?;
            let path = out.join(format!("solution_{}.csv", f.name()));
            write_file(&path, solution_csv(&outcome.j))?;
            run.solution_file = Some(path);
            run.report = Some(outcome.report);
            run.far_field = cfg
                .solver
                .far_field_directions
                .iter()
                .map(|&d| far_field(&mesh, &topo, wave.k, &outcome.j, d).map(|z| [z.re, z.im]))
                .collect();
            Ok(())
        })();
        if let Err(e) = result {
            run.error = Some(e.message.clone());
            first_error.get_or_insert(e);
        }
        runs.push(run);
    }
    if let Some(reference) = runs.iter().find(|r| r.error.is_none()).map(|r| r.far_field.clone()) {
        let scale = reference.iter().flatten().map(|z| z[0].hypot(z[1])).fold(0.0, f64::max);
        for run in runs.iter_mut().filter(|r| r.error.is_none()) {
            let d = run
                .far_field
                .iter()
                .flatten()
                .zip(reference.iter().flatten())
                .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
                .fold(0.0, f64::max);
            run.far_field_rel_diff = Some(if scale > 0.0 { d / scale } else { d });
        }
    }
    let summary = SolveSummary {
        mesh: spec_str.clone(),
        frequency: freq,
        n: topo.n_edges(),
        far_field_directions: cfg.solver.far_field_directions.clone(),
        runs,
    };
    write_json(&out.join("solve.json"), &summary)?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn config_errors_are_classified() {
        let e = RunConfig::from_toml("meshes = []").unwrap_err();
        assert_eq!(e.class, ExitClass::Config);
        assert_eq!(RunConfig::from_toml("bogus = 1").unwrap_err().class, ExitClass::Config);
        let e: CliError = Error::NotConverged {
            method: "COCG",
            iterations: 3,
            residual: 1.0,
        }
        .into();
        assert_eq!(e.exit_code(), 5);
        assert_eq!(CliError::from(Error::OpenSurface(0, 1)).exit_code(), 3);
        assert_eq!(CliError::from(Error::ZeroBlock(1)).exit_code(), 4);
    }
}
