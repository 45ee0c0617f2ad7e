//! Condition numbers, Laplacian-ordered spectra, slope fits and
//! condition-number sweeps over meshes and frequencies.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::efie::{assemble_operators, OperatorSet, WaveContext};
use crate::filters::FilterBackend;
use crate::linalg::{self, c64, CMat, RMat};
use crate::mesh::{build_basis_topology, compute_stats, resolve_mesh};
use crate::precond::{preconditioned_system, PrecondConfig, PrecondContext, PreconditionerBundle, SolveOptions};
use crate::qhd::GraphLaplacian;
use crate::{Error, Result};

/// Singular values below this fraction of `σ_max` count as nullspace.
pub const NULL_THRESHOLD: f64 = 1e-12;

/// `σ_max / σ_min` over the nonzero singular values of `a`, after dropping
/// `exclude_isolated` outliers.
///
/// Values below `null_rel · σ_max` are treated as nullspace. Outliers are
/// removed one at a time from whichever end of the spectrum is separated from
/// its neighbour by the larger ratio.
///
/// ```
/// use qhfilters::analysis::condition_number;
/// use qhfilters::linalg::{to_complex, RMat};
/// let a = RMat::from_fn(3, 3, |i, j| if i == j { [10.0, 1.0, 0.0][i] } else { 0.0 });
/// assert!((condition_number(&to_complex(&a), 0, 1e-12).unwrap() - 10.0).abs() < 1e-12);
/// ```
pub fn condition_number(a: &CMat, exclude_isolated: usize, null_rel: f64) -> Result<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    if a.col_iter()
        .flat_map(|c| c.iter())
        .any(|z| !(z.re.is_finite() && z.im.is_finite()))
    {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let sv = linalg::complex_singular_values(a)?;
    cond_from_singular_values(&sv, exclude_isolated, null_rel)
}

/// [`condition_number`] from precomputed singular values (any order).
pub fn cond_from_singular_values(sv: &[f64], exclude_isolated: usize, null_rel: f64) -> Result<f64> {
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if !(smax > 0.0) {
        return Err(Error::InvalidArgument("all-zero matrix".into()));
    }
    let mut s: Vec<f64> = sv.iter().copied().filter(|&v| v > null_rel * smax).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let (mut lo, mut hi) = (0usize, s.len());
    for _ in 0..exclude_isolated {
        if hi - lo <= 1 {
            break;
        }
        let top = s[lo] / s[lo + 1];
        let bottom = s[hi - 2] / s[hi - 1];
        if top > bottom {
            lo += 1;
        } else {
            hi -= 1;
        }
    }
    Ok(s[lo] / s[hi - 1])
}

/// Operator magnitudes against Laplacian-ordered directions.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    /// Spectral index `ξ`, 1-based over the nonzero Laplacian eigenvalues.
    pub labels: Vec<usize>,
    /// `|vᵀ A v| / vᵀv`, scaled so that the first entry is one.
    pub values: Vec<f64>,
    /// Unscaled first value.
    pub scale: f64,
    pub operator: String,
    pub mesh: String,
    pub frequency: f64,
}

/// Rayleigh magnitudes `|v_jᵀ A v_j| / v_jᵀ v_j` for the columns of
/// `directions`, assumed ordered by ascending Laplacian eigenvalue.
///
/// Zero directions are skipped.
pub fn spectrum_by_laplacian_ordering(op_block: &CMat, directions: &RMat) -> Result<SpectrumReport> {
    if op_block.nrows() != op_block.ncols() || op_block.ncols() != directions.nrows() {
        return Err(Error::InvalidArgument(format!(
            "operator {}x{} and directions {}x{} are incompatible",
            op_block.nrows(),
            op_block.ncols(),
            directions.nrows(),
            directions.ncols()
        )));
    }
    let (re, im) = linalg::split_complex(op_block);
    let ar = &re * directions;
    let ai = &im * directions;
    let mut labels = Vec::new();
    let mut raw = Vec::new();
    for j in 0..directions.ncols() {
        let v = directions.col_as_slice(j);
        let vv = linalg::dot(v, v);
        if vv == 0.0 {
            continue;
        }
        let q = c64::new(linalg::dot(v, ar.col_as_slice(j)), linalg::dot(v, ai.col_as_slice(j)));
        labels.push(labels.len() + 1);
        raw.push(q.norm() / vv);
    }
    let scale = raw.first().copied().unwrap_or(1.0);
    let values = if scale > 0.0 {
        raw.iter().map(|v| v / scale).collect()
    } else {
        raw
    };
    Ok(SpectrumReport {
        labels,
        values,
        scale,
        operator: String::new(),
        mesh: String::new(),
        frequency: 0.0,
    })
}

/// Directions `X u_j` for the nonzero Laplacian eigenvectors `u_j`, ascending.
pub fn helmholtz_directions(x: &RMat, lap: &GraphLaplacian) -> Result<RMat> {
    let eig = lap.eigen()?;
    let skip = lap.nullspace_dim();
    let n = lap.dim() - skip;
    let u = RMat::from_fn(lap.dim(), n, |i, j| eig.vectors[(i, skip + j)]);
    Ok(x * u)
}

/// Least-squares slope of `log value` against `log ξ` over entries whose
/// 1-based position lies in `window` (inclusive).
pub fn slope_fit(report: &SpectrumReport, window: (usize, usize)) -> Result<f64> {
    let pts: Vec<(f64, f64)> = report
        .labels
        .iter()
        .zip(&report.values)
        .filter(|(&l, &v)| l >= window.0 && l <= window.1 && v > 0.0)
        .map(|(&l, &v)| ((l as f64).ln(), v.ln()))
        .collect();
    if pts.len() < 8 {
        return Err(Error::InvalidArgument(format!(
            "slope window {window:?} holds {} points, need at least 8",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidArgument("degenerate slope window".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    Plain,
    LoopStar,
    FilteredLs,
    QhProjectors,
    FilteredQh,
    FilteredQhNorm,
}

impl Formulation {
    pub const ALL: [Formulation; 6] = [
        Formulation::Plain,
        Formulation::LoopStar,
        Formulation::FilteredLs,
        Formulation::QhProjectors,
        Formulation::FilteredQh,
        Formulation::FilteredQhNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Formulation::Plain => "plain",
            Formulation::LoopStar => "loop-star",
            Formulation::FilteredLs => "filtered-ls",
            Formulation::QhProjectors => "qh-projectors",
            Formulation::FilteredQh => "filtered-qh",
            Formulation::FilteredQhNorm => "filtered-qh-norm",
        }
    }

    /// Whether results depend on the filter backend.
    pub fn is_filtered(self) -> bool {
        matches!(
            self,
            Formulation::FilteredLs | Formulation::FilteredQh | Formulation::FilteredQhNorm
        )
    }

    /// Builds the preconditioner for this formulation.
    pub fn bundle(self, ctx: &PrecondContext, ops: &OperatorSet) -> Result<PreconditionerBundle> {
        match self {
            Formulation::Plain => Ok(PreconditionerBundle::identity(ops.ts.nrows())),
            Formulation::LoopStar => ctx.loop_star(ops),
            Formulation::FilteredLs => ctx.filtered_loop_star(ops),
            Formulation::QhProjectors => ctx.qh_projectors(ops),
            Formulation::FilteredQh => ctx.qh_filters(ops),
            Formulation::FilteredQhNorm => ctx.qh_filters_norm_scaled(ops),
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Formulation::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown formulation {s:?}")))
    }
}

/// Everything a sweep needs besides the output path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `gen:` generator strings or mesh file paths.
    pub meshes: Vec<String>,
    pub frequencies: Vec<f64>,
    pub formulations: Vec<Formulation>,
    /// Filtered formulations run once per backend.
    pub backends: Vec<FilterBackend>,
    pub precond: PrecondConfig,
    /// Overrides the per-bundle isolated-value count when set.
    pub exclude_isolated: Option<usize>,
    pub null_threshold: f64,
    /// Also solve each system and record iteration counts.
    pub solve: Option<SolveOptions>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            meshes: vec!["gen:icosphere/1".into(), "gen:icosphere/2".into()],
            frequencies: vec![1e4, 1e6],
            formulations: vec![
                Formulation::Plain,
                Formulation::LoopStar,
                Formulation::FilteredLs,
                Formulation::QhProjectors,
                Formulation::FilteredQh,
            ],
            backends: vec![FilterBackend::ExactSvd],
            precond: PrecondConfig::default(),
            exclude_isolated: None,
            null_threshold: NULL_THRESHOLD,
            solve: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.meshes.is_empty() {
            return Err(Error::Config("no meshes listed".into()));
        }
        if self.frequencies.is_empty() {
            return Err(Error::Config("no frequencies listed".into()));
        }
        if let Some(f) = self.frequencies.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
            return Err(Error::Config(format!("frequency {f} must be positive")));
        }
        if self.formulations.is_empty() {
            return Err(Error::Config("no formulations listed".into()));
        }
        if self.backends.is_empty() && self.formulations.iter().any(|f| f.is_filtered()) {
            return Err(Error::Config("filtered formulations need at least one backend".into()));
        }
        if self.precond.alpha < 2 {
            return Err(Error::Config("alpha must be at least 2".into()));
        }
        if !(self.null_threshold >= 0.0 && self.null_threshold < 1.0) {
            return Err(Error::Config("null_threshold must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One `(mesh, frequency, formulation, backend)` result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondSweepRow {
    pub mesh: String,
    pub h_avg: f64,
    pub n: usize,
    pub frequency: f64,
    pub formulation: Formulation,
    pub backend: String,
    pub cond: Option<f64>,
    pub isolated_excluded: usize,
    pub iterations: Option<usize>,
    pub error: Option<String>,
}

impl CondSweepRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

struct Job {
    formulation: Formulation,
    backend: Option<FilterBackend>,
}

fn jobs(cfg: &SweepConfig) -> Vec<Job> {
    let mut out = Vec::new();
    for &f in &cfg.formulations {
        if f.is_filtered() {
            out.extend(cfg.backends.iter().map(|b| Job {
                formulation: f,
                backend: Some(b.clone()),
            }));
        } else {
            out.push(Job {
                formulation: f,
                backend: None,
            });
        }
    }
    out
}

fn run_job(
    job: &Job,
    ctx: &PrecondContext,
    ops: &OperatorSet,
    cfg: &SweepConfig,
) -> Result<(f64, usize, Option<usize>)> {
    let bundle = job.formulation.bundle(ctx, ops)?;
    let isolated = cfg.exclude_isolated.unwrap_or(bundle.meta.isolated_values);
    let sys = preconditioned_system(&bundle, ops, true);
    let cond = condition_number(&sys.matrix, isolated, cfg.null_threshold)?;
    let iterations = match &cfg.solve {
        Some(opts) => {
            let (_, it, res) = crate::precond::cocg(&sys.matrix, &sys.rhs, opts.tol, opts.max_iter);
            if res > opts.tol {
                return Err(Error::NotConverged {
                    method: "COCG",
                    iterations: it,
                    residual: res,
                });
            }
            Some(it)
        }
        None => None,
    };
    Ok((cond, isolated, iterations))
}

/// Runs every formulation on every `(mesh, frequency)` pair.
///
/// Failures are recorded in the row's `error` field and the sweep continues.
/// Rows come out in config order: mesh, then frequency, then formulation,
/// then backend.
pub fn cond_sweep(cfg: &SweepConfig) -> Result<Vec<CondSweepRow>> {
    cfg.validate()?;
    let jobs = jobs(cfg);
    let mut rows = Vec::new();
    for spec in &cfg.meshes {
        let fail_all = |rows: &mut Vec<CondSweepRow>, h: f64, n: usize, e: &Error| {
            for &f in &cfg.frequencies {
                for job in &jobs {
                    rows.push(CondSweepRow {
                        mesh: spec.clone(),
                        h_avg: h,
                        n,
                        frequency: f,
                        formulation: job.formulation,
                        backend: backend_label(job),
                        cond: None,
                        isolated_excluded: 0,
                        iterations: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        };
        let mesh = match resolve_mesh(spec) {
            Ok(m) => m,
            Err(e) => {
                fail_all(&mut rows, f64::NAN, 0, &e);
                continue;
            }
        };
        let topo = build_basis_topology(&mesh);
        let stats = compute_stats(&mesh);
        let n = topo.n_edges();
        // contexts per backend, built lazily and shared across frequencies
        let mut contexts: Vec<(Option<FilterBackend>, Result<PrecondContext>)> = Vec::new();
        for &freq in &cfg.frequencies {
            let ops = WaveContext::vacuum(freq).map(|w| assemble_operators(&mesh, &topo, &w));
            for job in &jobs {
                let mut row = CondSweepRow {
                    mesh: spec.clone(),
                    h_avg: stats.h_avg,
                    n,
                    frequency: freq,
                    formulation: job.formulation,
                    backend: backend_label(job),
                    cond: None,
                    isolated_excluded: 0,
                    iterations: None,
                    error: None,
                };
                let result = match &ops {
                    Err(e) => Err(Error::InvalidArgument(e.to_string())),
                    Ok(ops) => {
                        let key = job.backend.clone();
                        let pos = match contexts.iter().position(|(b, _)| *b == key) {
                            Some(p) => p,
                            None => {
                                let mut pc = cfg.precond.clone();
                                if let Some(b) = &key {
                                    pc.backend = b.clone();
                                }
                                contexts.push((key, PrecondContext::new(&mesh, &topo, pc)));
                                contexts.len() - 1
                            }
                        };
                        match &contexts[pos].1 {
                            Ok(ctx) => {
                                let prepared = ctx.prepare(ops);
                                run_job(job, ctx, &prepared, cfg)
                            }
                            Err(e) => Err(Error::Decomposition(e.to_string())),
                        }
                    }
                };
                match result {
                    Ok((cond, iso, it)) => {
                        row.cond = Some(cond);
                        row.isolated_excluded = iso;
                        row.iterations = it;
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

fn backend_label(job: &Job) -> String {
    job.backend.as_ref().map_or("none", |b| b.name()).to_string()
}

/// CSV column order.
pub const CSV_HEADER: [&str; 10] = [
    "mesh",
    "h_avg",
    "n",
    "frequency",
    "formulation",
    "backend",
    "cond",
    "isolated_excluded",
    "iterations",
    "error",
];

fn sci(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Writes rows as CSV with floats in full-precision scientific notation.
pub fn write_sweep_csv<W: Write>(rows: &[CondSweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.mesh.clone(),
            sci(r.h_avg),
            r.n.to_string(),
            sci(r.frequency),
            r.formulation.to_string(),
            r.backend.clone(),
            r.cond.map(sci).unwrap_or_default(),
            r.isolated_excluded.to_string(),
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(())
}

/// `max/min` of the successful `cond` values selected by `pred`.
pub fn cond_spread(rows: &[CondSweepRow], pred: impl Fn(&CondSweepRow) -> bool) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| pred(r)).filter_map(|r| r.cond).collect();
    if v.is_empty() {
        return None;
    }
    let max = v.iter().copied().fold(f64::MIN, f64::max);
    let min = v.iter().copied().fold(f64::MAX, f64::min);
    Some(max / min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> RMat {
        let a = RMat::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        a.qr().compute_Q()
    }

    #[test]
    fn identity_and_diagonal() {
        let i = linalg::to_complex(&RMat::identity(5, 5));
        assert!((condition_number(&i, 0, NULL_THRESHOLD).unwrap() - 1.0).abs() < 1e-12);
        assert!(condition_number(&CMat::zeros(3, 3), 0, NULL_THRESHOLD).is_err());
        assert_eq!(
            cond_from_singular_values(&[100.0, 5.0, 4.0, 2.0, 1e-3], 1, 1e-12).unwrap(),
            50.0
        );
        assert_eq!(
            cond_from_singular_values(&[100.0, 5.0, 4.0, 2.0, 1e-3], 2, 1e-12).unwrap(),
            2.5
        );
    }

    #[test]
    fn spd_matches_eigenvalue_ratio_and_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let b = RMat::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let a = &b * b.transpose() + RMat::identity(n, n) * 0.1;
        let ev = linalg::SymEigen::new(&a).unwrap().values;
        let oracle = ev[n - 1] / ev[0];
        let c = condition_number(&linalg::to_complex(&a), 0, NULL_THRESHOLD).unwrap();
        assert!((c - oracle).abs() < 1e-10 * oracle);
        let q = random_orthogonal(n, &mut rng);
        let rotated = &q * &a * q.transpose();
        let cr = condition_number(&linalg::to_complex(&rotated), 0, NULL_THRESHOLD).unwrap();
        assert!((cr - c).abs() < 1e-10 * c);
    }

    #[test]
    fn slope_of_power_laws() {
        let labels: Vec<usize> = (1..=50).collect();
        let mk = |f: &dyn Fn(f64) -> f64| SpectrumReport {
            labels: labels.clone(),
            values: labels.iter().map(|&l| f(l as f64)).collect(),
            scale: 1.0,
            operator: String::new(),
            mesh: String::new(),
            frequency: 0.0,
        };
        assert!((slope_fit(&mk(&|x| x.sqrt()), (1, 50)).unwrap() - 0.5).abs() < 1e-6);
        assert!(slope_fit(&mk(&|_| 3.0), (1, 50)).unwrap().abs() < 1e-12);
        assert!(slope_fit(&mk(&|_| 3.0), (1, 5)).is_err());
    }

    #[test]
    fn diagonal_operator_spectrum() {
        let d = [4.0, 2.0, 1.0, 0.5];
        let a = linalg::to_complex(&RMat::from_fn(4, 4, |i, j| if i == j { d[i] } else { 0.0 }));
        let r = spectrum_by_laplacian_ordering(&a, &RMat::identity(4, 4)).unwrap();
        assert_eq!(r.values, vec![1.0, 0.5, 0.25, 0.125]);
        assert_eq!(r.scale, 4.0);
    }

    #[test]
    fn csv_is_deterministic_and_reports_errors() {
        let cfg = SweepConfig {
            meshes: vec!["gen:tetrahedron".into(), "gen:nothing".into()],
            frequencies: vec![1e7],
            formulations: vec![Formulation::Plain, Formulation::FilteredQh],
            ..Default::default()
        };
        let rows = cond_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].is_ok() && rows[1].is_ok());
        assert!(rows[2].error.is_some());
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_sweep_csv(&rows, &mut a).unwrap();
        write_sweep_csv(&cond_sweep(&cfg).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("mesh,h_avg,n,frequency,formulation,backend,cond"));
        assert!(SweepConfig {
            meshes: vec![],
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
