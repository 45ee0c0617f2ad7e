//! One PASS/FAIL line per acceptance criterion; the test fails if any does.

use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use qhfilters::analysis::{
    cond_spread, cond_sweep, helmholtz_directions, slope_fit, spectrum_by_laplacian_ordering, CondSweepRow,
    Formulation, SweepConfig,
};
use qhfilters::cli::{cmd_sweep, RunConfig};
use qhfilters::efie::{assemble_operators, WaveContext};
use qhfilters::filters::{
    build_filter, filter_projector, filtered_loop_star, svd_filtered_laplacian, FilterBackend, ProjectorKind,
    SpectralFilterSpec,
};
use qhfilters::linalg::{self, CMat, RMat, SymEigen};
use qhfilters::mesh::{
    build_basis_topology, deformed_sphere, gram_patch, gram_pyramid, gram_rwg, icosphere, octahedron, tetrahedron,
    torus, TriangleMesh,
};
use qhfilters::precond::{PrecondConfig, PrecondContext, PrecondMap};
use qhfilters::qhd::{graph_laplacian, lambda_matrix, normalized_bases, projectors, sigma_matrix, GraphLaplacian};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(t: Instant, limit: Duration, msg: String) -> Check {
    let e = t.elapsed();
    ensure(
        e < limit,
        format!("{msg}; {:.1}s (limit {}s)", e.as_secs_f64(), limit.as_secs()),
    )
}

fn chebyshev() -> FilterBackend {
    FilterBackend::Chebyshev {
        butterworth_order: 100,
        poly_count: 200,
    }
}

/// Relative size of `a` against `scale`.
fn rel(a: &RMat, scale: f64) -> f64 {
    linalg::frobenius(a) / scale
}

fn identity_suite() -> Check {
    let t = Instant::now();
    let meshes: Vec<(&str, TriangleMesh)> = vec![
        ("tetrahedron", tetrahedron()),
        ("icosphere/2", icosphere(2, 1.0).unwrap()),
        ("torus", torus(1.0, 0.1, 24, 6).unwrap()),
    ];
    let mut worst: f64 = 0.0;
    for (name, mesh) in &meshes {
        let topo = build_basis_topology(mesh);
        let (s, l) = (sigma_matrix(&topo), lambda_matrix(&topo));
        let st_l = s.transpose_times(&l);
        if st_l.iter().flatten().any(|&v| v != 0) {
            return Err(format!("{name}: ΣᵀΛ has nonzero entries"));
        }
        let p = projectors(&s, &l).unwrap();
        let n = p.dim();
        let sq = |a: &RMat| rel(&(a * a - a), linalg::frobenius(a).max(1.0));
        let residuals = [
            sq(&p.p_sigma),
            sq(&p.p_lambda_h),
            sq(&p.p_h),
            rel(&(&p.p_sigma + &p.p_lambda_h - RMat::identity(n, n)), (n as f64).sqrt()),
            rel(&(&p.p_sigma * &p.p_lambda_h), (n as f64).sqrt()),
        ];
        for (x, lap) in [(s.to_dense(), graph_laplacian(&s)), (l.to_dense(), graph_laplacian(&l))] {
            let dim = lap.dim();
            let idx: Vec<usize> = [1, dim / 4, dim / 2, (3 * dim) / 4, dim]
                .into_iter()
                .filter(|&i| i >= 1)
                .collect();
            let bases: Vec<RMat> = idx
                .iter()
                .map(|&i| filtered_loop_star(&x, &svd_filtered_laplacian(&lap, i).unwrap()).unwrap())
                .collect();
            let scale = linalg::frobenius(&(x.transpose() * &x));
            for a in 0..idx.len() {
                for b in 0..idx.len() {
                    let lo = a.min(b);
                    let d = bases[a].transpose() * &bases[b] - bases[lo].transpose() * &bases[lo];
                    worst = worst.max(rel(&d, scale));
                }
            }
            // disjoint rank ranges give orthogonal column blocks
            for w in bases.windows(3) {
                let d1 = &w[1] - &w[0];
                let d2 = &w[2] - &w[1];
                worst = worst.max(rel(&(d1.transpose() * d2), scale));
            }
        }
        let ps = filter_projector(
            &s.to_dense(),
            &svd_filtered_laplacian(&graph_laplacian(&s), graph_laplacian(&s).dim()).unwrap(),
            ProjectorKind::Sigma,
            &p,
        )
        .unwrap();
        worst = worst.max(linalg::rel_diff(&ps, &p.p_sigma));
        worst = residuals.iter().copied().fold(worst, f64::max);
    }
    let msg = format!("ΣᵀΛ = 0 exactly; worst projector/filter identity residual {worst:.1e}");
    if worst > 1e-10 {
        return Err(msg);
    }
    within(t, Duration::from_secs(60), msg)
}

fn normalized_decomposition_suite() -> Check {
    let mut worst: f64 = 0.0;
    for mesh in [
        octahedron(),
        icosphere(2, 1.0).unwrap(),
        deformed_sphere(1, 7.17).unwrap(),
    ] {
        let topo = build_basis_topology(&mesh);
        let (s, l) = (sigma_matrix(&topo), lambda_matrix(&topo));
        let nb = normalized_bases(
            &s,
            &l,
            &gram_rwg(&mesh, &topo).to_dense(),
            &gram_patch(&mesh),
            &gram_pyramid(&mesh).to_dense(),
        )
        .unwrap();
        let (sl, ll) = (nb.sigma_laplacian(1).unwrap(), nb.lambda_laplacian(1).unwrap());
        let n = topo.n_edges();
        for seed in 0..100u64 {
            let j = linalg::random_vector(n, seed);
            let (lt, st) = nb.decompose(&sl, &ll, &j).unwrap();
            let mut rec = vec![0.0; n];
            linalg::dense_matvec(&nb.lambda, &lt, &mut rec);
            let mut sigma_part = vec![0.0; n];
            linalg::dense_matvec(&nb.sigma, &st, &mut sigma_part);
            let err: f64 = rec
                .iter()
                .zip(&sigma_part)
                .zip(&j)
                .map(|((a, b), c)| (a + b - c).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(err / linalg::norm(&j));
        }
    }
    ensure(
        worst <= 1e-10,
        format!("worst reconstruction error over 3 meshes x 100 vectors {worst:.1e}"),
    )
}

/// `‖W − W_svd‖₂`
fn spectral_error(lap: &GraphLaplacian, spec: &SpectralFilterSpec) -> f64 {
    let w = build_filter(lap, spec).unwrap().window_dense().unwrap();
    let oracle = svd_filtered_laplacian(lap, spec.n).unwrap().window_dense().unwrap();
    SymEigen::new(&(&w - &oracle)).unwrap().max_abs_eigenvalue()
}

/// Index `i` in `range` maximizing the relative gap `(λ_{i+1} − λ_i)/λ_{i+1}` (0-based values).
fn widest_gap(values: &[f64], range: std::ops::Range<usize>) -> usize {
    range
        .max_by(|&a, &b| {
            let g = |i: usize| (values[i] - values[i - 1]) / values[i];
            g(a).total_cmp(&g(b))
        })
        .unwrap()
}

fn backend_equivalence() -> Check {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, mesh) in [
        ("octahedron", octahedron()),
        ("icosphere/2", icosphere(2, 1.0).unwrap()),
    ] {
        let topo = build_basis_topology(&mesh);
        for x in [sigma_matrix(&topo), lambda_matrix(&topo)] {
            let lap = graph_laplacian(&x);
            let values = lap.eigenvalues().unwrap();
            let dim = values.len();
            // log-symmetric cutoff between λ_n and λ_{n+1}
            let cutoff = |n: usize| (values[n - 1] * values[n]).sqrt();
            let n = widest_gap(&values, (dim / 4).max(2)..(3 * dim).div_ceil(4));
            let power = spectral_error(
                &lap,
                &SpectralFilterSpec::new(n, FilterBackend::PowerMethod { tol: 1e-10 }),
            );
            let n_bw = widest_gap(&values, 2..dim);
            let bw = spectral_error(
                &lap,
                &SpectralFilterSpec::new(
                    n_bw,
                    FilterBackend::Butterworth {
                        order: 100,
                        truncation: None,
                    },
                )
                .with_cutoff(cutoff(n_bw)),
            );
            let ch = spectral_error(&lap, &SpectralFilterSpec::new(n, chebyshev()).with_cutoff(cutoff(n)));
            ok &= power <= 1e-6 && bw <= 1e-6 && ch <= 1e-2;
            parts.push(format!(
                "{name} N_X={dim}: mid-spectrum n={n} power {power:.1e} chebyshev {ch:.1e}; gap n={n_bw} butterworth {bw:.1e}"
            ));
        }
    }
    let msg = parts.join("; ");
    if !ok {
        return Err(msg);
    }
    within(t, Duration::from_secs(300), msg)
}

fn efie_oracle() -> Check {
    let mesh = icosphere(2, 1.0).unwrap();
    let topo = build_basis_topology(&mesh);
    let s = sigma_matrix(&topo).to_dense();
    let l = lambda_matrix(&topo).to_dense();
    let freqs = [1e3, 1e4, 1e5];
    let sets: Vec<_> = freqs
        .iter()
        .map(|&f| {
            let ctx = WaveContext::vacuum(f).unwrap();
            (ctx.k, ctx.th_constant(), assemble_operators(&mesh, &topo, &ctx))
        })
        .collect();
    let (k0, c0, ops0) = &sets[1];
    let srs = linalg::real_times_complex(&s, &linalg::complex_times_real(&ops0.r, &s.transpose().to_owned()));
    let fact = linalg::crel_diff(&ops0.th, &(srs * faer::Scale(*c0)));
    let loops = linalg::cfrobenius(&linalg::complex_times_real(&ops0.th, &l)) / linalg::cfrobenius(&ops0.th);
    let mut scaling: f64 = 0.0;
    for (k, _, ops) in &sets {
        let ts_ratio = linalg::crel_diff(&(&ops0.ts * faer::Scale(linalg::c64::new(*k / k0, 0.0))), &ops.ts);
        let th_ratio = linalg::crel_diff(&(&ops0.th * faer::Scale(linalg::c64::new(k0 / *k, 0.0))), &ops.th);
        scaling = scaling.max(ts_ratio).max(th_ratio);
    }
    ensure(
        fact <= 1e-8 && loops <= 1e-8 && scaling <= 1e-2,
        format!("Th vs cΣRΣᵀ {fact:.1e}; ‖ThΛ‖/‖Th‖ {loops:.1e}; k-scaling deviation over 1e3..1e5 Hz {scaling:.1e}"),
    )
}

fn spectral_slopes() -> Check {
    let mesh = deformed_sphere(3, 7.17).unwrap();
    let topo = build_basis_topology(&mesh);
    let cfg = PrecondConfig {
        normalized: true,
        ..Default::default()
    };
    let ctx = PrecondContext::new(&mesh, &topo, cfg).unwrap();
    let ops = ctx.prepare(&assemble_operators(&mesh, &topo, &WaveContext::vacuum(1e6).unwrap()));
    let bundle = ctx.qh_filters(&ops).unwrap();
    let PrecondMap::Complex(q) = &bundle.map else {
        return Err("Q map is not complex".into());
    };
    let loops = helmholtz_directions(&ctx.lambda, &ctx.lambda_lap).unwrap();
    let stars = helmholtz_directions(&ctx.sigma, &ctx.sigma_lap).unwrap();
    let slope = |op: &CMat, d: &RMat| {
        let r = spectrum_by_laplacian_ordering(op, d).unwrap();
        slope_fit(&r, (1, r.values.len() / 4)).unwrap()
    };
    let ts = slope(&ops.ts, &loops);
    let th = slope(&ops.th, &stars);
    let qts = slope(&(q * &ops.ts * q), &loops);
    let qth = slope(&(q * &ops.th * q), &stars);
    ensure(
        (ts + 0.5).abs() <= 0.15 && (th - 0.5).abs() <= 0.15 && qts.abs() <= 0.1 && qth.abs() <= 0.1,
        format!(
            "N={}: Ts loop slope {ts:.3}, Th star slope {th:.3}; preconditioned {qts:.3}, {qth:.3}",
            topo.n_edges()
        ),
    )
}

fn spread(rows: &[CondSweepRow], f: Formulation, backend: &str) -> f64 {
    cond_spread(rows, |r| r.formulation == f && r.backend == backend).unwrap_or(f64::NAN)
}

fn cond_at(rows: &[CondSweepRow], mesh: &str, freq: f64, f: Formulation) -> f64 {
    rows.iter()
        .find(|r| r.mesh == mesh && r.frequency == freq && r.formulation == f)
        .and_then(|r| r.cond)
        .unwrap_or(f64::NAN)
}

fn conditioning_sweep() -> Check {
    let t = Instant::now();
    let (coarse, fine) = ("gen:icosphere/2", "gen:icosphere/3");
    let cfg = SweepConfig {
        meshes: vec![coarse.into(), fine.into()],
        frequencies: vec![1e4, 1e6],
        formulations: vec![
            Formulation::Plain,
            Formulation::LoopStar,
            Formulation::FilteredLs,
            Formulation::QhProjectors,
            Formulation::FilteredQh,
        ],
        backends: vec![FilterBackend::ExactSvd, chebyshev()],
        ..Default::default()
    };
    let rows = cond_sweep(&cfg).unwrap();
    if let Some(r) = rows.iter().find(|r| !r.is_ok()) {
        return Err(format!("row failed: {r:?}"));
    }
    let plain = spread(&rows, Formulation::Plain, "none");
    let ls_freq = [coarse, fine]
        .iter()
        .map(|m| {
            cond_at(&rows, m, 1e6, Formulation::LoopStar).max(cond_at(&rows, m, 1e4, Formulation::LoopStar))
                / cond_at(&rows, m, 1e6, Formulation::LoopStar).min(cond_at(&rows, m, 1e4, Formulation::LoopStar))
        })
        .fold(0.0, f64::max);
    let growth = |f| cond_at(&rows, fine, 1e6, f) / cond_at(&rows, coarse, 1e6, f);
    let (ls_h, plain_h) = (growth(Formulation::LoopStar), growth(Formulation::Plain));
    let filtered: Vec<(String, f64)> = [Formulation::FilteredLs, Formulation::FilteredQh]
        .iter()
        .flat_map(|&f| ["svd", "chebyshev"].map(|b| (format!("{f}/{b}"), spread(&rows, f, b))))
        .collect();

    let torus_cfg = SweepConfig {
        meshes: vec!["gen:torus/24x6".into(), "gen:torus/48x12".into()],
        frequencies: vec![1e4, 1e6],
        formulations: vec![Formulation::FilteredQh],
        backends: vec![FilterBackend::ExactSvd, chebyshev()],
        ..Default::default()
    };
    let torus_rows = cond_sweep(&torus_cfg).unwrap();
    if let Some(r) = torus_rows.iter().find(|r| !r.is_ok()) {
        return Err(format!("torus row failed: {r:?}"));
    }
    let torus_spread = ["svd", "chebyshev"].map(|b| spread(&torus_rows, Formulation::FilteredQh, b));
    let tm = torus(1.0, 0.1, 24, 6).unwrap();
    let tt = build_basis_topology(&tm);
    let trace_h = projectors(&sigma_matrix(&tt), &lambda_matrix(&tt))
        .unwrap()
        .harmonic_dim();

    let ok = plain > 10.0
        && ls_freq < 3.0
        && ls_h > plain_h
        && filtered.iter().all(|(_, s)| *s < 3.0)
        && torus_spread.iter().all(|s| *s < 3.0)
        && (trace_h - 2.0).abs() < 1e-8;
    let msg = format!(
        "plain spread {plain:.1e}; loop-star freq spread {ls_freq:.2}, h-growth {ls_h:.2} vs plain {plain_h:.2}; {}; torus Q spreads {:.2}/{:.2}, trace P^H {trace_h:.6}",
        filtered.iter().map(|(n, s)| format!("{n} {s:.2}")).collect::<Vec<_>>().join(", "),
        torus_spread[0],
        torus_spread[1]
    );
    if !ok {
        return Err(msg);
    }
    within(t, Duration::from_secs(1200), msg)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        meshes: vec!["gen:icosphere/1".into(), "gen:octahedron".into()],
        frequencies: vec![1e5, 1e7],
        formulations: Formulation::ALL.to_vec(),
        backends: vec![FilterBackend::ExactSvd, chebyshev()],
        ..Default::default()
    };
    let mut outputs = Vec::new();
    for run in 0..2 {
        cfg.output_dir = dir.path().join(format!("run{run}"));
        let (summary, _) = cmd_sweep(&cfg).map_err(|e| e.message)?;
        outputs.push(std::fs::read(summary.csv).unwrap());
    }
    ensure(
        outputs[0] == outputs[1] && !outputs[0].is_empty(),
        format!(
            "two sweep runs, {} CSV bytes each, identical: {}",
            outputs[0].len(),
            outputs[0] == outputs[1]
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 7] = [
        ("algebraic identity suite", identity_suite),
        ("normalized primal decomposition", normalized_decomposition_suite),
        ("backend equivalence", backend_equivalence),
        ("EFIE oracle", efie_oracle),
        ("spectral slopes", spectral_slopes),
        ("conditioning sweep", conditioning_sweep),
        ("determinism", determinism),
    ];
    // ACCEPTANCE_ONLY=3,5 runs a subset
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let t = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        let line = match result {
            Ok(msg) => format!("PASS {} {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                format!("FAIL {} {name}: {msg} [{secs:.1}s]", i + 1)
            }
        };
        // the raw handle is not captured by the test harness, so the verdicts
        // show up in plain `cargo test` output too
        let _ = writeln!(std::io::stdout().lock(), "{line}");
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
