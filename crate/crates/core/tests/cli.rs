use std::process::Command;

use qhfilters::analysis::Formulation;
use qhfilters::cli::{cmd_decompose, cmd_filter, cmd_solve, ExitClass, RunConfig};
use qhfilters::filters::FilterBackend;

fn config(dir: &std::path::Path, mesh: &str) -> RunConfig {
    RunConfig {
        output_dir: dir.to_path_buf(),
        meshes: vec![mesh.into()],
        frequencies: vec![1e4],
        ..RunConfig::default()
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qhfilters"))
}

#[test]
fn decompose_reports_ranks_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_decompose("gen:icosphere/1", dir.path()).unwrap();
    assert_eq!(r.stats.n_edges, 120);
    assert_eq!((r.rank_sigma, r.rank_lambda, r.dim_h), (79, 41, 0));
    assert_eq!(r.sigma_t_lambda_max, 0);
    for f in [
        "sigma.csv",
        "lambda.csv",
        "sigma_laplacian.csv",
        "lambda_laplacian.csv",
        "decompose.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let torus = cmd_decompose("gen:torus/12x6", dir.path()).unwrap();
    assert_eq!(torus.dim_h, 2);
    assert!((torus.trace_p_h - 2.0).abs() < 1e-10);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let missing = bin()
        .args(["decompose", "/nonexistent/mesh.obj", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));
    let bad_gen = bin()
        .args(["decompose", "gen:klein-bottle", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(bad_gen.status.code(), Some(2));
    let cfg_path = dir.path().join("bad.toml");
    std::fs::write(&cfg_path, "frequencies = [-1.0]\n").unwrap();
    let bad_cfg = bin().args(["sweep", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(bad_cfg.status.code(), Some(2));
}

#[test]
fn filter_rank_out_of_range_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "gen:octahedron");
    cfg.filter.n = Some(9);
    assert_eq!(cmd_filter(&cfg).unwrap_err().class, ExitClass::Config);
    cfg.filter.n = Some(0);
    assert_eq!(cmd_filter(&cfg).unwrap_err().class, ExitClass::Config);
}

#[test]
fn full_rank_filter_reaches_the_projector() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "gen:icosphere/1");
    cfg.filter.n = Some(80);
    cfg.filter.backend = FilterBackend::ExactSvd;
    let r = cmd_filter(&cfg).unwrap();
    assert!(r.projector_limit_residual.unwrap() <= 1e-10, "{r:?}");
    assert!(dir.path().join("filter.json").exists());
}

#[test]
fn identity_formulation_matches_plain_and_w_matches_q() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "gen:icosphere/1");
    cfg.solver.tol = 1e-10;
    cfg.solver.formulations = vec![Formulation::Plain, Formulation::FilteredLs, Formulation::FilteredQh];
    let s = cmd_solve(&cfg).unwrap();
    for run in &s.runs {
        let diff = run.far_field_rel_diff.unwrap();
        assert!(diff < 1e-6, "{} differs by {diff:e}", run.formulation);
        assert!(run.report.as_ref().unwrap().converged);
        assert!(run.solution_file.as_ref().unwrap().exists());
    }
}

#[test]
fn plain_solve_exhausts_a_small_budget_where_filtered_qh_converges() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "gen:icosphere/2");
    cfg.solver.tol = 1e-8;
    cfg.solver.max_iter = 60;
    cfg.solver.formulations = vec![Formulation::FilteredQh, Formulation::Plain];
    let err = cmd_solve(&cfg).unwrap_err();
    assert_eq!(err.class, ExitClass::Convergence);
    let text = std::fs::read_to_string(dir.path().join("solve.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs[0]["report"]["converged"], true);
    assert!(runs[0]["report"]["iterations"].as_u64().unwrap() <= 20);
    assert!(runs[1]["error"].is_string());
}
