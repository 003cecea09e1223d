use std::fs;
use std::path::PathBuf;

use vsm_core::experiment::{run, ExperimentConfig, ExperimentKind};
use vsm_core::{InitialLaw, Metric, ModelParams, SolverGrid};

fn dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("vsm-exp-it-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    d
}

fn config(kind: ExperimentKind, tag: &str) -> ExperimentConfig {
    ExperimentConfig {
        experiment: kind,
        params: ModelParams::new(2.0, 1, 1.0),
        law: InitialLaw::point_mass(1.0),
        dt: 1e-3,
        n_values: vec![64, 1024],
        replications: 10,
        seed: 17,
        grid: Some(SolverGrid { x_max: 30.0, nx: 1200, nt: 800 }),
        output_dir: dir(tag),
        metric: Metric::Wasserstein1,
        times: vec![],
        sample_size: 100_000,
        snapshots: 20,
    }
}

fn column(path: &PathBuf, name: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|c| c == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn pde_check_on_the_reference_grid() {
    let mut cfg = config(ExperimentKind::PdeCheck, "pde");
    cfg.times = vec![0.5, 1.0];
    let report = run(&cfg).unwrap();
    assert!(report.passed(), "{:?}", report.checks);
    let paths = column(&cfg.output_dir.join("pde_residual.csv"), "path");
    let res = column(&cfg.output_dir.join("pde_residual.csv"), "residual");
    assert_eq!(paths.len(), 2 * 5 * 2);
    for (p, r) in paths.iter().zip(&res) {
        if p == "analytic" {
            assert!(r.parse::<f64>().unwrap().abs() <= 1e-4, "{r}");
        }
    }
}

#[test]
fn coarse_pde_grid_is_less_accurate() {
    let l1_at = |nx: usize, tag: &str| {
        let mut cfg = config(ExperimentKind::PdeCheck, tag);
        cfg.grid = Some(SolverGrid { x_max: 30.0, nx, nt: 800 });
        run(&cfg).unwrap();
        column(&cfg.output_dir.join("pde_l1.csv"), "l1_analytic")[0].parse::<f64>().unwrap()
    };
    assert!(l1_at(150, "coarse") >= l1_at(1200, "fine"));
}

#[test]
fn sampler_check_passes_ks() {
    let mut cfg = config(ExperimentKind::SamplerCheck, "ks");
    cfg.replications = 1;
    let report = run(&cfg).unwrap();
    assert_eq!(report.checks.len(), 1);
    assert!(report.passed(), "{:?}", report.checks);
}

#[test]
fn rank_gaps_shrink_with_n() {
    let cfg = config(ExperimentKind::RankCheck, "rank");
    let report = run(&cfg).unwrap();
    assert!(report.passed(), "{:?}", report.checks);
    let med = column(&cfg.output_dir.join("rank_summary.csv"), "median_mean_gap");
    assert_eq!(med.len(), 2);
}

#[test]
fn fixed_seed_reruns_are_byte_identical() {
    let mut a = config(ExperimentKind::Convergence, "rerun-a");
    a.replications = 1;
    let mut b = a.clone();
    b.output_dir = dir("rerun-b");
    run(&a).unwrap();
    run(&b).unwrap();
    for t in ["convergence.csv", "convergence_summary.csv", "summary.json"] {
        assert_eq!(fs::read(a.output_dir.join(t)).unwrap(), fs::read(b.output_dir.join(t)).unwrap());
    }
}

#[test]
fn adding_replications_keeps_earlier_rows() {
    let mut few = config(ExperimentKind::Convergence, "few");
    few.n_values = vec![64];
    few.replications = 2;
    let mut more = few.clone();
    more.replications = 4;
    more.output_dir = dir("more");
    run(&few).unwrap();
    run(&more).unwrap();
    let a = column(&few.output_dir.join("convergence.csv"), "value");
    let b = column(&more.output_dir.join("convergence.csv"), "value");
    assert_eq!(a[..], b[..2]);
}
