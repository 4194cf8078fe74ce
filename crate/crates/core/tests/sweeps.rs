use brownsim::sweep::{compare, run_single, run_sweep, GridParam, SweepSpec};
use brownsim::RunConfig;

fn small() -> RunConfig {
    RunConfig {
        hosts: vec![3, 3],
        vms: vec![3, 3, 3, 3],
        horizon_intervals: 48,
        ..Default::default()
    }
}

#[test]
fn one_point_grid_matches_a_single_run() {
    let spec = SweepSpec {
        algorithms: vec!["pco".into(), "lufcs".into()],
        seeds: vec![9],
        grid: [(GridParam::OptionalUtilizationThreshold, vec![0.5])].into(),
        base: small(),
        ..Default::default()
    };
    let out = run_sweep(&spec).unwrap();
    let mut cfg = small();
    cfg.seed = 9;
    cfg.components.connected_percentage = 0.5;
    let (_, single) = run_single(&cfg).unwrap();
    let swept = out.rows.iter().find(|r| r.label == "lufcs").unwrap();
    let mut swept = swept.clone();
    swept.cell = String::new();
    assert_eq!(swept, single);
}

#[test]
fn reference_test_case_gives_one_comparison_row() {
    let spec = SweepSpec {
        algorithms: ["pco", "ubp", "nufcs", "lufcs", "lpfcs", "huprfcs"]
            .map(String::from)
            .to_vec(),
        seeds: vec![1, 2, 3],
        grid: [
            (GridParam::OptionalUtilizationThreshold, vec![0.5]),
            (GridParam::OptionalPercentage, vec![0.5]),
            (GridParam::ConnectedPercentage, vec![0.25]),
            (GridParam::Discount, vec![0.5]),
        ]
        .into(),
        base: small(),
        ..Default::default()
    };
    let out = run_sweep(&spec).unwrap();
    assert_eq!(out.rows.len(), 18);
    let cmp = compare(&out.rows);
    assert!(cmp.incomplete.is_empty());
    assert_eq!(cmp.recommendations.len(), 1);
    let rec = &cmp.recommendations[0];
    assert_eq!(rec.cell, "u0.50_o0.50_c0.25_d0.50");
    assert!(["nufcs", "lufcs", "lpfcs", "huprfcs"].contains(&rec.policy.as_str()));
    let eff = rec.efficiency.unwrap();
    assert!(eff.ci_lo.unwrap() <= eff.mean && eff.mean <= eff.ci_hi.unwrap());
    // the pick really is the smallest mean among the policies
    for label in ["nufcs", "lufcs", "lpfcs", "huprfcs"] {
        let effs: Vec<f64> = out
            .rows
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.efficiency.unwrap())
            .collect();
        assert!(eff.mean <= brownsim::metrics::mean(&effs) + 1e-12);
    }
}

#[test]
fn sweep_output_is_independent_of_thread_count() {
    let spec = SweepSpec {
        algorithms: vec!["pco".into(), "ubp".into(), "huprfcs".into()],
        seeds: vec![1, 2],
        grid: [(GridParam::ConnectedPercentage, vec![0.0, 1.0])].into(),
        base: small(),
        ..Default::default()
    };
    let wide = run_sweep(&spec).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let narrow = pool.install(|| run_sweep(&spec)).unwrap();
    assert_eq!(wide, narrow);
}
