//! Monte Carlo batches: reproducibility and the expected shrinkage of the
//! parameter spread with longer logs.

use gyromag::simulator::{monte_carlo, MonteCarloOptions, TrajectoryProfile, TruthConfig};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn same_seed_same_summary() {
    let cfg = TruthConfig {
        duration: 30.0,
        ..TruthConfig::reference()
    };
    let profile = TrajectoryProfile::default_for(cfg.duration);
    let opts = MonteCarloOptions::for_truth(&cfg);
    let a = monte_carlo(&cfg, &profile, 6, 17, &opts).unwrap();
    let b = monte_carlo(&cfg, &profile, 6, 17, &opts).unwrap();
    assert_eq!(a.summary, b.summary);
    let c = monte_carlo(&cfg, &profile, 6, 18, &opts).unwrap();
    assert_ne!(a.summary.k_g.mean, c.summary.k_g.mean);
}

#[test]
fn spread_shrinks_with_duration() {
    let runs = 24;
    let spread = |duration: f64| {
        let cfg = TruthConfig {
            duration,
            ..TruthConfig::reference()
        };
        let profile = TrajectoryProfile::default_for(duration);
        let mc = monte_carlo(&cfg, &profile, runs, 5, &MonteCarloOptions::for_truth(&cfg)).unwrap();
        assert_eq!(mc.summary.runs_failed, 0);
        let std = mc.summary.k_g.std.unwrap();
        // Upper-triangular entries only; the rest are structurally zero.
        mean(&[std[0], std[1], std[2], std[4], std[5], std[8]])
    };
    let short = spread(50.0);
    let long = spread(200.0);
    let ratio = short / long;
    // 1/√duration predicts 2; allow a factor of two either way.
    assert!((1.0..=4.0).contains(&ratio), "ratio {ratio}");
}
