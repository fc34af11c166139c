//! Simulate a PAMS-scale data set from known parameters, fit the model and
//! print convergence diagnostics next to the truth.
//!
//! `cargo run --release -p mvpa-core --example fit_synthetic -- [n] [iters] [burnin] [thin] [seed]`

use std::time::Instant;

use mvpa_core::diagnose::convergence_report;
use mvpa_core::mcmc::{run_chains, ChainConfig, CountFamily, ModelData, PriorConfig, PriorPreset};
use mvpa_core::simulate::{pams_like_design, simulate_dataset, table2_truth};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> mvpa_core::Result<()> {
    let n: usize = arg(1, 1057);
    let cfg = ChainConfig {
        n_iter: arg(2, 20_000),
        n_burnin: arg(3, 5_000),
        thin: arg(4, 5),
        seed: arg(5, 1),
        ..ChainConfig::default()
    };
    let env = |k: &str| std::env::var(k).ok().and_then(|v| v.parse::<usize>().ok());
    let mut cfg = cfg;
    if let Some(v) = env("DISP_STEPS") {
        cfg.disp_steps = v;
    }
    if let Some(v) = env("RE_STEPS") {
        cfg.re_steps = v;
    }
    if let Some(v) = env("ZERO_SHIFT") {
        cfg.zero_shift_moves = v == 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let design = pams_like_design(n, &mut rng)?;
    let truth = table2_truth(design.columns());
    let sim = simulate_dataset(&truth, CountFamily::GenPoisson, &design, 2, &mut rng)?;
    let data = ModelData::new(&sim.days, &design)?;
    let prior = PriorConfig::preset(PriorPreset::Paper, design.p());

    let t0 = Instant::now();
    let draws = run_chains(&data, &prior, CountFamily::GenPoisson, &cfg)?;
    println!("fit: {:.1}s", t0.elapsed().as_secs_f64());

    let report = convergence_report(&draws)?;
    let truth_vals = truth.scalars();
    println!("{:<22} {:>9} {:>9} {:>9} {:>9} {:>7} {:>7} {:>6}", "param", "truth", "mean", "q025", "q975", "rhat", "mcse%", "cover");
    for (row, t) in report.rows.iter().zip(truth_vals) {
        println!(
            "{:<22} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>7.4} {:>7.3} {:>6}",
            row.param,
            t,
            row.mean,
            row.q025,
            row.q975,
            row.rhat,
            100.0 * row.mcse_ratio,
            row.q025 <= t && t <= row.q975
        );
    }
    if std::env::var("ACF").is_ok() {
        for name in draws.param_names() {
            let chains = draws.series(&name)?;
            let acf = mvpa_core::diagnose::autocorrelation(&chains[0], 50);
            let tau: f64 = 1.0 + 2.0 * acf[1..].iter().take_while(|&&r| r > 0.05).sum::<f64>();
            println!("{name:<22} acf1 {:.3} acf5 {:.3} acf10 {:.3} acf25 {:.3} tau {:.1}", acf[1], acf[5], acf[10], acf[25], tau);
        }
    }
    for a in &report.acceptance {
        println!("chain {} {:<22} {:.3}", a.chain, a.block, a.rate);
    }
    Ok(())
}
