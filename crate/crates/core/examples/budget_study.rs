//! Vary the agent's step budget on a shared phase-1 model and relate the
//! achieved Silhouette to validation token accuracy.
//!
//! cargo run --release --example budget_study -- [seed] [key=value...]

use lms2s::config::PipelineConfig;
use lms2s::metrics::spearman;
use lms2s::pipeline::{enhance, evaluate_model, load_datasets, train_filters, train_phase1};

const BUDGETS: [usize; 7] = [10, 20, 30, 50, 100, 200, 500];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = PipelineConfig {
        hidden: 32,
        latent: 32,
        embed: 16,
        epochs: 20,
        lr: 0.005,
        ..PipelineConfig::default()
    };
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse()?;
    }
    for kv in args {
        cfg.apply_override(&kv)?;
    }
    let data = load_datasets(&cfg)?;
    let (base, _) = train_phase1(&cfg, &data)?;

    let mut sc = Vec::new();
    let mut acc = Vec::new();
    println!("budget\tsilhouette\ttoken_accuracy\tcluster_sizes");
    for budget in BUDGETS {
        let mut run = cfg.clone();
        run.sac.max_steps = budget;
        let mut params = base.clone();
        let e = enhance(&run, &mut params, &data)?.expect("two filters with rl enabled");
        train_filters(&run, &data, &mut params)?;
        let report = evaluate_model(&params, &data.valid, run.max_len, run.sac.silhouette_sample, run.seed)?;
        println!(
            "{budget}\t{:.4}\t{:.4}\t{:?}",
            e.best_sc, report.token_accuracy, report.cluster_counts
        );
        sc.push(e.best_sc);
        acc.push(report.token_accuracy);
    }
    match spearman(&sc, &acc) {
        Some(rho) => println!("spearman(silhouette, token accuracy) = {rho:.4}"),
        None => println!("spearman undefined: one side is constant"),
    }
    Ok(())
}
