//! Train one shared encoder on the synthetic two-grammar corpus, then compare
//! a single decoder against RL-routed per-cluster filters.
//!
//! cargo run --release --example filters_vs_baseline -- [seed] [key=value...]

use lms2s::config::PipelineConfig;
use lms2s::pipeline::{enhance, evaluate_model, load_datasets, train_filters, train_phase1};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = PipelineConfig {
        hidden: 32,
        latent: 32,
        embed: 16,
        ..PipelineConfig::default()
    };
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse()?;
    }
    for kv in args {
        cfg.apply_override(&kv)?;
    }
    let data = load_datasets(&cfg)?;
    let t = std::time::Instant::now();
    let (base, log) = train_phase1(&cfg, &data)?;
    println!(
        "phase 1: {} epochs in {:.1?}, train loss {:?}",
        log.epoch_losses.len(),
        t.elapsed(),
        log.epoch_losses
    );

    for n in [1, 2] {
        let run = PipelineConfig {
            n_filters: n,
            ..cfg.clone()
        };
        // Same encoder; the classifier is re-drawn for the cluster count.
        let mut params = base.clone();
        let fresh = lms2s::model::ModelParams::init(
            run.dims(data.vocab.len()),
            run.precision,
            0,
            lms2s::rng::derive_seed(run.seed, lms2s::rng::streams::CLASSIFIER),
        )?;
        params.classifier = fresh.classifier;
        params.dims = fresh.dims;
        let t = std::time::Instant::now();
        let rl = enhance(&run, &mut params, &data)?;
        if let Some(e) = &rl {
            println!(
                "  n={n}: S_c {:.3} -> {:.3} in {} steps",
                e.initial_sc,
                e.best_sc,
                e.trajectory.len()
            );
        }
        let flog = train_filters(&run, &data, &mut params)?;
        if let Some(grammars) = &data.train_grammars {
            let routed = lms2s::pipeline::route_batch(&params, &data.train.pairs)?;
            let purity: Vec<String> = routed
                .clusters
                .iter()
                .map(|m| {
                    let rev = m
                        .iter()
                        .filter(|&&i| grammars[i] == lms2s::data::Grammar::Reverse)
                        .count();
                    format!("{rev}/{}", m.len())
                })
                .collect();
            println!("  n={n}: reverse-grammar share per cluster {purity:?}");
        }
        let report = evaluate_model(&params, &data.valid, run.max_len, run.sac.silhouette_sample, run.seed)?;
        println!(
            "  n={n}: train sizes {:?}, token acc {:.4}, exact {:.4}, bleu {:.4}, S_c {:.3} ({:.1?})",
            flog.train_sizes,
            report.token_accuracy,
            report.exact_match,
            report.bleu4,
            report.silhouette,
            t.elapsed()
        );
    }
    Ok(())
}
