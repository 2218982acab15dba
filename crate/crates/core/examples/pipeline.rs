//! All three training phases through the library API, with a checkpoint
//! saved and reloaded before evaluation.
//!
//! cargo run --release --example pipeline -- [key=value...]

use lms2s::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Stage};
use lms2s::config::PipelineConfig;
use lms2s::pipeline::{enhance, evaluate_model, load_datasets, train_filters, train_phase1};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = PipelineConfig {
        hidden: 32,
        latent: 32,
        embed: 16,
        epochs: 10,
        lr: 0.005,
        ..PipelineConfig::default()
    };
    for kv in std::env::args().skip(1) {
        cfg.apply_override(&kv)?;
    }
    let data = load_datasets(&cfg)?;
    println!(
        "{} training pairs, {} validation pairs",
        data.train.len(),
        data.valid.len()
    );

    let (mut params, log) = train_phase1(&cfg, &data)?;
    println!("phase 1 epoch losses {:.4?}", log.epoch_losses);

    if let Some(e) = enhance(&cfg, &mut params, &data)? {
        println!(
            "phase 2 silhouette {:.3} -> {:.3} in {} steps",
            e.initial_sc,
            e.best_sc,
            e.trajectory.len()
        );
    }
    let flog = train_filters(&cfg, &data, &mut params)?;
    println!("phase 3 cluster sizes {:?}", flog.train_sizes);

    let dir = scratch_dir()?;
    let path = dir.join("model.ckpt");
    save_checkpoint(
        &Checkpoint {
            config: cfg.clone(),
            stage: Stage::FiltersTrained,
            params,
        },
        &path,
    )?;
    let restored = load_checkpoint(&path)?;
    let report = evaluate_model(
        &restored.params,
        &data.valid,
        cfg.max_len,
        cfg.sac.silhouette_sample,
        cfg.seed,
    )?;
    print!("{}", report.format());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn scratch_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("lms2s-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
