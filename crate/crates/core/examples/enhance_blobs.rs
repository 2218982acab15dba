//! Enhance a random cluster classifier on two Gaussian blobs and report how
//! quickly the Silhouette target is reached.
//!
//! cargo run --release --example enhance_blobs -- [clusters] [seeds] [dim]

use lms2s::cluster::two_blobs;
use lms2s::config::SacConfig;
use lms2s::model::Classifier;
use lms2s::rng::{derive_seed, streams, Rng};
use lms2s::sac::{enhance_classifier, ClusterEnv, Env, RewardConfig, SacAgent};

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let clusters = args.first().copied().unwrap_or(2);
    let seeds = args.get(1).copied().unwrap_or(5);
    let dim = args.get(2).copied().unwrap_or(4);
    let cfg = SacConfig::default();

    let mut hits = 0;
    for seed in 0..seeds as u64 {
        let (points, _) = two_blobs(seed, 128, dim, 10.0);
        let mut rng = Rng::new(derive_seed(seed, streams::CLASSIFIER));
        let clf = Classifier::new(dim, clusters, &mut rng).expect("at least one cluster");
        let mut env = ClusterEnv::new(points, clf, RewardConfig::from_sac(&cfg));
        let mut agent = SacAgent::new(
            env.observation_dim(),
            env.action_dim(),
            &cfg,
            derive_seed(seed, streams::SAC),
        );
        let out = enhance_classifier(&mut env, &mut agent, &cfg).expect("finite training");
        let sizes = {
            let rows = out
                .classifier
                .classify_rows(&two_blobs(seed, 128, dim, 10.0).0)
                .unwrap();
            let labels: Vec<usize> = rows.iter().map(|p| lms2s::model::argmax(p)).collect();
            lms2s::cluster::cluster_sizes(&labels, clusters)
        };
        hits += usize::from(out.reached_target);
        println!(
            "seed {seed}: start {:.3} best {:.3} after {} steps, reached={}, sizes {:?}",
            out.initial_sc,
            out.best_sc,
            out.trajectory.len(),
            out.reached_target,
            sizes
        );
    }
    println!("{hits}/{seeds} seeds reached {}", cfg.target);
}
