//! Score a partition with the Silhouette coefficient and project the points
//! to 2-D with PCA, printing TSV suitable for a scatter plot.
//!
//! cargo run --example latent_projection -- [seed] [dim] > points.tsv

use lms2s::cluster::{pca_project_2d, two_blobs, DistanceMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let dim: usize = args.next().map_or(Ok(8), |s| s.parse())?;

    let (points, truth) = two_blobs(seed, 50, dim, 6.0);
    let distances = DistanceMatrix::new(&points);
    let report = distances.silhouette(&truth, 2)?;
    // A partition that ignores the blobs: alternate labels.
    let alternating: Vec<usize> = (0..truth.len()).map(|i| i % 2).collect();
    let poor = distances.silhouette(&alternating, 2)?;
    eprintln!(
        "silhouette of the true split {:.4}, of alternating labels {:.4}",
        report.mean, poor.mean
    );

    let proj = pca_project_2d(&points)?;
    println!("index\tpc1\tpc2\tcluster\tsilhouette");
    for (i, (&c, s)) in truth.iter().zip(&report.per_point).enumerate() {
        println!(
            "{i}\t{:.5}\t{:.5}\t{c}\t{s:.5}",
            proj.coords.at(i, 0),
            proj.coords.at(i, 1)
        );
    }
    Ok(())
}
