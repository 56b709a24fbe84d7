//! Partition a synthetic plant into fixed-size sub-samples.
//!
//! `cargo run --release --example subsample -- [N] [seed]`

use kdss::sampling::subsample_with_stats;
use kdss::synth::{synthetic_plant, SyntheticPlantSpec};
use kdss::{merge, KdssConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4096);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let cloud = synthetic_plant(&SyntheticPlantSpec::default(), 7);
    let config = KdssConfig::new(n, seed);
    let (set, stats) = subsample_with_stats(&cloud, &config)?;
    set.check()?;

    println!("{} points -> {} sub-samples of N={n}", cloud.len(), set.len());
    println!("index refreshes {}, discarded draws {}", stats.tree_builds, stats.discarded_draws);
    for sub in set.subsamples.iter().take(5) {
        let c = cloud.positions[sub.center_index as usize];
        println!("  #{:<3} {:>5} points around {} at ({:.3}, {:.3}, {:.3})", sub.ordinal, sub.len(), sub.center_index, c[0], c[1], c[2]);
    }
    if let Some(last) = set.subsamples.last() {
        println!("  last holds the remainder: {} points", last.len());
    }

    // Echoing the true labels through merge must reproduce them exactly.
    let labels = cloud.labels.as_ref().expect("synthetic clouds are labeled");
    let echoed: Vec<_> = set.subsamples.iter().map(|s| s.indices.iter().map(|&i| labels[i as usize]).collect()).collect();
    let merged = merge(&set, &echoed)?;
    assert_eq!(&merged.predicted, labels);
    println!("merge round trip: ok");
    Ok(())
}
