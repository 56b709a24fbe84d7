//! Exact k-nearest-neighbour queries against a KD-tree, checked against a
//! linear scan.

use kdss::kdtree::brute_force_knn;
use kdss::synth::uniform_cube;
use kdss::KdTree;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cloud = uniform_cube(200_000, 10.0, 1);
    let tree = KdTree::new(&cloud.positions)?;
    println!("tree over {} points, {} leaves", tree.len(), tree.leaves().len());

    let query = [5.0, 5.0, 5.0];
    let hits = tree.knn(&query, 8)?;
    for (index, d2) in &hits {
        println!("  {index:>6}  d = {:.4}", d2.sqrt());
    }
    assert_eq!(hits, brute_force_knn(&cloud.positions, None, &query, 8)?);

    // Removed points drop out of later queries.
    let mut tree = tree;
    for (index, _) in &hits[..4] {
        tree.remove(*index);
    }
    let after = tree.knn(&query, 4)?;
    assert_eq!(after, hits[4..]);
    println!("after removing the 4 closest, the next 4 come back: ok");
    Ok(())
}
