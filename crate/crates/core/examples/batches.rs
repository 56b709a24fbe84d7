//! Write a batch directory for one cloud and read it back.

use kdss::io::{self, write_ply, PlyEncoding};
use kdss::synth::{synthetic_plant, SyntheticPlantSpec};
use kdss::{subsample, FeatureSchema, KdssConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let ply = dir.path().join("plant.ply");
    let cloud = synthetic_plant(&SyntheticPlantSpec::default(), 11);
    write_ply(&cloud, &ply, PlyEncoding::BinaryLe)?;

    let config = KdssConfig::new(4096, 5);
    let set = subsample(&cloud, &config)?.with_schema(FeatureSchema::color_normals());
    let out = dir.path().join("batches");
    let manifest = io::write_batches(&cloud, &ply, &set, &config, &out)?;
    print!("{}", manifest.to_toml());

    let back = io::read_batches(&out.join("manifest.toml"))?;
    assert_eq!(back.set.sizes(), set.sizes());
    println!("read back {} batches, width {}", back.matrices.len(), back.matrices[0].width());
    Ok(())
}
