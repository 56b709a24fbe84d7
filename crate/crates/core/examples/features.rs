//! Turn a sub-sample into a feature matrix, weight classes and split units.

use kdss::features::{augment_rotate_z, SplitFractions, SplitTag};
use kdss::synth::{synthetic_plant, SyntheticPlantSpec};
use kdss::{assemble, class_weights, split, subsample, FeatureSchema, KdssConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cloud = synthetic_plant(&SyntheticPlantSpec::default(), 3);
    let set = subsample(&cloud, &KdssConfig::new(2048, 0))?;

    for schema in [FeatureSchema::for_cloud(&cloud), FeatureSchema::color_normals(), FeatureSchema::laser_intensity()] {
        let m = assemble(&cloud, &set.subsamples[0], &schema)?;
        println!("{:<40} {} x {}  first row {:.3?}", schema.names().join(","), m.rows(), m.width(), m.row(0));
    }

    let m = assemble(&cloud, &set.subsamples[0], &FeatureSchema::laser_intensity())?;
    let turned = augment_rotate_z(&m, std::f64::consts::FRAC_PI_2);
    println!("rotated by 90 degrees: {:.3?} -> {:.3?}", &m.row(0)[..3], &turned.row(0)[..3]);

    let labels = cloud.labels.as_ref().unwrap();
    let w = class_weights(labels, 3)?;
    println!("class weights {:.3?}", w.weights);

    let plants: Vec<String> = (0..20).map(|i| format!("plant_{i:02}")).collect();
    let a = split(&plants, SplitFractions::new(0.7, 0.15), 42)?;
    for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
        println!("{:<5} {:>2}: {}", tag.name(), a.count(tag), a.units(tag).cloned().collect::<Vec<_>>().join(" "));
    }
    Ok(())
}
