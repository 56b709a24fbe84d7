//! End to end in memory: synthesize plants, split, sub-sample, fit the
//! k-NN baseline, predict, merge and score.

use kdss::baseline;
use kdss::features::{SplitFractions, SplitTag};
use kdss::metrics::{render, ReportFormat};
use kdss::synth::{plant_class_map, synthetic_plant, SyntheticPlantSpec};
use kdss::{assemble, confusion, merge, report, split, subsample, FeatureSchema, KdssConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticPlantSpec::default();
    let seeds: Vec<u64> = (0..6).collect();
    let parts = split(&seeds, SplitFractions::new(0.8, 0.0), 1)?;
    let schema = FeatureSchema::color_normals();
    let config = KdssConfig::new(4096, 0);

    let mut train = Vec::new();
    for &seed in parts.units(SplitTag::Train) {
        let cloud = synthetic_plant(&spec, seed);
        let labels = cloud.labels.as_ref().unwrap();
        for sub in &subsample(&cloud, &config)?.subsamples {
            let y = sub.indices.iter().map(|&i| labels[i as usize]).collect();
            train.push((assemble(&cloud, sub, &schema)?, y));
        }
    }
    let model = baseline::fit(&train, 5)?;
    println!("fitted on {} rows from {} plants", model.len(), parts.count(SplitTag::Train));

    for &seed in parts.units(SplitTag::Test) {
        let cloud = synthetic_plant(&spec, seed);
        let set = subsample(&cloud, &config)?;
        let preds = set
            .subsamples
            .iter()
            .map(|sub| Ok(model.predict(&assemble(&cloud, sub, &schema)?)?))
            .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;
        let merged = merge(&set, &preds)?;
        let cm = confusion(cloud.labels.as_ref().unwrap(), &merged.predicted, 3)?;
        println!("plant {seed}:");
        print!("{}", render(&report(&cm)?.with_names(&plant_class_map()), ReportFormat::HumanTable));
    }
    Ok(())
}
