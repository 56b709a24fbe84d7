//! Score predictions and render the report three ways.

use kdss::metrics::{render, ReportFormat};
use kdss::{confusion, report, ClassMap};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2];
    let predicted = [0, 0, 1, 1, 1, 1, 2, 2, 2, 0];
    let cm = confusion(&truth, &predicted, 3)?;
    println!("confusion (rows = truth): {:?}", cm.rows());

    let names = ClassMap::new(["stem", "leaf", "panicle"])?;
    let rep = report(&cm)?.with_names(&names);
    for format in [ReportFormat::HumanTable, ReportFormat::JsonLines, ReportFormat::Csv] {
        println!("--- {format:?}");
        print!("{}", render(&rep, format));
    }
    Ok(())
}
