//! Mean, coordinate-wise median and geometric median of honest gradients
//! mixed with a growing number of outliers.
//!
//! ```bash
//! cargo run --example robust_aggregation
//! ```

use byzadmm::algorithms::{aggregate, AggregationRule};
use byzadmm::ModelVector;

fn main() -> byzadmm::Result<()> {
    let honest: Vec<ModelVector> = (0..12)
        .map(|i| ModelVector::from(vec![1.0 + 0.05 * i as f64, -1.0 + 0.03 * i as f64]))
        .collect();
    println!(
        "{:>3} {:>22} {:>22} {:>22}",
        "q", "mean", "coordinate median", "geometric median"
    );
    for q in [0, 2, 4, 8, 11] {
        let mut all = honest.clone();
        all.extend((0..q).map(|_| ModelVector::from(vec![100.0, 100.0])));
        let show = |v: ModelVector| format!("({:7.3}, {:7.3})", v[0], v[1]);
        println!(
            "{:>3} {:>22} {:>22} {:>22}",
            q,
            show(aggregate(AggregationRule::Mean, &all)?),
            show(aggregate(AggregationRule::CoordinateMedian, &all)?),
            show(aggregate(AggregationRule::GeometricMedian, &all)?),
        );
    }
    Ok(())
}
