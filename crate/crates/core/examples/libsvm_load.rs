//! Loads a LIBSVM-format file, or a small inline sample when no path is
//! given, and reports what was parsed.
//!
//! ```bash
//! cargo run --example libsvm_load -- covtype.libsvm.binary.scale 54
//! ```

use byzadmm::data::{parse_libsvm, read_maybe_gzip};

const SAMPLE: &str = "\
+1 1:0.5 3:-1.25
-1 2:2
+1 1:1 2:1 3:1
";

fn main() -> byzadmm::Result<()> {
    let mut args = std::env::args().skip(1);
    let (text, features) = match (args.next(), args.next()) {
        (Some(path), Some(features)) => {
            let bytes = read_maybe_gzip(&path)?;
            let features = features.parse().map_err(|_| {
                byzadmm::Error::Config(format!("feature count {features:?} is not a number"))
            })?;
            (String::from_utf8_lossy(&bytes).into_owned(), features)
        }
        _ => (SAMPLE.to_string(), 3),
    };
    let ds = parse_libsvm(&text, features)?;
    println!(
        "{} rows, {} features, class counts {:?}",
        ds.len(),
        ds.feature_count(),
        ds.class_histogram()
    );
    for i in 0..ds.len().min(3) {
        println!("row {i}: label {} features {:?}", ds.label(i), ds.row(i));
    }
    Ok(())
}
