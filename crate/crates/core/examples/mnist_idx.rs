//! Parses the bundled MNIST subset (gzipped IDX files) and prints its shape
//! and class balance. Pass a directory to read a different copy.
//!
//! ```bash
//! cargo run --example mnist_idx -- /path/to/mnist
//! ```

use std::path::PathBuf;

use byzadmm::cli;
use byzadmm::data::load_mnist_dir;

fn main() -> byzadmm::Result<()> {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(cli::bundled_mnist_dir);
    let (train, test) = load_mnist_dir(&dir)?;
    for (name, ds) in [("train", &train), ("test", &test)] {
        println!(
            "{name}: {} images of {:?}, classes {:?}",
            ds.len(),
            ds.image_shape(),
            ds.class_histogram()
        );
    }
    Ok(())
}
