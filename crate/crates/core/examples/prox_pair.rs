//! The coupled two-variable prox behind the dual-only ADMM update: each
//! coordinate pair moves towards the other by at most the penalty.
//!
//! ```bash
//! cargo run --example prox_pair
//! ```

use byzadmm::engine::prox_pair_closed_form;

fn main() {
    let lambda = 0.5;
    println!("{:>6} {:>6} {:>8} {:>8}", "a1", "a2", "z1", "z2");
    for (a1, a2) in [(0.0, 2.0), (0.0, 0.6), (1.0, -3.0), (0.7, 0.7)] {
        let (z1, z2) = prox_pair_closed_form(a1, a2, lambda);
        println!("{a1:>6.2} {a2:>6.2} {z1:>8.3} {z2:>8.3}");
    }
    let check = byzadmm::engine::verify::check_prox(200);
    println!("brute-force comparison: {}", check.detail);
}
