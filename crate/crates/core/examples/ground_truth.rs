//! Recomputes the constrained optima stored in the benchmark manifest.
//!
//! Usage: `cargo run --release --example ground_truth [n_starts]`

use cmfbo::benchmarks::{constrained_hf_optimum, registry};

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    for p in registry() {
        match constrained_hf_optimum(&p, n, 0) {
            Ok(gt) => {
                println!("{}: optimum = {:?}\n  x = {:?}\n  violation = {:e}", p.name, gt.value, gt.x, gt.max_violation)
            }
            Err(e) => println!("{}: {e}", p.name),
        }
    }
}
