//! Sensitivity of the limit density to an error in the Riesz constant.
//!
//! ```text
//! cargo run --release --example stability
//! ```

use riesz::fields::{perturbed_density, ExternalField};
use riesz::{CompactSet, EquilibriumMeasure};

fn main() -> riesz::Result<()> {
    let s = 4.0;
    let set = CompactSet::interval(0.0, 2.0, 256)?;
    let q = ExternalField::from_fn("(x-1)^2+1/2", |x| (x[0] - 1.0).powi(2) + 0.5);
    let mu = EquilibriumMeasure::solve_for(&set, &q, s)?;
    println!("L1 = {:.6}, support fraction {:.4}", mu.l1, mu.support_fraction());
    let rho = ExternalField::from_fn("rho", move |x| mu.density_at(x)).shared();

    // Worst pointwise excess of the deviation over the first-order bound.
    println!("{:>7} {:>12} {:>12} {:>12} {:>12}", "delta", "L1'", "max dev", "excess", "corrected");
    for &delta in &[-0.1, -0.05, -0.01, 0.01, 0.05, 0.1] {
        let p = perturbed_density(&set, rho.clone(), s, delta)?;
        let mut dev: f64 = 0.0;
        let mut excess = f64::NEG_INFINITY;
        let mut corrected = f64::NEG_INFINITY;
        for x in set.nodes() {
            let r = rho.value(x);
            if r > 1e-8 {
                let e = (p.value(x) - r).abs();
                dev = dev.max(e);
                excess = excess.max(e - p.bound(x));
                corrected = corrected.max(e - p.corrected_bound(x));
            }
        }
        println!("{delta:>7.2} {:>12.6} {dev:>12.6} {excess:>12.6} {corrected:>12.6}", p.l1_prime);
    }
    Ok(())
}
