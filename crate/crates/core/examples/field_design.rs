//! Building a field whose minimizers converge to a prescribed density,
//! then checking it by solving the forward problem.
//!
//! ```text
//! cargo run --release --example field_design
//! ```

use riesz::fields::{design_field, DensityDescriptor};
use riesz::{CompactSet, EquilibriumMeasure};

fn main() -> riesz::Result<()> {
    let sphere = CompactSet::sphere(1.0, 96, 192)?;
    let rho = DensityDescriptor::Caps.resolve(&sphere)?;
    let design = design_field(&sphere, rho.clone(), 2.0)?;
    println!("input mass {:.6}, renormalized: {}", design.input_mass, design.renormalized);

    let mu = EquilibriumMeasure::solve(&sphere, &design.field, design.constant)?;
    println!("L1 of designed field: {:.3e}", mu.l1);

    let mut worst: f64 = 0.0;
    for (x, &got) in sphere.nodes().zip(mu.node_density()) {
        let want = rho.value(x);
        worst = worst.max((got - want).abs() / want);
    }
    println!("max relative density error: {worst:.2e}");

    // A compactly supported target on [0, 1].
    let interval = CompactSet::interval(0.0, 1.0, 256)?;
    let bump = DensityDescriptor::TruncatedQuadratic { center: 0.5, half_width: 0.3, coord: 0 };
    let design = design_field(&interval, bump.resolve(&interval)?, 3.0)?;
    let mu = EquilibriumMeasure::solve(&interval, &design.field, design.constant)?;
    println!("bump: L1 = {:.3e}, support fraction {:.4}", mu.l1, mu.support_fraction());
    for i in 0..=10 {
        let x = 0.1 * i as f64;
        println!("  q({x:.1}) = {:>10.5}", design.field.evaluate(&[x]));
    }
    Ok(())
}
