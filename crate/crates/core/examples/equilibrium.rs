//! Limit measures of minimizers for the catalog fields.
//!
//! ```text
//! cargo run --release --example equilibrium
//! ```

use riesz::fields::{catalog, ExampleId};
use riesz::{CompactSet, EquilibriumMeasure};

fn main() -> riesz::Result<()> {
    let sphere = CompactSet::sphere(1.0, 96, 192)?;
    let torus = CompactSet::torus(2.0, 4.0, 128, 128)?;
    let interval = CompactSet::interval(0.0, 2.0, 256)?;

    let cases = [
        (ExampleId::A, &sphere, 2.0),
        (ExampleId::B, &sphere, 2.0),
        (ExampleId::C, &torus, 8.0),
        (ExampleId::D, &sphere, 4.0),
        (ExampleId::E, &interval, 4.0),
    ];
    println!("ex {:>12} {:>12} {:>10} {:>10}", "L1", "S(q,A)", "supp", "residual");
    for (id, set, s) in cases {
        let mu = EquilibriumMeasure::solve_for(set, &catalog(id), s)?;
        println!(
            "{}  {:>12.6} {:>12.6} {:>10.4} {:>10.1e}",
            id.as_str(),
            mu.l1,
            mu.s_limit(),
            mu.support_fraction(),
            mu.residual
        );
    }

    // Density profile on [0, 2]: two components separated by a gap.
    let mu = EquilibriumMeasure::solve_for(&interval, &catalog(ExampleId::E), 4.0)?;
    for i in 0..=20 {
        let x = 0.1 * i as f64;
        let rho = mu.density_at(&[x]);
        println!("{x:4.1} {rho:8.5} {}", "#".repeat((rho * 40.0) as usize));
    }
    Ok(())
}
