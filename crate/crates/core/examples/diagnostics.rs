//! Quality measures of a sphere configuration in a two-band field.
//!
//! ```text
//! cargo run --release --example diagnostics
//! ```

use riesz::diagnostics::{diagnose, DiagnosticOptions};
use riesz::fields::ExternalField;
use riesz::optimizer::minimize;
use riesz::{CompactSet, EquilibriumMeasure, OptimizerSettings};

fn main() -> riesz::Result<()> {
    let (s, n) = (3.0, 200);
    let set = CompactSet::sphere(1.0, 48, 96)?;
    // Pushes points away from the equator.
    let q = ExternalField::from_fn_with_gradient(
        "4 (1 - z^2)^4",
        |x| 4.0 * (1.0 - x[2] * x[2]).powi(4),
        |x, g| {
            g[0] = 0.0;
            g[1] = 0.0;
            g[2] = -32.0 * x[2] * (1.0 - x[2] * x[2]).powi(3);
        },
    );

    let settings = OptimizerSettings { max_iters: 2000, restarts: 1, ..Default::default() };
    let best = minimize(&set, &q, s, n, &settings)?;
    let mu = EquilibriumMeasure::solve_for(&set, &q, s)?;
    println!("L1 = {:.6}, support fraction {:.4}", mu.l1, mu.support_fraction());

    let report = diagnose(&set, &best.configuration, &mu, &DiagnosticOptions::default())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
