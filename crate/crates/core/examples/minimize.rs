//! Minimizing the (4,1,q)-energy on [0, 2] and comparing with the limit.
//!
//! ```text
//! cargo run --release --example minimize -- 200
//! ```

use riesz::diagnostics::{empirical_density, energy_ratio, separation};
use riesz::fields::{catalog, ExampleId};
use riesz::optimizer::minimize;
use riesz::{CompactSet, EquilibriumMeasure, InitMode, OptimizerSettings};

fn main() -> riesz::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let s = 4.0;
    let set = CompactSet::interval(0.0, 2.0, 256)?;
    let q = catalog(ExampleId::E);

    let settings = OptimizerSettings { rng_seed: 7, init: InitMode::Equilibrium, ..Default::default() };
    let best = minimize(&set, &q, s, n, &settings)?;
    let mu = EquilibriumMeasure::solve_for(&set, &q, s)?;

    println!("N = {n}, restart {} won, energies {:?}", best.restart, best.restart_energies);
    println!("iterations {}, converged {}", best.trace.rows.len() - 1, best.trace.converged);
    println!("E/tau = {:.6}  vs  S(q,A) = {:.6}", energy_ratio(&best.configuration, &q, s)?, mu.s_limit());
    println!("separation {:.6}, times N: {:.4}", separation(&best.configuration), separation(&best.configuration) * n as f64);

    let hist = empirical_density(&best.configuration, &set)?;
    let predicted = hist.predicted(&mu, &set);
    for (bin, want) in hist.bins.iter().zip(predicted) {
        println!("[{:.3}, {:.3})  {:>7.4} {:>7.4}", bin.lo, bin.hi, bin.density, want);
    }
    Ok(())
}
