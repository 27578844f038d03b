//! A set given by a user chart: the unit circle in the plane.
//!
//! ```text
//! cargo run --release --example custom_set
//! ```

use std::f64::consts::PI;
use std::sync::Arc;

use riesz::diagnostics::separation;
use riesz::fields::ExternalField;
use riesz::geometry::Chart;
use riesz::optimizer::minimize;
use riesz::{CompactSet, EquilibriumMeasure, OptimizerSettings};

fn main() -> riesz::Result<()> {
    let chart = Chart {
        label: "circle".into(),
        hausdorff_dim: 1,
        ambient_dim: 2,
        domain: vec![(0.0, 2.0 * PI)],
        periodic: vec![true],
        map: Arc::new(|t| vec![t[0].cos(), t[0].sin()]),
        jacobian: Arc::new(|_| 1.0),
        retraction: Arc::new(|x| {
            let r = x[0].hypot(x[1]);
            (r > 1e-12).then(|| vec![x[0] / r, x[1] / r])
        }),
        tangent_projector: Arc::new(|x, v| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            let dot = (x[0] * v[0] + x[1] * v[1]) / r2;
            vec![v[0] - dot * x[0], v[1] - dot * x[1]]
        }),
    };
    let set = CompactSet::from_chart(chart, &[512])?;
    println!("length {:.10} (2 pi = {:.10})", set.total_measure(), 2.0 * PI);

    let s = 2.0;
    let q = ExternalField::from_fn("x", |x| x[0]);
    let mu = EquilibriumMeasure::solve_for(&set, &q, s)?;
    println!("L1 = {:.6}, support fraction {:.4}", mu.l1, mu.support_fraction());

    let settings = OptimizerSettings { restarts: 1, ..Default::default() };
    let best = minimize(&set, &q, s, 60, &settings)?;
    println!("separation {:.5}", separation(&best.configuration));
    for t in (0..12).map(|k| k as f64 * PI / 6.0) {
        println!("angle {:>5.2}  density {:.4}", t, mu.density_at(&[t.cos(), t.sin()]));
    }
    Ok(())
}
