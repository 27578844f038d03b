//! One-dimensional rules used to build product quadratures.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub(crate) fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|v| v * half).collect(),
    )
}

/// Integrates `f` over `[a, b]` with a composite Gauss-Legendre rule.
pub(crate) fn integrate_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (xi, wi) in x.iter().zip(&w) {
            total += wi * 0.5 * h * f(mid + 0.5 * h * xi);
        }
    }
    total
}

fn gl_on(f: &impl Fn(f64) -> f64, a: f64, b: f64, t: &[f64], w: &[f64]) -> f64 {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    r * t.iter().zip(w).map(|(ti, wi)| wi * f(c + r * ti)).sum::<f64>()
}

/// Gauss-Legendre on `[a, b]`, bisected until the halves agree with the
/// whole. Picks up kinks inside a panel, e.g. where a designed density
/// reaches zero.
fn adaptive_gl(f: &impl Fn(f64) -> f64, a: f64, b: f64, t: &[f64], w: &[f64], tol: f64, depth: usize) -> f64 {
    let mid = 0.5 * (a + b);
    let whole = gl_on(f, a, b, t, w);
    let halves = gl_on(f, a, mid, t, w) + gl_on(f, mid, b, t, w);
    if depth == 0 || (halves - whole).abs() <= tol {
        return halves;
    }
    adaptive_gl(f, a, mid, t, w, 0.5 * tol, depth - 1) + adaptive_gl(f, mid, b, t, w, 0.5 * tol, depth - 1)
}

/// `int_a^b h(x) g(x)_+^alpha dx` for continuous `g`.
///
/// Sign changes of `g` are located on a grid of `8 * panels` intervals and
/// refined by bisection. Near each root the substitution
/// `x = r + (e - r) t^k` with `k alpha >= 1` removes the power singularity,
/// so the edges cost no accuracy. Positive excursions narrower than the
/// grid spacing are missed.
pub(crate) fn integrate_positive_part(
    g: impl Fn(f64) -> f64,
    h: impl Fn(f64) -> f64,
    alpha: f64,
    a: f64,
    b: f64,
    panels: usize,
) -> f64 {
    let samples = 8 * panels.max(1);
    let dx = (b - a) / samples as f64;
    let xs: Vec<f64> = (0..=samples).map(|i| if i == samples { b } else { a + i as f64 * dx }).collect();
    let positive: Vec<bool> = xs.iter().map(|&x| g(x) > 0.0).collect();
    let root = |mut lo: f64, mut hi: f64| {
        // g(lo) and g(hi) have opposite signs.
        let lo_pos = g(lo) > 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if (g(mid) > 0.0) == lo_pos {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let k = (1.0 / alpha).ceil().max(1.0);
    let (t, w) = gauss_legendre(16);
    let (t8, w8) = gauss_legendre(8);
    let f = |x: f64| {
        let v = g(x);
        if v > 0.0 {
            h(x) * v.powf(alpha)
        } else {
            0.0
        }
    };
    // Piece from a root r towards e, in the stretched variable.
    let edge_piece = |r: f64, e: f64| {
        let len = e - r;
        let mut acc = 0.0;
        for p in 0..4 {
            let (lo, hi) = (p as f64 / 4.0, (p + 1) as f64 / 4.0);
            for (ti, wi) in t.iter().zip(&w) {
                let u = 0.5 * (lo + hi) + 0.5 * (hi - lo) * ti;
                let x = r + len * u.powf(k);
                acc += 0.5 * (hi - lo) * wi * f(x) * len * k * u.powf(k - 1.0);
            }
        }
        acc
    };
    let mut total = 0.0;
    let mut i = 0;
    while i <= samples {
        if !positive[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i <= samples && positive[i] {
            i += 1;
        }
        let end = i - 1;
        if start > 0 {
            total += edge_piece(root(xs[start - 1], xs[start]), xs[start]);
        }
        if end > start {
            let rough = integrate_1d(&f, xs[start], xs[end], end - start, 8);
            let tol = 1e-14 * rough.abs() / (end - start) as f64;
            for j in start..end {
                total += adaptive_gl(&f, xs[j], xs[j + 1], &t8, &w8, tol, 16);
            }
        }
        if end < samples {
            total -= edge_piece(root(xs[end], xs[end + 1]), xs[end]);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_part_matches_closed_form() {
        // int_{-1}^{1} (1 - x^2)_+^{1/4} dx = B(1/2, 5/4) = 1.74803836...
        let v = integrate_positive_part(|x| 1.0 - x * x, |_| 1.0, 0.25, -2.0, 2.0, 16);
        assert!((v - 1.748_038_369_528_081).abs() < 1e-10, "{v}");
        // int_0^1 x (x - 1/2)_+^{1/2} dx
        let v = integrate_positive_part(|x| x - 0.5, |x| x, 0.5, 0.0, 1.0, 8);
        let exact = 2.0 / 5.0 * 0.5f64.powf(2.5) + 0.5 * 2.0 / 3.0 * 0.5f64.powf(1.5);
        assert!((v - exact).abs() < 1e-11, "{v} vs {exact}");
    }

    #[test]
    fn weights_sum_to_two() {
        for n in [2, 3, 7, 64, 256] {
            let (_, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let n = 5;
        let (x, w) = gauss_legendre(n);
        for k in 0..(2 * n) {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {k}: {q} vs {exact}");
        }
    }

    #[test]
    fn nodes_are_sorted_and_interior() {
        let (x, _) = gauss_legendre(96);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        assert!(x[0] > -1.0 && x[95] < 1.0);
    }
}
