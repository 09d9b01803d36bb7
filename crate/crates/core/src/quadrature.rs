//! Gauss–Legendre rules on intervals, tensor boxes and triangles.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(num_points: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(num_points >= 1, "a Gauss rule needs at least one node");
    let n = num_points;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, refined by Newton on P_n.
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
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss rule on `[a, b]`.
pub fn gauss_interval(num_points: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights) = gauss_legendre(num_points);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        nodes.iter().map(|&x| mid + half * x).collect(),
        weights.iter().map(|&w| w * half).collect(),
    )
}

/// Tensor Gauss rule on the box `prod_i [lo_i, hi_i]`.
///
/// Returns points (one `Vec` per point, length = number of box axes) and
/// weights. A zero-dimensional box yields the single point `[]` with weight 1.
pub fn gauss_box(num_points: usize, lo: &[f64], hi: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    assert_eq!(lo.len(), hi.len());
    let mut points = vec![Vec::with_capacity(lo.len())];
    let mut weights = vec![1.0];
    for (&a, &b) in lo.iter().zip(hi) {
        let (nodes, ws) = gauss_interval(num_points, a, b);
        let mut next_points = Vec::with_capacity(points.len() * nodes.len());
        let mut next_weights = Vec::with_capacity(points.len() * nodes.len());
        for (p, &w) in points.iter().zip(&weights) {
            for (&x, &wx) in nodes.iter().zip(&ws) {
                let mut q = p.clone();
                q.push(x);
                next_points.push(q);
                next_weights.push(w * wx);
            }
        }
        points = next_points;
        weights = next_weights;
    }
    (points, weights)
}

/// Collapsed (Duffy) Gauss rule on the triangle with vertices `a, b, c`.
///
/// With `m` nodes per direction the rule integrates polynomials of total
/// degree `2m - 2` exactly.
pub fn gauss_triangle(num_points: usize, a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> (Vec<[f64; 2]>, Vec<f64>) {
    let (nodes, ws) = gauss_interval(num_points, 0.0, 1.0);
    let e1 = [b[0] - a[0], b[1] - a[1]];
    let e2 = [c[0] - a[0], c[1] - a[1]];
    let jac = (e1[0] * e2[1] - e1[1] * e2[0]).abs();
    let mut points = Vec::with_capacity(num_points * num_points);
    let mut weights = Vec::with_capacity(num_points * num_points);
    for (&u, &wu) in nodes.iter().zip(&ws) {
        for (&s, &ws2) in nodes.iter().zip(&ws) {
            // (u, v) = (u, (1 - u) s) maps the unit square onto the reference triangle
            let v = (1.0 - u) * s;
            points.push([a[0] + u * e1[0] + v * e2[0], a[1] + u * e1[1] + v * e2[1]]);
            weights.push(wu * ws2 * (1.0 - u) * jac);
        }
    }
    (points, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rules_integrate_monomials_exactly() {
        for m in 1..=10 {
            let (x, w) = gauss_legendre(m);
            assert!(w.iter().all(|&wi| wi > 0.0));
            for deg in 0..(2 * m) {
                let quad: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((quad - exact).abs() < 1e-14, "m={m} deg={deg} {quad} vs {exact}");
            }
        }
    }

    #[test]
    fn three_point_rule_on_unit_interval() {
        let (x, w) = gauss_interval(3, 0.0, 1.0);
        assert_eq!(x.len(), 3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn box_rule_volume_and_moment() {
        let (pts, w) = gauss_box(3, &[0.0, 1.0], &[2.0, 4.0]);
        assert_eq!(pts.len(), 9);
        assert!((w.iter().sum::<f64>() - 6.0).abs() < 1e-13);
        // int x^2 y over [0,2]x[1,4] = (8/3)(15/2) = 20
        let m: f64 = pts.iter().zip(&w).map(|(p, wi)| wi * p[0] * p[0] * p[1]).sum();
        assert!((m - 20.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_rule_exactness() {
        // int over triangle (0,0),(1,0),(0,1) of x^a y^b = a! b! / (a+b+2)!
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        let m = 4;
        let (pts, w) = gauss_triangle(m, [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]);
        for a in 0..=6u32 {
            for b in 0..=(6 - a) {
                let quad: f64 = pts.iter().zip(&w).map(|(p, wi)| wi * p[0].powi(a as i32) * p[1].powi(b as i32)).sum();
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                assert!((quad - exact).abs() < 1e-15, "a={a} b={b}");
            }
        }
    }
}
