//! Derivative-free and quasi-Newton minimization over boxes.

use rayon::prelude::*;

use crate::model::Vector;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search on `[a, b]`; returns the best point seen.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Grid search with `points` values per coordinate followed by golden-section
/// refinement of each coordinate within one grid cell. Grid points are
/// visited in lexicographic order and only strict improvements are accepted,
/// so ties resolve to the lexicographically smallest point.
pub fn grid_then_golden(
    f: impl Fn(&Vector) -> f64,
    lower: &Vector,
    upper: &Vector,
    points: usize,
    tol: f64,
) -> (Vector, f64) {
    let m = lower.len();
    let axes: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            if points <= 1 || upper[i] == lower[i] {
                vec![lower[i]]
            } else {
                (0..points).map(|k| lower[i] + (upper[i] - lower[i]) * k as f64 / (points - 1) as f64).collect()
            }
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let mut best = Vector::from_iterator(m, axes.iter().map(|a| a[0]));
    let mut best_val = f(&best);
    let mut u = best.clone();
    for flat in 1..total {
        let mut r = flat;
        for i in (0..m).rev() {
            let len = axes[i].len();
            u[i] = axes[i][r % len];
            r /= len;
        }
        let v = f(&u);
        if v < best_val {
            best_val = v;
            best.copy_from(&u);
        }
    }
    for i in 0..m {
        if axes[i].len() < 2 {
            continue;
        }
        let cell = (upper[i] - lower[i]) / (axes[i].len() - 1) as f64;
        let a = (best[i] - cell).max(lower[i]);
        let b = (best[i] + cell).min(upper[i]);
        let mut trial = best.clone();
        let (s, v) = golden_section(
            |s| {
                trial[i] = s;
                f(&trial)
            },
            a,
            b,
            tol,
        );
        if v < best_val {
            best[i] = s;
            best_val = v;
        }
    }
    (best, best_val)
}

/// Options for [`bfgs_box`].
#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Relative central-difference step for gradients.
    pub grad_step: f64,
    /// Stop when the projected gradient falls below this (max norm).
    pub gtol: f64,
    /// Stop after three iterations with relative decrease below this.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_step: 1e-7, gtol: 1e-10, ftol: 1e-15 }
    }
}

fn project(x: &Vector, lower: &Vector, upper: &Vector) -> Vector {
    Vector::from_iterator(x.len(), x.iter().enumerate().map(|(i, v)| v.clamp(lower[i], upper[i])))
}

/// Central-difference gradient respecting bounds (one-sided at a bound).
pub fn box_gradient(f: &(dyn Fn(&Vector) -> f64 + Sync), x: &Vector, lower: &Vector, upper: &Vector, rel: f64) -> Vector {
    let g: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let h = rel * (1.0 + x[i].abs());
            let up = (x[i] + h).min(upper[i]);
            let dn = (x[i] - h).max(lower[i]);
            if up <= dn {
                return 0.0;
            }
            let mut xp = x.clone();
            xp[i] = up;
            let fp = f(&xp);
            xp[i] = dn;
            let fm = f(&xp);
            (fp - fm) / (up - dn)
        })
        .collect();
    Vector::from_vec(g)
}

/// Projected BFGS with an Armijo backtracking line search on a box.
pub fn bfgs_box(
    f: &(dyn Fn(&Vector) -> f64 + Sync),
    x0: &Vector,
    lower: &Vector,
    upper: &Vector,
    opts: &BfgsOptions,
) -> (Vector, f64) {
    let n = x0.len();
    let mut x = project(x0, lower, upper);
    let mut fx = f(&x);
    if n == 0 || !fx.is_finite() {
        return (x, fx);
    }
    let mut g = box_gradient(f, &x, lower, upper, opts.grad_step);
    let mut hinv = nalgebra::DMatrix::<f64>::identity(n, n);
    let mut small_steps = 0;
    for _ in 0..opts.max_iter {
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let pg = Vector::from_iterator(n, (0..n).map(|i| if free[i] { g[i] } else { 0.0 }));
        if pg.amax() <= opts.gtol {
            break;
        }
        let mut d = -(&hinv * &pg);
        for i in 0..n {
            if !free[i] {
                d[i] = 0.0;
            }
        }
        if d.dot(&pg) >= 0.0 {
            hinv.fill_with_identity();
            d = -pg.clone();
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = project(&(&x + &d * alpha), lower, upper);
            let fnew = f(&xn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * g.dot(&(&xn - &x)) && fnew <= fx {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if hinv == nalgebra::DMatrix::identity(n, n) {
                break;
            }
            hinv.fill_with_identity();
            continue;
        };
        let gn = box_gradient(f, &xn, lower, upper, opts.grad_step);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            let rho = 1.0 / sy;
            let i = nalgebra::DMatrix::<f64>::identity(n, n);
            let a = &i - &s * y.transpose() * rho;
            let b = &i - &y * s.transpose() * rho;
            hinv = &a * &hinv * &b + &s * s.transpose() * rho;
        }
        if (fx - fnew).abs() <= opts.ftol * (1.0 + fx.abs()) {
            small_steps += 1;
        } else {
            small_steps = 0;
        }
        x = xn;
        fx = fnew;
        g = gn;
        if small_steps >= 3 {
            break;
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn golden_finds_quadratic_minimum() {
        let (x, _) = golden_section(|u| (u - 0.3).powi(2), -1.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn grid_ties_prefer_smallest() {
        let (u, _) = grid_then_golden(|_| 0.0, &dvector![-1.0, -2.0], &dvector![1.0, 2.0], 21, 1e-10);
        assert_eq!(u, dvector![-1.0, -2.0]);
    }

    #[test]
    fn grid_refines_two_dimensions() {
        let (u, _) = grid_then_golden(
            |u| (u[0] - 0.123).powi(2) + (u[1] + 0.456).powi(2),
            &dvector![-1.0, -1.0],
            &dvector![1.0, 1.0],
            21,
            1e-10,
        );
        assert!((u[0] - 0.123).abs() < 1e-8 && (u[1] + 0.456).abs() < 1e-8);
    }

    #[test]
    fn bfgs_handles_bounds_and_curvature() {
        let f = |x: &Vector| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let (x, fx) = bfgs_box(&f, &dvector![-1.2, 1.0], &dvector![-2.0, -2.0], &dvector![2.0, 2.0], &BfgsOptions::default());
        assert!(fx < 1e-10, "{fx} at {x}");
        let g = |x: &Vector| (x[0] - 3.0).powi(2) + (x[1] + 0.5).powi(2);
        let (x, _) = bfgs_box(&g, &dvector![0.0, 0.0], &dvector![-1.0, -1.0], &dvector![1.0, 1.0], &BfgsOptions::default());
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] + 0.5).abs() < 1e-6);
    }
}
