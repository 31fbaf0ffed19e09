//! Independent finite-difference oracles shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use steincc::cond_model::{HistogramConditionalModel, MlpParams};
use steincc::gof::{bootstrap_replicate, HValues};
use steincc::kernels::{median_heuristic, Kernel1D, KernelFamily, KernelNd};
use steincc::targets::Target;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

/// Relative error with an absolute floor, for quantities that may sit near zero.
pub fn scaled_err(approx: f64, exact: f64, floor: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(floor)
}

pub fn normal_vec(d: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Central-difference score from the log-density alone.
pub fn fd_score<T: Target + ?Sized>(target: &T, j: usize, x: &[f64]) -> f64 {
    let h = 1e-5;
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    a[j] += h;
    b[j] -= h;
    (target.log_density(&a) - target.log_density(&b)) / (2.0 * h)
}

/// Langevin-Stein operator in coordinate `j`, applied to `x ↦ k(x, y)` and then
/// to `y ↦ ·`, with every derivative (including the score) taken numerically.
fn fd_double_operator<T, K>(target: &T, j: usize, x: &[f64], y: &[f64], k: K) -> f64
where
    T: Target + ?Sized,
    K: Fn(&[f64], &[f64]) -> f64,
{
    let h = 1e-4;
    let bump = |v: &[f64], t: f64| {
        let mut w = v.to_vec();
        w[j] += t;
        w
    };
    // A_y applied to k(u, ·) at y.
    let inner = |u: &[f64]| {
        let by = fd_score(target, j, y);
        let dk = (k(u, &bump(y, h)) - k(u, &bump(y, -h))) / (2.0 * h);
        by * k(u, y) + dk
    };
    let bx = fd_score(target, j, x);
    let df = (inner(&bump(x, h)) - inner(&bump(x, -h))) / (2.0 * h);
    bx * inner(x) + df
}

/// Finite-difference oracle for `k_cc^j(x_j, y_j; x_{-j})`.
pub fn fd_cc_stein<T: Target + ?Sized>(target: &T, j: usize, x: &[f64], yj: f64, k: &Kernel1D) -> f64 {
    let mut y = x.to_vec();
    y[j] = yj;
    fd_double_operator(target, j, x, &y, |a, b| k.eval(a[j], b[j]))
}

/// Finite-difference oracle for `k_0^j(x, y)`.
pub fn fd_ksd_coord<T: Target + ?Sized>(target: &T, j: usize, x: &[f64], y: &[f64], k: &KernelNd) -> f64 {
    fd_double_operator(target, j, x, y, |a, b| k.eval(a, b).unwrap())
}

/// Worst relative error of the analytic kernel partials against central differences.
pub fn kernel_derivative_error(family: KernelFamily, rng: &mut dyn RngCore, trials: usize) -> f64 {
    let k1 = Kernel1D::new(family);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x: f64 = rng.random_range(-3.0..3.0);
        let y: f64 = rng.random_range(-3.0..3.0);
        let gx = (k1.eval(x + h, y) - k1.eval(x - h, y)) / (2.0 * h);
        let gy = (k1.eval(x, y + h) - k1.eval(x, y - h)) / (2.0 * h);
        let gxy = (k1.grad_y(x + h, y) - k1.grad_y(x - h, y)) / (2.0 * h);
        worst = worst
            .max(scaled_err(gx, k1.grad_x(x, y), 1e-3))
            .max(scaled_err(gy, k1.grad_y(x, y), 1e-3))
            .max(scaled_err(gxy, k1.grad_xy(x, y), 1e-3));

        let d = 3;
        let kn = KernelNd::new(family, d).unwrap();
        let xs: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        for j in 0..d {
            let mut xp = xs.clone();
            let mut xm = xs.clone();
            xp[j] += h;
            xm[j] -= h;
            let mut yp = ys.clone();
            let mut ym = ys.clone();
            yp[j] += h;
            ym[j] -= h;
            let gx = (kn.eval(&xp, &ys).unwrap() - kn.eval(&xm, &ys).unwrap()) / (2.0 * h);
            let gy = (kn.eval(&xs, &yp).unwrap() - kn.eval(&xs, &ym).unwrap()) / (2.0 * h);
            let gxy = (kn.grad_y_coord(j, &xp, &ys).unwrap() - kn.grad_y_coord(j, &xm, &ys).unwrap()) / (2.0 * h);
            worst = worst
                .max(scaled_err(gx, kn.grad_x_coord(j, &xs, &ys).unwrap(), 1e-3))
                .max(scaled_err(gy, kn.grad_y_coord(j, &xs, &ys).unwrap(), 1e-3))
                .max(scaled_err(gxy, kn.grad_xy_coord(j, &xs, &ys).unwrap(), 1e-3));
        }
    }
    worst
}

/// Smallest eigenvalue of the Gram matrix of `points` under `k`.
pub fn gram_min_eigenvalue(points: &Array2<f64>, k: &KernelNd) -> f64 {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = points.rows().into_iter().map(|r| r.to_vec()).collect();
    let g = DMatrix::from_fn(n, n, |a, b| k.eval(&rows[a], &rows[b]).unwrap());
    SymmetricEigen::new(g).eigenvalues.min()
}

/// Median heuristic by explicit sort of all pairwise distances.
pub fn brute_force_median(points: &Array2<f64>) -> f64 {
    let n = points.nrows();
    let mut dists = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let s: f64 = points.row(a).iter().zip(points.row(b).iter()).map(|(u, v)| (u - v) * (u - v)).sum();
            dists.push(s.sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    }
}

pub fn median_matches_brute_force(points: &Array2<f64>) -> bool {
    let fast = median_heuristic(points.view()).unwrap();
    let slow = brute_force_median(points);
    (fast - slow).abs() <= 1e-12 * slow.max(1.0)
}

fn perturb(m: &HistogramConditionalModel, which: usize, idx: usize, t: f64) -> HistogramConditionalModel {
    let mut c = m.clone();
    let p: &mut MlpParams = c.params_mut();
    match which {
        0 => p.w1.as_slice_mut().unwrap()[idx] += t,
        1 => p.b1[idx] += t,
        2 => p.w2.as_slice_mut().unwrap()[idx] += t,
        _ => p.b2[idx] += t,
    }
    c
}

/// Worst relative error of the backprop gradient against central differences
/// of the loss, over every parameter of a small random network.
pub fn mlp_backprop_error(rng: &mut dyn RngCore) -> f64 {
    let (input, hidden, bins, n) = (3, 5, 4, 12);
    let mut params = MlpParams::random(input, hidden, bins, rng);
    params.b1.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    params.b2.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    let model = HistogramConditionalModel::new(0, -2.0, 2.0, params).unwrap();
    let x = Array2::from_shape_fn((n, input), |_| rng.random_range(-2.0..2.0));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..bins)).collect();
    let g = model.gradient(x.view(), &labels);
    let analytic = [
        g.w1.as_slice().unwrap().to_vec(),
        g.b1.to_vec(),
        g.w2.as_slice().unwrap().to_vec(),
        g.b2.to_vec(),
    ];
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (which, grads) in analytic.iter().enumerate() {
        for (idx, &ga) in grads.iter().enumerate() {
            let up = perturb(&model, which, idx, h).loss(x.view(), &labels);
            let down = perturb(&model, which, idx, -h).loss(x.view(), &labels);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(scaled_err(ga, fd, 1e-3));
        }
    }
    worst
}

/// All-plus signs reproduce `T`, all-minus give `-T`, flipped signs negate.
pub fn bootstrap_sign_identities(rng: &mut dyn RngCore) -> bool {
    let n = 37;
    let h = HValues::new((0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let plus = vec![1.0; n];
    let minus = vec![-1.0; n];
    let eps: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let neg: Vec<f64> = eps.iter().map(|e| -e).collect();
    let t = h.statistic();
    (bootstrap_replicate(&h, &plus) - t).abs() < 1e-14
        && (bootstrap_replicate(&h, &minus) + t).abs() < 1e-14
        && (bootstrap_replicate(&h, &eps) + bootstrap_replicate(&h, &neg)).abs() < 1e-14
}
