//! Independent reference implementations shared by the integration tests:
//! edge-wise log-likelihoods written from scratch, finite differences, and a
//! quasi-Newton maximiser that knows nothing about the library's solver.
#![allow(dead_code)]

use lrtnet::{ComparisonTable, UndirectedGraph};

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Sum over pairs of `a (β_i + β_j) - log(1 + e^{β_i + β_j})`.
pub fn beta_loglik(beta: &[f64], g: &UndirectedGraph) -> f64 {
    let n = beta.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let s = beta[i] + beta[j];
            let a = if g.has_edge(i, j) { 1.0 } else { 0.0 };
            total += a * s - softplus(s);
        }
    }
    total
}

/// Sum over ordered pairs of `a_ij log mu(β_i - β_j)`.
pub fn bt_loglik(beta: &[f64], c: &ComparisonTable) -> f64 {
    let n = beta.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total -= c.wins(i, j) as f64 * softplus(beta[j] - beta[i]);
            }
        }
    }
    total
}

pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|k| {
            y[k] = x[k] + h;
            let up = f(&y);
            y[k] = x[k] - h;
            let down = f(&y);
            y[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let m = x.len();
    let mut out = vec![vec![0.0; m]; m];
    let mut y = x.to_vec();
    for a in 0..m {
        for b in a..m {
            let mut eval = |da: f64, db: f64| {
                y[a] += da;
                y[b] += db;
                let v = f(&y);
                y[a] = x[a];
                y[b] = x[b];
                v
            };
            let v = (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h);
            out[a][b] = v;
            out[b][a] = v;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximises `f` by BFGS with an Armijo backtracking line search on
/// central-difference gradients. Returns the maximiser.
pub fn bfgs_maximize(f: &dyn Fn(&[f64]) -> f64, x0: &[f64]) -> Vec<f64> {
    let m = x0.len();
    let neg = |x: &[f64]| -f(x);
    let grad = |x: &[f64]| fd_gradient(&neg, x, 1e-5);
    let mut x = x0.to_vec();
    let mut fx = neg(&x);
    let mut g = grad(&x);
    let mut h: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..2000 {
        if g.iter().all(|v| v.abs() < 1e-9) {
            break;
        }
        let mut dir: Vec<f64> = h.iter().map(|row| -dot(row, &g)).collect();
        if dot(&dir, &g) >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            h = (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        }
        let slope = dot(&dir, &g);
        let mut step = 1.0;
        let mut next;
        loop {
            next = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect::<Vec<_>>();
            let fn_ = neg(&next);
            if fn_ <= fx + 1e-4 * step * slope || step < 1e-12 {
                fx = fn_;
                break;
            }
            step *= 0.5;
        }
        let g_next = grad(&next);
        let s: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        x = next;
        g = g_next;
        if sy <= 1e-14 {
            continue;
        }
        let hy: Vec<f64> = h.iter().map(|row| dot(row, &y)).collect();
        let yhy = dot(&y, &hy);
        for i in 0..m {
            for j in 0..m {
                h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
            }
        }
    }
    x
}

/// Maps a reduced parameter vector to a full one.
pub type Expand<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>;

/// Free block after `r` fixed values.
pub fn specified_expand(fixed: Vec<f64>, n: usize) -> Expand<'static> {
    Box::new(move |theta: &[f64]| {
        let mut full = fixed.clone();
        full.extend_from_slice(theta);
        assert_eq!(full.len(), n);
        full
    })
}

/// `(common, rest...)` where `common` fills `positions`; `prefix` entries are fixed zeros in front.
pub fn tied_expand(prefix: usize, tied: usize, n: usize) -> Expand<'static> {
    Box::new(move |theta: &[f64]| {
        let mut full = vec![0.0; prefix];
        full.extend(std::iter::repeat_n(theta[0], tied));
        full.extend_from_slice(&theta[1..]);
        assert_eq!(full.len(), n);
        full
    })
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
