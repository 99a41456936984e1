//! The β-model for undirected graphs: edges `{i, j}` appear independently
//! with probability `mu(beta_i + beta_j)`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ModelKind, NullHypothesis, UndirectedGraph};
use crate::error::{Error, Result};
use crate::logistic::{inverse_variance, mu, mu_prime, softplus};
use crate::solver::{maximize, Fit, FitOptions, Layout, Objective};

pub type BetaFit = Fit;

/// Extremes of the reciprocal edge variances and the derived consistency radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDiagnostics {
    /// Largest `(1 + e^x)^2 / e^x` over pairs.
    pub b_n: f64,
    /// Smallest `(1 + e^x)^2 / e^x` over pairs; at least 4.
    pub c_n: f64,
    /// `3 n b_n / (2n - 1) * sqrt(log n / n)`.
    pub consistency_radius: f64,
}

impl ModelDiagnostics {
    pub(crate) fn from_pairs(n: usize, mut pair_arg: impl FnMut(usize, usize) -> f64) -> Self {
        let mut b_n = f64::NEG_INFINITY;
        let mut c_n = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let w = inverse_variance(pair_arg(i, j));
                b_n = b_n.max(w);
                c_n = c_n.min(w);
            }
        }
        let nf = n as f64;
        let consistency_radius = 3.0 * nf * b_n / (2.0 * nf - 1.0) * (nf.ln() / nf).sqrt();
        Self { b_n, c_n, consistency_radius }
    }
}

fn check_beta(beta: &[f64], n: usize) -> Result<()> {
    if beta.len() != n {
        return Err(Error::invalid(format!("parameter length {} does not match {n} nodes", beta.len())));
    }
    if let Some(k) = beta.iter().position(|b| !b.is_finite()) {
        return Err(Error::invalid(format!("beta[{k}] is not finite")));
    }
    Ok(())
}

/// Degree-sequence form of the log-likelihood; all the data the model needs.
#[derive(Debug, Clone)]
pub(crate) struct BetaObjective {
    degrees: Vec<f64>,
}

impl BetaObjective {
    pub fn new(g: &UndirectedGraph) -> Self {
        Self { degrees: g.degree_slice().iter().map(|&d| d as f64).collect() }
    }
}

impl Objective for BetaObjective {
    fn n(&self) -> usize {
        self.degrees.len()
    }

    fn log_likelihood(&self, beta: &[f64]) -> f64 {
        let n = beta.len();
        let linear: f64 = beta.iter().zip(&self.degrees).map(|(b, d)| b * d).sum();
        let mut partition = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                partition += softplus(beta[i] + beta[j]);
            }
        }
        linear - partition
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let n = beta.len();
        let mut expected = vec![0.0; n];
        for i in 0..n {
            for j in i + 1..n {
                let p = mu(beta[i] + beta[j]);
                expected[i] += p;
                expected[j] += p;
            }
        }
        self.degrees.iter().zip(expected).map(|(d, e)| d - e).collect()
    }

    fn neg_hessian(&self, beta: &[f64]) -> DMatrix<f64> {
        fisher_info(beta)
    }

    fn max_abs_logit(&self, beta: &[f64]) -> f64 {
        let mut m = 0.0f64;
        for i in 0..beta.len() {
            for j in i + 1..beta.len() {
                m = m.max((beta[i] + beta[j]).abs());
            }
        }
        m
    }

    fn warm_sweep(&self, beta: &[f64], layout: &Layout) -> Vec<f64> {
        // beta_i <- log d_i - log sum_{j != i} 1 / (e^{-beta_j} + e^{beta_i})
        let exp_pos: Vec<f64> = beta.iter().map(|b| b.exp()).collect();
        let exp_neg: Vec<f64> = beta.iter().map(|b| (-b).exp()).collect();
        let mut theta = Vec::with_capacity(layout.free_count());
        for k in 0..layout.free_count() {
            let mut stat = 0.0;
            let mut denom = 0.0;
            for &i in layout.members(k) {
                stat += self.degrees[i];
                for j in 0..beta.len() {
                    if j != i {
                        denom += 1.0 / (exp_neg[j] + exp_pos[i]);
                    }
                }
            }
            theta.push(stat.ln() - denom.ln());
        }
        layout.expand(&theta)
    }
}

/// `sum_i beta_i d_i - sum_{i<j} log(1 + e^{beta_i + beta_j})`.
pub fn log_likelihood(beta: &[f64], g: &UndirectedGraph) -> Result<f64> {
    check_beta(beta, g.n())?;
    Ok(BetaObjective::new(g).log_likelihood(beta))
}

/// Score vector `d - E d`.
pub fn score(beta: &[f64], g: &UndirectedGraph) -> Result<Vec<f64>> {
    check_beta(beta, g.n())?;
    Ok(BetaObjective::new(g).gradient(beta))
}

/// Fisher information `V`: `v_ij = mu'(beta_i + beta_j)` off the diagonal and
/// `v_ii = sum_{j != i} v_ij`.
pub fn fisher_info(beta: &[f64]) -> DMatrix<f64> {
    let n = beta.len();
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w = mu_prime(beta[i] + beta[j]);
            v[(i, j)] = w;
            v[(j, i)] = w;
            v[(i, i)] += w;
            v[(j, j)] += w;
        }
    }
    v
}

pub fn bn_cn(beta: &[f64]) -> ModelDiagnostics {
    ModelDiagnostics::from_pairs(beta.len(), |i, j| beta[i] + beta[j])
}

fn on_boundary(g: &UndirectedGraph, layout: &Layout) -> bool {
    let cap = (g.n() - 1) as u64;
    (0..layout.free_count()).any(|k| {
        let members = layout.members(k);
        let total: u64 = members.iter().map(|&i| g.degree_slice()[i] as u64).sum();
        total == 0 || total == cap * members.len() as u64
    })
}

fn fit_layout(g: &UndirectedGraph, layout: &Layout, opts: &FitOptions) -> BetaFit {
    if on_boundary(g, layout) {
        return Fit::nonexistent(ModelKind::Beta, g.n(), 0);
    }
    maximize(&BetaObjective::new(g), ModelKind::Beta, layout, opts)
}

/// Unrestricted maximum likelihood estimate.
///
/// Starts from zero, runs the fixed-point map to a loose tolerance and
/// finishes with Newton steps. Degrees of `0` or `n - 1`, or divergence of
/// the iterates, give `exists = false`.
pub fn fit_mle(g: &UndirectedGraph, opts: &FitOptions) -> BetaFit {
    fit_layout(g, &Layout::unconstrained(g.n()), opts)
}

/// Maximum over `beta[0..r] = values` with `r = values.len()`.
pub fn fit_restricted_specified(g: &UndirectedGraph, values: &[f64], opts: &FitOptions) -> Result<BetaFit> {
    if values.is_empty() {
        return Ok(fit_mle(g, opts));
    }
    let null = NullHypothesis::Specified { r: values.len(), values: values.to_vec() };
    null.validate(ModelKind::Beta, g.n())?;
    Ok(fit_layout(g, &Layout::for_null(ModelKind::Beta, g.n(), &null), opts))
}

/// Maximum over `beta_0 = ... = beta_{r-1}`; the result is full length.
pub fn fit_restricted_homogeneous(g: &UndirectedGraph, r: usize, opts: &FitOptions) -> Result<BetaFit> {
    let null = NullHypothesis::Homogeneous { r };
    null.validate(ModelKind::Beta, g.n())?;
    Ok(fit_layout(g, &Layout::for_null(ModelKind::Beta, g.n(), &null), opts))
}

pub fn fit_restricted(g: &UndirectedGraph, null: &NullHypothesis, opts: &FitOptions) -> Result<BetaFit> {
    match null {
        NullHypothesis::Specified { values, .. } => {
            null.validate(ModelKind::Beta, g.n())?;
            fit_restricted_specified(g, values, opts)
        }
        NullHypothesis::Homogeneous { r } => fit_restricted_homogeneous(g, *r, opts),
    }
}

/// Draws each edge independently with probability `mu(beta_i + beta_j)`.
pub fn simulate_graph<R: Rng + ?Sized>(beta: &[f64], rng: &mut R) -> Result<UndirectedGraph> {
    check_beta(beta, beta.len())?;
    UndirectedGraph::from_fn(beta.len(), |i, j| rng.random::<f64>() < mu(beta[i] + beta[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, edges: &[(usize, usize)]) -> UndirectedGraph {
        UndirectedGraph::from_edges(n, edges.iter().copied()).unwrap()
    }

    #[test]
    fn loglik_at_zero() {
        let g = graph(3, &[(0, 1)]);
        assert!((log_likelihood(&[0.0; 3], &g).unwrap() + 3.0 * 2f64.ln()).abs() < 1e-12);
        let g4 = graph(4, &[(0, 1), (2, 3)]);
        assert!((log_likelihood(&[0.0; 4], &g4).unwrap() + 6.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loglik_scalar_evaluation() {
        // (1 - 1) - [log(1 + e^0) + log(1 + e^1) + log(1 + e^-1)]
        let g = graph(3, &[(0, 1)]);
        let expected = -(2f64.ln() + (1.0 + 1f64.exp()).ln() + (1.0 + (-1f64).exp()).ln());
        assert!((log_likelihood(&[1.0, -1.0, 0.0], &g).unwrap() - expected).abs() < 1e-12);
        assert!((expected - (-2.319_670_555_596_391)).abs() < 1e-12);
    }

    #[test]
    fn loglik_rejects_bad_input() {
        let g = graph(3, &[(0, 1)]);
        assert!(log_likelihood(&[0.0, f64::INFINITY, 0.0], &g).is_err());
        assert!(log_likelihood(&[0.0; 4], &g).is_err());
    }

    #[test]
    fn score_examples() {
        let g = graph(3, &[(0, 1)]);
        assert_eq!(score(&[0.0; 3], &g).unwrap(), vec![0.0, 0.0, -1.0]);
        let k3 = graph(3, &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(score(&[0.0; 3], &k3).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn fisher_examples() {
        let v = fisher_info(&[0.0; 3]);
        assert_eq!(v[(0, 1)], 0.25);
        assert_eq!(v[(2, 2)], 0.5);
        let v = fisher_info(&[0.0; 100]);
        assert!((v[(17, 17)] - 24.75).abs() < 1e-12);
        let v = fisher_info(&[0.3, -1.0, 0.5, 2.0]);
        for i in 0..4 {
            let off: f64 = (0..4).filter(|&j| j != i).map(|j| v[(i, j)]).sum();
            assert!((off - v[(i, i)]).abs() < 1e-15);
        }
    }

    #[test]
    fn bn_cn_examples() {
        let d = bn_cn(&[0.0; 5]);
        assert_eq!((d.b_n, d.c_n), (4.0, 4.0));
        let d = bn_cn(&[1.0, -1.0, 0.0]);
        assert_eq!(d.c_n, 4.0);
        let e = 1f64.exp();
        assert!((d.b_n - (1.0 + e) * (1.0 + e) / e).abs() < 1e-12);
        assert!((d.b_n - 5.086_161_269_630_487).abs() < 1e-12);

        let n = 100usize;
        let beta: Vec<f64> = (0..n).map(|i| i as f64 * 0.2 * (n as f64).ln() / (n as f64 - 1.0)).collect();
        let d = bn_cn(&beta);
        let top =
            0.4 * (n as f64).ln() * (n as f64 - 2.0) / (n as f64 - 1.0) + 0.2 * (n as f64).ln() / (n as f64 - 1.0);
        assert!((d.b_n - inverse_variance(top)).abs() < 1e-9 * d.b_n);
    }

    #[test]
    fn five_cycle_is_symmetric() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        let fit = fit_mle(&g, &FitOptions::default());
        assert!(fit.exists && fit.converged);
        for b in &fit.beta_hat {
            assert!(b.abs() < 1e-9);
        }
    }

    #[test]
    fn boundary_degrees_do_not_exist() {
        let k4 = UndirectedGraph::from_fn(4, |_, _| true).unwrap();
        let fit = fit_mle(&k4, &FitOptions::default());
        assert!(!fit.exists && !fit.converged);
        let isolated = graph(4, &[(0, 1), (1, 2)]);
        assert!(!fit_mle(&isolated, &FitOptions::default()).exists);
    }

    #[test]
    fn simple_null_uses_values_directly() {
        let g = graph(4, &[(0, 1), (0, 2), (1, 3)]);
        let values = [0.1, -0.2, 0.3, 0.0];
        let fit = fit_restricted_specified(&g, &values, &FitOptions::default()).unwrap();
        assert_eq!(fit.beta_hat, values.to_vec());
        assert_eq!(fit.loglik, log_likelihood(&values, &g).unwrap());
        assert_eq!(fit.iterations, 0);
    }

    #[test]
    fn empty_specified_null_is_full_fit() {
        let g = graph(5, &[(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4)]);
        let opts = FitOptions::default();
        assert_eq!(fit_restricted_specified(&g, &[], &opts).unwrap(), fit_mle(&g, &opts));
    }

    #[test]
    fn homogeneous_extremes() {
        let g = graph(5, &[(0, 1), (0, 2), (1, 3), (3, 4), (2, 4), (1, 4)]);
        let opts = FitOptions::default();
        let full = fit_mle(&g, &opts);
        let one = fit_restricted_homogeneous(&g, 1, &opts).unwrap();
        for (a, b) in full.beta_hat.iter().zip(&one.beta_hat) {
            assert!((a - b).abs() < 1e-9);
        }
        let all = fit_restricted_homogeneous(&g, 5, &opts).unwrap();
        let density: f64 = 2.0 * 6.0 / 20.0;
        let closed = 0.5 * (density / (1.0 - density)).ln();
        for b in &all.beta_hat {
            assert!((b - closed).abs() < 1e-9);
        }
    }

    #[test]
    fn simulation_is_deterministic_and_calibrated() {
        let beta = vec![0.0; 100];
        let a = simulate_graph(&beta, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = simulate_graph(&beta, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut total = 0.0;
        for _ in 0..500 {
            let g = simulate_graph(&beta, &mut rng).unwrap();
            total += g.degree_slice()[0] as f64;
        }
        let mean = total / 500.0;
        assert!((mean - 49.5).abs() <= 1.5, "mean degree {mean}");
    }

    #[test]
    fn saturated_edge_almost_always_present() {
        let beta = [30.0, 30.0, -30.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let present = (0..1000).filter(|_| simulate_graph(&beta, &mut rng).unwrap().has_edge(0, 1)).count();
        assert!(present >= 995);
    }
}
