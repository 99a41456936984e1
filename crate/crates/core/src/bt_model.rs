//! The Bradley–Terry model: subject `i` beats `j` with probability
//! `mu(beta_i - beta_j)`, with `beta_0 = 0` as the reference.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::beta_model::ModelDiagnostics;
use crate::data::{ComparisonTable, Degrees, ModelKind, NullHypothesis};
use crate::error::{Error, Result};
use crate::logistic::{log_add_exp, mu, mu_prime};
use crate::solver::{maximize, Fit, FitOptions, Layout, Objective};

pub type BtFit = Fit;

/// How the minorisation-maximisation warm start keeps `beta_0 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmNormalization {
    /// Never update the reference subject.
    #[default]
    PinReference,
    /// Update every subject, then shift so the reference is back at zero.
    RescaleAfterSweep,
}

/// Number of comparisons per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairTotals {
    /// The same `K` for every pair.
    Constant(u32),
    /// Symmetric row-major `n x n` matrix with zero diagonal.
    Matrix(Vec<u32>),
}

impl PairTotals {
    pub fn get(&self, n: usize, i: usize, j: usize) -> u32 {
        match self {
            _ if i == j => 0,
            PairTotals::Constant(k) => *k,
            PairTotals::Matrix(m) => m[i * n + j],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if let PairTotals::Matrix(m) = self {
            if m.len() != n * n {
                return Err(Error::invalid(format!("pair totals have {} entries, expected {}", m.len(), n * n)));
            }
            for i in 0..n {
                for j in 0..n {
                    if m[i * n + j] != m[j * n + i] {
                        return Err(Error::invalid(format!("pair totals not symmetric at ({i}, {j})")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_beta(beta: &[f64], n: usize) -> Result<()> {
    if beta.len() != n {
        return Err(Error::invalid(format!("parameter length {} does not match {n} subjects", beta.len())));
    }
    if let Some(k) = beta.iter().position(|b| !b.is_finite()) {
        return Err(Error::invalid(format!("beta[{k}] is not finite")));
    }
    if beta[0] != 0.0 {
        return Err(Error::invalid("Bradley-Terry parameters need beta[0] = 0"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub(crate) struct BtObjective {
    n: usize,
    totals: Vec<f64>,
    wins: Vec<f64>,
    normalization: MmNormalization,
}

impl BtObjective {
    pub fn new(c: &ComparisonTable) -> Self {
        Self::with_normalization(c, MmNormalization::PinReference)
    }

    pub fn with_normalization(c: &ComparisonTable, normalization: MmNormalization) -> Self {
        let n = c.n();
        Self {
            n,
            totals: c.totals().into_iter().map(f64::from).collect(),
            wins: c.degrees().into_iter().map(f64::from).collect(),
            normalization,
        }
    }

    fn k(&self, i: usize, j: usize) -> f64 {
        self.totals[i * self.n + j]
    }

    /// `log d - log sum_j k_ij / (e^{beta_i} + e^{beta_j})` summed over a group.
    fn mm_update(&self, exp_beta: &[f64], members: &[usize]) -> f64 {
        let mut stat = 0.0;
        let mut denom = 0.0;
        for &i in members {
            stat += self.wins[i];
            for j in 0..self.n {
                let k = self.k(i, j);
                if k > 0.0 {
                    denom += k / (exp_beta[i] + exp_beta[j]);
                }
            }
        }
        stat.ln() - denom.ln()
    }
}

impl Objective for BtObjective {
    fn n(&self) -> usize {
        self.n
    }

    fn log_likelihood(&self, beta: &[f64]) -> f64 {
        let linear: f64 = beta.iter().zip(&self.wins).map(|(b, d)| b * d).sum();
        let mut partition = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                let k = self.k(i, j);
                if k > 0.0 {
                    partition += k * log_add_exp(beta[i], beta[j]);
                }
            }
        }
        linear - partition
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let mut expected = vec![0.0; self.n];
        for i in 0..self.n {
            for j in i + 1..self.n {
                let k = self.k(i, j);
                if k > 0.0 {
                    let p = k * mu(beta[i] - beta[j]);
                    expected[i] += p;
                    expected[j] += k - p;
                }
            }
        }
        self.wins.iter().zip(expected).map(|(d, e)| d - e).collect()
    }

    fn max_abs_logit(&self, beta: &[f64]) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.k(i, j) > 0.0 {
                    m = m.max((beta[i] - beta[j]).abs());
                }
            }
        }
        m
    }

    fn neg_hessian(&self, beta: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut v = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let w = self.k(i, j) * mu_prime(beta[i] - beta[j]);
                v[(i, j)] = -w;
                v[(j, i)] = -w;
                v[(i, i)] += w;
                v[(j, j)] += w;
            }
        }
        v
    }

    fn warm_sweep(&self, beta: &[f64], layout: &Layout) -> Vec<f64> {
        let exp_beta: Vec<f64> = beta.iter().map(|b| b.exp()).collect();
        if self.normalization == MmNormalization::RescaleAfterSweep && *layout == Layout::reference_pinned(self.n) {
            let raw: Vec<f64> = (0..self.n).map(|i| self.mm_update(&exp_beta, &[i])).collect();
            return raw.iter().map(|b| b - raw[0]).collect();
        }
        let theta: Vec<f64> = (0..layout.free_count()).map(|k| self.mm_update(&exp_beta, layout.members(k))).collect();
        layout.expand(&theta)
    }
}

/// `sum_i beta_i d_i - sum_{i<j} k_ij log(e^{beta_i} + e^{beta_j})`.
pub fn bt_log_likelihood(beta: &[f64], c: &ComparisonTable) -> Result<f64> {
    check_beta(beta, c.n())?;
    Ok(BtObjective::new(c).log_likelihood(beta))
}

/// Score in the free coordinates `1..n`.
pub fn bt_score(beta: &[f64], c: &ComparisonTable) -> Result<Vec<f64>> {
    check_beta(beta, c.n())?;
    Ok(BtObjective::new(c).gradient(beta)[1..].to_vec())
}

/// Negative Hessian in the free coordinates `1..n`, an `(n-1) x (n-1)` matrix.
pub fn bt_fisher_info(beta: &[f64], c: &ComparisonTable) -> Result<DMatrix<f64>> {
    check_beta(beta, c.n())?;
    let full = BtObjective::new(c).neg_hessian(beta);
    let n = c.n();
    Ok(full.view((1, 1), (n - 1, n - 1)).into_owned())
}

/// `b_n`, `c_n` with pair argument `beta_i - beta_j`.
pub fn bt_bn_cn(beta: &[f64]) -> ModelDiagnostics {
    ModelDiagnostics::from_pairs(beta.len(), |i, j| beta[i] - beta[j])
}

fn reachable_from_zero(n: usize, arc: impl Fn(usize, usize) -> bool) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if !seen[v] && arc(u, v) {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

/// Whether the win digraph (arc `i -> j` when `i` beat `j` at least once)
/// is strongly connected, the condition for the estimate to exist.
pub fn strongly_connected(c: &ComparisonTable) -> bool {
    let n = c.n();
    reachable_from_zero(n, |u, v| c.wins(u, v) > 0) && reachable_from_zero(n, |u, v| c.wins(v, u) > 0)
}

fn fit_layout(c: &ComparisonTable, layout: &Layout, opts: &FitOptions, normalization: MmNormalization) -> BtFit {
    if !strongly_connected(c) {
        return Fit::nonexistent(ModelKind::BradleyTerry, c.n(), 0);
    }
    maximize(&BtObjective::with_normalization(c, normalization), ModelKind::BradleyTerry, layout, opts)
}

/// Maximum likelihood estimate with `beta_0 = 0`.
pub fn bt_fit_mle(c: &ComparisonTable, opts: &FitOptions) -> BtFit {
    bt_fit_mle_with(c, opts, MmNormalization::PinReference)
}

pub fn bt_fit_mle_with(c: &ComparisonTable, opts: &FitOptions, normalization: MmNormalization) -> BtFit {
    fit_layout(c, &Layout::reference_pinned(c.n()), opts, normalization)
}

/// Constrained maximum under a specified or homogeneous null.
pub fn bt_fit_restricted(c: &ComparisonTable, null: &NullHypothesis, opts: &FitOptions) -> Result<BtFit> {
    null.validate(ModelKind::BradleyTerry, c.n())?;
    let layout = Layout::for_null(ModelKind::BradleyTerry, c.n(), null);
    Ok(fit_layout(c, &layout, opts, MmNormalization::PinReference))
}

/// Standard errors `sqrt(1/v_ii + 1/v_00)` from the diagonal-plus-constant
/// approximation of the inverse information; `None` for the reference.
pub fn bt_standard_errors(beta: &[f64], c: &ComparisonTable) -> Result<Vec<Option<f64>>> {
    check_beta(beta, c.n())?;
    let v = BtObjective::new(c).neg_hessian(beta);
    let v00 = v[(0, 0)];
    Ok((0..c.n()).map(|i| if i == 0 { None } else { Some((1.0 / v[(i, i)] + 1.0 / v00).sqrt()) }).collect())
}

/// Draws `a_ij ~ Binomial(k_ij, mu(beta_i - beta_j))` and sets `a_ji = k_ij - a_ij`.
pub fn simulate_comparisons<R: Rng + ?Sized>(
    beta: &[f64],
    totals: &PairTotals,
    rng: &mut R,
) -> Result<ComparisonTable> {
    let n = beta.len();
    check_beta(beta, n)?;
    totals.validate(n)?;
    let mut table = ComparisonTable::new(n)?;
    for i in 0..n {
        for j in i + 1..n {
            let k = totals.get(n, i, j);
            if k == 0 {
                continue;
            }
            let p = mu(beta[i] - beta[j]);
            let a = Binomial::new(u64::from(k), p).map_err(|e| Error::invalid(e.to_string()))?.sample(rng) as u32;
            table.set_pair(i, j, a, k - a);
        }
    }
    Ok(table)
}
