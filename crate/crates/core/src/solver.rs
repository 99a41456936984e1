//! Constrained maximisation shared by the β-model and Bradley–Terry fits.
//!
//! Every coordinate of the full parameter vector is either pinned to a
//! constant or mapped onto one free parameter; several coordinates mapped
//! onto the same free parameter are tied. The free parameters are found by a
//! model-specific warm-start sweep followed by damped Newton steps on the
//! reduced score.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ModelKind, NullHypothesis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Slot {
    Fixed(f64),
    Free(usize),
}

/// Mapping between free parameters and the full parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    slots: Vec<Slot>,
    members: Vec<Vec<usize>>,
}

impl Layout {
    fn from_slots(slots: Vec<Slot>) -> Self {
        let free = slots.iter().filter_map(|s| if let Slot::Free(k) = s { Some(*k + 1) } else { None }).max();
        let mut members = vec![Vec::new(); free.unwrap_or(0)];
        for (i, s) in slots.iter().enumerate() {
            if let Slot::Free(k) = s {
                members[*k].push(i);
            }
        }
        Self { slots, members }
    }

    /// All coordinates free (β-model without constraints).
    pub fn unconstrained(n: usize) -> Self {
        Self::from_slots((0..n).map(Slot::Free).collect())
    }

    /// Reference coordinate pinned at zero (Bradley–Terry without constraints).
    pub fn reference_pinned(n: usize) -> Self {
        Self::from_slots(std::iter::once(Slot::Fixed(0.0)).chain((1..n).map(|i| Slot::Free(i - 1))).collect())
    }

    /// Layout of the restricted parameter space for `null`.
    pub fn for_null(model: ModelKind, n: usize, null: &NullHypothesis) -> Self {
        let start = match model {
            ModelKind::Beta => 0,
            ModelKind::BradleyTerry => 1,
        };
        let r = null.r();
        let mut slots = Vec::with_capacity(n);
        if start == 1 {
            slots.push(Slot::Fixed(0.0));
        }
        let mut next = 0;
        match null {
            NullHypothesis::Specified { values, .. } => {
                slots.extend(values.iter().map(|&v| Slot::Fixed(v)));
            }
            NullHypothesis::Homogeneous { .. } => {
                if r > start {
                    slots.extend(std::iter::repeat_n(Slot::Free(0), r - start));
                    next = 1;
                }
            }
        }
        while slots.len() < n {
            slots.push(Slot::Free(next));
            next += 1;
        }
        Self::from_slots(slots)
    }

    pub fn n(&self) -> usize {
        self.slots.len()
    }

    pub fn free_count(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn expand(&self, theta: &[f64]) -> Vec<f64> {
        self.slots
            .iter()
            .map(|s| match *s {
                Slot::Fixed(v) => v,
                Slot::Free(k) => theta[k],
            })
            .collect()
    }

    /// Free parameters read off a full vector (first member of each group).
    pub fn project(&self, beta: &[f64]) -> Vec<f64> {
        self.members.iter().map(|m| beta[m[0]]).collect()
    }

    pub fn reduce_gradient(&self, full: &[f64]) -> Vec<f64> {
        self.members.iter().map(|m| m.iter().map(|&i| full[i]).sum()).collect()
    }

    pub fn reduce_matrix(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.free_count();
        let mut out = DMatrix::zeros(m, m);
        for i in 0..self.n() {
            let Slot::Free(gi) = self.slots[i] else { continue };
            for j in 0..self.n() {
                if let Slot::Free(gj) = self.slots[j] {
                    out[(gi, gj)] += full[(i, j)];
                }
            }
        }
        out
    }
}

/// Log-likelihood of one data set together with its derivatives.
pub(crate) trait Objective {
    fn n(&self) -> usize;
    fn log_likelihood(&self, beta: &[f64]) -> f64;
    /// Full-length score vector.
    fn gradient(&self, beta: &[f64]) -> Vec<f64>;
    /// Full `n x n` negative Hessian.
    fn neg_hessian(&self, beta: &[f64]) -> DMatrix<f64>;
    /// One warm-start sweep; returns the updated full vector.
    fn warm_sweep(&self, beta: &[f64], layout: &Layout) -> Vec<f64>;
    /// Largest absolute linear predictor over pairs that carry data.
    fn max_abs_logit(&self, beta: &[f64]) -> f64;
}

/// Iteration controls shared by all fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Convergence threshold on the sup-norm of the (reduced) score.
    pub tol_score: f64,
    pub max_warm_iterations: usize,
    /// The warm start stops once no parameter moves by more than this.
    pub warm_tol: f64,
    pub max_newton_iterations: usize,
    /// A fit whose parameters leave `[-cap, cap]` is declared nonexistent.
    pub divergence_cap: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol_score: 1e-8,
            max_warm_iterations: 500,
            warm_tol: 1e-3,
            max_newton_iterations: 100,
            divergence_cap: 40.0,
        }
    }
}

/// Result of an unrestricted or restricted maximum likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub model: ModelKind,
    /// Full-length estimate; restricted fits carry the pinned and tied values.
    pub beta_hat: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub exists: bool,
    /// Sup-norm of the score in the free coordinates at `beta_hat`.
    pub gradient_norm: f64,
}

impl Fit {
    pub(crate) fn nonexistent(model: ModelKind, n: usize, iterations: usize) -> Self {
        Self {
            model,
            beta_hat: vec![f64::NAN; n],
            loglik: f64::NAN,
            iterations,
            converged: false,
            exists: false,
            gradient_norm: f64::INFINITY,
        }
    }

    /// `Ok(self)` when the fit exists and converged.
    pub fn usable(&self) -> Result<&Self> {
        if !self.exists {
            return Err(Error::Nonexistent(format!("{} fit diverged", self.model)));
        }
        if !self.converged {
            return Err(Error::Numerical(format!(
                "{} fit did not converge after {} iterations (score norm {:.3e})",
                self.model, self.iterations, self.gradient_norm
            )));
        }
        Ok(self)
    }
}

/// Newton steps larger than this mean the fit has not settled, whatever the score.
const NEWTON_STEP_TOL: f64 = 1e-6;

/// Beyond this logit a fitted probability is within about 1e-13 of 0 or 1 and
/// double precision no longer sees the score pulling further out, so the
/// iterate is sitting on the boundary rather than at an interior maximum.
const SATURATION_LOGIT: f64 = 30.0;

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn escaped(beta: &[f64], cap: f64) -> bool {
    beta.iter().any(|b| !b.is_finite() || b.abs() > cap)
}

fn solve_spd(h: DMatrix<f64>, g: &[f64]) -> Option<DVector<f64>> {
    let rhs = DVector::from_column_slice(g);
    match h.clone().cholesky() {
        Some(ch) => Some(ch.solve(&rhs)),
        None => h.lu().solve(&rhs),
    }
}

/// Maximises `obj` over the parameter space described by `layout`.
pub(crate) fn maximize<O: Objective>(obj: &O, model: ModelKind, layout: &Layout, opts: &FitOptions) -> Fit {
    let n = obj.n();
    if layout.free_count() == 0 {
        let beta = layout.expand(&[]);
        return Fit {
            model,
            loglik: obj.log_likelihood(&beta),
            beta_hat: beta,
            iterations: 0,
            converged: true,
            exists: true,
            gradient_norm: 0.0,
        };
    }

    let mut beta = layout.expand(&vec![0.0; layout.free_count()]);
    let mut iterations = 0;

    for _ in 0..opts.max_warm_iterations {
        iterations += 1;
        let next = obj.warm_sweep(&beta, layout);
        if escaped(&next, opts.divergence_cap) {
            return Fit::nonexistent(model, n, iterations);
        }
        let step = beta.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        beta = next;
        if step < opts.warm_tol {
            break;
        }
    }

    let mut theta = layout.project(&beta);
    let mut loglik = obj.log_likelihood(&beta);
    let mut grad = layout.reduce_gradient(&obj.gradient(&beta));
    let mut gnorm = sup_norm(&grad);
    let mut newton_steps = 0;
    while newton_steps < opts.max_newton_iterations {
        let h = layout.reduce_matrix(&obj.neg_hessian(&beta));
        let Some(step) = solve_spd(h, &grad) else {
            return Fit::nonexistent(model, n, iterations + newton_steps);
        };
        // A tiny score alone is not enough: along a direction of divergence the
        // score decays geometrically while Newton keeps proposing unit steps.
        let settled = gnorm <= opts.tol_score && sup_norm(step.as_slice()) <= NEWTON_STEP_TOL;
        newton_steps += 1;
        let slack = 1e-12 * loglik.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let trial_beta = layout.expand(&trial);
            let ll = obj.log_likelihood(&trial_beta);
            if ll.is_finite() && ll >= loglik - slack {
                accepted = Some((trial, trial_beta, ll));
                break;
            }
            t *= 0.5;
        }
        let Some((next_theta, next_beta, ll)) = accepted else {
            break;
        };
        if escaped(&next_beta, opts.divergence_cap) {
            return Fit::nonexistent(model, n, iterations + newton_steps);
        }
        theta = next_theta;
        beta = next_beta;
        loglik = ll;
        grad = layout.reduce_gradient(&obj.gradient(&beta));
        gnorm = sup_norm(&grad);
        if settled {
            break;
        }
    }

    if obj.max_abs_logit(&beta) > SATURATION_LOGIT {
        return Fit::nonexistent(model, n, iterations + newton_steps);
    }
    Fit {
        model,
        beta_hat: beta,
        loglik,
        iterations: iterations + newton_steps,
        converged: gnorm <= opts.tol_score,
        exists: true,
        gradient_norm: gnorm,
    }
}
