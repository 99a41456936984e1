//! Simulation designs, the replication engine and calibration summaries.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta_model::simulate_graph;
use crate::bt_model::{simulate_comparisons, PairTotals};
use crate::data::{ModelKind, NullHypothesis, MIN_NODES};
use crate::error::{Error, Result};
use crate::lrt::{
    chi_square_cdf, chi_square_quantile, compute_statistic, normal_cdf, normal_quantile, reference_distribution,
    run_test, GrowingPValue, Observations, Reference, Regime, TestOptions,
};
use crate::rng::replicate_rng;
use crate::solver::FitOptions;

/// How the generating parameter vector is laid out. Indices below are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSpec {
    /// `β_i = (i-1) L / (n-1)`.
    Linear {
        l: f64,
    },
    /// `β_i = i c / r` for `i <= r`, `0.2 (i-r) log n / n` beyond; shifted so
    /// `β_1 = 0` under Bradley–Terry.
    Power {
        c: f64,
        r: usize,
    },
    /// Given leading values, then `β_i = (i-1) L / (n-1)` for the rest.
    BlockThenLinear {
        head: Vec<f64>,
        l: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl BetaSpec {
    pub fn resolve(&self, model: ModelKind, n: usize) -> Result<Vec<f64>> {
        let nf = n as f64;
        let linear = |k: usize, l: f64| k as f64 * l / (nf - 1.0);
        let beta = match self {
            BetaSpec::Linear { l } => (0..n).map(|k| linear(k, *l)).collect(),
            BetaSpec::Power { c, r } => {
                if *r == 0 || *r > n {
                    return Err(Error::invalid(format!("power design needs 1 <= r <= n, got r={r}")));
                }
                let rf = *r as f64;
                let mut beta: Vec<f64> = (1..=n)
                    .map(|i| if i <= *r { i as f64 * c / rf } else { 0.2 * (i - r) as f64 * nf.ln() / nf })
                    .collect();
                if model == ModelKind::BradleyTerry {
                    let shift = beta[0];
                    beta.iter_mut().for_each(|b| *b -= shift);
                }
                beta
            }
            BetaSpec::BlockThenLinear { head, l } => {
                if head.len() > n {
                    return Err(Error::invalid("leading block is longer than n"));
                }
                (0..n).map(|k| head.get(k).copied().unwrap_or_else(|| linear(k, *l))).collect()
            }
            BetaSpec::Explicit { values } => values.clone(),
        };
        if beta.len() != n {
            return Err(Error::invalid(format!("parameter vector has length {}, expected {n}", beta.len())));
        }
        if model == ModelKind::BradleyTerry && beta[0] != 0.0 {
            return Err(Error::invalid("Bradley-Terry designs need beta[0] = 0"));
        }
        Ok(beta)
    }
}

fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.10]
}

fn default_bootstrap_reps() -> usize {
    999
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub model: ModelKind,
    pub n: usize,
    pub null: NullHypothesis,
    pub regime: Regime,
    pub true_beta: BetaSpec,
    /// Comparisons per pair; Bradley–Terry only, one per pair when absent.
    #[serde(default)]
    pub totals: Option<PairTotals>,
    pub reps: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub growing_p_value: GrowingPValue,
    /// Bootstrap size when the reference is a bootstrap; zero records the
    /// statistic only.
    #[serde(default = "default_bootstrap_reps")]
    pub bootstrap_reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    H01,
    H02,
    H03,
    H04,
    PowerBeta,
    PowerBt,
    NbaSmall,
    /// Bradley–Terry with `(β_2, β_3) = (-c, c)` fixed, the case without a chi-square limit.
    BtFixedSpecified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub model: ModelKind,
    pub n: usize,
    /// `L_n = l_coef * log n`.
    pub l_coef: f64,
    pub r: Option<usize>,
    pub c: f64,
    pub k: u32,
    pub reps: usize,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self { model: ModelKind::Beta, n: 100, l_coef: 0.0, r: None, c: 0.0, k: 1, reps: 2000, seed: 1 }
    }
}

fn null_values(model: ModelKind, beta: &[f64], r: usize) -> Vec<f64> {
    match model {
        ModelKind::Beta => beta[..r].to_vec(),
        ModelKind::BradleyTerry => beta[1..r].to_vec(),
    }
}

/// Resolves a named design into a runnable scenario.
pub fn build_scenario(preset: Preset, params: &ScenarioParams) -> Result<Scenario> {
    let n = params.n;
    if n < MIN_NODES {
        return Err(Error::invalid(format!("need at least {MIN_NODES} nodes")));
    }
    let log_n = (n as f64).ln();
    let l = params.l_coef * log_n;
    let mut model = params.model;
    let mut n_used = n;
    let mut totals = (model == ModelKind::BradleyTerry).then_some(PairTotals::Constant(params.k));
    let mut alphas = default_alphas();
    let mut bootstrap_reps = default_bootstrap_reps();

    let (null, regime, true_beta) = match preset {
        Preset::H01 => {
            let spec = BetaSpec::Linear { l };
            let beta = spec.resolve(model, n)?;
            (NullHypothesis::Specified { r: n, values: null_values(model, &beta, n) }, Regime::Growing, spec)
        }
        Preset::H02 => {
            let r = params.r.unwrap_or(n / 2);
            (NullHypothesis::Homogeneous { r }, Regime::Growing, BetaSpec::BlockThenLinear { head: vec![0.0; r], l })
        }
        Preset::H03 => {
            if model == ModelKind::BradleyTerry {
                return Err(Error::invalid(
                    "H03 is a beta-model design; use bt-fixed-specified for the Bradley-Terry case",
                ));
            }
            let r = params.r.unwrap_or(5);
            let values = vec![0.0; r];
            (
                NullHypothesis::Specified { r, values: values.clone() },
                Regime::Fixed,
                BetaSpec::BlockThenLinear { head: values, l },
            )
        }
        Preset::H04 => {
            let r = params.r.unwrap_or(5);
            (NullHypothesis::Homogeneous { r }, Regime::Fixed, BetaSpec::BlockThenLinear { head: vec![0.0; r], l })
        }
        Preset::PowerBeta | Preset::PowerBt | Preset::NbaSmall => {
            if preset == Preset::PowerBeta {
                model = ModelKind::Beta;
                totals = None;
            } else {
                model = ModelKind::BradleyTerry;
                let k = if preset == Preset::NbaSmall { 3 } else { params.k };
                if preset == Preset::NbaSmall {
                    n_used = 30;
                }
                totals = Some(PairTotals::Constant(k));
            }
            let r = params.r.unwrap_or(if model == ModelKind::Beta { 5 } else { 10 });
            alphas = vec![0.05];
            (NullHypothesis::Homogeneous { r }, Regime::Fixed, BetaSpec::Power { c: params.c, r })
        }
        Preset::BtFixedSpecified => {
            model = ModelKind::BradleyTerry;
            totals = Some(PairTotals::Constant(params.k));
            let r = params.r.unwrap_or(3);
            if r != 3 {
                return Err(Error::invalid("this design fixes (beta_2, beta_3), so r = 3"));
            }
            let mut beta: Vec<f64> = (0..n).map(|k| 0.2 * k as f64 * log_n / (n as f64 - 1.0)).collect();
            beta[1] = -params.c;
            beta[2] = params.c;
            bootstrap_reps = 0;
            (
                NullHypothesis::Specified { r: 3, values: vec![-params.c, params.c] },
                Regime::Fixed,
                BetaSpec::Explicit { values: beta },
            )
        }
    };
    let name = format!("{preset:?}").to_lowercase();
    let scenario = Scenario {
        name,
        model,
        n: n_used,
        null,
        regime,
        true_beta,
        totals,
        reps: params.reps,
        alphas,
        seed: params.seed,
        fit: FitOptions::default(),
        growing_p_value: GrowingPValue::default(),
        bootstrap_reps,
    };
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.null.validate(self.model, self.n)?;
        self.true_beta.resolve(self.model, self.n)?;
        reference_distribution(self.model, &self.null, self.regime)?;
        if self.reps == 0 {
            return Err(Error::invalid("reps must be positive"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::invalid(format!("alpha {a} outside [0, 1]")));
        }
        Ok(())
    }

    /// Whether the generating parameters satisfy the null exactly.
    pub fn null_holds(&self) -> Result<bool> {
        let beta = self.true_beta.resolve(self.model, self.n)?;
        Ok(self.null.contains(self.model, &beta, 1e-12))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub alpha: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub scenario: String,
    pub reference: Reference,
    pub reps: usize,
    pub reps_used: usize,
    /// Replicates without an existing estimate (including the rare fit that fails to converge).
    pub nonexistent: usize,
    pub nonconverged: usize,
    pub nonexist_freq: f64,
    /// Rates among replicates with existing estimates.
    pub rejection_rates: Vec<RejectionRate>,
    /// Statistic per replicate in replicate order; `None` where no estimate exists.
    pub stats: Vec<Option<f64>>,
    pub p_values: Vec<Option<f64>>,
}

impl McReport {
    pub fn rate(&self, alpha: f64) -> Option<f64> {
        self.rejection_rates.iter().find(|r| (r.alpha - alpha).abs() < 1e-12).map(|r| r.rate)
    }

    pub fn used_stats(&self) -> Vec<f64> {
        self.stats.iter().flatten().copied().collect()
    }

    pub fn used_p_values(&self) -> Vec<f64> {
        self.p_values.iter().flatten().copied().collect()
    }
}

enum Replicate {
    Done { stat: f64, p_value: Option<f64>, reference: Reference },
    Nonexistent,
    Nonconverged,
}

fn run_replicate(s: &Scenario, beta: &[f64], index: usize) -> Result<Replicate> {
    let mut rng = replicate_rng(s.seed, index as u64);
    let opts = TestOptions {
        fit: s.fit,
        growing_p_value: s.growing_p_value,
        bootstrap_reps: s.bootstrap_reps,
        bootstrap_seed: 0,
    };
    let graph;
    let table;
    let data = match s.model {
        ModelKind::Beta => {
            graph = simulate_graph(beta, &mut rng)?;
            Observations::Graph(&graph)
        }
        ModelKind::BradleyTerry => {
            table = simulate_comparisons(beta, s.totals.as_ref().unwrap_or(&PairTotals::Constant(1)), &mut rng)?;
            Observations::Comparisons(&table)
        }
    };
    let reference = reference_distribution(s.model, &s.null, s.regime)?;
    let outcome = if matches!(reference, Reference::Bootstrap { .. }) && s.bootstrap_reps == 0 {
        compute_statistic(data, &s.null, &s.fit).map(|o| (o.stat, None, reference))
    } else {
        let opts = TestOptions { bootstrap_seed: rng.random(), ..opts };
        run_test(data, &s.null, s.regime, &opts).map(|rep| (rep.stat, rep.p_value, rep.reference))
    };
    match outcome {
        Ok((stat, p_value, reference)) => Ok(Replicate::Done { stat, p_value, reference }),
        Err(Error::Nonexistent(_)) => Ok(Replicate::Nonexistent),
        Err(Error::Numerical(_)) => Ok(Replicate::Nonconverged),
        Err(e) => Err(e),
    }
}

fn run_engine(s: &Scenario) -> Result<McReport> {
    s.validate()?;
    let beta = s.true_beta.resolve(s.model, s.n)?;
    let outcomes: Vec<Replicate> =
        (0..s.reps).into_par_iter().map(|k| run_replicate(s, &beta, k)).collect::<Result<_>>()?;

    let mut reference = reference_distribution(s.model, &s.null, s.regime)?;
    let mut stats = Vec::with_capacity(s.reps);
    let mut p_values = Vec::with_capacity(s.reps);
    let (mut nonexistent, mut nonconverged) = (0, 0);
    for o in outcomes {
        match o {
            Replicate::Done { stat, p_value, reference: r } => {
                reference = r;
                stats.push(Some(stat));
                p_values.push(p_value);
            }
            Replicate::Nonexistent | Replicate::Nonconverged => {
                if matches!(o, Replicate::Nonconverged) {
                    nonconverged += 1;
                }
                nonexistent += 1;
                stats.push(None);
                p_values.push(None);
            }
        }
    }
    if nonexistent * 2 > s.reps {
        return Err(Error::Nonexistent(format!(
            "{nonexistent} of {} replicates had no estimate; the design is too close to the boundary",
            s.reps
        )));
    }
    let used: Vec<f64> = p_values.iter().flatten().copied().collect();
    let rejection_rates = if used.is_empty() {
        Vec::new()
    } else {
        s.alphas
            .iter()
            .map(|&alpha| RejectionRate {
                alpha,
                rate: used.iter().filter(|&&p| p <= alpha).count() as f64 / used.len() as f64,
            })
            .collect()
    };
    Ok(McReport {
        scenario: s.name.clone(),
        reference,
        reps: s.reps,
        reps_used: s.reps - nonexistent,
        nonexistent,
        nonconverged,
        nonexist_freq: nonexistent as f64 / s.reps as f64,
        rejection_rates,
        stats,
        p_values,
    })
}

/// Type I error study; the generating parameters must satisfy the null.
pub fn run_type1(s: &Scenario) -> Result<McReport> {
    if !s.null_holds()? {
        return Err(Error::invalid("the generating parameters do not satisfy the null"));
    }
    run_engine(s)
}

/// Power study; the generating parameters may violate the null.
pub fn run_power(s: &Scenario) -> Result<McReport> {
    run_engine(s)
}

/// Reference law for quantile plots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QqReference {
    ChiSquare {
        df: u32,
    },
    /// Standard normal, for normalised statistics.
    Normal,
}

impl QqReference {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            QqReference::ChiSquare { df } => chi_square_cdf(x.max(0.0), df).unwrap_or(f64::NAN),
            QqReference::Normal => normal_cdf(x),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            QqReference::ChiSquare { df } => chi_square_quantile(p, df).unwrap_or(f64::NAN),
            QqReference::Normal => normal_quantile(p),
        }
    }
}

fn sorted(sample: &[f64]) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    if sample.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("sample contains NaN"));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// `(theoretical, empirical)` quantile pairs at plotting positions `(i - 0.5) / m`.
pub fn qq_data(stats: &[f64], reference: QqReference) -> Result<Vec<(f64, f64)>> {
    let s = sorted(stats)?;
    let m = s.len() as f64;
    Ok(s.iter().enumerate().map(|(i, &x)| (reference.quantile((i as f64 + 0.5) / m), x)).collect())
}

pub fn qq_csv(pairs: &[(f64, f64)]) -> String {
    let mut out = String::from("theoretical,empirical\n");
    for (t, e) in pairs {
        out.push_str(&format!("{t},{e}\n"));
    }
    out
}

/// One statistic per line, replicates without an estimate left out.
pub fn stats_csv(stats: &[Option<f64>]) -> String {
    stats.iter().flatten().map(|s| format!("{s}\n")).collect()
}

pub fn pearson_correlation(pairs: &[(f64, f64)]) -> f64 {
    let m = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    let s = sorted(sample)?;
    let m = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / m - f).max(f - i as f64 / m)
    }))
}

/// Large-sample KS critical value `sqrt(-ln(level/2) / 2) / sqrt(m)`.
pub fn ks_critical_value(m: usize, level: f64) -> f64 {
    (-(level / 2.0).ln() / 2.0).sqrt() / (m as f64).sqrt()
}

/// Whether p-values pass a KS test of uniformity at `level`.
pub fn ks_uniform(p_values: &[f64], level: f64) -> Result<(f64, bool)> {
    let d = ks_distance(p_values, |x| x.clamp(0.0, 1.0))?;
    Ok((d, d <= ks_critical_value(p_values.len(), level)))
}
