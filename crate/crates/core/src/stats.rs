//! Outcome standardization, random-intercept mixed models and the Wilcoxon
//! signed-rank test.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least two values, got {0}")]
    TooFew(usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("need at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("all paired differences are zero")]
    AllZero,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("{0}")]
    Invalid(String),
}

const Z95: f64 = 1.959963984540054;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Two-sided normal p-value for a z statistic.
fn two_sided_p(z: f64) -> f64 {
    (2.0 * std_normal().cdf(-z.abs())).min(1.0)
}

/// Standardize with the population standard deviation (denominator `n`).
pub fn zscore(values: &[f64]) -> Result<Vec<f64>, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFew(values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 || var.sqrt() <= 1e-14 * mean.abs() {
        return Err(StatsError::ZeroVariance);
    }
    let sd = var.sqrt();
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Baseline,
    Intervened,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Intervened => "intervened",
        }
    }
}

/// One metric value in long format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub session: String,
    pub intervention: String,
    /// Intervention strength; 0 for baseline rows.
    pub strength: f64,
    pub slice: usize,
    /// `intra` or `inter`.
    pub scope: String,
    /// Person id, or `a-b` for an ordered person pair.
    pub unit: String,
    pub joint: Option<String>,
    /// `gesture`, `f0`, ...
    pub stream: String,
    pub condition: Condition,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmemFit {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub p: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Random-intercept variance σ²_u.
    pub group_var: f64,
    /// Residual variance σ²_ε.
    pub resid_var: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    /// Restricted −2 log-likelihood at the optimum (up to a constant).
    pub reml_objective: f64,
    #[serde(skip)]
    cov: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub coef: f64,
    pub se: f64,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl LmemFit {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn estimate(&self, name: &str) -> Option<Estimate> {
        let i = self.index_of(name)?;
        Some(Estimate {
            coef: self.coef[i],
            se: self.se[i],
            p: self.p[i],
            ci_low: self.ci_low[i],
            ci_high: self.ci_high[i],
        })
    }

    /// Wald inference for the linear combination `Σ w_k β_k`, weights keyed by
    /// coefficient name.
    pub fn contrast(&self, weights: &[(&str, f64)]) -> Result<Estimate, StatsError> {
        let k = self.names.len();
        if self.cov.len() != k * k {
            return Err(StatsError::Invalid("covariance not available (fit was deserialized)".into()));
        }
        let mut c = vec![0.0; k];
        for (name, w) in weights {
            let i = self
                .index_of(name)
                .ok_or_else(|| StatsError::Invalid(format!("no coefficient named `{name}`")))?;
            c[i] += w;
        }
        let coef: f64 = c.iter().zip(&self.coef).map(|(a, b)| a * b).sum();
        let mut var = 0.0;
        for i in 0..k {
            for j in 0..k {
                var += c[i] * self.cov[i * k + j] * c[j];
            }
        }
        let se = var.max(0.0).sqrt();
        Ok(Estimate {
            coef,
            se,
            p: if se > 0.0 { two_sided_p(coef / se) } else { f64::NAN },
            ci_low: coef - Z95 * se,
            ci_high: coef + Z95 * se,
        })
    }

    /// Columns: Predictor, Coef., p-value, CI low, CI high, Group Variance.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Predictor,Coef.,p-value,CI low,CI high,Group Variance\n");
        for i in 0..self.names.len() {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                csv_field(&self.names[i]),
                self.coef[i],
                self.p[i],
                self.ci_low[i],
                self.ci_high[i],
                self.group_var
            ));
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Sufficient statistics of a random-intercept model, grouped so that the REML
/// objective can be evaluated for any variance ratio in `O(groups · p²)`.
pub struct LmemProblem {
    p: usize,
    n: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    /// Per group: size, column sums of X, sum of y.
    groups: Vec<(f64, DVector<f64>, f64)>,
}

struct Solved {
    objective: f64,
    beta: DVector<f64>,
    sigma2: f64,
    inv: DMatrix<f64>,
}

impl LmemProblem {
    /// `x` is `n × p` row-major; `groups[i]` is the group label of observation `i`.
    pub fn new(x: &[f64], p: usize, y: &[f64], groups: &[usize]) -> Result<Self, StatsError> {
        let n = y.len();
        if x.len() != n * p || groups.len() != n {
            return Err(StatsError::Invalid("design, response and groups disagree in size".into()));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        let xm = DMatrix::from_row_slice(n, p, x);
        let yv = DVector::from_column_slice(y);
        let mut by_group: BTreeMap<usize, (f64, DVector<f64>, f64)> = BTreeMap::new();
        for i in 0..n {
            let e = by_group.entry(groups[i]).or_insert_with(|| (0.0, DVector::zeros(p), 0.0));
            e.0 += 1.0;
            e.1 += xm.row(i).transpose();
            e.2 += y[i];
        }
        if by_group.len() < 2 {
            return Err(StatsError::TooFewGroups(by_group.len()));
        }
        if n <= p {
            return Err(StatsError::RankDeficient);
        }
        let xtx = xm.transpose() * &xm;
        // rank check on the correlation-scaled cross-product
        let d: Vec<f64> = (0..p).map(|i| xtx[(i, i)].sqrt()).collect();
        if d.iter().any(|&v| v == 0.0) {
            return Err(StatsError::RankDeficient);
        }
        let scaled = DMatrix::from_fn(p, p, |i, j| xtx[(i, j)] / (d[i] * d[j]));
        let eig = scaled.symmetric_eigenvalues();
        if eig.iter().fold(f64::INFINITY, |m, &v| m.min(v)) < 1e-10 {
            return Err(StatsError::RankDeficient);
        }
        Ok(Self {
            p,
            n,
            xty: xm.transpose() * &yv,
            yty: yv.dot(&yv),
            xtx,
            groups: by_group.into_values().collect(),
        })
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    fn solve(&self, lambda: f64) -> Option<Solved> {
        let mut a = self.xtx.clone();
        let mut b = self.xty.clone();
        let mut c = self.yty;
        let mut logdet_h = 0.0;
        for (ng, s, t) in &self.groups {
            let w = lambda / (1.0 + lambda * ng);
            a -= (s * s.transpose()) * w;
            b -= s * (w * t);
            c -= w * t * t;
            logdet_h += (1.0 + lambda * ng).ln();
        }
        let chol = a.clone().cholesky()?;
        let beta = chol.solve(&b);
        let rss = (c - beta.dot(&b)).max(f64::MIN_POSITIVE);
        let dof = (self.n - self.p) as f64;
        let logdet_a: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Some(Solved {
            objective: dof * rss.ln() + logdet_h + logdet_a,
            sigma2: rss / dof,
            inv: chol.inverse(),
            beta,
        })
    }

    /// Profiled restricted −2 log-likelihood (up to a constant) at variance ratio
    /// `lambda = σ²_u / σ²_ε`.
    pub fn objective(&self, lambda: f64) -> f64 {
        self.solve(lambda).map_or(f64::INFINITY, |s| s.objective)
    }

    /// Variance ratio minimizing the REML objective: a grid over `t = λ/(1+λ)`
    /// followed by golden-section refinement around the best grid point.
    pub fn optimize(&self) -> f64 {
        let to_lambda = |t: f64| t / (1.0 - t);
        let f = |t: f64| self.objective(to_lambda(t));
        let grid = 200;
        let t_max = 1.0 - 1e-9;
        let ts: Vec<f64> = (0..=grid).map(|k| t_max * k as f64 / grid as f64).collect();
        let vals: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
        let best = (0..ts.len()).fold(0, |b, k| if vals[k] < vals[b] { k } else { b });
        let mut lo = ts[best.saturating_sub(1)];
        let mut hi = ts[(best + 1).min(grid)];
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        while hi - lo > 1e-8 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = f(x2);
            }
        }
        let mut t = 0.5 * (lo + hi);
        // the boundary λ = 0 is a legitimate optimum
        if vals[0] <= f(t) {
            t = 0.0;
        }
        to_lambda(t)
    }

    /// REML fit: variance ratio from [`Self::optimize`].
    pub fn fit(&self, names: Vec<String>) -> Result<LmemFit, StatsError> {
        self.fit_with_ratio(names, self.optimize())
    }

    /// Fit at a fixed variance ratio `lambda = σ²_u / σ²_ε`; `lambda = 0` is OLS.
    pub fn fit_with_ratio(&self, names: Vec<String>, lambda: f64) -> Result<LmemFit, StatsError> {
        if names.len() != self.p {
            return Err(StatsError::Invalid("one name per coefficient required".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(StatsError::Invalid(format!("variance ratio must be finite and non-negative, got {lambda}")));
        }
        let s = self.solve(lambda).ok_or(StatsError::RankDeficient)?;
        let cov = &s.inv * s.sigma2;
        let mut fit = LmemFit {
            names,
            coef: s.beta.iter().copied().collect(),
            se: Vec::with_capacity(self.p),
            p: Vec::with_capacity(self.p),
            ci_low: Vec::with_capacity(self.p),
            ci_high: Vec::with_capacity(self.p),
            group_var: lambda * s.sigma2,
            resid_var: s.sigma2,
            n_obs: self.n,
            n_groups: self.groups.len(),
            reml_objective: s.objective,
            cov: (0..self.p * self.p).map(|k| cov[(k / self.p, k % self.p)]).collect(),
        };
        for i in 0..self.p {
            let se = cov[(i, i)].max(0.0).sqrt();
            let b = fit.coef[i];
            fit.se.push(se);
            fit.p.push(if se > 0.0 { two_sided_p(b / se) } else { f64::NAN });
            fit.ci_low.push(b - Z95 * se);
            fit.ci_high.push(b + Z95 * se);
        }
        Ok(fit)
    }
}

/// Fixed-effects layout for `value ~ condition [× joint] + (1 | unit)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmemFormula {
    /// Include joint main effects and condition × joint interactions.
    pub with_joint: bool,
    /// Treatment-coding reference level for the joint factor.
    pub reference_joint: String,
}

pub const INTERCEPT: &str = "Intercept";
pub const CONDITION: &str = "Condition: Intervened";

pub fn joint_name(joint: &str, reference: &str) -> String {
    format!("Joint (vs {reference}): {joint}")
}

pub fn interaction_name(joint: &str) -> String {
    format!("Intervened × {joint}")
}

/// Fit the random-intercept model to records of a single analysis. Values are used
/// as given; standardize beforehand if wanted.
pub fn fit_lmem(records: &[&MetricRecord], formula: &LmemFormula) -> Result<LmemFit, StatsError> {
    let mut joints: Vec<String> = Vec::new();
    if formula.with_joint {
        for r in records {
            let j = r
                .joint
                .as_deref()
                .ok_or_else(|| StatsError::Invalid("record without joint in a joint model".into()))?;
            if j != formula.reference_joint && !joints.iter().any(|k| k == j) {
                joints.push(j.to_string());
            }
        }
        joints.sort();
    }
    let mut names = vec![INTERCEPT.to_string(), CONDITION.to_string()];
    names.extend(joints.iter().map(|j| joint_name(j, &formula.reference_joint)));
    names.extend(joints.iter().map(|j| interaction_name(j)));
    let p = names.len();

    let mut unit_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut x = Vec::with_capacity(records.len() * p);
    let mut y = Vec::with_capacity(records.len());
    let mut groups = Vec::with_capacity(records.len());
    for r in records {
        let cond = if r.condition == Condition::Intervened { 1.0 } else { 0.0 };
        let mut row = vec![0.0; p];
        row[0] = 1.0;
        row[1] = cond;
        if let Some(k) = r.joint.as_deref().and_then(|j| joints.iter().position(|q| q == j)) {
            row[2 + k] = 1.0;
            row[2 + joints.len() + k] = cond;
        }
        x.extend(row);
        y.push(r.value);
        let next = unit_ids.len();
        groups.push(*unit_ids.entry(r.unit.as_str()).or_insert(next));
    }
    LmemProblem::new(&x, p, &y, &groups)?.fit(names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W−)`.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub p: f64,
    pub exact: bool,
}

/// Average ranks (1-based) of `values`, ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Largest sample for which the exact sign-flip distribution is used.
pub const WILCOXON_EXACT_MAX_N: usize = 12;

/// Paired Wilcoxon signed-rank test on differences; zeros are dropped.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if diffs.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.is_empty() {
        return Err(StatsError::AllZero);
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).fold(0.0, |a, (_, r)| a + r);
    let w_minus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d < 0.0).fold(0.0, |a, (_, r)| a + r);
    let w = w_plus.min(w_minus);
    let n = nz.len();

    if n <= WILCOXON_EXACT_MAX_N {
        // distribution of the doubled positive-rank sum over all 2^n sign patterns
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0u64; total + 1];
        counts[0] = 1;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let observed = ((2.0 * w).round() as i64 * 2 - total as i64).abs();
        let extreme: u64 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (2 * *s as i64 - total as i64).abs() >= observed)
            .map(|(_, c)| c)
            .sum();
        let p = (extreme as f64 / 2f64.powi(n as i32)).min(1.0);
        return Ok(WilcoxonResult { w, w_plus, w_minus, n, p, exact: true });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p = if var > 0.0 { two_sided_p((w - mean) / var.sqrt()) } else { 1.0 };
    Ok(WilcoxonResult { w, w_plus, w_minus, n, p, exact: false })
}
