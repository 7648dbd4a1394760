use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::metrics::{MetricsRow, METRIC_NAMES};
use crate::demand::EcommLevel;
use crate::energy::EvLevel;
use crate::scenarios::LeverSettings;

/// A 0/1 design variable. EV enters as two dummies with low as reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Pricing,
    Transit,
    Signals,
    Tnc,
    Ohd,
    Ecomm,
    EvMed,
    EvHigh,
}

impl Factor {
    pub const ALL: [Factor; 8] = [
        Factor::Pricing,
        Factor::Transit,
        Factor::Signals,
        Factor::Tnc,
        Factor::Ohd,
        Factor::Ecomm,
        Factor::EvMed,
        Factor::EvHigh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Pricing => "pricing",
            Factor::Transit => "transit",
            Factor::Signals => "signals",
            Factor::Tnc => "tnc",
            Factor::Ohd => "ohd",
            Factor::Ecomm => "ecomm",
            Factor::EvMed => "ev_med",
            Factor::EvHigh => "ev_high",
        }
    }

    pub fn value(self, s: &LeverSettings) -> bool {
        match self {
            Factor::Pricing => s.pricing,
            Factor::Transit => s.transit,
            Factor::Signals => s.signals,
            Factor::Tnc => s.tnc_policy,
            Factor::Ohd => s.ohd,
            Factor::Ecomm => s.ecomm_level == EcommLevel::High,
            Factor::EvMed => s.ev_level == EvLevel::Med,
            Factor::EvHigh => s.ev_level == EvLevel::High,
        }
    }

    /// Turn the lever on in `s`.
    pub fn apply(self, s: &mut LeverSettings) {
        match self {
            Factor::Pricing => s.pricing = true,
            Factor::Transit => s.transit = true,
            Factor::Signals => s.signals = true,
            Factor::Tnc => s.tnc_policy = true,
            Factor::Ohd => s.ohd = true,
            Factor::Ecomm => s.ecomm_level = EcommLevel::High,
            Factor::EvMed => s.ev_level = EvLevel::Med,
            Factor::EvHigh => s.ev_level = EvLevel::High,
        }
    }

    /// EV dummies are mutually exclusive, so their product is always 0.
    fn exclusive(a: Factor, b: Factor) -> bool {
        matches!((a, b), (Factor::EvMed, Factor::EvHigh) | (Factor::EvHigh, Factor::EvMed))
    }
}

impl FromStr for Factor {
    type Err = RegressionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Factor::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| RegressionError::UnknownTerm(s.to_string()))
    }
}

/// Product of factors; the empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Term(Vec<Factor>);

pub const INTERCEPT_NAME: &str = "const";

impl Term {
    pub fn intercept() -> Term {
        Term(Vec::new())
    }

    pub fn main(f: Factor) -> Term {
        Term(vec![f])
    }

    pub fn product(factors: &[Factor]) -> Term {
        let mut v = factors.to_vec();
        v.sort_unstable();
        v.dedup();
        Term(v)
    }

    pub fn factors(&self) -> &[Factor] {
        &self.0
    }

    pub fn is_intercept(&self) -> bool {
        self.0.is_empty()
    }

    pub fn value(&self, s: &LeverSettings) -> bool {
        self.0.iter().all(|f| f.value(s))
    }

    /// Main effects, always part of a model.
    pub fn mains() -> Vec<Term> {
        Factor::ALL.into_iter().map(Term::main).collect()
    }

    /// Every two-way interaction that is not identically zero.
    pub fn pairs() -> Vec<Term> {
        let mut out = Vec::new();
        for (i, &a) in Factor::ALL.iter().enumerate() {
            for &b in &Factor::ALL[i + 1..] {
                if !Factor::exclusive(a, b) {
                    out.push(Term::product(&[a, b]));
                }
            }
        }
        out
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str(INTERCEPT_NAME);
        }
        let names: Vec<&str> = self.0.iter().map(|x| x.name()).collect();
        f.write_str(&names.join(":"))
    }
}

impl FromStr for Term {
    type Err = RegressionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == INTERCEPT_NAME {
            return Ok(Term::intercept());
        }
        let factors = s.split(':').map(|p| p.trim().parse()).collect::<Result<Vec<Factor>, _>>()?;
        Ok(Term::product(&factors))
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which terms enter a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermSpec {
    /// Intercept plus exactly these terms.
    Fixed(Vec<Term>),
    /// Main effects plus the two-way interactions whose |t| reaches the
    /// threshold in a fit of all main effects and all two-way interactions.
    Scan { threshold: f64 },
}

impl Default for TermSpec {
    fn default() -> Self {
        TermSpec::Scan { threshold: 1.64 }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RegressionError {
    #[error("unknown metric {0}")]
    UnknownMetric(String),
    #[error("unknown term {0}")]
    UnknownTerm(String),
    #[error("{n} usable rows for {k} terms")]
    TooFewRows { n: usize, k: usize },
    #[error("rank-deficient design, collinear terms: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("model has no intercept")]
    NoIntercept,
    #[error("model file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermStat {
    pub term: Term,
    pub coef: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default)]
    pub signif: String,
    /// Coefficient over intercept; absent for the intercept itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<f64>,
}

/// A fitted (or hand-entered) linear model over lever terms. The first term
/// is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub response: String,
    pub terms: Vec<TermStat>,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub adj_r2: Option<f64>,
}

/// Significance code for a two-sided p value, right-closed intervals at
/// 0.001, 0.01, 0.05 and 0.1.
pub fn signif_code(p: f64) -> &'static str {
    if p <= 0.001 {
        "***"
    } else if p <= 0.01 {
        "**"
    } else if p <= 0.05 {
        "*"
    } else if p <= 0.1 {
        "."
    } else {
        " "
    }
}

impl RegressionResult {
    pub fn intercept(&self) -> f64 {
        self.terms[0].coef
    }

    pub fn coef(&self, term: &Term) -> Option<f64> {
        self.terms.iter().find(|s| &s.term == term).map(|s| s.coef)
    }

    pub fn term_names(&self) -> Vec<String> {
        self.terms.iter().map(|s| s.term.to_string()).collect()
    }

    /// Hand-entered model with coefficients only.
    pub fn from_coefficients(response: &str, coefs: &[(Term, f64)]) -> Result<Self, RegressionError> {
        let terms = coefs
            .iter()
            .map(|(term, coef)| TermStat {
                term: term.clone(),
                coef: *coef,
                std_err: None,
                t: None,
                p: None,
                signif: String::new(),
                sensitivity: None,
            })
            .collect();
        let mut r = RegressionResult { response: response.into(), terms, n: 0, adj_r2: None };
        r.finalize()?;
        Ok(r)
    }

    /// Parse a model file. Derived columns (t, codes, sensitivity) are
    /// recomputed from coefficients, standard errors and p values.
    pub fn from_json(s: &str) -> Result<Self, RegressionError> {
        let mut r: RegressionResult = serde_json::from_str(s).map_err(|e| RegressionError::Parse(e.to_string()))?;
        r.finalize()?;
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    fn finalize(&mut self) -> Result<(), RegressionError> {
        let i = self.terms.iter().position(|s| s.term.is_intercept()).ok_or(RegressionError::NoIntercept)?;
        self.terms[..=i].rotate_right(1);
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.terms {
            if !seen.insert(s.term.clone()) {
                return Err(RegressionError::Parse(format!("duplicate term {}", s.term)));
            }
        }
        let c0 = self.terms[0].coef;
        for s in &mut self.terms {
            if let (Some(se), None) = (s.std_err, s.t) {
                if se > 0.0 {
                    s.t = Some(s.coef / se);
                }
            }
            s.signif = s.p.map(|p| signif_code(p).to_string()).unwrap_or_default();
            s.sensitivity = (!s.term.is_intercept() && c0 != 0.0).then(|| s.coef / c0);
        }
        Ok(())
    }

    /// Delimited report: term, coef, std_err, t, p, signif, sensitivity
    /// (percent of intercept), then footer rows N and adj_R2.
    pub fn write_report<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["term", "coef", "std_err", "t", "p", "signif", "sensitivity"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.terms {
            out.write_record([
                s.term.to_string(),
                s.coef.to_string(),
                opt(s.std_err),
                opt(s.t),
                opt(s.p),
                s.signif.clone(),
                opt(s.sensitivity.map(|x| 100.0 * x)),
            ])?;
        }
        out.write_record(["N", &self.n.to_string(), "", "", "", "", ""])?;
        out.write_record(["adj_R2", &opt(self.adj_r2), "", "", "", "", ""])?;
        out.flush()?;
        Ok(())
    }
}

/// Design matrix columns for the given terms (intercept first).
pub fn design_row(terms: &[Term], s: &LeverSettings) -> Vec<f64> {
    terms.iter().map(|t| if t.value(s) { 1.0 } else { 0.0 }).collect()
}

/// Least squares on the given terms. Rows with an error or a missing
/// response value are skipped.
pub fn fit_ols(rows: &[MetricsRow], response: &str, spec: &TermSpec) -> Result<RegressionResult, RegressionError> {
    if !METRIC_NAMES.contains(&response) {
        return Err(RegressionError::UnknownMetric(response.into()));
    }
    let data: Vec<(LeverSettings, f64)> = rows
        .iter()
        .filter(|r| !r.failed())
        .filter_map(|r| r.metric(response).filter(|y| y.is_finite()).map(|y| (r.settings(), y)))
        .collect();
    if data.len() < rows.len() {
        log::info!("{response}: {} of {} rows usable", data.len(), rows.len());
    }
    let terms = match spec {
        TermSpec::Fixed(t) => {
            let mut v = vec![Term::intercept()];
            v.extend(t.iter().filter(|t| !t.is_intercept()).cloned());
            v
        }
        TermSpec::Scan { threshold } => {
            let mut full = vec![Term::intercept()];
            full.extend(Term::mains());
            full.extend(Term::pairs());
            let scan = fit_terms(&data, response, &full)?;
            let mut v = vec![Term::intercept()];
            v.extend(Term::mains());
            for s in &scan.terms {
                if s.term.factors().len() == 2 && s.t.is_some_and(|t| t.abs() >= *threshold) {
                    v.push(s.term.clone());
                }
            }
            v
        }
    };
    fit_terms(&data, response, &terms)
}

/// Columns whose residual after projecting out earlier columns vanishes.
fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let scale = col.norm().max(1.0);
        let mut r = col;
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&r);
                r -= b * d;
            }
        }
        let n = r.norm();
        if n <= 1e-10 * scale {
            bad.push(j);
        } else {
            basis.push(r / n);
        }
    }
    bad
}

fn fit_terms(data: &[(LeverSettings, f64)], response: &str, terms: &[Term]) -> Result<RegressionResult, RegressionError> {
    let (n, k) = (data.len(), terms.len());
    if n <= k {
        return Err(RegressionError::TooFewRows { n, k });
    }
    let x = DMatrix::from_fn(n, k, |i, j| if terms[j].value(&data[i].0) { 1.0 } else { 0.0 });
    let y = DVector::from_iterator(n, data.iter().map(|d| d.1));
    let bad = collinear_columns(&x);
    if !bad.is_empty() {
        return Err(RegressionError::RankDeficient(bad.into_iter().map(|j| terms[j].to_string()).collect()));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &y;
    let beta = r.solve_upper_triangular(&qty).expect("full rank");
    let r_inv = r.solve_upper_triangular(&DMatrix::identity(k, k)).expect("full rank");
    let resid = &y - &x * &beta;
    let rss = resid.norm_squared();
    let df = (n - k) as f64;
    let sigma = (rss / df).sqrt();
    let mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let adj_r2 = (tss > 0.0).then(|| 1.0 - (rss / df) / (tss / (n - 1) as f64));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let stats = terms
        .iter()
        .enumerate()
        .map(|(j, term)| {
            let se = sigma * r_inv.row(j).norm();
            let coef = beta[j];
            let t = if se > 0.0 {
                coef / se
            } else if coef == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(coef)
            };
            let p = if t.is_infinite() { 0.0 } else { (2.0 * dist.sf(t.abs())).min(1.0) };
            TermStat {
                term: term.clone(),
                coef,
                std_err: Some(se),
                t: Some(t),
                p: Some(p),
                signif: String::new(),
                sensitivity: None,
            }
        })
        .collect();
    let mut out = RegressionResult { response: response.into(), terms: stats, n, adj_r2 };
    out.finalize()?;
    Ok(out)
}
