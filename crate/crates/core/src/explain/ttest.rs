//! One-sided t-test on 0/1-coded trial outcomes.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

pub const DEFAULT_MU0: f64 = 0.95;
pub const CONFIDENCE: f64 = 0.95;
/// Binomial variance above which the normal approximation is trusted.
pub const NORMAL_APPROX_MIN_VARIANCE: f64 = 10.0;

fn student(df: f64) -> Result<StudentsT> {
    StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::invalid(format!("Student-t with {df} dof: {e}")))
}

/// `P(T_df ≤ t)`.
pub fn t_cdf(t: f64, df: f64) -> Result<f64> {
    Ok(student(df)?.cdf(t))
}

/// `q` such that `P(T_df ≤ q) = p`.
pub fn t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::invalid(format!("quantile level {p} outside (0, 1)")));
    }
    Ok(student(df)?.inverse_cdf(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub n: f64,
    pub p: f64,
    pub variance: f64,
    pub ok: bool,
}

/// `n·p·(1−p)` and whether it clears the threshold of 10.
pub fn normal_approx_check(n: f64, p: f64) -> Result<VarianceCheck> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::invalid(format!("rate {p} outside (0, 1)")));
    }
    let variance = n * p * (1.0 - p);
    Ok(VarianceCheck {
        n,
        p,
        variance,
        ok: variance > NORMAL_APPROX_MIN_VARIANCE,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentStats {
    pub n: u64,
    /// Usually a count; an average of counts when several trial sets are
    /// summarized per image.
    pub successes: f64,
    pub x_bar: f64,
    pub mu0: f64,
    pub std_dev: f64,
    /// Absent when every trial agrees and the statistic is infinite.
    pub t: Option<f64>,
    pub p_value: f64,
    pub upper_bound: f64,
    pub degenerate: bool,
    pub variance_check: VarianceCheck,
}

/// Tests `H0: rate ≥ mu0` against `rate < mu0`; `p_value = P(T_{n−1} ≤ t)`.
pub fn one_sided_t_test(n: u64, successes: f64, mu0: f64) -> Result<ExperimentStats> {
    if n < 2 {
        return Err(Error::invalid("t-test needs at least 2 samples"));
    }
    if !(0.0 < mu0 && mu0 < 1.0) {
        return Err(Error::invalid(format!("mu0 {mu0} outside (0, 1)")));
    }
    let nf = n as f64;
    if !(0.0..=nf).contains(&successes) {
        return Err(Error::invalid(format!("{successes} successes out of {n}")));
    }
    let x_bar = successes / nf;
    let var = nf * x_bar * (1.0 - x_bar) / (nf - 1.0);
    let s = var.sqrt();
    let variance_check = normal_approx_check(nf, mu0)?;
    let df = nf - 1.0;

    if s == 0.0 {
        let p_value = if x_bar >= mu0 { 1.0 } else { 0.0 };
        return Ok(ExperimentStats {
            n,
            successes,
            x_bar,
            mu0,
            std_dev: 0.0,
            t: None,
            p_value,
            upper_bound: x_bar,
            degenerate: true,
            variance_check,
        });
    }
    let se = s / nf.sqrt();
    let t = (x_bar - mu0) / se;
    Ok(ExperimentStats {
        n,
        successes,
        x_bar,
        mu0,
        std_dev: s,
        t: Some(t),
        p_value: t_cdf(t, df)?,
        upper_bound: x_bar + t_quantile(CONFIDENCE, df)? * se,
        degenerate: false,
        variance_check,
    })
}
