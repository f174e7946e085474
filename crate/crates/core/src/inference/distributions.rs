//! Upper-tail probabilities of the reference distributions.

use crate::error::{Error, Result};
use crate::special::beta_reg_pair;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    StudentT { df: f64 },
    F { df1: f64, df2: f64 },
}

/// `P(X > x)` for the given reference distribution.
pub fn tail_probability(dist: Reference, x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::Validation("tail probability of NaN".into()));
    }
    match dist {
        Reference::StudentT { df } => {
            check_df(df, "t degrees of freedom")?;
            if x == 0.0 {
                return Ok(0.5);
            }
            let half = 0.5 * two_sided_tail(df, x.abs());
            Ok(if x > 0.0 { half } else { 1.0 - half })
        }
        Reference::F { df1, df2 } => {
            check_df(df1, "F numerator degrees of freedom")?;
            check_df(df2, "F denominator degrees of freedom")?;
            if x <= 0.0 {
                return Ok(1.0);
            }
            if x.is_infinite() {
                return Ok(0.0);
            }
            // P(F > x) = I_{d2/(d2 + d1 x)}(d2/2, d1/2)
            let denom = df2 + df1 * x;
            let (upper, _) = beta_reg_pair(0.5 * df2, 0.5 * df1, df2 / denom, df1 * x / denom);
            Ok(upper)
        }
    }
}

/// `P(|T_df| > |t|)`.
pub fn two_sided_t_pvalue(t: f64, df: f64) -> Result<f64> {
    check_df(df, "t degrees of freedom")?;
    if t.is_nan() {
        return Err(Error::Validation("t statistic is NaN".into()));
    }
    Ok(two_sided_tail(df, t.abs()))
}

fn two_sided_tail(df: f64, t: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    let denom = df + t2;
    beta_reg_pair(0.5 * df, 0.5, df / denom, t2 / denom).0
}

fn check_df(df: f64, what: &str) -> Result<()> {
    if df.is_finite() && df > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} must be positive and finite, got {df}")))
    }
}
