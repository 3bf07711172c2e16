//! Acceptance probabilities for comparing two sets of utility draws.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest combined sample size handled by exact enumeration.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WilcoxonMethod {
    /// Exact when tie-free and small enough, otherwise normal.
    #[default]
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Acceptance {
    #[default]
    Wilcoxon,
    Ace,
}

impl Acceptance {
    /// Probability of accepting `proposal` over `incumbent`.
    pub fn probability(self, proposal: &[f64], incumbent: &[f64]) -> Result<f64> {
        match self {
            Acceptance::Wilcoxon => Ok(1.0 - wilcoxon_p(proposal, incumbent)?),
            Acceptance::Ace => ace_p(proposal, incumbent),
        }
    }
}

/// One-sided rank-sum p-value for `x` shifted to the right of `y`.
pub fn wilcoxon_p(x: &[f64], y: &[f64]) -> Result<f64> {
    wilcoxon_p_with(x, y, WilcoxonMethod::Auto)
}

pub fn wilcoxon_p_with(x: &[f64], y: &[f64], method: WilcoxonMethod) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("rank-sum samples".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("rank-sum sample contains NaN".into()));
    }
    let (ranks, tie_term) = mid_ranks(x, y);
    let w: f64 = ranks[..x.len()].iter().sum();
    let tied = tie_term > 0.0;
    let exact = match method {
        WilcoxonMethod::Auto => !tied && x.len() + y.len() <= EXACT_LIMIT,
        WilcoxonMethod::Exact if tied => return Err(Error::InvalidParameter("exact rank-sum needs tie-free samples".into())),
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Normal => false,
    };
    let p = if exact { exact_upper_tail(x.len(), y.len(), w.round() as usize) } else { normal_upper_tail(x.len(), y.len(), w, tie_term) };
    Ok(p.clamp(0.0, 1.0))
}

/// Mid-ranks of the pooled sample (x first) and the tie sum `sum(t^3 - t)`.
fn mid_ranks(x: &[f64], y: &[f64]) -> (Vec<f64>, f64) {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_term)
}

/// `P(W >= w)` by counting rank subsets of size `n` from `1..=n+m`.
fn exact_upper_tail(n: usize, m: usize, w: usize) -> f64 {
    let total = n + m;
    let max_sum = total * (total + 1) / 2;
    // counts[k][s]: subsets of size k with rank sum s
    let mut counts = vec![vec![0.0f64; max_sum + 1]; n + 1];
    counts[0][0] = 1.0;
    for r in 1..=total {
        for k in (1..=n.min(r)).rev() {
            for s in (r..=max_sum).rev() {
                counts[k][s] += counts[k - 1][s - r];
            }
        }
    }
    let all: f64 = counts[n].iter().sum();
    let upper: f64 = counts[n].iter().skip(w).sum();
    upper / all
}

fn normal_upper_tail(n: usize, m: usize, w: f64, tie_term: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let big = nf + mf;
    let mean = nf * (big + 1.0) / 2.0;
    let var = nf * mf / 12.0 * ((big + 1.0) - tie_term / (big * (big - 1.0)));
    if var <= 0.0 {
        return 0.5;
    }
    let z = (w - mean - 0.5) / var.sqrt();
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Acceptance probability from the pooled two-sample t statistic on
/// `2B - 2` degrees of freedom.
pub fn ace_p(x: &[f64], y: &[f64]) -> Result<f64> {
    let b = x.len();
    if y.len() != b {
        return Err(Error::DimensionMismatch(format!("{} vs {} draws", b, y.len())));
    }
    if b < 2 {
        return Err(Error::InvalidParameter("ACE acceptance needs at least two draws per design".into()));
    }
    let bf = b as f64;
    let mx = x.iter().sum::<f64>() / bf;
    let my = y.iter().sum::<f64>() / bf;
    let ss: f64 = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() + y.iter().map(|v| (v - my).powi(2)).sum::<f64>();
    let dof = 2.0 * bf - 2.0;
    let v = ss / dof;
    let diff = bf * mx - bf * my;
    if !(v > 0.0) {
        return Ok(if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            0.0
        } else {
            0.5
        });
    }
    let t = diff / (2.0 * bf * v).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok((1.0 - dist.cdf(-t)).clamp(0.0, 1.0))
}
