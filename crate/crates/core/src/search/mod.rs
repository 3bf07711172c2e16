//! Stochastic coordinate exchange over a discrete candidate set, and an
//! exhaustive reference search for small instances.

pub mod acceptance;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use itertools::Itertools;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, label};
use crate::utility::{summarize, Summary};

pub use acceptance::{ace_p, wilcoxon_p, wilcoxon_p_with, Acceptance, WilcoxonMethod};

/// Largest number of subsets the exhaustive search will evaluate.
pub const EXHAUSTIVE_BUDGET: u128 = 10_000;

/// Source of Monte-Carlo utility draws for a design given as candidate
/// indices. Implementations must be deterministic in `(design, count, seed)`
/// and must not depend on the order of `design`.
pub trait DesignUtility: Sync {
    fn draws(&self, design: &[usize], count: usize, seed: u64) -> Result<Vec<f64>>;
}

impl<F> DesignUtility for F
where
    F: Fn(&[usize], usize, u64) -> Result<Vec<f64>> + Sync,
{
    fn draws(&self, design: &[usize], count: usize, seed: u64) -> Result<Vec<f64>> {
        self(design, count, seed)
    }
}

/// Memoises another utility; worthwhile when common random numbers make
/// repeated evaluations identical.
pub struct Cached<U> {
    inner: U,
    memo: Mutex<HashMap<(Vec<usize>, usize, u64), Vec<f64>>>,
}

impl<U: DesignUtility> Cached<U> {
    pub fn new(inner: U) -> Self {
        Self { inner, memo: Mutex::new(HashMap::new()) }
    }
}

impl<U: DesignUtility> DesignUtility for Cached<U> {
    fn draws(&self, design: &[usize], count: usize, seed: u64) -> Result<Vec<f64>> {
        let mut key = design.to_vec();
        key.sort_unstable();
        let key = (key, count, seed);
        if let Some(v) = self.memo.lock().expect("memo lock").get(&key) {
            return Ok(v.clone());
        }
        let v = self.inner.draws(design, count, seed)?;
        self.memo.lock().expect("memo lock").insert(key, v.clone());
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AcceptRule {
    /// Accept when a uniform draw falls below the acceptance probability.
    #[default]
    Stochastic,
    /// Accept when the acceptance probability exceeds one half.
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Random starts.
    pub k: usize,
    /// Sweeps over the coordinates per start.
    pub t: usize,
    /// Draws per proposal summary.
    pub m: usize,
    /// Draws per design in each acceptance test.
    pub b: usize,
    /// Draws for the final ranking of the start winners.
    pub b_final: usize,
    pub acceptance: Acceptance,
    pub summary: Summary,
    pub rule: AcceptRule,
    /// Reuse one seed for every proposal summary.
    pub crn: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: 5,
            t: 10,
            m: 50,
            b: 50,
            b_final: 200,
            acceptance: Acceptance::Wilcoxon,
            summary: Summary::Median,
            rule: AcceptRule::Stochastic,
            crn: true,
            seed: 1,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.k < 1 {
            problems.push("k must be at least 1");
        }
        if self.t < 1 {
            problems.push("t must be at least 1");
        }
        if self.m < 1 {
            problems.push("m must be at least 1");
        }
        if self.b < 2 {
            problems.push("b must be at least 2");
        }
        if self.b_final < self.b {
            problems.push("b_final must be at least b");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn summary_seed(&self, start: usize, sweep: usize, coord: usize, cand: usize) -> u64 {
        if self.crn {
            rng::derive(self.seed, &[label::UTILITY])
        } else {
            rng::derive(self.seed, &[label::UTILITY, start as u64, sweep as u64, coord as u64, cand as u64])
        }
    }
}

/// One acceptance test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub start: usize,
    pub sweep: usize,
    pub coord: usize,
    pub incumbent_u: f64,
    pub proposal_u: f64,
    pub p_accept: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartResult {
    pub start: usize,
    /// Sorted candidate indices, fixed coordinates excluded.
    pub design: Vec<usize>,
    /// Summary over the final-ranking draws.
    pub summary: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: StartResult,
    pub starts: Vec<StartResult>,
    pub trace: Vec<TraceRow>,
    /// Proposal summaries computed during the sweeps.
    pub exchange_evaluations: usize,
}

impl SearchResult {
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        write_trace_csv(&self.trace, path)
    }
}

pub fn write_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let mut body = String::from("start,sweep,coord,incumbent_u,proposal_u,p_accept,accepted\n");
    for r in trace {
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.start, r.sweep, r.coord, r.incumbent_u, r.proposal_u, r.p_accept, r.accepted
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

fn std_error(d: &[f64]) -> f64 {
    let n = d.len();
    if n < 2 {
        return 0.0;
    }
    let m = d.iter().sum::<f64>() / n as f64;
    (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt()
}

fn with_fixed(design: &[usize], fixed: &[usize]) -> Vec<usize> {
    let mut d: Vec<usize> = design.iter().chain(fixed).copied().collect();
    d.sort_unstable();
    d
}

/// Coordinate exchange of `gamma` coordinates over candidates `0..n`,
/// keeping `fixed` in every design and out of the exchange pool.
pub fn coordinate_exchange<U: DesignUtility + ?Sized>(
    utility: &U,
    n: usize,
    gamma: usize,
    fixed: &[usize],
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    if fixed.iter().any(|&f| f >= n) || fixed.iter().unique().count() != fixed.len() {
        return Err(Error::InvalidDesign("fixed coordinates must be distinct candidates".into()));
    }
    let pool: Vec<usize> = (0..n).filter(|c| !fixed.contains(c)).collect();
    if gamma > pool.len() {
        return Err(Error::InvalidDesign(format!("{gamma} coordinates requested from {} candidates", pool.len())));
    }
    if gamma == 0 {
        return Err(Error::InvalidDesign("design needs at least one coordinate".into()));
    }

    let runs: Vec<Result<(Vec<usize>, Vec<TraceRow>, usize)>> =
        (0..cfg.k).into_par_iter().map(|k| run_start(utility, &pool, gamma, fixed, cfg, k)).collect();

    // under common random numbers the final ranking sees the same stream as the proposals
    let final_seed = if cfg.crn { cfg.summary_seed(0, 0, 0, 0) } else { rng::derive(cfg.seed, &[label::FINAL]) };
    let mut starts = Vec::with_capacity(cfg.k);
    let mut trace = Vec::new();
    let mut evaluations = 0;
    for (k, run) in runs.into_iter().enumerate() {
        let (mut design, rows, evals) = run?;
        design.sort_unstable();
        let d = utility.draws(&with_fixed(&design, fixed), cfg.b_final, final_seed)?;
        starts.push(StartResult { start: k, summary: summarize(&d, cfg.summary), std_error: std_error(&d), design });
        trace.extend(rows);
        evaluations += evals;
    }
    let best = starts
        .iter()
        .fold(None::<&StartResult>, |acc, s| match acc {
            Some(a) if a.summary >= s.summary => Some(a),
            _ => Some(s),
        })
        .expect("at least one start")
        .clone();
    Ok(SearchResult { best, starts, trace, exchange_evaluations: evaluations })
}

fn run_start<U: DesignUtility + ?Sized>(
    utility: &U,
    pool: &[usize],
    gamma: usize,
    fixed: &[usize],
    cfg: &SearchConfig,
    k: usize,
) -> Result<(Vec<usize>, Vec<TraceRow>, usize)> {
    let mut rng = rng::stream(cfg.seed, &[label::START, k as u64]);
    let mut design: Vec<usize> = sample(&mut rng, pool.len(), gamma).into_iter().map(|i| pool[i]).collect();
    design.sort_unstable();
    let mut trace = Vec::new();
    let mut evaluations = 0;
    if gamma == pool.len() {
        return Ok((design, trace, 0));
    }
    for t in 0..cfg.t {
        for j in 0..gamma {
            let options: Vec<usize> = pool.iter().copied().filter(|c| !design.contains(c)).collect();
            let proposals: Vec<Result<(usize, f64)>> = options
                .par_iter()
                .map(|&c| {
                    let mut d = design.clone();
                    d[j] = c;
                    let u = utility.draws(&with_fixed(&d, fixed), cfg.m, cfg.summary_seed(k, t, j, c))?;
                    Ok((c, summarize(&u, cfg.summary)))
                })
                .collect();
            evaluations += proposals.len();
            let mut best: Option<(usize, f64)> = None;
            for p in proposals {
                let (c, u) = p?;
                // strict comparison keeps the lowest candidate on ties
                if best.is_none_or(|(_, bu)| u > bu) {
                    best = Some((c, u));
                }
            }
            let (c, prop_u) = best.expect("non-empty exchange set");
            let inc = utility.draws(&with_fixed(&design, fixed), cfg.m, cfg.summary_seed(k, t, j, design[j]))?;
            let inc_u = summarize(&inc, cfg.summary);

            let mut proposal = design.clone();
            proposal[j] = c;
            let acc_seed = rng::derive(cfg.seed, &[label::ACCEPT, k as u64, t as u64, j as u64]);
            let pb = utility.draws(&with_fixed(&proposal, fixed), cfg.b, acc_seed)?;
            let ib = utility.draws(&with_fixed(&design, fixed), cfg.b, acc_seed)?;
            let p = cfg.acceptance.probability(&pb, &ib)?;
            let u: f64 = rng.random();
            let accepted = match cfg.rule {
                AcceptRule::Stochastic => u < p,
                AcceptRule::Threshold => p > 0.5,
            };
            trace.push(TraceRow { start: k, sweep: t, coord: j, incumbent_u: inc_u, proposal_u: prop_u, p_accept: p, accepted });
            if accepted {
                design = proposal;
            }
        }
    }
    Ok((design, trace, evaluations))
}

/// Summary of every `gamma`-subset of the non-fixed candidates under one
/// common seed; returns the best subset (lexicographically first on ties)
/// and its summary.
pub fn exhaustive_oracle<U: DesignUtility + ?Sized>(
    utility: &U,
    n: usize,
    gamma: usize,
    fixed: &[usize],
    m: usize,
    mode: Summary,
    seed: u64,
) -> Result<(Vec<usize>, f64)> {
    let pool: Vec<usize> = (0..n).filter(|c| !fixed.contains(c)).collect();
    if gamma > pool.len() || gamma == 0 {
        return Err(Error::InvalidDesign(format!("{gamma} coordinates requested from {} candidates", pool.len())));
    }
    let count = binomial(pool.len() as u128, gamma as u128);
    if count > EXHAUSTIVE_BUDGET {
        return Err(Error::BudgetExceeded { count, limit: EXHAUSTIVE_BUDGET });
    }
    let seed = rng::derive(seed, &[label::UTILITY]);
    let subsets: Vec<Vec<usize>> = pool.iter().copied().combinations(gamma).collect();
    let values: Vec<Result<f64>> = subsets
        .par_iter()
        .map(|s| Ok(summarize(&utility.draws(&with_fixed(s, fixed), m, seed)?, mode)))
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        let v = v?;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    let (i, v) = best.expect("non-empty subset list");
    Ok((subsets[i].clone(), v))
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Deterministic helper for tests and examples: utility equal to the sum
/// of per-candidate scores plus Gaussian noise of scale `noise`.
pub fn separable_utility(scores: Vec<f64>, noise: f64) -> impl DesignUtility {
    move |design: &[usize], count: usize, seed: u64| -> Result<Vec<f64>> {
        let base: f64 = design.iter().map(|&i| scores[i]).sum();
        let mut rng = rng::stream(seed, &[]);
        Ok((0..count)
            .map(|_| base + noise * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect())
    }
}
