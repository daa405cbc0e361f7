use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest combined sample size for which [`MwMethod::Auto`] uses the
/// exact distribution.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MwMethod {
    Exact,
    Normal,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `U` of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Method actually used (never `Auto`).
    pub method: MwMethod,
}

/// Midranks doubled so that ties stay integral. Ranks start at 1.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // mean of ranks i+1 ..= j+1, doubled
        let r = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided exact p: the fraction of equally likely assignments of the
/// pooled ranks to the first sample whose rank sum lies at least as far
/// from its mean as the observed one. Counted by dynamic programming over
/// (chosen, doubled rank sum).
fn exact_p(ranks: &[u64], n: usize, observed: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    let mut ways = vec![vec![0f64; total as usize + 1]; n + 1];
    ways[0][0] = 1.0;
    for &r in ranks {
        for k in (1..=n).rev() {
            for s in (r as usize..=total as usize).rev() {
                let add = ways[k - 1][s - r as usize];
                if add != 0.0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    let big_n = ranks.len() as u64;
    // doubled rank sums are compared as 2·N·s against n·total
    let centre = n as u64 * total;
    let dev = |s: u64| (big_n * s).abs_diff(centre);
    let obs = dev(observed);
    let mut hit = 0.0;
    let mut all = 0.0;
    for (s, &c) in ways[n].iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        all += c;
        if dev(s as u64) >= obs {
            hit += c;
        }
    }
    (hit / all).min(1.0)
}

/// Rank-sum test of `x` against `y` with midranks for ties.
pub fn mann_whitney_u(x: &[f64], y: &[f64], method: MwMethod) -> Result<MannWhitney> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument(
            "mann-whitney needs two non-empty samples".into(),
        ));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(
            "mann-whitney input contains NaN".into(),
        ));
    }
    let (n, m) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = doubled_ranks(&pooled);
    let rx2: u64 = ranks[..n].iter().sum();
    let u = (rx2 as f64 - (n * (n + 1)) as f64) / 2.0;
    let method = match method {
        MwMethod::Auto if n + m <= EXACT_LIMIT => MwMethod::Exact,
        MwMethod::Auto => MwMethod::Normal,
        other => other,
    };
    let p = match method {
        MwMethod::Exact => exact_p(&ranks, n, rx2),
        _ => normal_p(&pooled, u, n, m),
    };
    Ok(MannWhitney { u, p, method })
}

/// Normal approximation with tie-corrected variance and continuity
/// correction.
fn normal_p(pooled: &[f64], u: f64, n: usize, m: usize) -> f64 {
    let big_n = (n + m) as f64;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let nm = (n * m) as f64;
    let var = nm / 12.0 * ((big_n + 1.0) - ties / (big_n * (big_n - 1.0)));
    if !(var > 0.0) {
        return 1.0;
    }
    let z = ((u - nm / 2.0).abs() - 0.5).max(0.0) / libm::sqrt(var);
    libm::erfc(z / core::f64::consts::SQRT_2).min(1.0)
}
