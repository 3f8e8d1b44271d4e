//! Binary latent class model: likelihood evaluation and multi-start EM.
//!
//! The model assigns each observation to one of `C` unobserved classes; given
//! the class, responses on the `J` binary variables are independent with
//! per-class response probabilities. The probability of a response pattern is
//! the class-size-weighted mixture of these per-class product probabilities.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::contingency::{PatternTable, ResponsePattern, MAX_VARIABLES};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

/// Class proportions and per-class conditional response probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LCParams {
    /// Class proportions, length `C`; nonnegative, summing to 1.
    rho: Vec<f64>,
    /// `pi[c][j]` = probability of response 1 on variable `j+1` in class `c+1`.
    /// Boundary values 0 and 1 are legal.
    pi: Vec<Vec<f64>>,
}

impl LCParams {
    pub fn new(rho: Vec<f64>, pi: Vec<Vec<f64>>) -> Result<Self> {
        let c = rho.len();
        if c == 0 || pi.len() != c {
            return Err(Error::DimensionMismatch {
                context: format!("rho has {} classes, pi has {}", c, pi.len()),
            });
        }
        let j = pi[0].len();
        if j == 0 || j > MAX_VARIABLES {
            return Err(Error::UnsupportedVariableCount { j });
        }
        let mut sum = 0.0;
        for &r in &rho {
            if !(r >= 0.0) {
                return Err(Error::DimensionMismatch {
                    context: format!("class proportion {r} is negative or NaN"),
                });
            }
            sum += r;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::DimensionMismatch {
                context: format!("class proportions sum to {sum}, expected 1"),
            });
        }
        for row in &pi {
            if row.len() != j {
                return Err(Error::DimensionMismatch {
                    context: "pi rows have unequal lengths".into(),
                });
            }
            for &p in row {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::DimensionMismatch {
                        context: format!("response probability {p} outside [0,1]"),
                    });
                }
            }
        }
        Ok(Self { rho, pi })
    }

    pub fn n_classes(&self) -> usize {
        self.rho.len()
    }

    pub fn n_variables(&self) -> usize {
        self.pi[0].len()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn pi(&self) -> &[Vec<f64>] {
        &self.pi
    }

    /// Probability of a single response pattern (class-weighted product,
    /// with the 0^0 = 1 convention so boundary probabilities are legal).
    pub fn pattern_prob(&self, pattern: &ResponsePattern) -> Result<f64> {
        if pattern.len() != self.n_variables() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "pattern length {} vs model J={}",
                    pattern.len(),
                    self.n_variables()
                ),
            });
        }
        Ok(self.pattern_prob_index(pattern.encode()))
    }

    fn pattern_prob_index(&self, s: usize) -> f64 {
        let j = self.n_variables();
        let mut total = 0.0;
        for (c, row) in self.pi.iter().enumerate() {
            let mut prod = self.rho[c];
            for (v, &p) in row.iter().enumerate() {
                let bit = (s >> (j - 1 - v)) & 1;
                prod *= if bit == 1 { p } else { 1.0 - p };
            }
            total += prod;
        }
        total
    }

    /// Probabilities of every response pattern, indexed like `PatternTable`.
    pub fn all_pattern_probs(&self) -> Vec<f64> {
        let s = 1usize << self.n_variables();
        (0..s).map(|i| self.pattern_prob_index(i)).collect()
    }

    /// Permutes class labels; the mixture distribution is unchanged.
    pub fn permute_classes(&self, order: &[usize]) -> LCParams {
        LCParams {
            rho: order.iter().map(|&c| self.rho[c]).collect(),
            pi: order.iter().map(|&c| self.pi[c].clone()).collect(),
        }
    }

    /// Serializes to the plain-text model format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("C {}\n", self.n_classes()));
        out.push_str(&format!("J {}\n", self.n_variables()));
        out.push_str("rho");
        for r in &self.rho {
            out.push_str(&format!(" {:.16e}", r));
        }
        out.push('\n');
        for row in &self.pi {
            out.push_str("pi");
            for p in row {
                out.push_str(&format!(" {:.16e}", p));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |reason: &str| Error::Parse {
            path: "<model>".into(),
            reason: reason.into(),
        };
        let mut c = None;
        let mut j = None;
        let mut rho: Option<Vec<f64>> = None;
        let mut pi: Vec<Vec<f64>> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap();
            let values: Vec<&str> = parts.collect();
            match key {
                "C" => c = Some(values.first().ok_or_else(|| err("missing C value"))?
                    .parse::<usize>().map_err(|_| err("bad C value"))?),
                "J" => j = Some(values.first().ok_or_else(|| err("missing J value"))?
                    .parse::<usize>().map_err(|_| err("bad J value"))?),
                "rho" => {
                    rho = Some(
                        values.iter().map(|v| v.parse::<f64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| err("bad rho value"))?,
                    )
                }
                "pi" => pi.push(
                    values.iter().map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err("bad pi value"))?,
                ),
                other => return Err(err(&format!("unknown key {other:?}"))),
            }
        }
        let c = c.ok_or_else(|| err("missing C line"))?;
        let j = j.ok_or_else(|| err("missing J line"))?;
        let rho = rho.ok_or_else(|| err("missing rho line"))?;
        if rho.len() != c || pi.len() != c || pi.iter().any(|r| r.len() != j) {
            return Err(err("dimensions disagree with C/J header"));
        }
        LCParams::new(rho, pi)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { reason, .. } => Error::Parse {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }
}

/// EM controls. Defaults: tol 1e-10, 5000 iterations, 20 random starts.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol: 1e-10,
            n_starts: 20,
            seed: 0,
        }
    }
}

/// Outcome of a multi-start EM fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: LCParams,
    pub loglik: f64,
    /// Iterations used by the winning start.
    pub iters: usize,
    pub converged: bool,
    pub n_starts_run: usize,
    /// Set when the parameter count `C(J+1)-1` exceeds `2^J - 1`.
    pub identifiability_warning: bool,
}

/// Log-likelihood of a pattern table under the model. Patterns with zero
/// count contribute nothing even when their probability is zero; a positive
/// count on a zero-probability pattern yields negative infinity.
pub fn log_likelihood(params: &LCParams, table: &PatternTable) -> Result<f64> {
    if params.n_variables() != table.j() {
        return Err(Error::DimensionMismatch {
            context: format!("model J={} vs table J={}", params.n_variables(), table.j()),
        });
    }
    let mut ll = 0.0;
    for (s, &n) in table.counts().iter().enumerate() {
        if n == 0 {
            continue;
        }
        let p = params.pattern_prob_index(s);
        if p <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        ll += n as f64 * p.ln();
    }
    Ok(ll)
}

/// Posterior class memberships per pattern (E-step). Returns an `S x C`
/// row-major matrix together with the indices of patterns whose total
/// probability under the model is zero (their rows are left uniform).
pub fn e_step(params: &LCParams, table: &PatternTable) -> Result<(Vec<f64>, Vec<usize>)> {
    if params.n_variables() != table.j() {
        return Err(Error::DimensionMismatch {
            context: format!("model J={} vs table J={}", params.n_variables(), table.j()),
        });
    }
    let c = params.n_classes();
    let j = table.j();
    let s_count = table.s();
    let mut post = vec![0.0; s_count * c];
    let mut zero_rows = Vec::new();
    for s in 0..s_count {
        let row = &mut post[s * c..(s + 1) * c];
        let mut total = 0.0;
        for (k, pi_row) in params.pi.iter().enumerate() {
            let mut prod = params.rho[k];
            for (v, &p) in pi_row.iter().enumerate() {
                let bit = (s >> (j - 1 - v)) & 1;
                prod *= if bit == 1 { p } else { 1.0 - p };
            }
            row[k] = prod;
            total += prod;
        }
        if total > 0.0 {
            for x in row.iter_mut() {
                *x /= total;
            }
        } else {
            row.fill(1.0 / c as f64);
            zero_rows.push(s);
        }
    }
    Ok((post, zero_rows))
}

/// Parameter update from posteriors (M-step). A class receiving zero
/// posterior mass keeps its previous response-probability row.
pub fn m_step(posteriors: &[f64], table: &PatternTable, prev: &LCParams) -> LCParams {
    let c = prev.n_classes();
    let j = table.j();
    let n = table.n() as f64;
    let mut class_mass = vec![0.0; c];
    let mut ones_mass = vec![vec![0.0; j]; c];
    for (s, &count) in table.counts().iter().enumerate() {
        if count == 0 {
            continue;
        }
        let w = count as f64;
        let row = &posteriors[s * c..(s + 1) * c];
        for k in 0..c {
            let wk = w * row[k];
            if wk == 0.0 {
                continue;
            }
            class_mass[k] += wk;
            for v in 0..j {
                if (s >> (j - 1 - v)) & 1 == 1 {
                    ones_mass[k][v] += wk;
                }
            }
        }
    }
    let rho: Vec<f64> = class_mass.iter().map(|&m| m / n).collect();
    let pi: Vec<Vec<f64>> = (0..c)
        .map(|k| {
            if class_mass[k] > 0.0 {
                (0..j).map(|v| ones_mass[k][v] / class_mass[k]).collect()
            } else {
                prev.pi[k].clone()
            }
        })
        .collect();
    LCParams { rho, pi }
}

/// Random starting values: response probabilities uniform on [.05, .95],
/// class proportions positive and normalized. Deterministic given the seed.
pub fn init_random(c: usize, j: usize, seed: u64) -> LCParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..j).map(|_| rng.gen_range(0.05..0.95)).collect())
        .collect();
    let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut rho: Vec<f64> = raw.iter().map(|r| r / total).collect();
    // force an exact unit sum after rounding
    let s: f64 = rho.iter().sum();
    rho[c - 1] += 1.0 - s;
    LCParams { rho, pi }
}

struct StartOutcome {
    params: LCParams,
    loglik: f64,
    iters: usize,
    converged: bool,
}

fn run_single_start(table: &PatternTable, init: LCParams, config: &EmConfig) -> StartOutcome {
    let mut params = init;
    let mut ll_prev = log_likelihood(&params, table).expect("dimensions checked");
    let mut iters = 0;
    let mut converged = false;
    while iters < config.max_iters {
        let (post, _) = e_step(&params, table).expect("dimensions checked");
        params = m_step(&post, table, &params);
        iters += 1;
        let ll = log_likelihood(&params, table).expect("dimensions checked");
        if ll.is_finite() && ll_prev.is_finite() && ll - ll_prev < config.tol {
            ll_prev = ll;
            converged = true;
            break;
        }
        ll_prev = ll;
    }
    StartOutcome {
        loglik: ll_prev,
        params,
        iters,
        converged,
    }
}

/// Multi-start EM: runs `n_starts` independent EM chains in parallel and
/// returns the one with the highest final log-likelihood (ties break toward
/// the lowest start index). Each start derives its RNG stream from
/// `(config.seed, start index)`, so the result does not depend on scheduling.
pub fn fit_em(table: &PatternTable, c: usize, config: &EmConfig) -> Result<FitResult> {
    fit_em_warm(table, c, config, None)
}

/// As [`fit_em`], but start index 0 may be warm-started at given parameters.
pub fn fit_em_warm(
    table: &PatternTable,
    c: usize,
    config: &EmConfig,
    warm: Option<&LCParams>,
) -> Result<FitResult> {
    if c == 0 {
        return Err(Error::BadClassCount);
    }
    if let Some(w) = warm {
        if w.n_classes() != c || w.n_variables() != table.j() {
            return Err(Error::DimensionMismatch {
                context: "warm-start parameters disagree with C or table J".into(),
            });
        }
    }
    let j = table.j();
    let outcomes: Vec<StartOutcome> = (0..config.n_starts)
        .into_par_iter()
        .map(|start| {
            let init = match (start, warm) {
                (0, Some(w)) => w.clone(),
                _ => init_random(c, j, derive_seed(config.seed, start as u64)),
            };
            run_single_start(table, init, config)
        })
        .collect();
    let best = outcomes
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.loglik > a.1.loglik { b } else { a })
        .expect("n_starts >= 1")
        .1;
    let n_params = c * (j + 1) - 1;
    Ok(FitResult {
        identifiability_warning: n_params > (1usize << j) - 1,
        params: best.params,
        loglik: best.loglik,
        iters: best.iters,
        converged: best.converged,
        n_starts_run: config.n_starts,
    })
}

/// Closed-form one-class fit: independence with the observed margins.
pub fn fit_one_class(table: &PatternTable) -> Result<LCParams> {
    let pi: Vec<f64> = (1..=table.j())
        .map(|j| table.marginal_prob(j))
        .collect::<Result<_>>()?;
    LCParams::new(vec![1.0], vec![pi])
}
