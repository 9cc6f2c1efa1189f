//! Per-subclass rejection thresholds.
//!
//! Each specialized classifier gets a cutoff `t_k`: a new instance is accepted by
//! `f_k` when its score is at least `t_k`. The cutoff is placed in the lower tail
//! of the scores that genuine subclass members receive, either as a plain
//! empirical quantile or by a peaks-over-threshold fit of a generalized Pareto
//! tail (method of moments).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{BoundData, ModelParams};
use crate::scalar::Scalar;

pub const DEFAULT_RISK: f64 = 0.01;
/// Quantile of the calibration scores used as the tail anchor `u`.
pub const ANCHOR_QUANTILE: f64 = 0.2;
pub const MIN_EVT_SAMPLES: usize = 8;
pub const MIN_PERCENTILE_SAMPLES: usize = 2;
/// Below this |ξ| the exponential-tail limit is used.
const SHAPE_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    EvtPot,
    Percentile,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evt_pot" | "evt" => Ok(Method::EvtPot),
            "percentile" => Ok(Method::Percentile),
            other => Err(Error::InvalidArgument(format!("unknown rejection method {other:?}"))),
        }
    }
}

/// Fitted lower-tail model for one subclass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailParams {
    pub shape: f64,
    pub scale: f64,
    pub anchor: f64,
    pub excesses: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionThresholds<T> {
    pub t: Vec<T>,
    pub method: Method,
    pub q: f64,
    /// `Some` where a tail was fitted.
    pub tail: Vec<Option<TailParams>>,
    /// Set where the EVT fit was impossible and the percentile rule was used instead.
    pub fell_back: Vec<bool>,
}

impl<T: Scalar> RejectionThresholds<T> {
    pub fn k(&self) -> usize {
        self.t.len()
    }

    /// True iff `score >= t_k`; `k` is 1-based.
    pub fn accepts(&self, k: usize, score: T) -> bool {
        assert!(k >= 1 && k <= self.t.len(), "subclass {k} outside 1..={}", self.t.len());
        score >= self.t[k - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidArgument(format!("risk level {} outside (0, 1)", self.q)));
        }
        if let Some(i) = self.t.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(format!("threshold {} is not finite", i + 1)));
        }
        let k = self.t.len();
        for (name, len) in [("tail", self.tail.len()), ("fell_back", self.fell_back.len())] {
            if len != k {
                return Err(Error::InvalidArgument(format!(
                    "thresholds has {k} entries but {name} has {len}"
                )));
            }
        }
        Ok(())
    }
}

/// Type-7 (linear interpolation) empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Method-of-moments GPD fit to the lower tail below the anchor quantile.
/// `None` when the tail is degenerate (fewer than two distinct excesses).
pub fn fit_lower_tail(scores: &[f64]) -> Option<TailParams> {
    let s = sorted(scores);
    let anchor = quantile_sorted(&s, ANCHOR_QUANTILE);
    let excess: Vec<f64> = s.iter().take_while(|&&v| v < anchor).map(|v| anchor - v).collect();
    let n = excess.len();
    if n < 2 {
        return None;
    }
    let mean = excess.iter().sum::<f64>() / n as f64;
    let var = excess.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(mean > 0.0 && var > 0.0) {
        return None;
    }
    let ratio = mean * mean / var;
    Some(TailParams {
        shape: 0.5 * (1.0 - ratio),
        scale: 0.5 * mean * (1.0 + ratio),
        anchor,
        excesses: n,
    })
}

/// Score below which a fraction `q` of the population is expected to fall.
pub fn tail_threshold(tail: &TailParams, q: f64, m: usize) -> f64 {
    let r = q * m as f64 / tail.excesses as f64;
    if tail.shape.abs() < SHAPE_EPS {
        tail.anchor + tail.scale * r.ln()
    } else {
        tail.anchor - tail.scale / tail.shape * (r.powf(-tail.shape) - 1.0)
    }
}

/// Thresholds from per-subclass calibration scores (`scores[k-1]` for subclass `k`).
pub fn calibrate_scores<T: Scalar>(scores: &[Vec<f64>], method: Method, q: f64) -> Result<RejectionThresholds<T>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("risk level {q} outside (0, 1)")));
    }
    let need = match method {
        Method::EvtPot => MIN_EVT_SAMPLES,
        Method::Percentile => MIN_PERCENTILE_SAMPLES,
    };
    let k = scores.len();
    let mut out = RejectionThresholds {
        t: Vec::with_capacity(k),
        method,
        q,
        tail: Vec::with_capacity(k),
        fell_back: Vec::with_capacity(k),
    };
    for (i, s) in scores.iter().enumerate() {
        if s.len() < need {
            return Err(Error::InsufficientSamples {
                subclass: i + 1,
                have: s.len(),
                need,
            });
        }
        if let Some(v) = s.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite score {v} for subclass {}", i + 1)));
        }
        let percentile = || quantile_sorted(&sorted(s), q);
        let (t, tail, fell_back) = match method {
            Method::Percentile => (percentile(), None, false),
            Method::EvtPot => match fit_lower_tail(s) {
                Some(tail) => (tail_threshold(&tail, q, s.len()), Some(tail), false),
                None => {
                    eprintln!(
                        "warning: degenerate scores for subclass {}; using the percentile rule",
                        i + 1
                    );
                    (percentile(), None, true)
                }
            },
        };
        out.t.push(T::of(t));
        out.tail.push(tail);
        out.fell_back.push(fell_back);
    }
    out.validate()?;
    Ok(out)
}

/// Scores `f_k(x)` of the training members of each subclass.
pub fn member_scores<T: Scalar>(params: &ModelParams<T>, data: &BoundData<T>) -> Vec<Vec<f64>> {
    let rare = data.rare();
    (1..=data.k())
        .map(|k| {
            let w = params.wk(k);
            let b = params.b[k - 1];
            data.y_k(k)
                .iter()
                .zip(rare.rows())
                .filter(|(y, _)| **y > T::zero())
                .map(|(_, x)| (x.dot(&w) + b).as_f64())
                .collect()
        })
        .collect()
}

/// Calibrates one threshold per subclass from the training scores of its members.
pub fn calibrate<T: Scalar>(
    params: &ModelParams<T>,
    data: &BoundData<T>,
    method: Method,
    q: f64,
) -> Result<RejectionThresholds<T>> {
    if params.dim() != data.d() || params.k() != data.k() {
        return Err(Error::Dimension {
            expected: data.d(),
            got: params.dim(),
        });
    }
    calibrate_scores(&member_scores(params, data), method, q)
}
