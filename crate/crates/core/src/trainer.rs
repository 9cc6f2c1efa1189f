//! Joint training of all `K + 1` classifiers by Nesterov-accelerated subgradient
//! descent on the concatenated parameter block `(w0, b0, w1, b1, .., wK, bK)`.
//!
//! Subgradient steps are not monotone, so the loss is evaluated at every iterate
//! and the lowest-loss iterate is returned.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Batch, Block, BoundData, GramCache, Hyperparams, ModelParams, Objective};
use crate::scalar::Scalar;

/// Loss growth over the starting loss that aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
/// Iterations spanned by the relative-change stopping test.
pub const CONVERGENCE_WINDOW: usize = 10;
const MAX_HALVINGS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDecay {
    Fixed,
    InvSqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Full,
    MiniBatch(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_iters: usize,
    /// Base step, taken as given. `None` picks [`default_step`] and caps each
    /// step by the local curvature.
    pub step_size: Option<f64>,
    pub step_decay: StepDecay,
    pub momentum: f64,
    pub tol: f64,
    pub batch: BatchMode,
    pub seed: u64,
    /// Log every this many iterations to stderr; 0 disables.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 500,
            step_size: None,
            step_decay: StepDecay::InvSqrt,
            momentum: 0.9,
            tol: 1e-6,
            batch: BatchMode::Full,
            seed: 0,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return bad("step_size must be positive");
            }
        }
        if self.batch == BatchMode::MiniBatch(0) {
            return bad("mini-batch size must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel<T> {
    pub params: ModelParams<T>,
    pub hp: Hyperparams<T>,
    /// Loss at the starting point followed by the loss after every iteration.
    pub loss_trace: Vec<T>,
    pub converged: bool,
    pub iters_run: usize,
    pub best_iter: usize,
    pub step_size: T,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn best_loss(&self) -> T {
        self.loss_trace[self.best_iter]
    }
}

/// Default base step `1 / (max λ + n)`: the hinge terms sum over `n` rows.
/// Penalty curvature is handled per step by the stability cap.
pub fn default_step<T: Scalar>(hp: &Hyperparams<T>, n: usize) -> T {
    let lambda = hp.lambda_k.iter().fold(hp.lambda0, |m, &l| if l > m { l } else { m });
    T::one() / (lambda + T::of(n as f64))
}

/// Optimizer over a bound objective, optionally restricted to some blocks.
pub struct Trainer<'a, T> {
    objective: Objective<'a, T>,
    cfg: &'a TrainConfig,
    blocks: Vec<Block>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(objective: Objective<'a, T>, cfg: &'a TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let k = objective.data().k();
        let blocks = std::iter::once(Block::General)
            .chain((1..=k).map(Block::Subclass))
            .collect();
        Ok(Trainer {
            objective,
            cfg,
            blocks,
        })
    }

    /// Optimizes only `blocks`, holding every other block at zero. With `μ = 0`
    /// the blocks do not interact, so this is exactly an independent fit.
    pub fn only(mut self, blocks: &[Block]) -> Self {
        self.blocks = blocks.to_vec();
        self
    }

    /// Caps the scheduled step so that `rate * curvature <= 1` both at the
    /// look-ahead point and at the point the step lands on. The penalty is
    /// quartic, so a step sized for small weights can overshoot badly.
    fn stable_rate(&self, from: &ModelParams<T>, grad: &ModelParams<T>, scheduled: T) -> T {
        let obj = &self.objective;
        let mut rate = scheduled;
        let here = obj.curvature_bound(from);
        if rate * here > T::one() {
            rate = T::one() / here;
        }
        if obj.hyperparams().mu == T::zero() {
            return rate;
        }
        let half = T::of(0.5);
        for _ in 0..MAX_HALVINGS {
            if rate * obj.curvature_bound(&from.axpy(-rate, grad)) <= T::one() {
                break;
            }
            rate = rate * half;
        }
        rate
    }

    pub fn run(&self) -> Result<TrainedModel<T>> {
        self.run_observed(|_, _| {})
    }

    /// Runs the optimizer, handing every iterate to `observer` (iteration numbers start at 1).
    pub fn run_observed<F>(&self, mut observer: F) -> Result<TrainedModel<T>>
    where
        F: FnMut(usize, &ModelParams<T>),
    {
        let data = self.objective.data();
        let hp = self.objective.hyperparams();
        let cfg = self.cfg;
        let (n, n0) = (data.n(), data.n_rare());

        let step = cfg
            .step_size
            .map(T::of)
            .unwrap_or_else(|| default_step(hp, n));
        let momentum = T::of(cfg.momentum);
        let loss_of = |p: &ModelParams<T>| self.objective.partial_loss(p, &self.blocks);

        let mut theta = ModelParams::zeros(data.d(), data.k());
        let mut prev = theta.clone();
        let start_loss = loss_of(&theta);
        let limit = start_loss.as_f64().abs().max(f64::MIN_POSITIVE) * DIVERGENCE_FACTOR;
        let mut trace = vec![start_loss];
        let mut best = (start_loss, theta.clone(), 0usize);
        let mut grad = ModelParams::zeros(data.d(), data.k());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut converged = false;
        let mut iters_run = 0;
        let started = Instant::now();

        for t in 1..=cfg.max_iters {
            let lookahead = theta.axpy(momentum, &theta.axpy(-T::one(), &prev));
            let scheduled = match cfg.step_decay {
                StepDecay::Fixed => step,
                StepDecay::InvSqrt => step / T::of(t as f64).sqrt(),
            };

            let (general_rows, rare_rows);
            let batch = match cfg.batch {
                BatchMode::MiniBatch(m) if m < n => {
                    let mut g: Vec<usize> = sample(&mut rng, n, m).into_vec();
                    g.sort_unstable();
                    let m_rare = m.min(n0);
                    let mut r: Vec<usize> = sample(&mut rng, n0, m_rare).into_vec();
                    r.sort_unstable();
                    general_rows = g;
                    rare_rows = r;
                    Batch {
                        general_rows: Some(&general_rows[..]),
                        rare_rows: (m_rare < n0).then_some(&rare_rows[..]),
                        general_scale: Some(T::of(n as f64 / m as f64)),
                        rare_scale: Some(T::of(n0 as f64 / m_rare as f64)),
                    }
                }
                _ => Batch::default(),
            };
            self.objective
                .gradient_into(&lookahead, &batch, &mut grad, Some(&self.blocks));
            let rate = match cfg.step_size {
                Some(_) => scheduled,
                None => self.stable_rate(&lookahead, &grad, scheduled),
            };

            prev = theta;
            theta = lookahead.axpy(-rate, &grad);
            iters_run = t;

            let loss = loss_of(&theta);
            trace.push(loss);
            let lf = loss.as_f64();
            if !lf.is_finite() || lf > limit {
                return Err(Error::Diverged {
                    iter: t,
                    loss: lf,
                    limit,
                });
            }
            if loss < best.0 {
                best = (loss, theta.clone(), t);
            }
            observer(t, &theta);
            if cfg.log_every > 0 && t % cfg.log_every == 0 {
                eprintln!(
                    "iter={t} loss={lf:.6e} grad_norm={:.6e} elapsed_ms={}",
                    grad.norm_sq().as_f64().sqrt(),
                    started.elapsed().as_millis()
                );
            }
            if t >= CONVERGENCE_WINDOW {
                let before = trace[t - CONVERGENCE_WINDOW].as_f64();
                let scale = before.abs().max(f64::MIN_POSITIVE);
                if (before - lf).abs() / scale < cfg.tol {
                    converged = true;
                    break;
                }
            }
        }

        Ok(TrainedModel {
            params: best.1,
            hp: hp.clone(),
            loss_trace: trace,
            converged,
            iters_run,
            best_iter: best.2,
            step_size: step,
        })
    }
}

/// Fits all classifiers jointly against a caller-provided Gram cache.
pub fn fit_with_gram<T: Scalar>(
    data: &BoundData<T>,
    hp: &Hyperparams<T>,
    cfg: &TrainConfig,
    gram: &GramCache<T>,
) -> Result<TrainedModel<T>> {
    let objective = Objective::new(data, hp, gram)?;
    Trainer::new(objective, cfg)?.run()
}

/// Fits all classifiers jointly; the squared Gram matrix is computed once up front.
pub fn fit<T: Scalar>(data: &BoundData<T>, hp: &Hyperparams<T>, cfg: &TrainConfig) -> Result<TrainedModel<T>> {
    let gram = GramCache::squared(data.x());
    fit_with_gram(data, hp, cfg, &gram)
}

/// Mini-batch variant; `size >= n` reproduces the full-batch trajectory.
pub fn fit_minibatch<T: Scalar>(
    data: &BoundData<T>,
    hp: &Hyperparams<T>,
    cfg: &TrainConfig,
    size: usize,
) -> Result<TrainedModel<T>> {
    if size == 0 || size > data.n() {
        return Err(Error::InvalidArgument(format!(
            "mini-batch size {size} outside 1..={}",
            data.n()
        )));
    }
    let cfg = TrainConfig {
        batch: BatchMode::MiniBatch(size),
        ..cfg.clone()
    };
    fit(data, hp, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::gram_builds_on_this_thread;
    use ndarray::Array2;

    fn blobs() -> BoundData<f64> {
        // majority near the origin, two rare groups to the right
        let pts = [
            (0.1, 0.2, None),
            (-0.3, 0.1, None),
            (0.2, -0.4, None),
            (-0.1, -0.2, None),
            (4.0, 1.0, Some(1)),
            (4.2, 1.3, Some(1)),
            (3.8, 0.8, Some(1)),
            (4.1, -1.0, Some(2)),
            (3.9, -1.2, Some(2)),
            (4.3, -0.9, Some(2)),
        ];
        let x = Array2::from_shape_fn((pts.len(), 2), |(i, j)| if j == 0 { pts[i].0 } else { pts[i].1 });
        let sub: Vec<_> = pts.iter().map(|p| p.2).collect();
        BoundData::new(x, &sub, 2).unwrap()
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { max_iters: 0, ..ok.clone() },
            TrainConfig { tol: 0.0, ..ok.clone() },
            TrainConfig { momentum: 1.0, ..ok.clone() },
            TrainConfig { step_size: Some(-1.0), ..ok.clone() },
            TrainConfig { batch: BatchMode::MiniBatch(0), ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn separates_blobs_and_builds_gram_once() {
        let data = blobs();
        let hp = Hyperparams::uniform(1.0, 2, 0.0);
        let before = gram_builds_on_this_thread();
        let model = fit(&data, &hp, &TrainConfig::default()).unwrap();
        assert_eq!(gram_builds_on_this_thread() - before, 1);
        let p = &model.params;
        for (i, row) in data.x().rows().into_iter().enumerate() {
            let s = p.general_score(row);
            assert_eq!(s > 0.0, data.y()[i] > 0.0, "row {i} score {s}");
        }
        assert!(model.best_loss() <= model.loss_trace[0]);
        assert!(model.iters_run <= 500);
        assert!(model.loss_trace.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn huge_ridge_shrinks_general_weights() {
        let data = blobs();
        let hp = Hyperparams {
            lambda0: 1e6,
            lambda_k: vec![1.0; 2],
            mu: 0.0,
        };
        let model = fit(&data, &hp, &TrainConfig::default()).unwrap();
        assert!(model.params.w0.dot(&model.params.w0).sqrt() < 1e-3);
    }

    #[test]
    fn divergence_is_reported() {
        let data = blobs();
        let hp = Hyperparams::uniform(1.0, 2, 1.0);
        let cfg = TrainConfig {
            step_size: Some(1e3),
            step_decay: StepDecay::Fixed,
            ..TrainConfig::default()
        };
        let err = fit(&data, &hp, &cfg).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn minibatch_of_everything_matches_full_batch() {
        let data = blobs();
        let hp = Hyperparams::uniform(0.5, 2, 0.1);
        let cfg = TrainConfig {
            max_iters: 60,
            ..TrainConfig::default()
        };
        let full = fit(&data, &hp, &cfg).unwrap();
        let mini = fit_minibatch(&data, &hp, &cfg, data.n()).unwrap();
        assert_eq!(full, mini);
        assert!(fit_minibatch(&data, &hp, &cfg, data.n() + 1).is_err());
    }

    #[test]
    fn minibatch_is_deterministic() {
        let data = blobs();
        let hp = Hyperparams::uniform(0.5, 2, 0.1);
        let cfg = TrainConfig {
            max_iters: 40,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = fit_minibatch(&data, &hp, &cfg, 4).unwrap();
        let b = fit_minibatch(&data, &hp, &cfg, 4).unwrap();
        assert_eq!(a, b);
    }
}
