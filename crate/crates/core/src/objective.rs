//! Joint loss of the general classifier `f0` and the `K` specialized classifiers.
//!
//! ```text
//! L = Σ_i hinge(y_i (w0·x_i + b0)) + λ0/2 |w0|²
//!   + Σ_k [ Σ_{i ∈ rare} hinge(y_ki (w_k·x_i + b_k)) + λ_k/2 |w_k|² ]
//!   + μ/2 Σ_{p,q} { ½ w0p² w0q² + ½ Σ_k w_kp² w_kq² + w0p² Σ_k w_kq² } (x_[p]·x_[q])²
//! ```
//!
//! The last line penalizes each model loading on mutually correlated features
//! (self-correlation) and the general classifier loading on features correlated
//! with any specialized classifier's features (cross-correlation). The squared
//! Gram matrix `(XᵀX)⊙(XᵀX)` is the only place the full data enters the penalty;
//! it is computed once per feature matrix and cached in [`GramCache`].

use std::cell::Cell;
use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weights and biases of `f0` and `f1..fK`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub w0: Array1<T>,
    pub b0: T,
    /// `K x d`; row `k - 1` is `w_k`.
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(d: usize, k: usize) -> Self {
        ModelParams {
            w0: Array1::zeros(d),
            b0: T::zero(),
            w: Array2::zeros((k, d)),
            b: Array1::zeros(k),
        }
    }

    pub fn dim(&self) -> usize {
        self.w0.len()
    }

    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    pub fn wk(&self, k: usize) -> ArrayView1<'_, T> {
        self.w.row(k - 1)
    }

    pub fn is_finite(&self) -> bool {
        self.w0.iter().chain(self.w.iter()).chain(self.b.iter()).all(|v| v.is_finite())
            && self.b0.is_finite()
    }

    /// `self + scale * other`, elementwise over every block.
    pub fn axpy(&self, scale: T, other: &Self) -> Self {
        ModelParams {
            w0: &self.w0 + &(&other.w0 * scale),
            b0: self.b0 + scale * other.b0,
            w: &self.w + &(&other.w * scale),
            b: &self.b + &(&other.b * scale),
        }
    }

    pub fn norm_sq(&self) -> T {
        self.w0.dot(&self.w0)
            + self.b0 * self.b0
            + self.w.iter().map(|&v| v * v).sum::<T>()
            + self.b.dot(&self.b)
    }

    /// General-classifier score `w0·x + b0`.
    pub fn general_score(&self, x: ArrayView1<T>) -> T {
        self.w0.dot(&x) + self.b0
    }

    /// Specialized-classifier scores `w_k·x + b_k` for every `k`.
    pub fn subclass_scores(&self, x: ArrayView1<T>) -> Array1<T> {
        self.w.dot(&x) + &self.b
    }

    fn check(&self, d: usize, k: usize) -> Result<()> {
        if self.w0.len() != d || self.w.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: if self.w0.len() != d { self.w0.len() } else { self.w.ncols() },
            });
        }
        if self.w.nrows() != k || self.b.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: if self.w.nrows() != k { self.w.nrows() } else { self.b.len() },
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams<T> {
    pub lambda0: T,
    pub lambda_k: Vec<T>,
    pub mu: T,
}

impl<T: Scalar> Hyperparams<T> {
    /// Same ridge weight for the general and every specialized classifier.
    pub fn uniform(lambda: T, k: usize, mu: T) -> Self {
        Hyperparams {
            lambda0: lambda,
            lambda_k: vec![lambda; k],
            mu,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.lambda_k.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: self.lambda_k.len(),
            });
        }
        let ok = |v: T| v.is_finite() && v >= T::zero();
        if !ok(self.lambda0) || !ok(self.mu) || !self.lambda_k.iter().all(|&v| ok(v)) {
            return Err(Error::InvalidArgument(
                "regularization weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Which classifier a block of parameters belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    General,
    /// 1-based subclass id.
    Subclass(usize),
}

/// Training data bound to the objective: all rows for `f0`, rare rows for the `f_k`.
#[derive(Clone, Debug)]
pub struct BoundData<T> {
    x: Array2<T>,
    y: Array1<T>,
    rare_rows: Vec<usize>,
    r: Array2<T>,
    /// `K x n0`, ±1.
    y_k: Array2<T>,
}

impl<T: Scalar> BoundData<T> {
    /// `subclass[i]` is `Some(k)` (1-based) for rare rows and `None` for majority rows.
    pub fn new(x: Array2<T>, subclass: &[Option<usize>], k: usize) -> Result<Self> {
        let n = x.nrows();
        if subclass.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: subclass.len(),
            });
        }
        if n == 0 || x.ncols() == 0 {
            return Err(Error::InvalidArgument("empty training matrix".into()));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("need at least one subclass".into()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        if let Some(bad) = subclass.iter().flatten().find(|&&s| s == 0 || s > k) {
            return Err(Error::InvalidArgument(format!("subclass {bad} outside 1..={k}")));
        }
        let rare_rows: Vec<usize> = (0..n).filter(|&i| subclass[i].is_some()).collect();
        if rare_rows.is_empty() {
            return Err(Error::InvalidArgument("no rare rows".into()));
        }
        let y = subclass
            .iter()
            .map(|s| if s.is_some() { T::one() } else { -T::one() })
            .collect();
        let r = x.select(Axis(0), &rare_rows);
        let y_k = Array2::from_shape_fn((k, rare_rows.len()), |(kk, j)| {
            if subclass[rare_rows[j]] == Some(kk + 1) {
                T::one()
            } else {
                -T::one()
            }
        });
        Ok(BoundData {
            x,
            y,
            rare_rows,
            r,
            y_k,
        })
    }

    pub fn x(&self) -> ArrayView2<'_, T> {
        self.x.view()
    }

    /// ±1 rare-vs-majority labels over all rows.
    pub fn y(&self) -> ArrayView1<'_, T> {
        self.y.view()
    }

    /// Rare rows `R` (`n0 x d`).
    pub fn rare(&self) -> ArrayView2<'_, T> {
        self.r.view()
    }

    pub fn rare_rows(&self) -> &[usize] {
        &self.rare_rows
    }

    /// ±1 labels of subclass `k` over the rare rows.
    pub fn y_k(&self, k: usize) -> ArrayView1<'_, T> {
        self.y_k.row(k - 1)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_rare(&self) -> usize {
        self.r.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn k(&self) -> usize {
        self.y_k.nrows()
    }
}

thread_local! {
    static GRAM_BUILDS: Cell<usize> = const { Cell::new(0) };
}

/// Number of squared-Gram computations performed on the calling thread so far.
pub fn gram_builds_on_this_thread() -> usize {
    GRAM_BUILDS.with(Cell::get)
}

/// Hash of the shape and bit patterns of a feature matrix.
pub fn fingerprint<T: Scalar>(x: ArrayView2<T>) -> u64 {
    let mut h = DefaultHasher::new();
    h.write_usize(x.nrows());
    h.write_usize(x.ncols());
    for v in x.iter() {
        h.write_u64(v.as_f64().to_bits());
    }
    h.finish()
}

#[derive(Clone, Debug)]
enum GramKind<T> {
    Full(Array2<T>),
    /// Orthogonal features: the correlation factor is dropped, only `p == q` terms remain.
    Identity(usize),
}

/// Cached `(XᵀX) ⊙ (XᵀX)`.
#[derive(Clone, Debug)]
pub struct GramCache<T> {
    kind: GramKind<T>,
    fingerprint: u64,
}

impl<T: Scalar> GramCache<T> {
    /// Computes `g2[p][q] = (x_[p]·x_[q])²`, O(n d²).
    pub fn squared(x: ArrayView2<T>) -> Self {
        GRAM_BUILDS.with(|c| c.set(c.get() + 1));
        let mut g = x.t().dot(&x);
        let d = g.nrows();
        for p in 0..d {
            for q in p..d {
                let v = g[(p, q)] * g[(p, q)];
                g[(p, q)] = v;
                g[(q, p)] = v;
            }
        }
        GramCache {
            kind: GramKind::Full(g),
            fingerprint: fingerprint(x),
        }
    }

    /// Identity stand-in used for decorrelated (PCA) features.
    pub fn identity(x: ArrayView2<T>) -> Self {
        GramCache {
            kind: GramKind::Identity(x.ncols()),
            fingerprint: fingerprint(x),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            GramKind::Full(g) => g.nrows(),
            GramKind::Identity(d) => *d,
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, GramKind::Identity(_))
    }

    pub fn get(&self, p: usize, q: usize) -> T {
        match &self.kind {
            GramKind::Full(g) => g[(p, q)],
            GramKind::Identity(_) => {
                if p == q {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Dense `d x d` matrix.
    pub fn to_dense(&self) -> Array2<T> {
        match &self.kind {
            GramKind::Full(g) => g.clone(),
            GramKind::Identity(d) => Array2::eye(*d),
        }
    }

    pub fn max_diagonal(&self) -> T {
        (0..self.dim()).map(|p| self.get(p, p)).fold(T::zero(), T::max)
    }

    /// `G² v`.
    pub fn apply(&self, v: ArrayView1<T>) -> Array1<T> {
        match &self.kind {
            GramKind::Full(g) => g.dot(&v),
            GramKind::Identity(_) => v.to_owned(),
        }
    }

    fn check(&self, x: ArrayView2<T>) -> Result<()> {
        if self.dim() != x.ncols() {
            return Err(Error::Dimension {
                expected: x.ncols(),
                got: self.dim(),
            });
        }
        let actual = fingerprint(x);
        if actual != self.fingerprint {
            return Err(Error::StaleGram {
                cached: self.fingerprint,
                actual,
            });
        }
        Ok(())
    }
}

/// Free-function form of [`GramCache::squared`].
pub fn gram_squared<T: Scalar>(x: ArrayView2<T>) -> GramCache<T> {
    GramCache::squared(x)
}

/// `Σ max(0, 1 - y s)`.
pub fn hinge<T: Scalar>(scores: ArrayView1<T>, labels: ArrayView1<T>) -> T {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    scores
        .iter()
        .zip(labels.iter())
        .map(|(&s, &y)| (T::one() - y * s).max(T::zero()))
        .sum()
}

/// Hinge subgradient w.r.t. the scores, scaled: `-scale * y_i` where the margin
/// is violated (`1 - y s > 0`), 0 otherwise (including exactly at the kink).
fn hinge_coefficients<T: Scalar>(scores: &Array1<T>, labels: ArrayView1<T>, scale: T) -> Array1<T> {
    scores
        .iter()
        .zip(labels.iter())
        .map(|(&s, &y)| {
            if T::one() - y * s > T::zero() {
                -y * scale
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Correlation penalty of the second line of the loss.
pub fn penalty<T: Scalar>(params: &ModelParams<T>, gram: &GramCache<T>, mu: T) -> T {
    let half = T::of(0.5);
    let a = params.w0.mapv(|v| v * v);
    let ga = gram.apply(a.view());
    let mut total = half * a.dot(&ga);
    let mut b_sum = Array1::zeros(params.dim());
    for wk in params.w.rows() {
        let bk = wk.mapv(|v| v * v);
        total = total + half * bk.dot(&gram.apply(bk.view()));
        b_sum += &bk;
    }
    total = total + ga.dot(&b_sum);
    half * mu * total
}

/// Row subsets and rescaling for mini-batch hinge estimates.
#[derive(Clone, Debug, Default)]
pub struct Batch<'b, T> {
    /// Rows of `X` for the general classifier (`None` = all).
    pub general_rows: Option<&'b [usize]>,
    /// Positions within the rare rows for the specialized classifiers (`None` = all).
    pub rare_rows: Option<&'b [usize]>,
    pub general_scale: Option<T>,
    pub rare_scale: Option<T>,
}

/// The loss bound to data, regularization and a verified Gram cache.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a, T> {
    data: &'a BoundData<T>,
    hp: &'a Hyperparams<T>,
    gram: &'a GramCache<T>,
}

impl<'a, T: Scalar> Objective<'a, T> {
    pub fn new(data: &'a BoundData<T>, hp: &'a Hyperparams<T>, gram: &'a GramCache<T>) -> Result<Self> {
        hp.validate(data.k())?;
        gram.check(data.x())?;
        Ok(Objective { data, hp, gram })
    }

    pub fn data(&self) -> &'a BoundData<T> {
        self.data
    }

    pub fn hyperparams(&self) -> &'a Hyperparams<T> {
        self.hp
    }

    pub fn gram(&self) -> &'a GramCache<T> {
        self.gram
    }

    pub fn check_params(&self, p: &ModelParams<T>) -> Result<()> {
        p.check(self.data.d(), self.data.k())
    }

    /// Hinge plus ridge for one block (its share of the first line of the loss).
    pub fn block_data_loss(&self, p: &ModelParams<T>, block: Block) -> T {
        let half = T::of(0.5);
        match block {
            Block::General => {
                let s = self.data.x.dot(&p.w0) + p.b0;
                hinge(s.view(), self.data.y()) + half * self.hp.lambda0 * p.w0.dot(&p.w0)
            }
            Block::Subclass(k) => {
                let wk = p.wk(k);
                let s = self.data.r.dot(&wk) + p.b[k - 1];
                hinge(s.view(), self.data.y_k(k)) + half * self.hp.lambda_k[k - 1] * wk.dot(&wk)
            }
        }
    }

    /// Full loss.
    pub fn loss(&self, p: &ModelParams<T>) -> T {
        let mut total = self.block_data_loss(p, Block::General);
        for k in 1..=self.data.k() {
            total = total + self.block_data_loss(p, Block::Subclass(k));
        }
        total + penalty(p, self.gram, self.hp.mu)
    }

    /// Loss restricted to the given blocks; the penalty is included only when every
    /// block is present (it couples them).
    pub fn partial_loss(&self, p: &ModelParams<T>, blocks: &[Block]) -> T {
        if blocks.len() == self.data.k() + 1 {
            return self.loss(p);
        }
        blocks
            .iter()
            .map(|&b| self.block_data_loss(p, b))
            .fold(T::zero(), |a, b| a + b)
    }

    /// Upper estimate of the largest coordinate-wise curvature of the ridge and
    /// penalty terms at `p`: `max λ + 3μ max_p (G² (w0² + Σ_k w_k²))_p`.
    pub fn curvature_bound(&self, p: &ModelParams<T>) -> T {
        let lambda = self
            .hp
            .lambda_k
            .iter()
            .fold(self.hp.lambda0, |m, &l| if l > m { l } else { m });
        if self.hp.mu == T::zero() {
            return lambda;
        }
        let coupled = self.gram.apply(squares_total(p).view());
        let top = coupled.iter().fold(T::zero(), |m, &v| if v > m { v } else { m });
        lambda + T::of(3.0) * self.hp.mu * top
    }

    fn general_hinge_part(&self, p: &ModelParams<T>, batch: &Batch<T>) -> (Array1<T>, T) {
        let scale = batch.general_scale.unwrap_or_else(T::one);
        let (x, y) = match batch.general_rows {
            None => (self.data.x.view().to_shared(), self.data.y.view().to_shared()),
            Some(rows) => (
                self.data.x.select(Axis(0), rows).into_shared(),
                self.data.y.select(Axis(0), rows).into_shared(),
            ),
        };
        let scores = x.dot(&p.w0) + p.b0;
        let c = hinge_coefficients(&scores, y.view(), scale);
        (x.t().dot(&c), c.sum())
    }

    fn subclass_hinge_part(&self, p: &ModelParams<T>, k: usize, batch: &Batch<T>) -> (Array1<T>, T) {
        let scale = batch.rare_scale.unwrap_or_else(T::one);
        let (r, y) = match batch.rare_rows {
            None => (self.data.r.view().to_shared(), self.data.y_k(k).to_shared()),
            Some(rows) => (
                self.data.r.select(Axis(0), rows).into_shared(),
                self.data.y_k(k).select(Axis(0), rows).into_shared(),
            ),
        };
        let scores = r.dot(&p.wk(k)) + p.b[k - 1];
        let c = hinge_coefficients(&scores, y.view(), scale);
        (r.t().dot(&c), c.sum())
    }

    /// Gradient w.r.t. `w0`:
    /// `Xᵀ(-y ⊙ 1[1 - y⊙(Xw0 + b0) > 0]) + w0 ⊙ (λ0 + μ G² (Σ_k w_k² + w0²))`.
    pub fn grad_w0(&self, p: &ModelParams<T>) -> Array1<T> {
        self.block_gradient(p, Block::General, &Batch::default()).0
    }

    /// Gradient w.r.t. `w_k`:
    /// `Rᵀ(-y_k ⊙ 1[1 - y_k⊙(R w_k + b_k) > 0]) + w_k ⊙ (λ_k + μ G² (w_k² + w0²))`.
    pub fn grad_wk(&self, p: &ModelParams<T>, k: usize) -> Array1<T> {
        self.block_gradient(p, Block::Subclass(k), &Batch::default()).0
    }

    /// Subgradient w.r.t. the bias of a block: `-Σ y_i` over violated margins.
    pub fn grad_bias(&self, p: &ModelParams<T>, block: Block) -> T {
        self.block_gradient(p, block, &Batch::default()).1
    }

    /// Weight and bias gradient of one block, optionally from a mini-batch.
    pub fn block_gradient(&self, p: &ModelParams<T>, block: Block, batch: &Batch<T>) -> (Array1<T>, T) {
        match block {
            Block::General => {
                let (hinge_w, hinge_b) = self.general_hinge_part(p, batch);
                let coupled = self.gram.apply(squares_total(p).view());
                let shrink = coupled.mapv(|v| self.hp.lambda0 + self.hp.mu * v);
                (hinge_w + &(&p.w0 * &shrink), hinge_b)
            }
            Block::Subclass(k) => {
                let (hinge_w, hinge_b) = self.subclass_hinge_part(p, k, batch);
                let wk = p.wk(k);
                let sq = wk.mapv(|v| v * v) + &p.w0.mapv(|v| v * v);
                let coupled = self.gram.apply(sq.view());
                let lambda = self.hp.lambda_k[k - 1];
                let shrink = coupled.mapv(|v| lambda + self.hp.mu * v);
                (hinge_w + &(&wk * &shrink), hinge_b)
            }
        }
    }

    /// Gradient over every block, packed like the parameters.
    pub fn gradient(&self, p: &ModelParams<T>, batch: &Batch<T>) -> ModelParams<T> {
        let mut g = ModelParams::zeros(self.data.d(), self.data.k());
        self.gradient_into(p, batch, &mut g, None);
        g
    }

    /// Gradient restricted to `blocks` (others left at zero) written into `out`.
    pub fn gradient_into(
        &self,
        p: &ModelParams<T>,
        batch: &Batch<T>,
        out: &mut ModelParams<T>,
        blocks: Option<&[Block]>,
    ) {
        let all: Vec<Block> = std::iter::once(Block::General)
            .chain((1..=self.data.k()).map(Block::Subclass))
            .collect();
        for &block in blocks.unwrap_or(&all) {
            let (gw, gb) = self.block_gradient(p, block, batch);
            match block {
                Block::General => {
                    out.w0 = gw;
                    out.b0 = gb;
                }
                Block::Subclass(k) => {
                    out.w.row_mut(k - 1).assign(&gw);
                    out.b[k - 1] = gb;
                }
            }
        }
    }
}

/// Loss at `params`; fails when dimensions disagree or the cache is stale.
pub fn total_loss<T: Scalar>(
    params: &ModelParams<T>,
    data: &BoundData<T>,
    hp: &Hyperparams<T>,
    gram: &GramCache<T>,
) -> Result<T> {
    let obj = Objective::new(data, hp, gram)?;
    obj.check_params(params)?;
    Ok(obj.loss(params))
}

pub fn grad_w0<T: Scalar>(
    params: &ModelParams<T>,
    data: &BoundData<T>,
    hp: &Hyperparams<T>,
    gram: &GramCache<T>,
) -> Result<Array1<T>> {
    let obj = Objective::new(data, hp, gram)?;
    obj.check_params(params)?;
    Ok(obj.grad_w0(params))
}

pub fn grad_wk<T: Scalar>(
    k: usize,
    params: &ModelParams<T>,
    data: &BoundData<T>,
    hp: &Hyperparams<T>,
    gram: &GramCache<T>,
) -> Result<Array1<T>> {
    if k == 0 || k > data.k() {
        return Err(Error::InvalidArgument(format!(
            "subclass {k} outside 1..={}",
            data.k()
        )));
    }
    let obj = Objective::new(data, hp, gram)?;
    obj.check_params(params)?;
    Ok(obj.grad_wk(params, k))
}

/// Bias subgradient; biases are not regularized, so only the data enters.
pub fn grad_bias<T: Scalar>(block: Block, params: &ModelParams<T>, data: &BoundData<T>) -> Result<T> {
    params.check(data.d(), data.k())?;
    let (scores, labels) = match block {
        Block::General => (data.x.dot(&params.w0) + params.b0, data.y()),
        Block::Subclass(k) if (1..=data.k()).contains(&k) => {
            (data.r.dot(&params.wk(k)) + params.b[k - 1], data.y_k(k))
        }
        Block::Subclass(k) => {
            return Err(Error::InvalidArgument(format!(
                "subclass {k} outside 1..={}",
                data.k()
            )))
        }
    };
    Ok(hinge_coefficients(&scores, labels, T::one()).sum())
}

/// Largest Hessian that [`penalty_hessian`] will assemble (rows = `d (K + 1)`).
pub const HESSIAN_SIZE_CAP: usize = 200;

/// Hessian of the correlation penalty over `(w0, w1, .., wK)`.
///
/// `H = 2μ (H1 + H2)`: `H1` holds `w_a w_bᵀ ⊙ G²` on the diagonal blocks and on
/// the row/column of block 0, zeros between distinct specialized blocks; `H2` is
/// diagonal with `v(0)_p = ½ Σ_q (w0q² + Σ_k w_kq²) G²_pq` and
/// `v(k)_p = ½ Σ_q (w0q² + w_kq²) G²_pq`.
pub fn penalty_hessian<T: Scalar>(params: &ModelParams<T>, gram: &GramCache<T>, mu: T) -> Result<Array2<T>> {
    let d = params.dim();
    let k = params.k();
    let size = d * (k + 1);
    if size > HESSIAN_SIZE_CAP {
        return Err(Error::TooLarge(format!(
            "hessian of size {size} exceeds cap {HESSIAN_SIZE_CAP}"
        )));
    }
    if gram.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: gram.dim(),
        });
    }
    let half = T::of(0.5);
    let two_mu = T::of(2.0) * mu;
    let weights: Vec<ArrayView1<T>> = std::iter::once(params.w0.view())
        .chain(params.w.rows())
        .collect();
    let w0_sq = params.w0.mapv(|v| v * v);
    let mut h = Array2::zeros((size, size));

    let outer_block = |h: &mut Array2<T>, a: usize, b: usize| {
        for p in 0..d {
            for q in 0..d {
                h[(a * d + p, b * d + q)] = two_mu * weights[a][p] * weights[b][q] * gram.get(p, q);
            }
        }
    };
    for blk in 0..=k {
        outer_block(&mut h, blk, blk);
        if blk > 0 {
            outer_block(&mut h, 0, blk);
            outer_block(&mut h, blk, 0);
        }
    }

    let diag_weights: Vec<Array1<T>> = std::iter::once(squares_total(params))
        .chain(params.w.rows().into_iter().map(|wk| wk.mapv(|v| v * v) + &w0_sq))
        .collect();
    for (blk, sq) in diag_weights.iter().enumerate() {
        let v = gram.apply(sq.view());
        for p in 0..d {
            let i = blk * d + p;
            h[(i, i)] = h[(i, i)] + two_mu * half * v[p];
        }
    }
    Ok(h)
}

/// `Σ_k w_k² + w0²`, the vector the general classifier's penalty gradient multiplies.
fn squares_total<T: Scalar>(p: &ModelParams<T>) -> Array1<T> {
    let mut s = p.w0.mapv(|v| v * v);
    for wk in p.w.rows() {
        s.zip_mut_with(&wk, |acc, &v| *acc = *acc + v * v);
    }
    s
}
