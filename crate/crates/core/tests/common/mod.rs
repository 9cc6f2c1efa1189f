#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rareclass::objective::{BoundData, ModelParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random rows, roughly half majority, every subclass present at least once.
pub fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> BoundData<f64> {
    assert!(n >= 2 * k);
    let x = normal_matrix(rng, n, d, 1.0);
    let sub: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if i < k {
                Some(i + 1)
            } else if rng.random_bool(0.5) {
                Some(rng.random_range(1..=k))
            } else {
                None
            }
        })
        .collect();
    BoundData::new(x, &sub, k).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, d: usize, k: usize, scale: f64) -> ModelParams<f64> {
    ModelParams {
        w0: normal_vector(rng, d, scale),
        b0: scale * rng.sample::<f64, _>(StandardNormal),
        w: normal_matrix(rng, k, d, scale),
        b: normal_vector(rng, k, scale),
    }
}

/// Smallest distance of any hinge margin `y * score` from the kink at 1.
pub fn kink_distance(p: &ModelParams<f64>, data: &BoundData<f64>) -> f64 {
    let mut best = f64::INFINITY;
    let s0 = data.x().dot(&p.w0) + p.b0;
    for (s, y) in s0.iter().zip(data.y()) {
        best = best.min((y * s - 1.0).abs());
    }
    for k in 1..=data.k() {
        let s = data.rare().dot(&p.wk(k)) + p.b[k - 1];
        for (s, y) in s.iter().zip(data.y_k(k)) {
            best = best.min((y * s - 1.0).abs());
        }
    }
    best
}

/// Flattens `(w0, w1, .., wK)` in the Hessian's block order.
pub fn flatten_weights(p: &ModelParams<f64>) -> Vec<f64> {
    p.w0.iter().chain(p.w.iter()).copied().collect()
}

pub fn set_weight(p: &mut ModelParams<f64>, idx: usize, v: f64) {
    let d = p.dim();
    if idx < d {
        p.w0[idx] = v;
    } else {
        let j = idx - d;
        p.w[(j / d, j % d)] = v;
    }
}

/// Binds a numeric synthetic corpus directly (no featurizer), all rows.
pub fn bind_synthetic(cfg: &rareclass::dataset::SyntheticConfig) -> BoundData<f64> {
    let c = rareclass::dataset::gen_synthetic(cfg).unwrap();
    let x = Array2::from_shape_fn((c.len(), cfg.d), |(i, j)| c.docs()[i].features.as_ref().unwrap()[j]);
    let sub: Vec<_> = c.docs().iter().map(|d| d.subclass).collect();
    BoundData::new(x, &sub, cfg.k_total).unwrap()
}

/// Every informative column (the shared axis and one per subclass) has a
/// near-duplicate in an otherwise unused column.
pub fn collinear_fixture(seed: u64) -> rareclass::dataset::SyntheticConfig {
    rareclass::dataset::SyntheticConfig {
        d: 10,
        k_total: 4,
        docs_per_subclass: 50,
        majority_docs: 200,
        subclass_separation: 6.0,
        noise_scale: 1.0,
        collinearity_groups: (0..5).map(|c| vec![c, c + 5]).collect(),
        seed,
    }
}

/// Two subclasses on either side of the shared axis, in the plane.
pub fn separable_plane(seed: u64) -> rareclass::dataset::SyntheticConfig {
    rareclass::dataset::SyntheticConfig {
        d: 2,
        k_total: 2,
        docs_per_subclass: 60,
        majority_docs: 120,
        subclass_separation: 8.0,
        noise_scale: 0.5,
        collinearity_groups: vec![],
        seed,
    }
}

pub fn mean_abs_cosine(p: &ModelParams<f64>) -> f64 {
    let n0 = p.w0.dot(&p.w0).sqrt();
    let total: f64 = (1..=p.k())
        .map(|k| {
            let w = p.wk(k);
            (p.w0.dot(&w) / (n0 * w.dot(&w).sqrt())).abs()
        })
        .sum();
    total / p.k() as f64
}

/// Joint fit vs one fit per block at μ = 0: largest per-iterate parameter gap.
pub fn decoupling_gap(data: &BoundData<f64>, lambda: f64, iters: usize) -> f64 {
    use rareclass::objective::{Block, GramCache, Hyperparams, Objective};
    use rareclass::trainer::{StepDecay, TrainConfig, Trainer};
    let k = data.k();
    let hp = Hyperparams {
        lambda0: lambda,
        lambda_k: (0..k).map(|i| lambda * (1.0 + i as f64)).collect(),
        mu: 0.0,
    };
    let gram = GramCache::squared(data.x());
    let obj = Objective::new(data, &hp, &gram).unwrap();
    let cfg = TrainConfig {
        max_iters: iters,
        step_size: Some(1e-3),
        step_decay: StepDecay::InvSqrt,
        tol: f64::MIN_POSITIVE,
        ..TrainConfig::default()
    };
    let mut joint = Vec::new();
    Trainer::new(obj, &cfg).unwrap().run_observed(|_, p| joint.push(p.clone())).unwrap();
    let mut gap = 0.0f64;
    let blocks: Vec<Block> = std::iter::once(Block::General).chain((1..=k).map(Block::Subclass)).collect();
    for block in blocks {
        let mut solo = Vec::new();
        Trainer::new(obj, &cfg)
            .unwrap()
            .only(&[block])
            .run_observed(|_, p| solo.push(p.clone()))
            .unwrap();
        assert_eq!(solo.len(), joint.len());
        for (a, b) in joint.iter().zip(&solo) {
            let diff = match block {
                Block::General => (&a.w0 - &b.w0)
                    .iter()
                    .fold((a.b0 - b.b0).abs(), |m, v| m.max(v.abs())),
                Block::Subclass(k) => (&a.wk(k) - &b.wk(k))
                    .iter()
                    .fold((a.b[k - 1] - b.b[k - 1]).abs(), |m, v| m.max(v.abs())),
            };
            gap = gap.max(diff);
        }
    }
    gap
}

/// Random binary cover instance: `k` subclasses of 1..=4 docs, majority docs up to
/// the `max_docs` total, occurrence probability `density`.
pub fn random_program(
    rng: &mut ChaCha8Rng,
    d: usize,
    k: usize,
    max_docs: usize,
    density: f64,
) -> rareclass::coverage::CoverProgram {
    let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..=4)).collect();
    let mut draw = |rows: usize| Array2::from_shape_fn((rows, d), |_| u8::from(rng.random_bool(density)));
    let rare: Vec<Array2<u8>> = sizes.iter().map(|&n| draw(n)).collect();
    let used: usize = sizes.iter().sum();
    let majority = draw(max_docs.saturating_sub(used).min(6));
    let terms = (0..d).map(|j| format!("w{j}")).collect();
    rareclass::coverage::CoverProgram::new(rare, majority, terms).unwrap()
}

/// Objective of a word assignment computed straight from the constraint families:
/// |v0| + Σ|vk| + exonerations + majority matches of v0 + cross-subclass matches of the vk.
pub fn assignment_objective(p: &rareclass::coverage::CoverProgram, assign: &[Option<usize>]) -> usize {
    let k = p.k();
    let words = assign.iter().filter(|a| a.is_some()).count();
    let in_set = |j: usize, s: usize| assign[j] == Some(s);
    let mut exonerated = 0;
    let mut beta = 0;
    for kk in 1..=k {
        for row in p.rare_block(kk).rows() {
            let hit = |s: usize| (0..p.d()).any(|j| row[j] == 1 && in_set(j, s));
            exonerated += usize::from(!hit(0)) + usize::from(!hit(kk));
            for other in (1..=k).filter(|&o| o != kk) {
                beta += (0..p.d()).filter(|&j| row[j] == 1 && in_set(j, other)).count();
            }
        }
    }
    let alpha: usize = p
        .majority()
        .rows()
        .into_iter()
        .map(|row| (0..p.d()).filter(|&j| row[j] == 1 && in_set(j, 0)).count())
        .sum();
    words + exonerated + alpha + beta
}

/// Minimum objective over all (K+2)^d assignments, by plain odometer enumeration
/// with per-word costs and per-set coverage counts updated incrementally.
pub fn enumerate_optimum(p: &rareclass::coverage::CoverProgram) -> usize {
    let (d, k) = (p.d(), p.k());
    let options = k + 2; // 0 = unused, 1 = v0, 1 + s = v_s
    // docs of each set as (block, row): set 0 spans all rare docs
    let mut members: Vec<Vec<Vec<u8>>> = vec![Vec::new(); k + 1];
    for kk in 1..=k {
        for row in p.rare_block(kk).rows() {
            members[0].push(row.to_vec());
            members[kk].push(row.to_vec());
        }
    }
    let word_cost = |j: usize, s: usize| -> usize {
        if s == 0 {
            1 + p.majority().column(j).iter().map(|&v| v as usize).sum::<usize>()
        } else {
            1 + (1..=k)
                .filter(|&o| o != s)
                .map(|o| p.rare_block(o).column(j).iter().map(|&v| v as usize).sum::<usize>())
                .sum::<usize>()
        }
    };
    let costs: Vec<Vec<usize>> = (0..d).map(|j| (0..=k).map(|s| word_cost(j, s)).collect()).collect();
    let mut counts: Vec<Vec<u32>> = members.iter().map(|m| vec![0; m.len()]).collect();
    let mut digits = vec![0usize; d];
    let mut cost = 0usize;
    let mut best = usize::MAX;
    let apply = |counts: &mut Vec<Vec<u32>>, j: usize, s: usize, add: bool| {
        for (i, row) in members[s].iter().enumerate() {
            if row[j] == 1 {
                if add {
                    counts[s][i] += 1;
                } else {
                    counts[s][i] -= 1;
                }
            }
        }
    };
    loop {
        let uncovered: usize = counts.iter().map(|c| c.iter().filter(|&&v| v == 0).count()).sum();
        best = best.min(cost + uncovered);
        // advance the odometer
        let mut j = 0;
        loop {
            if j == d {
                return best;
            }
            let old = digits[j];
            if old > 0 {
                apply(&mut counts, j, old - 1, false);
                cost -= costs[j][old - 1];
            }
            let new = (old + 1) % options;
            digits[j] = new;
            if new > 0 {
                apply(&mut counts, j, new - 1, true);
                cost += costs[j][new - 1];
                break;
            }
            j += 1;
        }
    }
}

/// Independent feasibility check of every constraint family, returning the recomputed objective.
pub fn verify_solution(p: &rareclass::coverage::CoverProgram, sol: &rareclass::coverage::CoverSolution) -> usize {
    let mut seen = std::collections::HashSet::new();
    for &j in sol.v0.iter().chain(sol.v.iter().flatten()) {
        assert!(seen.insert(j), "word {j} in two sets");
    }
    let assign = sol.assignment(p.d());
    let objective = assignment_objective(p, &assign);
    assert_eq!(objective, sol.objective, "reported objective differs from recount");
    let exon = sol.z0.len() + sol.z.iter().map(Vec::len).sum::<usize>();
    assert_eq!(exon, sol.o);
    objective
}
