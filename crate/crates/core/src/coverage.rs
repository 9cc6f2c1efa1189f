//! Word-cover analysis: can each rare subclass be explained by its own small
//! set of words that rarely occur elsewhere?
//!
//! The program picks disjoint word sets `v0` (all rare docs vs. majority) and
//! `v1..vK` (one per subclass), paying one unit per chosen word, per
//! exonerated (uncovered) document, and per cross-coverage match:
//!
//! ```text
//! min |v0| + Σ|vk| + o + α + β
//! ```
//!
//! with `α` the (doc, word) matches of `v0` in majority documents and `β` the
//! matches of each `vk` in rare documents of other subclasses. `o`, `α` and `β`
//! only ever appear with positive weight, so they are set tight and the search
//! runs over word assignments alone.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, LabeledCorpus};
use crate::error::{Error, Result};
use crate::featurize::Vocabulary;

/// Binary word-occurrence matrices of a labeled corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverProgram {
    rare: Vec<Array2<u8>>,
    majority: Array2<u8>,
    terms: Vec<String>,
}

/// Per-word target documents and unit costs, indexed by set (`0` = `v0`).
struct Profile {
    /// `[word][set]` → covered target docs; set 0 indexes the concatenated rare docs.
    covers: Vec<Vec<Vec<usize>>>,
    /// `[word][set]` → `1 + cross matches`.
    cost: Vec<Vec<usize>>,
    set_sizes: Vec<usize>,
}

impl CoverProgram {
    pub fn new(rare: Vec<Array2<u8>>, majority: Array2<u8>, terms: Vec<String>) -> Result<Self> {
        let d = terms.len();
        if rare.is_empty() {
            return Err(Error::InvalidArgument("cover program needs at least one subclass".into()));
        }
        for (i, m) in rare.iter().chain(std::iter::once(&majority)).enumerate() {
            if m.ncols() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: m.ncols(),
                });
            }
            if m.iter().any(|&v| v > 1) {
                return Err(Error::InvalidArgument("occurrence matrices must be binary".into()));
            }
            if i < rare.len() && m.nrows() == 0 {
                return Err(Error::Corpus(format!("subclass {} has no documents", i + 1)));
            }
        }
        Ok(CoverProgram { rare, majority, terms })
    }

    pub fn d(&self) -> usize {
        self.terms.len()
    }

    pub fn k(&self) -> usize {
        self.rare.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// `R_k`, 1-based.
    pub fn rare_block(&self, k: usize) -> ArrayView2<'_, u8> {
        self.rare[k - 1].view()
    }

    pub fn majority(&self) -> ArrayView2<'_, u8> {
        self.majority.view()
    }

    pub fn n_k(&self, k: usize) -> usize {
        self.rare[k - 1].nrows()
    }

    pub fn n_rare(&self) -> usize {
        self.rare.iter().map(|r| r.nrows()).sum()
    }

    pub fn n_majority(&self) -> usize {
        self.majority.nrows()
    }

    /// Subclass and in-subclass row of the `i`-th concatenated rare doc.
    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (k, r) in self.rare.iter().enumerate() {
            if i < r.nrows() {
                return (k + 1, i);
            }
            i -= r.nrows();
        }
        panic!("rare doc index out of range");
    }

    fn profile(&self) -> Profile {
        let (d, k) = (self.d(), self.k());
        let mut covers = vec![vec![Vec::new(); k + 1]; d];
        let mut per_sub = vec![vec![0usize; k]; d];
        let mut offset = 0;
        for (kk, r) in self.rare.iter().enumerate() {
            for (i, row) in r.rows().into_iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if v == 1 {
                        covers[j][0].push(offset + i);
                        covers[j][kk + 1].push(i);
                        per_sub[j][kk] += 1;
                    }
                }
            }
            offset += r.nrows();
        }
        let maj: Vec<usize> = (0..d).map(|j| self.majority.column(j).iter().map(|&v| v as usize).sum()).collect();
        let cost = (0..d)
            .map(|j| {
                let rare_total: usize = per_sub[j].iter().sum();
                std::iter::once(1 + maj[j])
                    .chain((0..k).map(|kk| 1 + rare_total - per_sub[j][kk]))
                    .collect()
            })
            .collect();
        let set_sizes = std::iter::once(self.n_rare())
            .chain(self.rare.iter().map(|r| r.nrows()))
            .collect();
        Profile {
            covers,
            cost,
            set_sizes,
        }
    }

    /// Every constraint family checked against the solution's own `z`, `o`, `α`, `β`.
    pub fn check(&self, sol: &CoverSolution) -> Result<()> {
        let bad = |m: String| Err(Error::Infeasible(m));
        let k = self.k();
        if sol.v.len() != k || sol.z.len() != k {
            return bad(format!("solution has {} word sets for {k} subclasses", sol.v.len()));
        }
        let mut seen = BTreeSet::new();
        for &j in sol.v0.iter().chain(sol.v.iter().flatten()) {
            if j >= self.d() {
                return bad(format!("word {j} outside vocabulary"));
            }
            if !seen.insert(j) {
                return bad(format!("word {j} used in more than one set"));
            }
        }
        let hits = |row: ndarray::ArrayView1<u8>, set: &[usize]| -> usize { set.iter().map(|&j| row[j] as usize).sum() };
        for kk in 1..=k {
            let z: BTreeSet<_> = sol.z[kk - 1].iter().copied().collect();
            for (i, row) in self.rare_block(kk).rows().into_iter().enumerate() {
                if !z.contains(&i) && hits(row, &sol.v[kk - 1]) == 0 {
                    return bad(format!("doc {i} of subclass {kk} neither covered nor exonerated"));
                }
            }
        }
        let z0: BTreeSet<_> = sol.z0.iter().copied().collect();
        for i in 0..self.n_rare() {
            let (kk, r) = self.locate(i);
            if !z0.contains(&i) && hits(self.rare_block(kk).row(r), &sol.v0) == 0 {
                return bad(format!("rare doc {i} not covered by v0 nor exonerated"));
            }
        }
        let exonerated = sol.z0.len() + sol.z.iter().map(Vec::len).sum::<usize>();
        if exonerated > sol.o {
            return bad(format!("{exonerated} exonerations exceed o = {}", sol.o));
        }
        let alpha: usize = self.majority.rows().into_iter().map(|r| hits(r, &sol.v0)).sum();
        if alpha > sol.alpha {
            return bad(format!("v0 majority matches {alpha} exceed alpha = {}", sol.alpha));
        }
        let mut beta = 0;
        for kk in 1..=k {
            for row in self.rare_block(kk).rows() {
                beta += (1..=k).filter(|&o| o != kk).map(|o| hits(row, &sol.v[o - 1])).sum::<usize>();
            }
        }
        if beta > sol.beta {
            return bad(format!("cross-subclass matches {beta} exceed beta = {}", sol.beta));
        }
        let expected = sol.v0.len() + sol.v.iter().map(Vec::len).sum::<usize>() + sol.o + sol.alpha + sol.beta;
        if expected != sol.objective {
            return bad(format!("objective {} does not match its terms ({expected})", sol.objective));
        }
        Ok(())
    }
}

/// Binary occurrence matrices: a word covers a document iff it appears at least once.
pub fn build_program(corpus: &LabeledCorpus, vocab: &Vocabulary) -> Result<CoverProgram> {
    let d = vocab.len();
    let k = corpus.k();
    let mut rare_rows: Vec<Vec<Vec<u8>>> = vec![Vec::new(); k];
    let mut maj_rows = Vec::new();
    for doc in corpus.docs() {
        let row: Vec<u8> = vocab.counts(&doc.text).into_iter().map(|c| u8::from(c > 0)).collect();
        match (doc.label, doc.subclass) {
            (Label::Rare, Some(s)) => rare_rows[s - 1].push(row),
            _ => maj_rows.push(row),
        }
    }
    let to_matrix = |rows: Vec<Vec<u8>>| {
        let n = rows.len();
        Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).expect("rows have vocabulary width")
    };
    for (i, r) in rare_rows.iter().enumerate() {
        if r.is_empty() {
            return Err(Error::Corpus(format!("subclass {:?} has no documents", corpus.subclass_names()[i])));
        }
    }
    CoverProgram::new(
        rare_rows.into_iter().map(to_matrix).collect(),
        to_matrix(maj_rows),
        vocab.terms().to_vec(),
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverSolution {
    /// Word indices, ascending.
    pub v0: Vec<usize>,
    /// `v[k-1]` is the word set of subclass `k`.
    pub v: Vec<Vec<usize>>,
    /// Exonerated rare docs, indexed over the subclass blocks concatenated in order.
    pub z0: Vec<usize>,
    /// `z[k-1]`: exonerated docs of subclass `k` (row indices of `R_k`).
    pub z: Vec<Vec<usize>>,
    pub o: usize,
    pub alpha: usize,
    pub beta: usize,
    pub objective: usize,
    pub optimal: bool,
}

impl CoverSolution {
    /// Tight solution for a word assignment (`assign[j] = Some(0)` for `v0`,
    /// `Some(k)` for `vk`, `None` for unused).
    pub fn from_assignment(p: &CoverProgram, assign: &[Option<usize>], optimal: bool) -> Result<Self> {
        let k = p.k();
        if assign.len() != p.d() {
            return Err(Error::Dimension {
                expected: p.d(),
                got: assign.len(),
            });
        }
        if let Some(s) = assign.iter().flatten().find(|&&s| s > k) {
            return Err(Error::InvalidArgument(format!("word set {s} outside 0..={k}")));
        }
        let members = |s: usize| -> Vec<usize> { (0..p.d()).filter(|&j| assign[j] == Some(s)).collect() };
        let v0 = members(0);
        let v: Vec<Vec<usize>> = (1..=k).map(members).collect();
        let covered = |row: ndarray::ArrayView1<u8>, set: &[usize]| set.iter().any(|&j| row[j] == 1);
        let count = |row: ndarray::ArrayView1<u8>, set: &[usize]| -> usize { set.iter().map(|&j| row[j] as usize).sum() };

        let mut z0 = Vec::new();
        let mut z = vec![Vec::new(); k];
        let mut beta = 0;
        let mut offset = 0;
        for kk in 1..=k {
            for (i, row) in p.rare_block(kk).rows().into_iter().enumerate() {
                if !covered(row, &v0) {
                    z0.push(offset + i);
                }
                if !covered(row, &v[kk - 1]) {
                    z[kk - 1].push(i);
                }
                beta += (1..=k).filter(|&o| o != kk).map(|o| count(row, &v[o - 1])).sum::<usize>();
            }
            offset += p.n_k(kk);
        }
        let alpha = p.majority().rows().into_iter().map(|r| count(r, &v0)).sum();
        let o = z0.len() + z.iter().map(Vec::len).sum::<usize>();
        let objective = v0.len() + v.iter().map(Vec::len).sum::<usize>() + o + alpha + beta;
        Ok(CoverSolution {
            v0,
            v,
            z0,
            z,
            o,
            alpha,
            beta,
            objective,
            optimal,
        })
    }

    /// `Some(set)` per word, as accepted by [`CoverSolution::from_assignment`].
    pub fn assignment(&self, d: usize) -> Vec<Option<usize>> {
        let mut a = vec![None; d];
        for &j in &self.v0 {
            a[j] = Some(0);
        }
        for (k, set) in self.v.iter().enumerate() {
            for &j in set {
                a[j] = Some(k + 1);
            }
        }
        a
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactLimits {
    pub max_words: usize,
    pub max_docs: usize,
    pub time_cap: Duration,
}

impl Default for ExactLimits {
    fn default() -> Self {
        ExactLimits {
            max_words: 20,
            max_docs: 40,
            time_cap: Duration::from_secs(10),
        }
    }
}

struct Search<'a> {
    cover: Vec<Vec<u64>>,
    cost: &'a [Vec<usize>],
    full: Vec<u64>,
    /// `suffix[j][s]`: union of covers of words `j..`.
    suffix: Vec<Vec<u64>>,
    assign: Vec<Option<usize>>,
    best: usize,
    best_assign: Option<Vec<Option<usize>>>,
    deadline: Instant,
    nodes: u64,
    timed_out: bool,
}

impl Search<'_> {
    /// Lower bound on the remaining cost of set `s` once words `< j` are fixed.
    fn bound(&self, j: usize, s: usize, covered: u64) -> usize {
        let open = self.full[s] & !covered;
        if open == 0 {
            return 0;
        }
        let forced = (open & !self.suffix[j][s]).count_ones() as usize;
        let rest = open.count_ones() as usize - forced;
        if rest == 0 {
            return forced;
        }
        let widest = (j..self.cover.len())
            .map(|w| (self.cover[w][s] & open).count_ones() as usize)
            .max()
            .unwrap_or(0)
            .max(1);
        forced + rest.div_ceil(widest)
    }

    fn dfs(&mut self, j: usize, covered: &mut [u64], cost: usize) {
        self.nodes += 1;
        if self.nodes % 1024 == 0 && Instant::now() >= self.deadline {
            self.timed_out = true;
        }
        if self.timed_out {
            return;
        }
        let lb = cost + (0..covered.len()).map(|s| self.bound(j, s, covered[s])).sum::<usize>();
        if lb >= self.best {
            return;
        }
        if j == self.cover.len() {
            // at a leaf the bound is exactly the exoneration count
            self.best = lb;
            self.best_assign = Some(self.assign.clone());
            return;
        }
        for s in 0..covered.len() {
            let mask = self.cover[j][s];
            // a word that covers nothing new in its set can be dropped at a strict gain
            if mask & !covered[s] == 0 {
                continue;
            }
            let saved = covered[s];
            covered[s] |= mask;
            self.assign[j] = Some(s);
            self.dfs(j + 1, covered, cost + self.cost[j][s]);
            covered[s] = saved;
        }
        self.assign[j] = None;
        self.dfs(j + 1, covered, cost);
    }
}

/// Depth-first branch and bound over word assignments (`v0`, `v1`, .., `vK`,
/// unused, tried in that order; among equal objectives the first found wins).
pub fn solve_exact(p: &CoverProgram, limits: &ExactLimits) -> Result<CoverSolution> {
    let total_docs = p.n_rare() + p.n_majority();
    if p.d() > limits.max_words {
        return Err(Error::TooLarge(format!("{} words > {}", p.d(), limits.max_words)));
    }
    if total_docs > limits.max_docs {
        return Err(Error::TooLarge(format!("{total_docs} documents > {}", limits.max_docs)));
    }
    if p.n_rare() > 64 {
        return Err(Error::TooLarge(format!("{} rare documents > 64", p.n_rare())));
    }
    let prof = p.profile();
    let sets = p.k() + 1;
    let mask_of = |docs: &[usize]| docs.iter().fold(0u64, |m, &i| m | (1u64 << i));
    let cover: Vec<Vec<u64>> = prof.covers.iter().map(|per_set| per_set.iter().map(|d| mask_of(d)).collect()).collect();
    let full: Vec<u64> = prof
        .set_sizes
        .iter()
        .map(|&n| if n == 64 { u64::MAX } else { (1u64 << n) - 1 })
        .collect();
    let mut suffix = vec![vec![0u64; sets]; p.d() + 1];
    for j in (0..p.d()).rev() {
        for s in 0..sets {
            suffix[j][s] = suffix[j + 1][s] | cover[j][s];
        }
    }
    let incumbent = solve_greedy(p);
    let mut search = Search {
        cover,
        cost: &prof.cost,
        full,
        suffix,
        assign: vec![None; p.d()],
        // one above the heuristic so an equally good, tie-preferred assignment is still found
        best: incumbent.objective + 1,
        best_assign: None,
        deadline: Instant::now() + limits.time_cap,
        nodes: 0,
        timed_out: false,
    };
    search.dfs(0, &mut vec![0u64; sets], 0);
    let optimal = !search.timed_out;
    match search.best_assign {
        Some(a) => CoverSolution::from_assignment(p, &a, optimal),
        None => Ok(CoverSolution { optimal: false, ..incumbent }),
    }
}

/// Greedy heuristic: fill each `vk` in turn, then `v0` from the remaining words,
/// always taking the word with the largest objective decrease
/// (`newly covered − cross matches − 1`) while it is positive.
pub fn solve_greedy(p: &CoverProgram) -> CoverSolution {
    let prof = p.profile();
    let k = p.k();
    let mut assign: Vec<Option<usize>> = vec![None; p.d()];
    for s in (1..=k).chain(std::iter::once(0)) {
        let mut covered = vec![false; prof.set_sizes[s]];
        loop {
            let mut best: Option<(i64, usize)> = None;
            for j in (0..p.d()).filter(|&j| assign[j].is_none()) {
                let newly = prof.covers[j][s].iter().filter(|&&i| !covered[i]).count() as i64;
                let gain = newly - prof.cost[j][s] as i64;
                if gain > 0 && best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, j));
                }
            }
            let Some((_, j)) = best else { break };
            assign[j] = Some(s);
            for &i in &prof.covers[j][s] {
                covered[i] = true;
            }
        }
    }
    CoverSolution::from_assignment(p, &assign, false).expect("assignment built over the program")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordStat {
    pub word: String,
    /// Target documents containing the word.
    pub within: usize,
    /// Non-target documents containing the word.
    pub cross: usize,
    /// `within / (cross + 1)`, the ranking key.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    /// `"v0"` or the subclass name.
    pub name: String,
    pub targets: usize,
    pub covered: usize,
    pub within_pct: f64,
    pub non_targets: usize,
    pub cross_matched: usize,
    pub cross_pct: f64,
    pub words: Vec<WordStat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub objective: usize,
    pub optimal: bool,
    pub o: usize,
    pub alpha: usize,
    pub beta: usize,
    /// Rare docs covered by their own subclass set, over all rare docs.
    pub overall_pct: f64,
    pub sets: Vec<SetReport>,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Within/cross coverage per word set, recounted from the occurrence matrices.
pub fn coverage_report(sol: &CoverSolution, p: &CoverProgram, names: &[String]) -> Result<CoverageReport> {
    p.check(sol)?;
    if names.len() != p.k() {
        return Err(Error::Dimension {
            expected: p.k(),
            got: names.len(),
        });
    }
    let any = |row: ndarray::ArrayView1<u8>, set: &[usize]| set.iter().any(|&j| row[j] == 1);
    let column = |m: ArrayView2<u8>, j: usize| m.column(j).iter().filter(|&&v| v == 1).count();
    let rank = |mut words: Vec<WordStat>| {
        words.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then_with(|| a.word.cmp(&b.word)));
        words
    };
    let stat = |j: usize, within: usize, cross: usize| WordStat {
        word: p.terms()[j].clone(),
        within,
        cross,
        ratio: within as f64 / (cross + 1) as f64,
    };

    let mut sets = Vec::with_capacity(p.k() + 1);
    let rare_blocks: Vec<_> = (1..=p.k()).map(|k| p.rare_block(k)).collect();

    let covered0: usize = rare_blocks.iter().map(|b| b.rows().into_iter().filter(|r| any(*r, &sol.v0)).count()).sum();
    let cross0 = p.majority().rows().into_iter().filter(|r| any(*r, &sol.v0)).count();
    sets.push(SetReport {
        name: "v0".into(),
        targets: p.n_rare(),
        covered: covered0,
        within_pct: pct(covered0, p.n_rare()),
        non_targets: p.n_majority(),
        cross_matched: cross0,
        cross_pct: pct(cross0, p.n_majority()),
        words: rank(
            sol.v0
                .iter()
                .map(|&j| stat(j, rare_blocks.iter().map(|b| column(*b, j)).sum(), column(p.majority(), j)))
                .collect(),
        ),
    });

    let mut own_total = 0;
    for k in 1..=p.k() {
        let set = &sol.v[k - 1];
        let own = rare_blocks[k - 1].rows().into_iter().filter(|r| any(*r, set)).count();
        own_total += own;
        let others = || rare_blocks.iter().enumerate().filter(move |(i, _)| *i != k - 1).map(|(_, b)| *b);
        let cross: usize = others().map(|b| b.rows().into_iter().filter(|r| any(*r, set)).count()).sum();
        let non_targets = p.n_rare() - p.n_k(k);
        sets.push(SetReport {
            name: names[k - 1].clone(),
            targets: p.n_k(k),
            covered: own,
            within_pct: pct(own, p.n_k(k)),
            non_targets,
            cross_matched: cross,
            cross_pct: pct(cross, non_targets),
            words: rank(
                set.iter()
                    .map(|&j| stat(j, column(rare_blocks[k - 1], j), others().map(|b| column(b, j)).sum()))
                    .collect(),
            ),
        });
    }

    Ok(CoverageReport {
        objective: sol.objective,
        optimal: sol.optimal,
        o: sol.o,
        alpha: sol.alpha,
        beta: sol.beta,
        overall_pct: pct(own_total, p.n_rare()),
        sets,
    })
}

impl CoverageReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "objective {} ({}), o={} alpha={} beta={}, overall coverage {:.1}%",
            self.objective,
            if self.optimal { "optimal" } else { "heuristic" },
            self.o,
            self.alpha,
            self.beta,
            self.overall_pct
        );
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>8} {:>9} {:>8} {:>7}  words",
            "set", "targets", "covered", "within%", "cross", "cross%"
        );
        for r in &self.sets {
            let words: Vec<&str> = r.words.iter().map(|w| w.word.as_str()).collect();
            let _ = writeln!(
                s,
                "{:<16} {:>7} {:>8} {:>9.1} {:>8} {:>7.1}  {}",
                r.name,
                r.targets,
                r.covered,
                r.within_pct,
                r.cross_matched,
                r.cross_pct,
                words.join(" ")
            );
        }
        s
    }

    /// `set,word,within,cross,ratio` rows for word-cloud tools.
    pub fn words_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["set", "word", "within", "cross", "ratio"]).map_err(csv_err)?;
        for r in &self.sets {
            for ws in &r.words {
                w.write_record([
                    r.name.clone(),
                    ws.word.clone(),
                    ws.within.to_string(),
                    ws.cross.to_string(),
                    ws.ratio.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
