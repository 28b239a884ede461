//! Corpus caption metrics: BLEU-1..4, ROUGE-L, CIDEr-D and METEOR-lite.
//!
//! Candidates and references are token lists; [`evaluate_corpus`] tokenizes
//! raw caption strings with [`crate::model::tokenize`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};
use crate::model::tokenize;

pub type Tokens = Vec<String>;

const ROUGE_BETA: f64 = 1.2;
const CIDER_SIGMA: f64 = 6.0;
const CIDER_ORDERS: usize = 4;
/// Search nodes explored per METEOR alignment stage before settling for the best found.
const METEOR_SEARCH_BUDGET: usize = 200_000;

fn ngrams(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped matches and candidate n-gram total for one candidate at order `n`.
fn clipped(candidate: &[String], references: &[Tokens], n: usize) -> (usize, usize) {
    let cand = ngrams(candidate, n);
    let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
    for r in references {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Reference length closest to `c`; the shorter one wins ties.
fn closest_ref_len(c: usize, references: &[Tokens]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| ((r as isize - c as isize).unsigned_abs(), r))
        .unwrap_or(0)
}

fn check_pairs(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Contract("no candidates to score".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if references.iter().any(Vec::is_empty) {
        return Err(Error::Contract("every candidate needs at least one reference".into()));
    }
    Ok(())
}

/// Corpus BLEU-1..`max_n`: clipped n-gram precisions pooled over the corpus,
/// geometric mean, brevity penalty from closest reference lengths. No smoothing.
pub fn bleu(candidates: &[Tokens], references: &[Vec<Tokens>], max_n: usize) -> Result<Vec<f64>> {
    check_pairs(candidates, references)?;
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, refs) in candidates.iter().zip(references) {
        for n in 1..=max_n {
            let (m, t) = clipped(c, refs, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
        c_len += c.len();
        r_len += closest_ref_len(c.len(), refs);
    }
    let bp = brevity_penalty(c_len, r_len);
    let mut out = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let p = if total[n] == 0 { 0.0 } else { matched[n] as f64 / total[n] as f64 };
        log_sum += if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
        let geo = (log_sum / (n + 1) as f64).exp();
        out.push(if geo.is_finite() { bp * geo } else { 0.0 });
    }
    Ok(out)
}

/// `exp(1 − r/c)` when the candidate side is shorter, else 1.
pub fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    }
}

/// Sentence BLEU-`n` with +1 smoothing on orders that have no matches.
pub fn sentence_bleu(candidate: &[String], references: &[Tokens], n: usize) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (m, t) = clipped(candidate, references, k);
        let p = if m == 0 { 1.0 / (t + 1) as f64 } else { m as f64 / t as f64 };
        log_sum += p.ln();
    }
    brevity_penalty(candidate.len(), closest_ref_len(candidate.len(), references)) * (log_sum / n as f64).exp()
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure with β = 1.2, maximised over references.
pub fn rouge_l(candidate: &[String], references: &[Tokens]) -> f64 {
    references
        .iter()
        .map(|r| {
            let l = lcs_len(candidate, r);
            if l == 0 {
                return 0.0;
            }
            let p = l as f64 / candidate.len() as f64;
            let rec = l as f64 / r.len() as f64;
            let b2 = ROUGE_BETA * ROUGE_BETA;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

/// Document frequencies of reference n-grams: one document per reference set.
#[derive(Clone, Debug)]
pub struct CiderCorpus {
    df: Vec<BTreeMap<Vec<String>, usize>>,
    log_docs: f64,
}

impl CiderCorpus {
    pub fn new(references: &[Vec<Tokens>]) -> Self {
        let mut df = vec![BTreeMap::new(); CIDER_ORDERS];
        for refs in references {
            for n in 1..=CIDER_ORDERS {
                let mut seen: BTreeSet<&[String]> = BTreeSet::new();
                for r in refs {
                    seen.extend(ngrams(r, n).into_keys());
                }
                for g in seen {
                    *df[n - 1].entry(g.to_vec()).or_insert(0) += 1;
                }
            }
        }
        CiderCorpus { df, log_docs: (references.len().max(1) as f64).ln() }
    }

    /// TF-IDF vectors per order and their norms.
    fn vectors<'a>(&self, tokens: &'a [String]) -> Vec<(BTreeMap<&'a [String], f64>, f64)> {
        (1..=CIDER_ORDERS)
            .map(|n| {
                let v: BTreeMap<&[String], f64> = ngrams(tokens, n)
                    .into_iter()
                    .map(|(g, tf)| {
                        let df = self.df[n - 1].get(g).copied().unwrap_or(0).max(1) as f64;
                        (g, tf as f64 * (self.log_docs - df.ln()))
                    })
                    .collect();
                let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
                (v, norm)
            })
            .collect()
    }

    /// CIDEr-D of one candidate against its references.
    pub fn score(&self, candidate: &[String], references: &[Tokens]) -> f64 {
        if references.is_empty() {
            return 0.0;
        }
        let cv = self.vectors(candidate);
        let mut total = 0.0;
        for r in references {
            let rv = self.vectors(r);
            let delta = candidate.len() as f64 - r.len() as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            let mut per_order = 0.0;
            for ((c, cn), (rr, rn)) in cv.iter().zip(&rv) {
                if *cn == 0.0 || *rn == 0.0 {
                    continue;
                }
                let dot: f64 = c.iter().map(|(g, &x)| rr.get(g).map_or(0.0, |&y| x.min(y) * y)).sum();
                per_order += dot / (cn * rn) * penalty;
            }
            total += per_order / CIDER_ORDERS as f64;
        }
        10.0 * total / references.len() as f64
    }
}

/// Mean CIDEr-D over candidates, document frequencies from `references`.
pub fn cider_d(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<f64> {
    check_pairs(candidates, references)?;
    let corpus = CiderCorpus::new(references);
    Ok(candidates.iter().zip(references).map(|(c, r)| corpus.score(c, r)).sum::<f64>() / candidates.len() as f64)
}

/// Suffix-stripping stemmer for the second METEOR stage.
pub fn stem(word: &str) -> String {
    let w = word;
    let strip = |suffix: &str, min_stem: usize| w.strip_suffix(suffix).filter(|s| s.len() >= min_stem);
    if let Some(s) = strip("ies", 2) {
        return format!("{s}y");
    }
    for (suffix, min) in [("ing", 3), ("ed", 3), ("es", 3), ("ly", 3)] {
        if let Some(s) = strip(suffix, min) {
            return s.to_owned();
        }
    }
    if !w.ends_with("ss") {
        if let Some(s) = strip("s", 2) {
            return s.to_owned();
        }
    }
    w.to_owned()
}

/// Number of chunks in an alignment given as `ref_pos[cand_pos]`.
fn chunks(alignment: &[Option<usize>]) -> usize {
    let mut count = 0;
    let mut prev: Option<usize> = None;
    for a in alignment {
        match (prev, a) {
            (_, None) => prev = None,
            (Some(p), Some(j)) if *j == p + 1 => prev = Some(*j),
            (_, Some(j)) => {
                count += 1;
                prev = Some(*j);
            }
        }
    }
    count
}

struct AlignSearch<'a> {
    cand: &'a [String],
    refs: &'a [String],
    eq: &'a dyn Fn(&str, &str) -> bool,
    /// Matches still required after each candidate position.
    target: usize,
    used: Vec<bool>,
    current: Vec<Option<usize>>,
    best: Option<(usize, Vec<Option<usize>>)>,
    nodes: usize,
}

impl AlignSearch<'_> {
    /// Most extra matches still reachable from candidate positions `i..`.
    fn available(&self, i: usize) -> usize {
        let open: Vec<bool> = (0..self.cand.len()).map(|k| k >= i && self.current[k].is_none()).collect();
        max_matching(self.cand, self.refs, &open, &self.used, self.eq)
    }

    fn run(&mut self, i: usize, matched: usize) {
        self.nodes += 1;
        if self.nodes > METEOR_SEARCH_BUDGET && self.best.is_some() {
            return;
        }
        if i == self.cand.len() {
            if matched == self.target {
                let c = chunks(&self.current);
                if self.best.as_ref().is_none_or(|(b, _)| c < *b) {
                    self.best = Some((c, self.current.clone()));
                }
            }
            return;
        }
        if let Some((b, _)) = &self.best {
            // chunks never decrease as positions are fixed
            if chunks(&self.current[..i]) >= *b {
                return;
            }
        }
        if self.current[i].is_some() {
            self.run(i + 1, matched);
            return;
        }
        for j in 0..self.refs.len() {
            if !self.used[j] && (self.eq)(&self.cand[i], &self.refs[j]) {
                self.used[j] = true;
                self.current[i] = Some(j);
                self.run(i + 1, matched + 1);
                self.current[i] = None;
                self.used[j] = false;
            }
        }
        if matched + self.available(i + 1) >= self.target {
            self.run(i + 1, matched);
        }
    }
}

/// Maximum bipartite matching under `eq` between `open` candidate positions
/// and references not `blocked`, by augmenting paths.
fn max_matching(
    cand: &[String],
    refs: &[String],
    open: &[bool],
    blocked: &[bool],
    eq: &dyn Fn(&str, &str) -> bool,
) -> usize {
    let mut owner: Vec<Option<usize>> = vec![None; refs.len()];
    fn augment(
        i: usize,
        cand: &[String],
        refs: &[String],
        eq: &dyn Fn(&str, &str) -> bool,
        blocked: &[bool],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for j in 0..refs.len() {
            if blocked[j] || seen[j] || !eq(&cand[i], &refs[j]) {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|o| augment(o, cand, refs, eq, blocked, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    let mut n = 0;
    for i in 0..cand.len() {
        if !open[i] {
            continue;
        }
        let mut seen = vec![false; refs.len()];
        if augment(i, cand, refs, eq, blocked, &mut seen, &mut owner) {
            n += 1;
        }
    }
    n
}

/// Alignment stage: adds a maximum matching under `eq` to `fixed`, with the fewest chunks.
fn align_stage(cand: &[String], refs: &[String], fixed: Vec<Option<usize>>, eq: &dyn Fn(&str, &str) -> bool) -> Vec<Option<usize>> {
    let mut used = vec![false; refs.len()];
    for j in fixed.iter().flatten() {
        used[*j] = true;
    }
    let open: Vec<bool> = fixed.iter().map(Option::is_none).collect();
    let extra = max_matching(cand, refs, &open, &used, eq);
    if extra == 0 {
        return fixed;
    }
    let already = fixed.iter().flatten().count();
    let mut s = AlignSearch { cand, refs, eq, target: already + extra, used, current: fixed.clone(), best: None, nodes: 0 };
    s.run(0, already);
    s.best.map(|(_, a)| a).unwrap_or(fixed)
}

/// Alignment statistics `(matches, chunks)` of candidate against one reference.
pub fn meteor_alignment(candidate: &[String], reference: &[String]) -> (usize, usize) {
    let exact = |a: &str, b: &str| a == b;
    let stemmed = |a: &str, b: &str| stem(a) == stem(b);
    let a = align_stage(candidate, reference, vec![None; candidate.len()], &exact);
    let a = align_stage(candidate, reference, a, &stemmed);
    (a.iter().flatten().count(), chunks(&a))
}

/// METEOR without synonyms: exact then stem matching, `F_mean · (1 − 0.5 (chunks/m)³)`, best reference.
pub fn meteor_lite(candidate: &[String], references: &[Tokens]) -> f64 {
    references
        .iter()
        .map(|r| {
            let (m, ch) = meteor_alignment(candidate, r);
            if m == 0 {
                return 0.0;
            }
            let p = m as f64 / candidate.len() as f64;
            let rec = m as f64 / r.len() as f64;
            let f = 10.0 * p * rec / (rec + 9.0 * p);
            let penalty = 0.5 * (ch as f64 / m as f64).powi(3);
            f * (1.0 - penalty)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
}

impl MetricSet {
    fn zip_with(&self, other: &MetricSet, f: impl Fn(f64, f64) -> f64) -> MetricSet {
        MetricSet {
            bleu: std::array::from_fn(|i| f(self.bleu[i], other.bleu[i])),
            meteor: f(self.meteor, other.meteor),
            rouge_l: f(self.rouge_l, other.rouge_l),
            cider_d: f(self.cider_d, other.cider_d),
        }
    }

    pub fn mean(sets: &[MetricSet]) -> MetricSet {
        let n = sets.len().max(1) as f64;
        let sum = sets.iter().fold(MetricSet::default(), |a, b| a.zip_with(b, |x, y| x + y));
        sum.zip_with(&MetricSet::default(), |x, _| x / n)
    }

    /// Sample standard deviation (n − 1); zero for fewer than two sets.
    pub fn sd(sets: &[MetricSet]) -> MetricSet {
        if sets.len() < 2 {
            return MetricSet::default();
        }
        let m = MetricSet::mean(sets);
        let sq = sets
            .iter()
            .fold(MetricSet::default(), |a, b| a.zip_with(&b.zip_with(&m, |x, y| (x - y) * (x - y)), |x, y| x + y));
        sq.zip_with(&MetricSet::default(), |x, _| (x / (sets.len() - 1) as f64).sqrt())
    }
}

/// Every metric over a tokenized corpus.
pub fn score_corpus(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<MetricSet> {
    let b = bleu(candidates, references, 4)?;
    let n = candidates.len() as f64;
    Ok(MetricSet {
        bleu: [b[0], b[1], b[2], b[3]],
        meteor: candidates.iter().zip(references).map(|(c, r)| meteor_lite(c, r)).sum::<f64>() / n,
        rouge_l: candidates.iter().zip(references).map(|(c, r)| rouge_l(c, r)).sum::<f64>() / n,
        cider_d: cider_d(candidates, references)?,
    })
}

/// One line of a prediction or reference file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRecord {
    pub episode_id: String,
    pub captions: Vec<String>,
}

pub fn read_jsonl(path: &Path) -> Result<Vec<CaptionRecord>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(json_err(path)))
        .collect()
}

pub fn write_jsonl(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(json_err(path))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScores {
    pub episode_id: String,
    /// Smoothed sentence BLEU-1..4.
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trials: usize,
    /// Corpus metrics averaged over trials.
    pub corpus: MetricSet,
    /// Sample standard deviation over trials.
    pub trial_sd: MetricSet,
    pub per_trial: Vec<MetricSet>,
    /// Per-episode scores of the first trial.
    pub episodes: Vec<EpisodeScores>,
}

/// Scores predictions against references. Trial `t` uses each episode's
/// caption `t mod k`, so a single deterministic caption gives zero variance.
pub fn evaluate_corpus(predictions: &[CaptionRecord], references: &[CaptionRecord], trials: usize) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::Contract("at least one trial is required".into()));
    }
    let refs: BTreeMap<&str, &CaptionRecord> = references.iter().map(|r| (r.episode_id.as_str(), r)).collect();
    let preds: BTreeMap<&str, &CaptionRecord> = predictions.iter().map(|r| (r.episode_id.as_str(), r)).collect();
    let mut orphans: Vec<String> = preds.keys().filter(|k| !refs.contains_key(*k)).map(|k| k.to_string()).collect();
    orphans.extend(refs.keys().filter(|k| !preds.contains_key(*k)).map(|k| k.to_string()));
    if !orphans.is_empty() || preds.len() != predictions.len() || refs.len() != references.len() {
        orphans.sort();
        return Err(Error::Alignment { orphans });
    }
    if let Some(p) = predictions.iter().find(|p| p.captions.is_empty()) {
        return Err(Error::Contract(format!("episode {} has no predicted caption", p.episode_id)));
    }
    if let Some(r) = references.iter().find(|r| r.captions.is_empty()) {
        return Err(Error::Contract(format!("episode {} has no reference caption", r.episode_id)));
    }
    let ids: Vec<&str> = refs.keys().copied().collect();
    let ref_tokens: Vec<Vec<Tokens>> = ids.iter().map(|id| refs[id].captions.iter().map(|c| tokenize(c)).collect()).collect();
    let corpus = CiderCorpus::new(&ref_tokens);
    let mut per_trial = Vec::with_capacity(trials);
    let mut episodes = Vec::new();
    for t in 0..trials {
        let cands: Vec<Tokens> = ids
            .iter()
            .map(|id| {
                let p = &preds[id].captions;
                tokenize(&p[t % p.len()])
            })
            .collect();
        per_trial.push(score_corpus(&cands, &ref_tokens)?);
        if t == 0 {
            episodes = ids
                .iter()
                .zip(&cands)
                .zip(&ref_tokens)
                .map(|((id, c), r)| EpisodeScores {
                    episode_id: id.to_string(),
                    bleu: std::array::from_fn(|n| sentence_bleu(c, r, n + 1)),
                    meteor: meteor_lite(c, r),
                    rouge_l: rouge_l(c, r),
                    cider_d: corpus.score(c, r),
                })
                .collect();
        }
    }
    Ok(EvalReport {
        trials,
        corpus: MetricSet::mean(&per_trial),
        trial_sd: MetricSet::sd(&per_trial),
        per_trial,
        episodes,
    })
}
