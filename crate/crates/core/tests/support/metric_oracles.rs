//! Brute-force reference implementations of the caption metrics.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rfcap::metrics::Tokens;

pub fn toks(s: &str) -> Tokens {
    s.split_whitespace().map(str::to_owned).collect()
}

pub fn grams(t: &[String], n: usize) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    if t.len() >= n {
        for i in 0..=t.len() - n {
            *m.entry(t[i..i + n].join(" ")).or_insert(0) += 1;
        }
    }
    m
}

pub fn naive_bleu(cands: &[Tokens], refs: &[Vec<Tokens>], n: usize) -> f64 {
    let mut logp = 0.0;
    for k in 1..=n {
        let (mut hit, mut tot) = (0usize, 0usize);
        for (c, rs) in cands.iter().zip(refs) {
            for (g, cnt) in grams(c, k) {
                let best = rs.iter().map(|r| grams(r, k).get(&g).copied().unwrap_or(0)).max().unwrap();
                hit += cnt.min(best);
                tot += cnt;
            }
        }
        if hit == 0 {
            return 0.0;
        }
        logp += (hit as f64 / tot as f64).ln();
    }
    let c: usize = cands.iter().map(Vec::len).sum();
    let mut r = 0;
    for (cand, rs) in cands.iter().zip(refs) {
        let mut best = rs[0].len();
        for x in rs {
            let (d, bd) = ((x.len() as i64 - cand.len() as i64).abs(), (best as i64 - cand.len() as i64).abs());
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best;
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * (logp / n as f64).exp()
}

pub fn naive_lcs(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            t[i][j] = if a[i] == b[j] { 1 + t[i + 1][j + 1] } else { t[i + 1][j].max(t[i][j + 1]) };
        }
    }
    t[0][0]
}

pub fn naive_rouge(c: &[String], rs: &[Tokens]) -> f64 {
    let mut best = 0.0f64;
    for r in rs {
        let l = naive_lcs(c, r) as f64;
        if l > 0.0 {
            let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
            let b2 = 1.44;
            best = best.max((1.0 + b2) * p * rec / (rec + b2 * p));
        }
    }
    best
}

pub fn naive_cider(cands: &[Tokens], refs: &[Vec<Tokens>]) -> f64 {
    let n_docs = refs.len() as f64;
    let mut df: Vec<HashMap<String, f64>> = vec![HashMap::new(); 4];
    for rs in refs {
        for k in 1..=4 {
            let mut seen: Vec<String> = rs.iter().flat_map(|r| grams(r, k).into_keys()).collect();
            seen.sort();
            seen.dedup();
            for g in seen {
                *df[k - 1].entry(g).or_insert(0.0) += 1.0;
            }
        }
    }
    let vec_of = |t: &[String], k: usize| -> HashMap<String, f64> {
        grams(t, k)
            .into_iter()
            .map(|(g, tf)| {
                let d = df[k - 1].get(&g).copied().unwrap_or(0.0).max(1.0);
                (g, tf as f64 * (n_docs.ln() - d.ln()))
            })
            .collect()
    };
    let mut total = 0.0;
    for (c, rs) in cands.iter().zip(refs) {
        let mut per = 0.0;
        for r in rs {
            let mut s = 0.0;
            for k in 1..=4 {
                let (cv, rv) = (vec_of(c, k), vec_of(r, k));
                let cn = cv.values().map(|x| x * x).sum::<f64>().sqrt();
                let rn = rv.values().map(|x| x * x).sum::<f64>().sqrt();
                if cn == 0.0 || rn == 0.0 {
                    continue;
                }
                let dot: f64 = cv.iter().map(|(g, x)| rv.get(g).map_or(0.0, |y| x.min(*y) * y)).sum();
                let delta = c.len() as f64 - r.len() as f64;
                s += dot / (cn * rn) * (-delta * delta / 72.0).exp();
            }
            per += s / 4.0;
        }
        total += 10.0 * per / rs.len() as f64;
    }
    total / cands.len() as f64
}

pub fn naive_chunks(a: &[Option<usize>]) -> usize {
    let mut n = 0;
    for i in 0..a.len() {
        if let Some(j) = a[i] {
            let continues = i > 0 && a[i - 1].is_some_and(|p| p + 1 == j);
            if !continues {
                n += 1;
            }
        }
    }
    n
}

/// Every injective alignment extending `fixed` under `eq`, in the order
/// "match the lowest free reference first, skip last".
pub fn enumerate(c: &[String], r: &[String], fixed: &[Option<usize>], eq: &dyn Fn(&str, &str) -> bool) -> Vec<Vec<Option<usize>>> {
    fn rec(
        i: usize,
        c: &[String],
        r: &[String],
        cur: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        eq: &dyn Fn(&str, &str) -> bool,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        if i == c.len() {
            out.push(cur.clone());
            return;
        }
        if cur[i].is_some() {
            rec(i + 1, c, r, cur, used, eq, out);
            return;
        }
        for j in 0..r.len() {
            if !used[j] && eq(&c[i], &r[j]) {
                used[j] = true;
                cur[i] = Some(j);
                rec(i + 1, c, r, cur, used, eq, out);
                cur[i] = None;
                used[j] = false;
            }
        }
        rec(i + 1, c, r, cur, used, eq, out);
    }
    let mut used = vec![false; r.len()];
    for j in fixed.iter().flatten() {
        used[*j] = true;
    }
    let mut out = Vec::new();
    rec(0, c, r, &mut fixed.to_vec(), &mut used, eq, &mut out);
    out
}

pub fn best_of(all: Vec<Vec<Option<usize>>>) -> Vec<Option<usize>> {
    let m = all.iter().map(|a| a.iter().flatten().count()).max().unwrap();
    let with_m: Vec<_> = all.into_iter().filter(|a| a.iter().flatten().count() == m).collect();
    let ch = with_m.iter().map(|a| naive_chunks(a)).min().unwrap();
    with_m.into_iter().find(|a| naive_chunks(a) == ch).unwrap()
}

pub fn naive_stem(w: &str) -> String {
    if w.len() >= 5 && w.ends_with("ies") {
        return format!("{}y", &w[..w.len() - 3]);
    }
    for s in ["ing", "ed", "es", "ly"] {
        if w.ends_with(s) && w.len() - s.len() >= 3 {
            return w[..w.len() - s.len()].to_owned();
        }
    }
    if w.ends_with('s') && !w.ends_with("ss") && w.len() >= 3 {
        return w[..w.len() - 1].to_owned();
    }
    w.to_owned()
}

pub fn naive_meteor(c: &[String], rs: &[Tokens]) -> f64 {
    let mut best = 0.0f64;
    for r in rs {
        let a = best_of(enumerate(c, r, &vec![None; c.len()], &|x, y| x == y));
        let a = best_of(enumerate(c, r, &a, &|x, y| naive_stem(x) == naive_stem(y)));
        let m = a.iter().flatten().count() as f64;
        if m == 0.0 {
            continue;
        }
        let (p, rec) = (m / c.len() as f64, m / r.len() as f64);
        let f = 10.0 * p * rec / (rec + 9.0 * p);
        best = best.max(f * (1.0 - 0.5 * (naive_chunks(&a) as f64 / m).powi(3)));
    }
    best
}

pub const WORDS: [&str; 12] = ["the", "a", "person", "walk", "walks", "walked", "to", "bed", "beds", "sits", "sitting", "sink"];

pub fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<Tokens>, Vec<Vec<Tokens>>) {
    let sentence = |rng: &mut ChaCha8Rng| -> Tokens {
        let n = rng.gen_range(1..=8);
        (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_owned()).collect()
    };
    let episodes = rng.gen_range(1..=10);
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for _ in 0..episodes {
        cands.push(sentence(rng));
        let k = rng.gen_range(1..=3);
        refs.push((0..k).map(|_| sentence(rng)).collect());
    }
    (cands, refs)
}
