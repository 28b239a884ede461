//! Attention sequence-to-sequence caption generator over feature sequences.

use rand::Rng;
use rfcap_nn::{AdditiveAttention, Embedding, Graph, Linear, LstmCell, LstmState, ParameterStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::encoders::FeatureSequence;
use crate::error::{Error, Result};
use crate::model::{BOS, EOS, PAD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptionerConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub embed: usize,
    pub attn: usize,
    pub max_len: usize,
    pub beam_width: usize,
    /// Exponent of the length normalisation in beam scoring.
    pub length_alpha: f64,
}

impl Default for CaptionerConfig {
    fn default() -> Self {
        CaptionerConfig { input_dim: 64, hidden: 128, embed: 64, attn: 64, max_len: 30, beam_width: 3, length_alpha: 0.7 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
    /// Ancestral sampling at the given temperature.
    Sample(f64),
}

#[derive(Clone, Debug)]
pub struct Captioner {
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    pub attention: AdditiveAttention,
    pub embedding: Embedding,
    pub output: Linear,
    pub vocab_size: usize,
    pub config: CaptionerConfig,
}

/// Encoder states of one sequence.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[t, hidden]` outputs `o_t` (the hidden states `h_t`).
    pub outputs: Var,
    /// Final `(h_T, c_T)`, `[1, hidden]` each.
    pub last: LstmState,
    /// Attention keys projected from `outputs`.
    pub keys: Var,
    pub steps: usize,
}

/// Length-normalised score `Σ log p / len^α`.
pub fn normalized_score(log_prob: f64, len: usize, alpha: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(alpha)
}

/// Output of a decode: tokens without BOS/EOS plus scoring terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Emitted tokens including the EOS if one was produced.
    pub length: usize,
    pub finished: bool,
}

impl Hypothesis {
    pub fn score(&self, alpha: f64) -> f64 {
        normalized_score(self.log_prob, self.length, alpha)
    }
}

impl Captioner {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        config: &CaptionerConfig,
        vocab_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if vocab_size <= EOS {
            return Err(Error::Contract("vocabulary too small for the reserved tokens".into()));
        }
        let h = config.hidden;
        Ok(Captioner {
            encoder: LstmCell::new(store, &format!("{name}.enc"), config.input_dim, h, rng)?,
            decoder: LstmCell::new(store, &format!("{name}.dec"), config.embed + h, h, rng)?,
            attention: AdditiveAttention::new(store, &format!("{name}.attn"), h, h, config.attn, rng)?,
            embedding: Embedding::new(store, &format!("{name}.embed"), vocab_size, config.embed, rng)?,
            output: Linear::new(store, &format!("{name}.out"), 2 * h, vocab_size, rng)?,
            vocab_size,
            config: config.clone(),
        })
    }

    /// Left-to-right recurrence over `u: [t, input_dim]`.
    pub fn encode_sequence(&self, g: &mut Graph, store: &ParameterStore, u: Var) -> Result<Encoded> {
        let shape = g.shape(u).to_vec();
        if shape.len() != 2 || shape[0] == 0 || shape[1] != self.config.input_dim {
            return Err(Error::Contract(format!(
                "captioner expects a [t >= 1, {}] sequence, got {shape:?}",
                self.config.input_dim
            )));
        }
        let mut state = self.encoder.zero_state(g, 1);
        let mut hs = Vec::with_capacity(shape[0]);
        for t in 0..shape[0] {
            let x = g.slice(u, 0, t, 1);
            state = self.encoder.step(g, store, x, state);
            hs.push(state.h);
        }
        let outputs = if hs.len() == 1 { hs[0] } else { g.concat(&hs, 0) };
        let keys = self.attention.project_keys(g, store, outputs);
        Ok(Encoded { outputs, last: state, keys, steps: shape[0] })
    }

    /// One decoder step for a batch of previous tokens; returns logits `[b, V]`, attention and state.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        enc: &Encoded,
        prev: &[usize],
        state: LstmState,
    ) -> (Var, Var, LstmState) {
        let (alpha, ctx) = self.attention.attend(g, store, state.h, enc.keys, enc.outputs);
        let e = self.embedding.forward(g, store, prev);
        let x = g.concat(&[e, ctx], 1);
        let next = self.decoder.step(g, store, x, state);
        let z = g.concat(&[next.h, ctx], 1);
        let logits = self.output.forward(g, store, z);
        (logits, alpha, next)
    }

    fn initial_state(&self, g: &mut Graph, enc: &Encoded, batch: usize) -> LstmState {
        if batch == 1 {
            return enc.last;
        }
        LstmState { h: g.repeat_rows(enc.last.h, batch), c: g.repeat_rows(enc.last.c, batch) }
    }

    /// Teacher-forced mean token NLL of encoded references (each `BOS … EOS`).
    pub fn caption_nll(&self, g: &mut Graph, store: &ParameterStore, u: Var, references: &[Vec<usize>]) -> Result<Var> {
        if references.is_empty() || references.iter().any(|r| r.len() < 2) {
            return Err(Error::Contract("caption references must hold at least BOS and EOS".into()));
        }
        if let Some(&bad) = references.iter().flatten().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Contract(format!("token {bad} outside the vocabulary")));
        }
        let enc = self.encode_sequence(g, store, u)?;
        let b = references.len();
        let steps = references.iter().map(|r| r.len() - 1).max().unwrap_or(0);
        let mut state = self.initial_state(g, &enc, b);
        let mut logits = Vec::with_capacity(steps);
        let mut targets = Vec::with_capacity(steps * b);
        let mut mask = Vec::with_capacity(steps * b);
        for i in 0..steps {
            let prev: Vec<usize> = references.iter().map(|r| r.get(i).copied().unwrap_or(PAD)).collect();
            let (l, _, next) = self.step(g, store, &enc, &prev, state);
            state = next;
            logits.push(l);
            for r in references {
                let t = r.get(i + 1).copied();
                targets.push(t.unwrap_or(PAD));
                mask.push(t.is_some_and(|t| t != PAD));
            }
        }
        let all = if logits.len() == 1 { logits[0] } else { g.concat(&logits, 0) };
        Ok(g.cross_entropy(all, &targets, &mask))
    }

    fn log_probs(row: &[f64]) -> Vec<f64> {
        let mut masked = row.to_vec();
        masked[PAD] = f64::NEG_INFINITY;
        masked[BOS] = f64::NEG_INFINITY;
        let max = masked.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::INFINITY {
            // an infinite logit takes all the mass
            return masked.iter().map(|&x| if x == f64::INFINITY { 0.0 } else { f64::NEG_INFINITY }).collect();
        }
        let lse = max + masked.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        masked.iter().map(|x| x - lse).collect()
    }

    /// Index of the largest value; the lowest index wins ties.
    fn argmax(v: &[f64]) -> usize {
        let mut best = 0;
        for (i, &x) in v.iter().enumerate() {
            if x > v[best] {
                best = i;
            }
        }
        best
    }

    /// Decodes a caption (without BOS/EOS) from a feature sequence.
    pub fn decode(
        &self,
        store: &ParameterStore,
        u: &FeatureSequence,
        mode: DecodeMode,
        max_len: usize,
        rng: &mut impl Rng,
    ) -> Result<Hypothesis> {
        if max_len == 0 {
            return Err(Error::Contract("max_len must be at least 1".into()));
        }
        match mode {
            DecodeMode::Greedy => self.greedy(store, u, max_len, None::<(&mut rand_chacha::ChaCha8Rng, f64)>),
            DecodeMode::Sample(temperature) => {
                if temperature <= 0.0 {
                    return Err(Error::Contract("sampling temperature must be positive".into()));
                }
                self.greedy(store, u, max_len, Some((rng, temperature)))
            }
            DecodeMode::Beam(width) => self.beam(store, u, width.max(1), max_len),
        }
    }

    fn greedy<R: Rng>(
        &self,
        store: &ParameterStore,
        u: &FeatureSequence,
        max_len: usize,
        mut sample: Option<(&mut R, f64)>,
    ) -> Result<Hypothesis> {
        let mut g = Graph::new();
        let uv = g.constant(u.to_tensor());
        let enc = self.encode_sequence(&mut g, store, uv)?;
        let mut state = enc.last;
        let mut prev = BOS;
        let mut hyp = Hypothesis { tokens: Vec::new(), log_prob: 0.0, length: 0, finished: false };
        for _ in 0..max_len {
            let (logits, _, next) = self.step(&mut g, store, &enc, &[prev], state);
            state = next;
            let lp = Self::log_probs(g.value(logits).data());
            let tok = match sample.as_mut() {
                None => Self::argmax(&lp),
                Some((rng, temperature)) => {
                    let w: Vec<f64> = lp.iter().map(|&l| (l / *temperature).exp()).collect();
                    let total: f64 = w.iter().sum();
                    let mut r = rng.gen::<f64>() * total;
                    let mut pick = EOS;
                    for (i, &wi) in w.iter().enumerate() {
                        if wi > 0.0 {
                            pick = i;
                            if r < wi {
                                break;
                            }
                            r -= wi;
                        }
                    }
                    pick
                }
            };
            hyp.log_prob += lp[tok];
            hyp.length += 1;
            if tok == EOS {
                hyp.finished = true;
                break;
            }
            hyp.tokens.push(tok);
            prev = tok;
        }
        Ok(hyp)
    }

    fn beam(&self, store: &ParameterStore, u: &FeatureSequence, width: usize, max_len: usize) -> Result<Hypothesis> {
        let alpha = self.config.length_alpha;
        let mut g = Graph::new();
        let uv = g.constant(u.to_tensor());
        let enc = self.encode_sequence(&mut g, store, uv)?;
        struct Live {
            hyp: Hypothesis,
            prev: usize,
            state: LstmState,
        }
        let mut live = vec![Live {
            hyp: Hypothesis { tokens: Vec::new(), log_prob: 0.0, length: 0, finished: false },
            prev: BOS,
            state: enc.last,
        }];
        let mut done: Vec<Hypothesis> = Vec::new();
        for _ in 0..max_len {
            if live.is_empty() || done.len() >= width {
                break;
            }
            // (score, parent, token, log_prob, state)
            let mut cands: Vec<(f64, usize, usize, f64, LstmState)> = Vec::new();
            for (pi, l) in live.iter().enumerate() {
                let (logits, _, next) = self.step(&mut g, store, &enc, &[l.prev], l.state);
                let lp = Self::log_probs(g.value(logits).data());
                let mut order: Vec<usize> = (0..lp.len()).filter(|&t| lp[t].is_finite()).collect();
                order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
                for &tok in order.iter().take(width) {
                    let total = l.hyp.log_prob + lp[tok];
                    cands.push((normalized_score(total, l.hyp.length + 1, alpha), pi, tok, total, next));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next_live = Vec::with_capacity(width);
            for (_, pi, tok, total, state) in cands.into_iter().take(width) {
                let parent = &live[pi].hyp;
                let mut hyp = Hypothesis { tokens: parent.tokens.clone(), log_prob: total, length: parent.length + 1, finished: false };
                if tok == EOS {
                    hyp.finished = true;
                    done.push(hyp);
                } else {
                    hyp.tokens.push(tok);
                    next_live.push(Live { hyp, prev: tok, state });
                }
            }
            live = next_live;
        }
        let mut pool = done;
        pool.extend(live.into_iter().map(|l| l.hyp));
        // the greedy path competes too, so the beam never scores below it
        pool.push(self.greedy(store, u, max_len, None::<(&mut rand_chacha::ChaCha8Rng, f64)>)?);
        let mut best = 0;
        for (i, h) in pool.iter().enumerate() {
            if h.score(alpha) > pool[best].score(alpha) {
                best = i;
            }
        }
        Ok(pool.swap_remove(best))
    }

    /// Log-probability of emitting exactly `tokens` followed by EOS (or only
    /// `tokens` when `finished` is false), under the decoding distribution.
    pub fn sequence_log_prob(
        &self,
        store: &ParameterStore,
        u: &FeatureSequence,
        tokens: &[usize],
        finished: bool,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let uv = g.constant(u.to_tensor());
        let enc = self.encode_sequence(&mut g, store, uv)?;
        let mut state = enc.last;
        let mut prev = BOS;
        let mut total = 0.0;
        let targets: Vec<usize> = tokens.iter().copied().chain(finished.then_some(EOS)).collect();
        for &t in &targets {
            let (logits, _, next) = self.step(&mut g, store, &enc, &[prev], state);
            state = next;
            total += Self::log_probs(g.value(logits).data())[t];
            prev = t;
        }
        Ok(total)
    }

    /// Attention weights `[1, t]` at every step of a greedy decode.
    pub fn greedy_attention(&self, store: &ParameterStore, u: &FeatureSequence, max_len: usize) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let uv = g.constant(u.to_tensor());
        let enc = self.encode_sequence(&mut g, store, uv)?;
        let mut state = enc.last;
        let mut prev = BOS;
        let mut out = Vec::new();
        for _ in 0..max_len {
            let (logits, alpha, next) = self.step(&mut g, store, &enc, &[prev], state);
            state = next;
            out.push(g.value(alpha).data().to_vec());
            let tok = Self::argmax(&Self::log_probs(g.value(logits).data()));
            if tok == EOS {
                break;
            }
            prev = tok;
        }
        Ok(out)
    }
}

/// Constant `[t, d]` node for a feature sequence.
pub fn sequence_constant(g: &mut Graph, u: &FeatureSequence) -> Var {
    g.constant(Tensor::new(vec![u.steps, u.dim], u.data.clone()).expect("consistent sequence"))
}
