//! Incremental decoding with per-hypothesis key/value caches, and beam
//! search on top of it.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kernels::{self, dot, gelu};
use super::model::check_tokens;
use super::params::ModelParams;
use crate::codec::{TokenId, Vocabulary, EOS, SEP};
use crate::error::{GramError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub beam_size: usize,
    /// Longest generated sequence, EOS included.
    pub max_code_tokens: usize,
    pub n_return: usize,
    /// Rank finished hypotheses by mean instead of total log-probability.
    pub length_normalization: bool,
    /// Restrict generation to the code trie.
    pub constrained: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            beam_size: 10,
            max_code_tokens: 2 * crate::codec::MAX_CODE_ATTRIBUTES,
            n_return: 10,
            length_normalization: false,
            constrained: false,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_return == 0 || self.beam_size < self.n_return {
            return Err(GramError::Config(format!(
                "need beam_size ({}) >= n_return ({}) >= 1",
                self.beam_size, self.n_return
            )));
        }
        if self.max_code_tokens == 0 {
            return Err(GramError::Config("max_code_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Prefix tree over valid target token sequences (each ending in EOS).
#[derive(Debug, Clone, Default)]
pub struct CodeTrie {
    children: Vec<BTreeMap<TokenId, usize>>,
}

impl CodeTrie {
    pub fn new() -> Self {
        Self {
            children: vec![BTreeMap::new()],
        }
    }

    pub fn insert(&mut self, seq: &[TokenId]) {
        let mut node = 0;
        for &t in seq {
            node = match self.children[node].get(&t) {
                Some(&n) => n,
                None => {
                    self.children.push(BTreeMap::new());
                    let n = self.children.len() - 1;
                    self.children[node].insert(t, n);
                    n
                }
            };
        }
    }

    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a [TokenId]>) -> Self {
        let mut t = Self::new();
        for s in seqs {
            t.insert(s);
        }
        t
    }

    fn allowed(&self, node: usize) -> impl Iterator<Item = (TokenId, usize)> + '_ {
        self.children[node].iter().map(|(t, n)| (*t, *n))
    }

    pub fn contains(&self, seq: &[TokenId]) -> bool {
        let mut node = 0;
        for t in seq {
            match self.children[node].get(t) {
                Some(&n) => node = n,
                None => return false,
            }
        }
        self.children[node].is_empty()
    }
}

#[derive(Clone)]
pub(crate) struct KvCache {
    /// Per layer: keys and values, `len × d_model` each.
    layers: Vec<(Vec<f64>, Vec<f64>)>,
    len: usize,
}

/// Runs the model one position at a time.
pub(crate) struct Decoder<'p> {
    params: &'p ModelParams,
}

impl<'p> Decoder<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self { params }
    }

    fn empty_cache(&self) -> KvCache {
        KvCache {
            layers: vec![(Vec::new(), Vec::new()); self.params.config().n_layers],
            len: 0,
        }
    }

    /// Feeds one token into each cache (all caches must have equal length)
    /// and returns next-token log-probabilities, `caches.len() × vocab`.
    pub fn step(&self, caches: &mut [&mut KvCache], tokens: &[TokenId]) -> Vec<f64> {
        let p = self.params;
        let cfg = p.config();
        let (d, ff, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let heads = cfg.n_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let b = tokens.len();
        let ids = &p.ids;

        let tok = p.tensor(ids.tok_emb);
        let pos = p.tensor(ids.pos_emb);
        let mut x = vec![0.0; b * d];
        for (i, (&t, cache)) in tokens.iter().zip(caches.iter()).enumerate() {
            let r = cache.len;
            for c in 0..d {
                x[i * d + c] = tok[t as usize * d + c] + pos[r * d + c];
            }
        }

        let mut a = vec![0.0; b * d];
        let mut qkv = vec![0.0; b * 3 * d];
        let mut att = vec![0.0; b * d];
        let mut o = vec![0.0; b * d];
        let mut hid = vec![0.0; b * ff];
        for (li, layer) in ids.layers.iter().enumerate() {
            kernels::layer_norm(&x, d, p.tensor(layer.ln1_g), p.tensor(layer.ln1_b), &mut a, None, None);
            kernels::matmul(b, d, 3 * d, &a, p.tensor(layer.w_qkv), &mut qkv, 0.0);
            kernels::add_bias(&mut qkv, p.tensor(layer.b_qkv));
            att.fill(0.0);
            for (i, cache) in caches.iter_mut().enumerate() {
                let row = &qkv[i * 3 * d..(i + 1) * 3 * d];
                let (keys, values) = &mut cache.layers[li];
                keys.extend_from_slice(&row[d..2 * d]);
                values.extend_from_slice(&row[2 * d..3 * d]);
                let n = keys.len() / d;
                let mut scores = vec![0.0; n];
                for h in 0..heads {
                    let q = &row[h * dh..(h + 1) * dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..n {
                        scores[j] = scale * dot(q, &keys[j * d + h * dh..j * d + (h + 1) * dh]);
                        max = max.max(scores[j]);
                    }
                    let mut sum = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        sum += *s;
                    }
                    let out = &mut att[i * d + h * dh..i * d + (h + 1) * dh];
                    for j in 0..n {
                        let pj = scores[j] / sum;
                        let vj = &values[j * d + h * dh..j * d + (h + 1) * dh];
                        for c in 0..dh {
                            out[c] += pj * vj[c];
                        }
                    }
                }
            }
            kernels::matmul(b, d, d, &att, p.tensor(layer.w_o), &mut o, 0.0);
            kernels::add_bias(&mut o, p.tensor(layer.b_o));
            for (xv, ov) in x.iter_mut().zip(&o) {
                *xv += ov;
            }
            kernels::layer_norm(&x, d, p.tensor(layer.ln2_g), p.tensor(layer.ln2_b), &mut a, None, None);
            kernels::matmul(b, d, ff, &a, p.tensor(layer.w_ff1), &mut hid, 0.0);
            kernels::add_bias(&mut hid, p.tensor(layer.b_ff1));
            for hv in hid.iter_mut() {
                *hv = gelu(*hv);
            }
            kernels::matmul(b, ff, d, &hid, p.tensor(layer.w_ff2), &mut o, 0.0);
            kernels::add_bias(&mut o, p.tensor(layer.b_ff2));
            for (xv, ov) in x.iter_mut().zip(&o) {
                *xv += ov;
            }
        }
        for cache in caches.iter_mut() {
            cache.len += 1;
        }
        kernels::layer_norm(&x, d, p.tensor(ids.lnf_g), p.tensor(ids.lnf_b), &mut a, None, None);
        let mut logits = vec![0.0; b * v];
        kernels::matmul(b, d, v, &a, p.tensor(ids.w_out), &mut logits, 0.0);
        kernels::add_bias(&mut logits, p.tensor(ids.b_out));
        for row in logits.chunks_exact_mut(v) {
            kernels::log_softmax_in_place(row);
        }
        logits
    }

    /// Consumes the prompt; returns the cache and the distribution of the
    /// first target token.
    pub fn prefill(&self, prompt: &[TokenId]) -> (KvCache, Vec<f64>) {
        let mut cache = self.empty_cache();
        let mut last = Vec::new();
        for &t in prompt {
            last = self.step(&mut [&mut cache], &[t]);
        }
        (cache, last)
    }
}

/// A finished beam hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, EOS included.
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub token_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    /// Sorted by score, best first.
    pub hypotheses: Vec<Hypothesis>,
    /// Fewer than `n_return` hypotheses reached EOS.
    pub incomplete: bool,
}

struct Live {
    tokens: Vec<TokenId>,
    token_logprobs: Vec<f64>,
    score: f64,
    cache: KvCache,
    next: Vec<f64>,
    trie_node: usize,
}

fn rank_score(h: &Hypothesis, normalize: bool) -> f64 {
    if normalize {
        h.logprob / h.tokens.len() as f64
    } else {
        h.logprob
    }
}

fn cmp_hyp(a: &Hypothesis, b: &Hypothesis, normalize: bool) -> Ordering {
    rank_score(b, normalize)
        .total_cmp(&rank_score(a, normalize))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Tokens the free-form decoder may emit: content tokens, SEP and EOS.
pub fn generatable_tokens(vocab_size: usize) -> Vec<TokenId> {
    let mut v = vec![EOS, SEP];
    v.extend(crate::codec::RESERVED_TOKENS.len() as TokenId..vocab_size as TokenId);
    v.sort_unstable();
    v
}

/// Beam search over target sequences.
///
/// At every step the `beam_size` best one-token extensions of the live
/// hypotheses are kept; those ending in EOS move to the finished pool.
/// Search stops early once `n_return` hypotheses are finished and no live
/// hypothesis can still beat the worst of them (scores only decrease).
pub fn beam_search(
    params: &ModelParams,
    prompt: &[TokenId],
    config: &GenerationConfig,
    trie: Option<&CodeTrie>,
) -> Result<BeamOutput> {
    config.validate()?;
    check_tokens(params, prompt)?;
    if prompt.is_empty() {
        return Err(GramError::Data("empty prompt".into()));
    }
    let max_len = params.config().max_len;
    if prompt.len() > max_len {
        return Err(GramError::SequenceTooLong {
            len: prompt.len(),
            max: max_len,
        });
    }
    let trie = if config.constrained {
        Some(trie.ok_or_else(|| GramError::Config("constrained decoding needs a code trie".into()))?)
    } else {
        None
    };
    // The final token is never fed back, so it may sit one past max_len.
    let max_tokens = config.max_code_tokens.min(max_len + 1 - prompt.len());
    let free_tokens = generatable_tokens(params.config().vocab_size);

    let decoder = Decoder::new(params);
    let (cache, next) = decoder.prefill(prompt);
    let mut live = vec![Live {
        tokens: Vec::new(),
        token_logprobs: Vec::new(),
        score: 0.0,
        cache,
        next,
        trie_node: 0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..max_tokens {
        // Only EOS can finish on the last step.
        let last_step = step + 1 == max_tokens;
        // (score, live index, token, trie node)
        let mut cands: Vec<(f64, usize, TokenId, usize)> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            match trie {
                Some(t) => {
                    for (tok, node) in t.allowed(h.trie_node) {
                        if last_step && tok != EOS {
                            continue;
                        }
                        cands.push((h.score + h.next[tok as usize], i, tok, node));
                    }
                }
                None => {
                    for &tok in &free_tokens {
                        if last_step && tok != EOS {
                            continue;
                        }
                        cands.push((h.score + h.next[tok as usize], i, tok, 0));
                    }
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(config.beam_size);

        let mut next_live = Vec::new();
        for (score, i, tok, node) in cands {
            let parent = &live[i];
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let mut token_logprobs = parent.token_logprobs.clone();
            token_logprobs.push(parent.next[tok as usize]);
            if tok == EOS {
                finished.push(Hypothesis {
                    tokens,
                    logprob: score,
                    token_logprobs,
                });
            } else {
                next_live.push(Live {
                    tokens,
                    token_logprobs,
                    score,
                    cache: parent.cache.clone(),
                    next: Vec::new(),
                    trie_node: node,
                });
            }
        }
        if next_live.is_empty() {
            break;
        }
        let toks: Vec<TokenId> = next_live.iter().map(|h| *h.tokens.last().unwrap()).collect();
        let mut caches: Vec<&mut KvCache> = next_live.iter_mut().map(|h| &mut h.cache).collect();
        let dist = decoder.step(&mut caches, &toks);
        let v = params.config().vocab_size;
        for (h, row) in next_live.iter_mut().zip(dist.chunks_exact(v)) {
            h.next = row.to_vec();
        }
        live = next_live;

        if !config.length_normalization && finished.len() >= config.n_return {
            finished.sort_by(|a, b| cmp_hyp(a, b, false));
            let bar = finished[config.n_return - 1].logprob;
            let best_live = live.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            if best_live <= bar {
                break;
            }
        }
    }

    finished.sort_by(|a, b| cmp_hyp(a, b, config.length_normalization));
    finished.truncate(config.n_return);
    let incomplete = finished.len() < config.n_return;
    Ok(BeamOutput {
        hypotheses: finished,
        incomplete,
    })
}

/// Trie of every code target in `targets`.
pub fn code_trie<'a>(targets: impl IntoIterator<Item = &'a [TokenId]>) -> CodeTrie {
    CodeTrie::from_sequences(targets)
}

/// Helper for callers holding a vocabulary: decodes hypothesis tokens.
pub fn hypothesis_text(vocab: &Vocabulary, h: &Hypothesis) -> Result<String> {
    crate::codec::decode_code_tokens(vocab, &h.tokens)
}
