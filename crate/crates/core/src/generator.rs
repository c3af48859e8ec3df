//! Code generation for queries and products on top of beam search.

use crate::codec::{decode_code_tokens, encode_code, encode_prompt, Code, Side, TokenId, Vocabulary};
use crate::corpus::Lexicon;
use crate::error::Result;
use crate::seqmodel::{beam_search, token_logprobs, CodeTrie, GenerationConfig, ModelParams};

/// A generated code with the per-token log-probabilities of its target
/// sequence (values, separators and EOS).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCode {
    pub code: Code,
    pub token_logprobs: Vec<f64>,
}

impl GeneratedCode {
    pub fn logprob(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }

    pub fn token_probs(&self) -> Vec<f64> {
        self.token_logprobs.iter().map(|l| l.exp()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Generation {
    pub codes: Vec<GeneratedCode>,
    /// Finished hypotheses that did not parse as codes.
    pub rejected: usize,
    /// Beam search returned fewer than `n_return` hypotheses.
    pub incomplete: bool,
}

/// Borrowed view of everything needed to turn text into codes.
#[derive(Clone, Copy)]
pub struct CodeGenerator<'a> {
    pub params: &'a ModelParams,
    pub vocab: &'a Vocabulary,
    pub lexicon: &'a Lexicon,
    pub config: &'a GenerationConfig,
    pub trie: Option<&'a CodeTrie>,
}

impl<'a> CodeGenerator<'a> {
    /// Longest prompt that still leaves room for a maximal code.
    pub fn max_prompt(&self) -> usize {
        (self.params.config().max_len + 1).saturating_sub(self.config.max_code_tokens).max(1)
    }

    pub fn prompt(&self, side: Side, text: &str) -> Vec<TokenId> {
        encode_prompt(self.vocab, side, text, self.max_prompt()).0
    }

    pub fn generate(&self, side: Side, text: &str) -> Result<Generation> {
        let prompt = self.prompt(side, text);
        let out = beam_search(self.params, &prompt, self.config, self.trie)?;
        let mut gen = Generation {
            incomplete: out.incomplete,
            ..Default::default()
        };
        for h in out.hypotheses {
            let parsed = decode_code_tokens(self.vocab, &h.tokens).and_then(|s| Code::parse(&s, self.lexicon));
            match parsed {
                Ok(code) => gen.codes.push(GeneratedCode {
                    code,
                    token_logprobs: h.token_logprobs,
                }),
                Err(_) => gen.rejected += 1,
            }
        }
        Ok(gen)
    }

    /// Teacher-forced log-probabilities of `code` given `text`.
    pub fn score(&self, side: Side, text: &str, code: &Code) -> Result<Vec<f64>> {
        let prompt = self.prompt(side, text);
        let target = encode_code(self.vocab, code)?;
        token_logprobs(self.params, &prompt, &target)
    }
}

/// Trie over the token sequences of `codes`, for constrained decoding.
pub fn build_code_trie<'c>(vocab: &Vocabulary, codes: impl IntoIterator<Item = &'c Code>) -> Result<CodeTrie> {
    let mut trie = CodeTrie::new();
    for c in codes {
        trie.insert(&encode_code(vocab, c)?);
    }
    Ok(trie)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{generator, init_model, registry_trie, stage_sft};
    use crate::testutil::small_data;

    #[test]
    fn constrained_generation_stays_in_registry() {
        let (mut cfg, data) = small_data();
        cfg.engine.generation.constrained = true;
        let params = stage_sft(&cfg, &data).unwrap().params;
        let trie = registry_trie(&data).unwrap();
        let gen = generator(&cfg, &data, &params, Some(&trie));
        let registry: std::collections::BTreeSet<&Code> = data.sft_examples.iter().map(|e| &e.code).collect();
        for q in data.test_queries.iter().take(5) {
            let g = gen.generate(Side::Query, &q.text).unwrap();
            assert!(!g.codes.is_empty(), "{:?} {} {}", g.codes.len(), g.rejected, g.incomplete);
            assert!(g.codes.len() <= cfg.engine.generation.n_return);
            assert_eq!(g.rejected, 0);
            for c in &g.codes {
                assert!(registry.contains(&c.code));
                let scored = gen.score(Side::Query, &q.text, &c.code).unwrap();
                assert_eq!(scored.len(), c.token_logprobs.len());
                for (a, b) in scored.iter().zip(&c.token_logprobs) {
                    assert!((a - b).abs() < 1e-9);
                }
                assert!(c.token_probs().iter().all(|p| *p > 0.0 && *p <= 1.0));
            }
            for w in g.codes.windows(2) {
                assert!(w[0].logprob() >= w[1].logprob());
            }
        }
    }

    #[test]
    fn prompts_leave_room_for_a_full_code() {
        let (cfg, data) = small_data();
        let params = init_model(&cfg, &data.vocab).unwrap();
        let gen = generator(&cfg, &data, &params, None);
        let long = format!("{} ", data.products()[0].title).repeat(20);
        let p = gen.prompt(Side::Product, &long);
        assert!(p.len() <= gen.max_prompt());
        assert_eq!(p.len() + cfg.engine.generation.max_code_tokens, params.config().max_len + 1);
    }
}
