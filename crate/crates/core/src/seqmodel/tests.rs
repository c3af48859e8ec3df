use super::*;
use crate::codec::{TokenId, EOS, PROMPT_QUERY, SEP};
use crate::error::GramError;

fn tiny(vocab: usize, width: usize, std: f64, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        vocab_size: vocab,
        max_len: 12,
        d_model: width,
        n_heads: 2,
        n_layers: 2,
        d_ff: 2 * width,
        init_std: std,
    };
    ModelParams::init(cfg, seed).unwrap()
}

struct Nll;

struct Pair {
    prompt: Vec<TokenId>,
    target: Vec<TokenId>,
}

impl SequenceObjective for Nll {
    type Item = Pair;
    fn sequences<'a>(&self, item: &'a Pair) -> Vec<SequenceRef<'a>> {
        vec![SequenceRef {
            prompt: &item.prompt,
            target: &item.target,
        }]
    }
    fn evaluate(&self, _item: &Pair, lp: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let loss = -lp[0].iter().sum::<f64>();
        (loss, vec![vec![-1.0; lp[0].len()]])
    }
}

fn items() -> Vec<Pair> {
    vec![
        Pair { prompt: vec![PROMPT_QUERY, 6, 7], target: vec![8, SEP, 9, EOS] },
        Pair { prompt: vec![PROMPT_QUERY, 9], target: vec![6, EOS] },
        Pair { prompt: vec![PROMPT_QUERY, 7, 7, 8], target: vec![7, SEP, 6, SEP, 9, EOS] },
    ]
}

#[test]
fn zero_output_layer_gives_uniform_distribution() {
    let mut p = tiny(10, 8, 0.1, 3);
    let spec = p.tensors().iter().find(|t| t.name == "w_out").unwrap().clone();
    p.data_mut()[spec.offset..spec.offset + spec.len()].fill(0.0);
    let lp = token_logprobs(&p, &[PROMPT_QUERY, 6], &[7, EOS]).unwrap();
    for v in lp {
        assert!((v + (10f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn sequences_of_fixed_length_sum_to_one() {
    let p = tiny(8, 8, 0.3, 5);
    let mut total = 0.0;
    for a in 0..8u32 {
        for b in 0..8u32 {
            total += sequence_logprob(&p, &[PROMPT_QUERY, 6], &[a, b]).unwrap().exp();
        }
    }
    assert!((total - 1.0).abs() < 1e-10, "{total}");
}

#[test]
fn incremental_decoding_matches_teacher_forcing() {
    let p = tiny(12, 16, 0.3, 7);
    let cfg = GenerationConfig { beam_size: 6, n_return: 6, max_code_tokens: 5, ..Default::default() };
    let prompt = [PROMPT_QUERY, 6, 9, 10];
    let out = beam_search(&p, &prompt, &cfg, None).unwrap();
    assert!(!out.hypotheses.is_empty());
    for h in &out.hypotheses {
        let tf = token_logprobs(&p, &prompt, &h.tokens).unwrap();
        for (a, b) in tf.iter().zip(&h.token_logprobs) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((h.logprob - tf.iter().sum::<f64>()).abs() < 1e-10);
    }
}

fn enumerate(p: &ModelParams, prompt: &[TokenId], max_tokens: usize) -> Vec<(Vec<TokenId>, f64)> {
    let allowed = generatable_tokens(p.config().vocab_size);
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<TokenId>> = vec![vec![]];
    for _ in 0..max_tokens {
        let mut next = Vec::new();
        for prefix in frontier {
            for &t in &allowed {
                let mut s = prefix.clone();
                s.push(t);
                if t == EOS {
                    let lp = sequence_logprob(p, prompt, &s).unwrap();
                    out.push((s, lp));
                } else {
                    next.push(s);
                }
            }
        }
        frontier = next;
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

#[test]
fn wide_beam_recovers_exact_top_sequences() {
    let p = tiny(8, 8, 0.5, 11);
    let prompt = [PROMPT_QUERY, 7];
    let exact = enumerate(&p, &prompt, 4);
    let cfg = GenerationConfig { beam_size: 64, n_return: 10, max_code_tokens: 4, ..Default::default() };
    let out = beam_search(&p, &prompt, &cfg, None).unwrap();
    assert_eq!(out.hypotheses.len(), 10);
    for (h, (seq, lp)) in out.hypotheses.iter().zip(&exact) {
        assert_eq!(&h.tokens, seq);
        assert!((h.logprob - lp).abs() < 1e-10);
    }
}

#[test]
fn beam_of_one_is_greedy() {
    let p = tiny(9, 8, 0.5, 13);
    let prompt = [PROMPT_QUERY, 6];
    let cfg = GenerationConfig { beam_size: 1, n_return: 1, max_code_tokens: 6, ..Default::default() };
    let out = beam_search(&p, &prompt, &cfg, None).unwrap();
    let allowed = generatable_tokens(9);
    let mut seq: Vec<TokenId> = Vec::new();
    for step in 0..6 {
        let choices: &[TokenId] = if step == 5 { &[EOS] } else { &allowed };
        let mut best = (f64::NEG_INFINITY, 0);
        for &t in choices {
            let mut s = seq.clone();
            s.push(t);
            let lp = *token_logprobs(&p, &prompt, &s).unwrap().last().unwrap();
            if lp > best.0 {
                best = (lp, t);
            }
        }
        seq.push(best.1);
        if best.1 == EOS {
            break;
        }
    }
    assert_eq!(out.hypotheses[0].tokens, seq);
}

#[test]
fn last_step_only_spends_slots_on_eos() {
    let p = tiny(9, 8, 0.5, 101);
    let prompt = [PROMPT_QUERY, 7];
    for max_tokens in 1..=3 {
        let exact = enumerate(&p, &prompt, max_tokens);
        let cfg = GenerationConfig {
            beam_size: exact.len(),
            n_return: exact.len(),
            max_code_tokens: max_tokens,
            ..Default::default()
        };
        let out = beam_search(&p, &prompt, &cfg, None).unwrap();
        assert!(!out.incomplete);
        let got: Vec<_> = out.hypotheses.iter().map(|h| h.tokens.clone()).collect();
        let want: Vec<_> = exact.iter().map(|(s, _)| s.clone()).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn constrained_search_stays_in_trie() {
    let p = tiny(10, 8, 0.5, 17);
    let seqs: Vec<Vec<TokenId>> = vec![vec![6, EOS], vec![7, SEP, 8, EOS], vec![9, SEP, 6, EOS]];
    let trie = code_trie(seqs.iter().map(|s| s.as_slice()));
    let cfg = GenerationConfig { beam_size: 5, n_return: 3, constrained: true, ..Default::default() };
    let out = beam_search(&p, &[PROMPT_QUERY, 8], &cfg, Some(&trie)).unwrap();
    assert_eq!(out.hypotheses.len(), 3);
    for h in &out.hypotheses {
        assert!(trie.contains(&h.tokens));
    }
    let cfg_missing = GenerationConfig { constrained: true, ..cfg };
    assert!(matches!(beam_search(&p, &[PROMPT_QUERY], &cfg_missing, None), Err(GramError::Config(_))));
}

#[test]
fn out_of_range_token_is_rejected() {
    let p = tiny(8, 8, 0.1, 1);
    assert!(matches!(
        token_logprobs(&p, &[PROMPT_QUERY, 8], &[EOS]),
        Err(GramError::TokenOutOfRange { id: 8, size: 8 })
    ));
}

#[test]
fn too_long_sequence_is_rejected() {
    let p = tiny(8, 8, 0.1, 1);
    let target = vec![6; 12];
    assert!(matches!(
        token_logprobs(&p, &[PROMPT_QUERY, 7], &target),
        Err(GramError::SequenceTooLong { .. })
    ));
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let p = tiny(12, 16, 0.3, 21);
    let report = check_model_gradient(&p, &items(), &Nll, 64, 1e-5, 9).unwrap();
    assert!(report.probes.len() >= 32);
    assert!(report.max_rel_error < 1e-5, "{:?}", report.max_rel_error);
}

#[test]
fn gradient_with_dropout_is_deterministic() {
    let p = tiny(12, 16, 0.3, 21);
    let d = Some(DropoutSpec { p: 0.2, seed: 4 });
    let a = loss_grad(&p, &items(), &Nll, d).unwrap();
    let b = loss_grad(&p, &items(), &Nll, d).unwrap();
    assert_eq!(a.loss, b.loss);
    assert_eq!(a.grad, b.grad);
    let plain = loss_grad(&p, &items(), &Nll, None).unwrap();
    assert_ne!(a.loss, plain.loss);
}

#[test]
fn loss_matches_forward_only_evaluation() {
    let p = tiny(12, 16, 0.3, 2);
    let lg = loss_grad(&p, &items(), &Nll, None).unwrap();
    let l = objective_loss(&p, &items(), &Nll).unwrap();
    assert!((lg.loss - l).abs() < 1e-12);
}

#[test]
fn training_reduces_loss() {
    let mut p = tiny(12, 16, 0.1, 8);
    let data = items();
    let mut opt = AdamW::new(p.len(), AdamWConfig { lr: 1e-2, ..Default::default() }).unwrap();
    let first = objective_loss(&p, &data, &Nll).unwrap();
    for _ in 0..60 {
        let lg = loss_grad(&p, &data, &Nll, None).unwrap();
        opt.step(p.data_mut(), &lg.grad).unwrap();
    }
    let last = objective_loss(&p, &data, &Nll).unwrap();
    assert!(last < 0.2 * first, "{first} -> {last}");
}
