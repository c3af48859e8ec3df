use rand::Rng;

use super::params::ModelParams;
use super::tape::{NodeId, Tape};
use crate::codec::TokenId;
use crate::error::{GramError, Result};

pub(crate) fn check_tokens(params: &ModelParams, tokens: &[TokenId]) -> Result<()> {
    let size = params.config().vocab_size;
    for &t in tokens {
        if t as usize >= size {
            return Err(GramError::TokenOutOfRange { id: t, size });
        }
    }
    Ok(())
}

pub(crate) fn check_lengths(params: &ModelParams, prompt: &[TokenId], target: &[TokenId]) -> Result<()> {
    if prompt.is_empty() {
        return Err(GramError::Data("prompt must contain at least the prompt token".into()));
    }
    if target.is_empty() {
        return Err(GramError::Data("target must not be empty".into()));
    }
    // The last target token is predicted but never fed back in.
    let len = prompt.len() + target.len() - 1;
    let max = params.config().max_len;
    if len > max {
        return Err(GramError::SequenceTooLong { len, max });
    }
    check_tokens(params, prompt)?;
    check_tokens(params, target)
}

/// Records a teacher-forced forward pass. Returns the tape and the node
/// holding one log-probability per target token.
pub(crate) fn forward<'p, R: Rng + ?Sized>(
    params: &'p ModelParams,
    prompt: &[TokenId],
    target: &[TokenId],
    dropout: Option<(f64, &mut R)>,
) -> Result<(Tape<'p>, NodeId)> {
    check_lengths(params, prompt, target)?;
    let cfg = params.config();
    let ids = &params.ids;
    let mut input: Vec<TokenId> = Vec::with_capacity(prompt.len() + target.len());
    input.extend_from_slice(prompt);
    input.extend_from_slice(&target[..target.len() - 1]);

    let mut tape = Tape::new(params);
    let (p_drop, mut rng) = match dropout {
        Some((p, rng)) => (p, Some(rng)),
        None => (0.0, None),
    };
    let mut x = tape.embed(&input);
    for layer in &ids.layers {
        let a = tape.layer_norm(x, layer.ln1_g, layer.ln1_b);
        let qkv = tape.linear(a, layer.w_qkv, layer.b_qkv);
        let att = tape.attention(qkv, cfg.n_heads);
        let mut o = tape.linear(att, layer.w_o, layer.b_o);
        if let Some(r) = rng.as_deref_mut() {
            o = tape.dropout(o, p_drop, r);
        }
        x = tape.add(x, o);

        let a = tape.layer_norm(x, layer.ln2_g, layer.ln2_b);
        let h = tape.linear(a, layer.w_ff1, layer.b_ff1);
        let h = tape.gelu(h);
        let mut h = tape.linear(h, layer.w_ff2, layer.b_ff2);
        if let Some(r) = rng.as_deref_mut() {
            h = tape.dropout(h, p_drop, r);
        }
        x = tape.add(x, h);
    }
    let x = tape.layer_norm(x, ids.lnf_g, ids.lnf_b);
    let rows: Vec<usize> = (0..target.len()).map(|i| prompt.len() - 1 + i).collect();
    let out = tape.target_logprobs(x, &rows, target, ids.w_out, ids.b_out);
    Ok((tape, out))
}

/// `log Pr(target_i | prompt, target_<i)` for every target position.
pub fn token_logprobs(params: &ModelParams, prompt: &[TokenId], target: &[TokenId]) -> Result<Vec<f64>> {
    let (tape, out) = forward::<rand_chacha::ChaCha8Rng>(params, prompt, target, None)?;
    Ok(tape.value(out).to_vec())
}

/// Log-probability of the whole target sequence.
pub fn sequence_logprob(params: &ModelParams, prompt: &[TokenId], target: &[TokenId]) -> Result<f64> {
    Ok(token_logprobs(params, prompt, target)?.iter().sum())
}
