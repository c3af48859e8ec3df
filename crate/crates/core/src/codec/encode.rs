use serde::{Deserialize, Serialize};

use super::code::Code;
use super::vocab::{TokenId, Vocabulary, EOS, PROMPT_PRODUCT, PROMPT_QUERY, SEP};
use crate::error::{GramError, Result};

/// Which generator a prompt addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Query,
    Product,
}

impl Side {
    /// Leading reserved token of the side's prompt template.
    pub fn prompt_token(self) -> TokenId {
        match self {
            Side::Query => PROMPT_QUERY,
            Side::Product => PROMPT_PRODUCT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub prompt: Vec<TokenId>,
    pub target: Vec<TokenId>,
    /// Input tokens were dropped to respect the length limit.
    pub truncated: bool,
}

/// `[PROMPT_side] + tokens(text)`, truncated so that at most `max_prompt`
/// tokens remain.
pub fn encode_prompt(vocab: &Vocabulary, side: Side, text: &str, max_prompt: usize) -> (Vec<TokenId>, bool) {
    let mut prompt = vec![side.prompt_token()];
    prompt.extend(vocab.encode_text_lossy(text));
    let truncated = prompt.len() > max_prompt;
    prompt.truncate(max_prompt.max(1));
    (prompt, truncated)
}

/// Code values separated by SEP, terminated by EOS.
pub fn encode_code(vocab: &Vocabulary, code: &Code) -> Result<Vec<TokenId>> {
    let mut out = Vec::with_capacity(code.len() * 2);
    for (i, v) in code.values().enumerate() {
        if i > 0 {
            out.push(SEP);
        }
        out.push(vocab.id(v)?);
    }
    out.push(EOS);
    Ok(out)
}

/// Target length of a code with `n` attributes.
pub fn code_token_len(n: usize) -> usize {
    2 * n
}

/// Builds a training example. The input is truncated, never the target.
pub fn encode_example(
    vocab: &Vocabulary,
    side: Side,
    input_text: &str,
    code: &Code,
    max_len: usize,
) -> Result<EncodedExample> {
    if code.is_empty() {
        return Err(GramError::InvalidCode("empty code".into()));
    }
    let target = encode_code(vocab, code)?;
    let mut prompt = vec![side.prompt_token()];
    prompt.extend(vocab.encode_text(input_text)?);
    let budget = max_len.saturating_sub(target.len());
    if budget == 0 {
        return Err(GramError::SequenceTooLong {
            len: target.len() + 1,
            max: max_len,
        });
    }
    let truncated = prompt.len() > budget;
    prompt.truncate(budget);
    Ok(EncodedExample {
        prompt,
        target,
        truncated,
    })
}

/// Inverse of [`encode_code`] up to the lexicon check: returns the
/// comma-joined string, or an error if the token layout is not
/// `value (SEP value)* EOS`.
pub fn decode_code_tokens(vocab: &Vocabulary, tokens: &[TokenId]) -> Result<String> {
    let malformed = |why: &str| GramError::InvalidCode(format!("malformed code tokens: {why}"));
    let Some((&last, body)) = tokens.split_last() else {
        return Err(malformed("empty"));
    };
    if last != EOS {
        return Err(malformed("missing EOS"));
    }
    if body.is_empty() {
        return Err(malformed("no values"));
    }
    let mut s = String::new();
    for (i, &t) in body.iter().enumerate() {
        if i % 2 == 1 {
            if t != SEP {
                return Err(malformed("expected separator"));
            }
            s.push(super::CODE_DELIMITER);
        } else {
            if Vocabulary::is_reserved(t) {
                return Err(malformed("reserved token in value position"));
            }
            s.push_str(vocab.token(t)?);
        }
    }
    if body.len() % 2 == 0 {
        return Err(malformed("trailing separator"));
    }
    Ok(s)
}
