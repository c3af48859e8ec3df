//! Code type, vocabulary and prompt/target encoding shared by both
//! generators. A code tokenizes identically regardless of side; only the
//! leading prompt token differs.

mod code;
mod encode;
mod vocab;

pub use code::{Code, Granularity, CODE_DELIMITER, MAX_CODE_ATTRIBUTES};
pub use encode::{
    code_token_len, decode_code_tokens, encode_code, encode_example, encode_prompt, EncodedExample, Side,
};
pub use vocab::{TokenId, Vocabulary, BOS, EOS, PAD, PROMPT_PRODUCT, PROMPT_QUERY, RESERVED_TOKENS, SEP};
