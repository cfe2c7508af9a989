//! Tokenization, vocabularies and BPE subwords.

mod bpe;
mod tokenize;
mod vocab;

pub use bpe::{apply_bpe, learn_bpe, reconstruct_word, BpeModel, END_OF_WORD};
pub use tokenize::{detokenize, tokenize};
pub use vocab::{
    count_tokens, decode_sentence, encode_sentence, Vocabulary, BOS, EOS, NUM_SPECIALS, PAD, SPECIAL_TOKENS, UNK,
};
