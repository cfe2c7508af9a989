mod bleu;
mod decode;
mod evaluate;
mod report;
mod translate;

pub use bleu::{corpus_bleu, token_accuracy};
pub use decode::{beam_search, greedy_decode, greedy_decode_batch, length_penalty, DecodeOptions, Hypothesis};
pub use evaluate::{decode_all, score_ids, IdScores};
pub use report::{EvalReport, EvalRow};
pub use translate::{pivot_translate, translate, translate_ids, PivotTranslation};
