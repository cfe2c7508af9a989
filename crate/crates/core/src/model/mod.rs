mod config;
pub mod network;
mod translation;

pub use config::ModelConfig;
pub use network::{
    attend, decode_step, encode, lstm_cell, sequence_loss, AttentionMemory, AttentionWeights, DecoderState,
    DecoderWeights, EncoderOutput, EncoderWeights, LstmWeights, OutputLayer,
};
pub use translation::{proj_bias_name, proj_name, target_tokens_name, words_name, PairNetwork, TranslationModel};
