//! Sequence networks: LSTM cell, shared encoder, and the attentional decoder
//! conditioned on a domain embedding.

mod lstm;
mod model;
mod vocab;

pub use lstm::{lstm_step, LstmParams, LstmVars};
pub use model::{
    attention, attention_context, decode_logprob, decoder_step, default_max_len, encode, encode_sequence,
    generate, greedy_decode, greedy_decode_batch, sample_decode, start_decoder, teacher_forced, DecodeMode,
    Decoded, DecoderState, Encoded, ModelConfig, ModelParams, ModelVars, Source,
};
pub use vocab::{Domain, Sequence, Vocab, BOS, EOS, PAD, RESERVED, RESERVED_TOKENS, UNK};
