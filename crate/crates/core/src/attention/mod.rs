//! Sparse attention: mask families, masked scaled dot-product kernels
//! (dense reference and band-sparse), and the multi-head wrapper.

pub mod mask;
pub mod mha;
pub mod ops;

pub use mask::{
    build_band_mask, build_causal_band_mask, build_full_mask, build_hybrid_mask, AttentionMask,
    HybridQuery, MaskSpec,
};
pub use mha::{
    multi_head_attention, multi_head_attention_backward, multi_head_attention_fwd, AttnRoute,
    MhaCache, MhaParams,
};
pub use ops::{
    attention_band, attention_band_backward, attention_band_fwd, attention_dense,
    attention_dense_backward, attention_dense_fwd, macs, reset_macs, BandAttnCache,
    DenseAttnCache,
};
