//! Model compression: filter pruning and FP16 post-training quantization.

pub mod fp16;
pub mod prune;
pub mod quantize;

pub use fp16::{f16_bits_to_f32, f32_to_f16_bits, round_to_f16};
pub use prune::{apply_prune, keep_count, plan_prune, prune_spec, pruned_param_count, score_filters, FilterScore, LayerPlan, PruningPlan};
pub use quantize::{max_abs_error, quantize_model};
