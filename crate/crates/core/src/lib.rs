pub mod ablation;
pub mod clip;
pub mod config;
pub mod conformer;
pub mod curves;
pub mod distill;
pub mod ecam;
mod error;
pub mod losses;
pub mod nn;
pub mod prompts;
pub mod samples;
pub mod text;
pub mod vocab;

pub use ablation::{prompt_param_count, AblationVariant};
pub use clip::{
    build_clip_loss, clip_losses, load_clip, predict, save_clip, train_teacher, ClipBatchState,
    ClipLosses, ClipModel, ClipSpec, HeadNames, Pairing, Predictions, TrainRunConfig, TrainSummary,
};
pub use config::{ConformerConfig, Pooling, PromptMode, TextEncoderConfig};
pub use conformer::{
    count_flops, count_params, linear_flops, EegEncoder, EegTrace, LayerFlops, ParamCount,
};
pub use curves::CurvePoint;
pub use distill::{
    build_distill_loss, distill, distill_loss, init_student, kl_divergence, load_student,
    save_student, DistillConfig, DistillLosses, DistillSummary, KlDirection, StudentModel,
    StudentSpec,
};
pub use ecam::{ecam, normalize_map, ChannelMap, EcamMethod};
pub use error::{CoreError, Result};
pub use prompts::{build_prompts, ClassTemplate, PromptTemplateSet};
pub use samples::Samples;
pub use text::{count_text_params, TextEncoder, TextTrace, HANDCRAFTED_PREFIX};
pub use vocab::{tokenize, Tokenized, Vocabulary};
