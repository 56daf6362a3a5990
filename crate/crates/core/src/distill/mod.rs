//! Distillation losses: generative denoise distillation and the baselines it
//! is compared against, plus the align/generator auxiliaries.

mod config;
mod losses;
mod modules;

pub use config::{DistillConfig, InjectLocation, Method};
pub use losses::{
    align_apply, channel_kl, channel_softmax, cwd_loss, distill_loss, gdd_loss, generate,
    inject_image_noise, logit_kd_loss, mgd_loss, mse_feature_loss, noisy_embedding,
    perturb_student, sn_only_loss, spatial_mask, total_loss, DistillInputs,
};
pub use modules::{AlignModule, Auxiliary, GenerationModule};
