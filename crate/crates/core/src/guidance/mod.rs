//! Contrastive guidance for implicit diffusion sampling.

pub mod extractor;
pub mod losses;
pub mod pairs;
pub mod sampler;
pub mod svgd;

pub use extractor::{FeatureExtractor, Featurizer, MlpEmbedding};
pub use losses::{hnm_with_grad, info_nce, info_nce_with_grad, HnmParams};
pub use pairs::{select_pairs, BatchState, Pair, PairStrategy, RealData};
pub use sampler::{calibrate_lambda, contrastive_dp_sample, contrastive_grad, GuidanceConfig, LossKind};
pub use svgd::{rbf_kernel, svgd_update};
