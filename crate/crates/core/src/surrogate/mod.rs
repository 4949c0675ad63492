//! Deep-kernel GP surrogate: fusion MLP, Matérn kernel, exact posterior,
//! expected improvement and marginal-likelihood meta-training.

pub mod acquisition;
pub mod fusion;
pub mod gp;
pub mod kernel;
pub mod meta;

pub use acquisition::{expected_improvement, grad_mu_wrt_graph_latent};
pub use fusion::{FusedRep, Fusion, FusionConfig};
pub use gp::{gp_fit, gp_fit_raw, log_marginal_likelihood, standardization, GpState, LmlOutput, PosteriorStats};
pub use kernel::{matern52, KernelHypers};
pub use meta::{meta_train, MetaDataset, MetaTrainConfig, MetaTrainReport};
