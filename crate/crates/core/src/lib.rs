//! Meta-learning for cancer classification from gene-expression profiles.
//!
//! A classifier for one small target dataset is trained with help from
//! several related source datasets: each source adapts a throwaway copy of
//! the weights with one SGD step, and the base weights are updated with
//! Adam on a λ-weighted blend of the target loss and the adapted source
//! losses. Plain training and pretrain-then-finetune transfer are provided
//! as baselines, together with cross-validation, a λ sweep, Shapley
//! attributions and a synthetic task-family generator.
//!
//! ```
//! use genemeta::{generate_task_family, train_meta, Architecture, MetaConfig, ModelConfig, SynthSpec};
//!
//! let spec = SynthSpec { source_samples: 30, target_samples: 20, n_features: 8, signal_dim: 3, ..Default::default() };
//! let family = generate_task_family(&spec)?;
//! let mut model = ModelConfig::new(Architecture::Mlp, 8);
//! model.hidden = vec![4];
//! let config = MetaConfig { epochs: 2, batch_size: 8, lambda: 0.5, ..Default::default() };
//! let (params, log) = train_meta(&config, &model, &family.sources, &family.target)?;
//! assert_eq!(log.len(), 2 * 3);
//! assert!(params.is_finite());
//! # Ok::<(), genemeta::Error>(())
//! ```

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod models;
pub mod rng;
pub mod synth;
pub mod train;

pub use autodiff::{Tape, Tensor, Var};
pub use data::{ExpressionDataset, FoldSplit, GeneInteractionSet, NormalizationStats};
pub use error::{Error, Result};
pub use eval::{CvConfig, CvResult, MetricsReport, SweepRow};
pub use explain::{shapley_exact, shapley_sampled, Attribution, Scorer};
pub use models::{Architecture, Checkpoint, ModelConfig, ModelParams, ParamGrads};
pub use synth::{generate_task_family, SynthSpec, TaskFamily};
pub use train::{train, train_meta, train_plain, train_transfer, MetaConfig, TrainLog, TrainerKind};
