//! Training-loop building blocks.

pub mod batch;
pub mod config;
pub mod encoder;
pub mod epoch;
pub mod loss;
pub mod proxy;
pub mod schedule;

pub use batch::{make_batches, Batch};
pub use config::{ClusterPath, EvalWeights, PipelineConfig};
pub use encoder::{encoder_forward, Affine, EncoderState};
pub use epoch::{train_iteration, train_on_batches, EpochStats, StepParams};
pub use loss::{loss_hard, loss_proxy, loss_total, LossOutput, TotalLoss};
pub use proxy::{select_proxies, ProxyMode, ProxySet};
pub use schedule::{learning_rate, LrSchedule};
