//! Losses, gradient verification and the toy trainer.

pub mod gradcheck;
pub mod losses;
pub mod trainer;
pub mod windows;

pub use gradcheck::{check_model_gradient, grad_check, GradCheckOptions, GradCheckReport};
pub use losses::{batch_loss, ft_loss, loss_and_gradient, loss_only, vna_loss, LossConfig, LossValue};
pub use trainer::{learning_rate, train_toy, EpochRecord, TrainConfig, TrainOutcome};
pub use windows::{sample_windows, Windows};
