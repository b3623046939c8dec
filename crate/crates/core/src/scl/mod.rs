//! Supervised contrastive learning at desk scale.

pub mod augment;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod nn;
pub mod train;

pub use augment::{make_multiview_batch, Augmentation, AugmentationPair, MultiviewBatch};
pub use loss::{cross_entropy, cross_entropy_with_logits, positive_sets, scl_loss, scl_loss_grad, softmax};
pub use matrix::{normalize_rows, Matrix};
pub use nn::{Encoder, EncoderShape, LinearHead, ProjectionHead};
pub use train::{evaluate_topk, topk_accuracy, train_stage1, train_stage2, LabeledImages, Stage1Model, Stage2Model, TrainConfig};
