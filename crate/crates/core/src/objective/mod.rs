//! Training objective and evaluation metrics.

mod loss;
mod metrics;

pub use loss::{
    ce_soft, ce_soft_with_grad, mse_attr, mse_attr_with_grad, softmax, total_loss,
    total_loss_with_grad, LossBreakdown, LossConfig,
};
pub use metrics::{confusion_matrix, macro_f1, metrics, micro_f1, ConfusionMatrix, Metrics};
