//! The fixed sub-center head: bank construction, forward pass, losses and
//! feature gradients.

mod bank;
mod loss;

pub use bank::{
    init_centers, kaiming_bound, sample_subcenters, sample_trainable_subcenters, BankHeader,
    DispersionStats, SubCenterBank,
};
pub use loss::{
    assign, compactness_loss, forward, fsc_loss, fsc_loss_with, head_gradients, loss_grad_features,
    AssignmentRule, FeatureBatch, HeadGradients, HeadOutput, LossBreakdown, LossOptions,
};
