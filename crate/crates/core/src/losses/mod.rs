//! Concrete ranking losses built on the error-driven gradient assembly.

mod alrp;
mod ap;
mod balance;
mod ndcg;

pub use alrp::{alrp_loss, alrp_soft_weights, lrp_per_positive, wrong_target_alrp, AlrpDef};
pub use ap::{ap_loss, ApDef};
pub use balance::{self_balance_update, SelfBalancer};
pub use ndcg::{ndcg_loss, ndcg_max_gain, NdcgDef};

use crate::ranking::{Scenario, StepKind};
use crate::scalar::Real;

/// Loss value, its components and all gradients for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub cls_component: T,
    pub loc_component: T,
    /// `dL/ds` per anchor.
    pub score_grads: Vec<T>,
    /// `dL/dB` per positive, aligned with [`LossBreakdown::positives`].
    pub box_grads: Vec<[T; 4]>,
    /// Anchor index of each positive, in anchor order.
    pub positives: Vec<usize>,
    pub sb_weight_applied: T,
    pub step: StepKind<T>,
    /// `(1/Z) sum_ij L_ij`.
    pub primary_sum: T,
    /// `(1/Z) sum_ij L*_ij`.
    pub target_sum: T,
    /// Number of positives whose box gradient was taken at a kink.
    pub nonsmooth: usize,
}

impl<T: Real> LossBreakdown<T> {
    pub fn positive_grad_sum(&self, scenario: &Scenario<T>) -> T {
        scenario.positive_indices().iter().map(|&i| self.score_grads[i].abs()).sum()
    }

    pub fn negative_grad_sum(&self, scenario: &Scenario<T>) -> T {
        scenario.negative_indices().iter().map(|&j| self.score_grads[j].abs()).sum()
    }

    /// `sum_N |dL/ds| / sum_P |dL/ds|`; 1 when both sides vanish.
    pub fn balance_ratio(&self, scenario: &Scenario<T>) -> T {
        let p = self.positive_grad_sum(scenario);
        let n = self.negative_grad_sum(scenario);
        if p == T::zero() && n == T::zero() {
            T::one()
        } else {
            n / p
        }
    }
}
