use crate::scalar::Real;

use super::LossBreakdown;

/// Multiplier for box gradients, refreshed from the previous epoch's
/// `total / loc` ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfBalancer<T> {
    /// Weight applied to box gradients during the current epoch.
    pub active_weight: T,
    ratio_sum: T,
    ratio_count: usize,
}

impl<T: Real> Default for SelfBalancer<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> SelfBalancer<T> {
    pub fn new() -> Self {
        SelfBalancer { active_weight: T::one(), ratio_sum: T::zero(), ratio_count: 0 }
    }

    /// Balancer whose current epoch uses `weight`.
    pub fn with_weight(weight: T) -> Self {
        SelfBalancer { active_weight: weight, ..Self::new() }
    }

    /// Records one iteration. Iterations without localisation loss are skipped.
    pub fn observe(&mut self, report: &LossBreakdown<T>) {
        if report.loc_component > T::zero() {
            self.ratio_sum = self.ratio_sum + report.total / report.loc_component;
            self.ratio_count += 1;
        }
    }

    /// Running mean of the ratio over the current epoch, if any iteration counted.
    pub fn running_ratio(&self) -> Option<T> {
        (self.ratio_count > 0).then(|| self.ratio_sum / T::from_usize(self.ratio_count).unwrap())
    }

    /// Closes the epoch: the running mean becomes the active weight.
    pub fn end_epoch(&mut self) {
        if let Some(r) = self.running_ratio() {
            self.active_weight = r;
        }
        self.ratio_sum = T::zero();
        self.ratio_count = 0;
    }
}

/// Weight for the next epoch from a finished epoch's reports.
pub fn self_balance_update<T: Real>(balancer: &SelfBalancer<T>, epoch_reports: &[LossBreakdown<T>]) -> SelfBalancer<T> {
    let mut next = *balancer;
    for r in epoch_reports {
        next.observe(r);
    }
    next.end_epoch();
    next
}
