//! Price/factor ingestion, lagged feature tensors and sample splits.

mod features;
mod panel;

pub use features::{
    moving_average, normalize, rolling_factor_exposures, FeatureConfig, FeaturePanel,
    FeatureTensor, EXPOSURE_WINDOW, MA_WINDOWS,
};
pub use panel::{load_factors, load_prices, FactorColumns, FactorPanel, PricePanel};
pub(crate) use panel::csv_reader;


use crate::error::{Error, Result};

/// Exclusive day-index ends of the training, validation and testing spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_end: usize,
    pub valid_end: usize,
    pub test_end: usize,
}

impl SplitSpec {
    pub fn new(train_end: usize, valid_end: usize, test_end: usize) -> Result<Self> {
        let s = SplitSpec { train_end, valid_end, test_end };
        s.validate(test_end)?;
        Ok(s)
    }

    /// Checks `0 < train_end < valid_end < test_end <= n_days`.
    pub fn validate(&self, n_days: usize) -> Result<()> {
        if 0 < self.train_end
            && self.train_end < self.valid_end
            && self.valid_end < self.test_end
            && self.test_end <= n_days
        {
            Ok(())
        } else {
            Err(Error::Spec(format!(
                "split {}/{}/{} invalid for {n_days} days",
                self.train_end, self.valid_end, self.test_end
            )))
        }
    }

    /// Splits with fixed validation and test lengths ending at `n_days`.
    pub fn from_tail(n_days: usize, valid_len: usize, test_len: usize) -> Result<Self> {
        let valid_end = n_days.checked_sub(test_len);
        let train_end = valid_end.and_then(|v| v.checked_sub(valid_len));
        match (train_end, valid_end) {
            (Some(tr), Some(va)) => SplitSpec::new(tr, va, n_days),
            _ => Err(Error::Spec(format!(
                "{n_days} days cannot hold {valid_len} validation and {test_len} test days"
            ))),
        }
    }
}
