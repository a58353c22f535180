//! Pass/fail rows shared by the verification suites and the report layer.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The check could not run because a required quantity is infinite.
    SkippedInfinite,
    /// The check was disabled or not applicable for this configuration.
    Skipped,
}

/// One verification row. `margin` is the slack of the inequality being
/// checked, in the units stated by `detail` (absolute tolerance or Monte
/// Carlo standard errors); positive margins pass.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub status: CheckStatus,
    pub margin: f64,
    pub detail: String,
    /// Rows backed by a proved statement abort CI on failure; fitted-constant
    /// rows are informational and never fail.
    pub theorem_backed: bool,
}

impl CheckRow {
    pub fn bound(name: &str, lhs: f64, rhs: f64, slack: f64, detail: &str) -> Self {
        let margin = rhs + slack - lhs;
        Self {
            name: name.into(),
            status: if margin >= 0.0 {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            margin,
            detail: format!("{lhs} <= {rhs} (+{slack}); {detail}"),
            theorem_backed: true,
        }
    }

    pub fn info(name: &str, value: f64, detail: &str) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::Pass,
            margin: value,
            detail: detail.into(),
            theorem_backed: false,
        }
    }

    pub fn skipped_infinite(name: &str, detail: &str) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::SkippedInfinite,
            margin: f64::NAN,
            detail: detail.into(),
            theorem_backed: true,
        }
    }

    pub fn passed(&self) -> bool {
        !(self.theorem_backed && self.status == CheckStatus::Fail)
    }
}
