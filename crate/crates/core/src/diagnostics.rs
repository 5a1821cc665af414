//! Non-fatal conditions collected while processing a case. Each renders as
//! one machine-readable `WARN` line.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    /// A side of the cage did not yield the expected number of ribs.
    RibCountMismatch { left: usize, right: usize },
    /// A label spans several disconnected pieces; only the largest is used.
    FragmentedRib { label: u8, fragments: usize },
    /// No voxels carry this label.
    MissingRib { label: u8 },
    /// Centerline extraction failed for one rib.
    RibFailed { label: u8, reason: String },
    /// The centerline had fewer points than the smoothing window.
    SmoothingSkipped { label: u8, points: usize, window: usize },
}

impl Warning {
    /// Warnings that mark a case as partially failed.
    pub fn is_partial_failure(&self) -> bool {
        !matches!(self, Warning::SmoothingSkipped { .. })
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::RibCountMismatch { left, right } => {
                write!(f, "WARN rib_count left={left} right={right}")
            }
            Warning::FragmentedRib { label, fragments } => {
                write!(f, "WARN fragmented_rib label={label} fragments={fragments}")
            }
            Warning::MissingRib { label } => write!(f, "WARN missing_rib label={label}"),
            Warning::RibFailed { label, reason } => {
                write!(f, "WARN rib_failed label={label} reason=\"{reason}\"")
            }
            Warning::SmoothingSkipped {
                label,
                points,
                window,
            } => write!(f, "WARN smoothing_skipped label={label} points={points} window={window}"),
        }
    }
}
