//! Two validation layers over parsed batches.
//!
//! The structural layer enforces field presence, types and numeric ranges and
//! decides acceptance. The geometric layer checks box ordering and image bounds
//! and only ever warns or sanitizes; it never rejects a batch. Neither layer
//! says anything about whether a box actually contains a person.

mod geometric;
mod structural;

use serde::{Deserialize, Serialize};

use crate::contract::ContractWarning;

pub use geometric::{
    clamp_box, validate_geometric, violations, GeometricOutcome, GeometricViolation,
    GeometricWarning, GeometryPolicy, SanitizedBox,
};
pub use structural::{
    detection_to_value, validate_and_type, validate_structural, StructuralError,
    StructuralErrorKind,
};

/// Machine-readable validation result for one batch, written as
/// `<stem>.report.json` next to the detections artifact.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub batch_index: usize,
    pub structural_errors: Vec<StructuralError>,
    pub geometric_warnings: Vec<GeometricWarning>,
    #[serde(default)]
    pub contract_warnings: Vec<ContractWarning>,
}

impl ValidationReport {
    pub fn new(batch_index: usize) -> Self {
        Self {
            batch_index,
            ..Self::default()
        }
    }

    /// A batch is accepted iff it has no structural errors.
    pub fn accepted(&self) -> bool {
        self.structural_errors.is_empty()
    }

    /// Frames that carry at least one structural error.
    pub fn rejected_frames(&self) -> std::collections::BTreeSet<u32> {
        self.structural_errors.iter().map(|e| e.frame_index).collect()
    }
}
