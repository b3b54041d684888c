use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{EvalOptions, SlotScores};
use super::probe::ClassificationScores;
use crate::error::{Result, UdorError};
use crate::networks::ArchitectureConfig;
use crate::synthdata::SlotLayout;

pub const CSV_HEADER: &str = "method,part_length,offset,T,D,M,V,M_identity,V_identity,clearance_before,clearance_after,C-P,C-R,O-P,O-R,micro_f1,macro_f1,degenerate";

/// Evaluation summary. `modularity`/`integrity` average the per-slot scores
/// under the identified slot→part map; the `_identity` fields read part `k`
/// for slot `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default)]
    pub method: Option<String>,
    pub modularity: f64,
    pub integrity: f64,
    pub modularity_identity: f64,
    pub integrity_identity: f64,
    pub clearance_before: f64,
    pub clearance_after: f64,
    pub per_class_precision: Option<f64>,
    pub per_class_recall: Option<f64>,
    pub overall_precision: Option<f64>,
    pub overall_recall: Option<f64>,
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    pub groups: usize,
    pub per_group: usize,
    pub n_parts: i64,
    pub part_length: i64,
    pub offset: usize,
    pub slot_to_part: Vec<usize>,
    /// The per-slot best parts collided and an injective assignment was used.
    pub degenerate: bool,
    pub variance_ratios: Vec<Vec<f64>>,
    pub slots: Vec<SlotScores>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c.max(1) as f64
}

impl MetricReport {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        arch: &ArchitectureConfig,
        layout: &SlotLayout,
        opts: &EvalOptions,
        slot_to_part: Vec<usize>,
        degenerate: bool,
        variance_ratios: Vec<Vec<f64>>,
        slots: Vec<SlotScores>,
        c: Option<ClassificationScores>,
    ) -> Self {
        MetricReport {
            method: None,
            modularity: mean(slots.iter().map(|s| s.learned.modularity)),
            integrity: mean(slots.iter().map(|s| s.learned.integrity)),
            modularity_identity: mean(slots.iter().map(|s| s.identity.modularity)),
            integrity_identity: mean(slots.iter().map(|s| s.identity.integrity)),
            clearance_before: mean(slots.iter().map(|s| s.learned.clearance_before)),
            clearance_after: mean(slots.iter().map(|s| s.learned.clearance_after)),
            per_class_precision: c.map(|c| c.per_class_precision),
            per_class_recall: c.map(|c| c.per_class_recall),
            overall_precision: c.map(|c| c.overall_precision),
            overall_recall: c.map(|c| c.overall_recall),
            micro_f1: c.map(|c| c.micro_f1),
            macro_f1: c.map(|c| c.macro_f1),
            groups: opts.groups,
            per_group: opts.per_group,
            n_parts: arch.n_parts,
            part_length: arch.part_length,
            offset: layout.offset_range,
            slot_to_part,
            degenerate,
            variance_ratios,
            slots,
        }
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.method.as_deref().unwrap_or(""),
            self.part_length,
            self.offset,
            self.groups,
            self.per_group,
            self.modularity,
            self.integrity,
            self.modularity_identity,
            self.integrity_identity,
            self.clearance_before,
            self.clearance_after,
            opt(self.per_class_precision),
            opt(self.per_class_recall),
            opt(self.overall_precision),
            opt(self.overall_recall),
            opt(self.micro_f1),
            opt(self.macro_f1),
            self.degenerate
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("report serializes");
        std::fs::write(path, json).map_err(|e| UdorError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| UdorError::io(path, e))?;
        serde_json::from_slice(&raw).map_err(|e| UdorError::Format(format!("{}: {e}", path.display())))
    }
}
