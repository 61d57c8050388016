//! Training-memory prediction and measurement, in float units.
//!
//! Two prediction modes are kept deliberately separate because they rest
//! on different state-size conventions and they disagree; neither is
//! averaged into the other:
//!
//! * `Intro`: optimizer state counted as 3 floats per trainable weight for
//!   Adam (1 for SGD momentum), plus an activation term `a * P` (default
//!   `a = 0.7`) unless recomputation is on. Full-model Adam training thus
//!   predicts `5.7 P`, or `5 P` with recomputation.
//! * `Table`: `P * (1 + c * u)` with `c = 3` for Adam (gradient + two
//!   moments) and `c = 2` for SGD momentum, no activation term. This is
//!   the form the measured unfrozen-fraction tables fit.
//!
//! The ledger counts actual float allocations by category during a run;
//! all counts are hardware-independent (GB conversion happens only at
//! report time, assuming 4 bytes per float).

use serde::{Deserialize, Serialize};

use crate::optim::OptimKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    Intro,
    Table,
}

pub const DEFAULT_ACTIVATION_COEFF: f64 = 0.7;

/// Inputs of the closed-form memory predictions.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MemoryModel {
    pub mode: MemoryMode,
    /// Total parameter float units (P).
    pub params: f64,
    /// Unfrozen fraction u in (0, 1].
    pub unfrozen: f64,
    pub optimizer: OptimKind,
    /// Activation term coefficient (intro mode only).
    pub activation_coeff: f64,
    /// Activation recomputation: drops the activation term (intro mode only).
    pub recompute: bool,
}

impl MemoryModel {
    pub fn intro(params: f64, unfrozen: f64, optimizer: OptimKind, recompute: bool) -> Self {
        MemoryModel {
            mode: MemoryMode::Intro,
            params,
            unfrozen,
            optimizer,
            activation_coeff: DEFAULT_ACTIVATION_COEFF,
            recompute,
        }
    }

    pub fn table(params: f64, unfrozen: f64, optimizer: OptimKind) -> Self {
        MemoryModel {
            mode: MemoryMode::Table,
            params,
            unfrozen,
            optimizer,
            activation_coeff: 0.0,
            recompute: false,
        }
    }

    /// Predicted float units.
    pub fn predict(&self) -> f64 {
        let u = self.unfrozen;
        let p = self.params;
        match self.mode {
            MemoryMode::Intro => {
                // gradient u*P plus optimizer state (3 for Adam, 1 for SGD) * u*P
                let state = match self.optimizer {
                    OptimKind::Adam => 3.0,
                    OptimKind::Sgd => 1.0,
                };
                let activations = if self.recompute {
                    0.0
                } else {
                    self.activation_coeff * p
                };
                p * (1.0 + (1.0 + state) * u) + activations
            }
            MemoryMode::Table => p * (1.0 + table_coeff(self.optimizer) as f64 * u),
        }
    }
}

/// Gradient-plus-state floats per trainable weight in table mode.
pub fn table_coeff(kind: OptimKind) -> u64 {
    1 + kind.state_coeff()
}

/// Table-mode prediction straight from integer float counts; exact.
pub fn table_predict_from_counts(params: u64, trainable: u64, kind: OptimKind) -> u64 {
    params + table_coeff(kind) * trainable
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct UfpRow {
    pub unfrozen: f64,
    pub optimizer: OptimKind,
    pub predicted_units: f64,
}

/// Predicted memory for a list of unfrozen fractions (table mode).
pub fn ufp_table(params: f64, kind: OptimKind, fractions: &[f64]) -> Vec<UfpRow> {
    fractions
        .iter()
        .map(|&u| UfpRow {
            unfrozen: u,
            optimizer: kind,
            predicted_units: MemoryModel::table(params, u, kind).predict(),
        })
        .collect()
}

/// Writes a UFP table as CSV (`unfrozen_fraction,optimizer,predicted_units`).
pub fn write_ufp_csv<W: std::io::Write>(out: &mut W, rows: &[UfpRow]) -> std::io::Result<()> {
    writeln!(out, "unfrozen_fraction,optimizer,predicted_units")?;
    for r in rows {
        writeln!(out, "{},{:?},{}", r.unfrozen, r.optimizer, r.predicted_units)?;
    }
    Ok(())
}

/// Allocation categories tracked by the ledger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Params,
    Grads,
    OptimizerState,
    Activations,
    Cache,
}

const CATEGORY_COUNT: usize = 5;

impl Category {
    fn idx(self) -> usize {
        match self {
            Category::Params => 0,
            Category::Grads => 1,
            Category::OptimizerState => 2,
            Category::Activations => 3,
            Category::Cache => 4,
        }
    }
}

/// Live float-unit counters with per-category breakdown and peaks.
#[derive(Clone, Debug, Default)]
pub struct MemoryLedger {
    categories: [u64; CATEGORY_COUNT],
    live: u64,
    peak: u64,
    /// Peak of params + grads + optimizer state (the quantities the
    /// table-mode formula predicts).
    peak_train_state: u64,
}

impl MemoryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, cat: Category, units: u64) {
        self.categories[cat.idx()] += units;
        self.live += units;
        self.peak = self.peak.max(self.live);
        self.peak_train_state = self.peak_train_state.max(self.train_state_live());
    }

    pub fn free(&mut self, cat: Category, units: u64) {
        let c = &mut self.categories[cat.idx()];
        // Underflow means an accounting bug somewhere in the engine, not a
        // recoverable condition.
        assert!(
            *c >= units && self.live >= units,
            "ledger underflow freeing {units} units from {cat:?} (live {})",
            self.live
        );
        *c -= units;
        self.live -= units;
    }

    pub fn live(&self) -> u64 {
        self.live
    }

    pub fn peak(&self) -> u64 {
        self.peak
    }

    pub fn peak_train_state(&self) -> u64 {
        self.peak_train_state
    }

    pub fn category(&self, cat: Category) -> u64 {
        self.categories[cat.idx()]
    }

    fn train_state_live(&self) -> u64 {
        self.categories[0] + self.categories[1] + self.categories[2]
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            live_units: self.live,
            peak_units: self.peak,
            peak_train_state_units: self.peak_train_state,
            params: self.categories[0],
            grads: self.categories[1],
            optimizer_state: self.categories[2],
            activations: self.categories[3],
            cache: self.categories[4],
        }
    }
}

/// A consistent point-in-time view of the ledger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub live_units: u64,
    pub peak_units: u64,
    pub peak_train_state_units: u64,
    pub params: u64,
    pub grads: u64,
    pub optimizer_state: u64,
    pub activations: u64,
    pub cache: u64,
}

impl LedgerSnapshot {
    pub fn category_sum(&self) -> u64 {
        self.params + self.grads + self.optimizer_state + self.activations + self.cache
    }
}

/// Float units to mebibytes under the 4-bytes-per-float reporting
/// convention.
pub fn units_to_mb(units: u64) -> f64 {
    units as f64 * 4.0 / (1024.0 * 1024.0)
}
