//! Training-cost arithmetic: GPU rental catalogs, run records, the
//! BCD-to-full round multiplier, USD costs, GPU-hours and reduction
//! tables.
//!
//! Cost of a run = total GPUs x wall hours x hourly rate, with hours
//! either measured directly or derived from iterations x per-iteration
//! time. Reductions compare a block-coordinate run against a
//! full-parameter baseline, either empirically (both measured) or
//! theoretically (per-iteration times scaled by a round multiplier).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Default round-multiplier constants: the average and worst ratio of
/// BCD rounds to full-parameter rounds observed in the bundled Adam
/// convergence records.
pub const DEFAULT_AVG_BF: f64 = 1.39;
pub const DEFAULT_WORST_BF: f64 = 2.89;
/// Worst-case multiplier recomputed directly from
/// [`ADAM_CONVERGENCE_PAIRS`]; kept alongside the shipped default, which
/// it does not quite match.
pub const WORST_BF_FROM_RECORDS: f64 = 2.78;

/// Bundled (bcd_rounds, full_rounds) pairs from Adam convergence records
/// across five benchmark models.
pub const ADAM_CONVERGENCE_PAIRS: [(f64, f64); 5] = [
    (309.0, 389.0),
    (372.0, 491.0),
    (423.0, 768.0),
    (232_471.0, 83_690.0),
    (1_045_000.0, 499_000.0),
];

/// Hourly rental rates per GPU model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuCatalog {
    pub rates_usd_per_hour: BTreeMap<String, f64>,
}

impl GpuCatalog {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let rates: BTreeMap<String, f64> = entries.into_iter().collect();
        if rates.values().any(|&r| r <= 0.0 || r.is_nan()) {
            return Err(Error::InvalidConfig("catalog rates must be positive".into()));
        }
        Ok(GpuCatalog { rates_usd_per_hour: rates })
    }

    /// Default rental rates: RTX4090 0.29, A100 1.20, A800 0.69 USD/hour.
    pub fn default_rental() -> Self {
        Self::new([
            ("RTX4090".to_string(), 0.29),
            ("A100".to_string(), 1.20),
            ("A800".to_string(), 0.69),
        ])
        .expect("static catalog")
    }

    /// Alternate static catalogs from a public provider price survey.
    pub fn market_survey() -> BTreeMap<String, GpuCatalog> {
        let mk = |entries: &[(&str, f64)]| {
            GpuCatalog::new(entries.iter().map(|(n, r)| (n.to_string(), *r))).expect("static")
        };
        BTreeMap::from([
            ("autodl".to_string(), mk(&[("RTX4090", 0.31), ("A800", 0.88)])),
            ("parallel".to_string(), mk(&[("A100", 2.25), ("RTX4090", 0.50)])),
            ("anygpu".to_string(), mk(&[("RTX4090", 0.40)])),
            ("aigalaxy".to_string(), mk(&[("RTX4090", 0.19), ("A100", 1.12)])),
            (
                "hengyuan".to_string(),
                mk(&[("A100", 1.39), ("A800", 1.25), ("RTX4090", 0.22)]),
            ),
        ])
    }

    pub fn rate(&self, gpu: &str) -> Result<f64> {
        self.rates_usd_per_hour
            .get(gpu)
            .copied()
            .ok_or_else(|| Error::UnknownGpu(gpu.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full,
    Bcd,
    Offload,
}

/// One recorded (or projected) training run on a cluster.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub model: String,
    #[serde(default)]
    pub dataset: Option<String>,
    pub method: Method,
    pub nodes: u32,
    pub gpus_per_node: u32,
    pub gpu: String,
    /// Measured wall hours, if known.
    #[serde(default)]
    pub hours: Option<f64>,
    /// Iteration count, used with `iter_time_ms` when hours are absent.
    #[serde(default)]
    pub iterations: Option<f64>,
    #[serde(default)]
    pub iter_time_ms: Option<f64>,
}

impl RunRecord {
    pub fn total_gpus(&self) -> u32 {
        self.nodes * self.gpus_per_node
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.gpus_per_node == 0 {
            return Err(Error::InvalidConfig(format!(
                "run record {}: node and GPU counts must be positive",
                self.model
            )));
        }
        match (self.hours, self.iterations, self.iter_time_ms) {
            (Some(h), _, _) if h > 0.0 => Ok(()),
            (None, Some(n), Some(t)) if n > 0.0 && t > 0.0 => Ok(()),
            _ => Err(Error::InvalidConfig(format!(
                "run record {}: needs positive hours, or iterations with iter_time_ms",
                self.model
            ))),
        }
    }

    /// Wall hours, derived from iterations when not measured directly.
    pub fn wall_hours(&self) -> Result<f64> {
        self.validate()?;
        match self.hours {
            Some(h) => Ok(h),
            None => {
                let n = self.iterations.expect("validated");
                let t = self.iter_time_ms.expect("validated");
                Ok(n * t / 3.6e6)
            }
        }
    }
}

/// Round multiplier between paired BCD and full-parameter runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BfMultiplier {
    pub average: f64,
    pub worst: f64,
    pub pairs_used: usize,
}

/// Mean and max of `bcd_rounds / full_rounds` over the given pairs.
pub fn bf_multiplier(pairs: &[(f64, f64)]) -> Result<BfMultiplier> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("round-multiplier pairs".into()));
    }
    if pairs.iter().any(|&(b, f)| !(b > 0.0 && f > 0.0)) {
        return Err(Error::InvalidConfig("round counts must be positive".into()));
    }
    let ratios: Vec<f64> = pairs.iter().map(|&(b, f)| b / f).collect();
    let average = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let worst = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(BfMultiplier { average, worst, pairs_used: pairs.len() })
}

/// USD cost of one run: total GPUs x wall hours x hourly rate.
pub fn run_cost(record: &RunRecord, catalog: &GpuCatalog) -> Result<f64> {
    let rate = catalog.rate(&record.gpu)?;
    Ok(record.total_gpus() as f64 * record.wall_hours()? * rate)
}

/// GPU-hours of one run: total GPUs x wall hours.
pub fn gpu_hours(record: &RunRecord) -> Result<f64> {
    Ok(record.total_gpus() as f64 * record.wall_hours()?)
}

/// Cost reduction (percent) of a measured BCD run against a measured
/// full-parameter run.
pub fn cost_reduction_empirical(
    full: &RunRecord,
    bcd: &RunRecord,
    catalog: &GpuCatalog,
) -> Result<f64> {
    let cost_full = run_cost(full, catalog)?;
    let cost_bcd = run_cost(bcd, catalog)?;
    if cost_full == 0.0 {
        return Err(Error::InvalidConfig("full-run cost is zero".into()));
    }
    Ok(100.0 * (1.0 - cost_bcd / cost_full))
}

/// Projected cost reduction (percent) from per-iteration times: the BCD
/// run is assumed to need `bf` times the full run's iterations, so the
/// iteration counts cancel and only per-iteration cost remains.
pub fn cost_reduction_theoretical(
    full: &RunRecord,
    bcd: &RunRecord,
    bf: f64,
    catalog: &GpuCatalog,
) -> Result<f64> {
    let (t_full, t_bcd) = iteration_times(full, bcd)?;
    let cost_full = full.total_gpus() as f64 * t_full * catalog.rate(&full.gpu)?;
    let cost_bcd = bf * bcd.total_gpus() as f64 * t_bcd * catalog.rate(&bcd.gpu)?;
    Ok(100.0 * (1.0 - cost_bcd / cost_full))
}

/// GPU-hour reduction (percent), empirical mode.
pub fn gpu_hour_reduction_empirical(full: &RunRecord, bcd: &RunRecord) -> Result<f64> {
    let h_full = gpu_hours(full)?;
    let h_bcd = gpu_hours(bcd)?;
    if h_full == 0.0 {
        return Err(Error::InvalidConfig("full-run GPU-hours are zero".into()));
    }
    Ok(100.0 * (1.0 - h_bcd / h_full))
}

/// GPU-hour reduction (percent), theoretical mode (rates stripped).
pub fn gpu_hour_reduction_theoretical(full: &RunRecord, bcd: &RunRecord, bf: f64) -> Result<f64> {
    let (t_full, t_bcd) = iteration_times(full, bcd)?;
    let h_full = full.total_gpus() as f64 * t_full;
    let h_bcd = bf * bcd.total_gpus() as f64 * t_bcd;
    Ok(100.0 * (1.0 - h_bcd / h_full))
}

fn iteration_times(full: &RunRecord, bcd: &RunRecord) -> Result<(f64, f64)> {
    match (full.iter_time_ms, bcd.iter_time_ms) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Ok((a, b)),
        _ => Err(Error::InvalidConfig(
            "theoretical mode needs positive iter_time_ms on both records".into(),
        )),
    }
}

/// A measured full/BCD pair with the costs published for it; used to
/// rebuild empirical cost tables and flag disagreements.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalCase {
    pub full: RunRecord,
    pub bcd: RunRecord,
    #[serde(default)]
    pub published_full_cost: Option<f64>,
    #[serde(default)]
    pub published_bcd_cost: Option<f64>,
}

/// A projected full/BCD pair (per-iteration times) with published
/// reduction percentages, if any.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoreticalCase {
    pub full: RunRecord,
    pub bcd: RunRecord,
    #[serde(default)]
    pub published_avg_reduction_pct: Option<f64>,
    #[serde(default)]
    pub published_worst_reduction_pct: Option<f64>,
}

/// Bundle of benchmark cases, loadable from JSON.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSet {
    pub empirical: Vec<EmpiricalCase>,
    pub theoretical: Vec<TheoreticalCase>,
}

/// Tolerance (percentage points) beyond which a computed reduction is
/// flagged against its published value.
pub const PUBLISHED_TOLERANCE_PP: f64 = 1.5;

#[derive(Clone, Debug, Serialize)]
pub struct EmpiricalCostRow {
    pub model: String,
    pub dataset: String,
    pub gpu: String,
    pub full_gpus: u32,
    pub full_cost_usd: f64,
    pub full_hours: f64,
    pub bcd_gpus: u32,
    pub bcd_cost_usd: f64,
    pub bcd_hours: f64,
    pub reduction_pct: f64,
}

pub fn empirical_cost_table(
    cases: &[EmpiricalCase],
    catalog: &GpuCatalog,
) -> Result<Vec<EmpiricalCostRow>> {
    cases
        .iter()
        .map(|c| {
            Ok(EmpiricalCostRow {
                model: c.full.model.clone(),
                dataset: c.full.dataset.clone().unwrap_or_default(),
                gpu: c.full.gpu.clone(),
                full_gpus: c.full.total_gpus(),
                full_cost_usd: run_cost(&c.full, catalog)?,
                full_hours: c.full.wall_hours()?,
                bcd_gpus: c.bcd.total_gpus(),
                bcd_cost_usd: run_cost(&c.bcd, catalog)?,
                bcd_hours: c.bcd.wall_hours()?,
                reduction_pct: cost_reduction_empirical(&c.full, &c.bcd, catalog)?,
            })
        })
        .collect()
}

pub fn write_empirical_csv<W: std::io::Write>(
    out: &mut W,
    rows: &[EmpiricalCostRow],
) -> std::io::Result<()> {
    writeln!(
        out,
        "model,dataset,gpu,full_gpus,full_cost_usd,full_hours,bcd_gpus,bcd_cost_usd,bcd_hours,reduction_pct"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.2},{},{},{:.2},{},{:.1}",
            r.model,
            r.dataset,
            r.gpu,
            r.full_gpus,
            r.full_cost_usd,
            r.full_hours,
            r.bcd_gpus,
            r.bcd_cost_usd,
            r.bcd_hours,
            r.reduction_pct
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoreticalCostRow {
    pub model: String,
    /// N/G notation of the full-update cluster.
    pub full_ng: String,
    pub bcd_ng: String,
    pub full_gpu: String,
    pub bcd_gpu: String,
    pub avg_reduction_pct: f64,
    pub worst_reduction_pct: f64,
    pub published_avg_pct: Option<f64>,
    pub published_worst_pct: Option<f64>,
    /// Set when a computed value differs from its published counterpart by
    /// more than [`PUBLISHED_TOLERANCE_PP`].
    pub flagged: bool,
}

/// Builds the projected cost-reduction table for the given multiplier
/// pair, comparing each computed value to its published counterpart.
pub fn theoretical_cost_table(
    cases: &[TheoreticalCase],
    bf_avg: f64,
    bf_worst: f64,
    catalog: &GpuCatalog,
) -> Result<Vec<TheoreticalCostRow>> {
    cases
        .iter()
        .map(|c| {
            let avg = cost_reduction_theoretical(&c.full, &c.bcd, bf_avg, catalog)?;
            let worst = cost_reduction_theoretical(&c.full, &c.bcd, bf_worst, catalog)?;
            let off = |computed: f64, published: Option<f64>| {
                published.is_some_and(|p| (computed - p).abs() > PUBLISHED_TOLERANCE_PP)
            };
            Ok(TheoreticalCostRow {
                model: c.full.model.clone(),
                full_ng: format!("{}/{}", c.full.nodes, c.full.gpus_per_node),
                bcd_ng: format!("{}/{}", c.bcd.nodes, c.bcd.gpus_per_node),
                full_gpu: c.full.gpu.clone(),
                bcd_gpu: c.bcd.gpu.clone(),
                avg_reduction_pct: avg,
                worst_reduction_pct: worst,
                published_avg_pct: c.published_avg_reduction_pct,
                published_worst_pct: c.published_worst_reduction_pct,
                flagged: off(avg, c.published_avg_reduction_pct)
                    || off(worst, c.published_worst_reduction_pct),
            })
        })
        .collect()
}

pub fn write_theoretical_csv<W: std::io::Write>(
    out: &mut W,
    rows: &[TheoreticalCostRow],
) -> std::io::Result<()> {
    writeln!(
        out,
        "model,full_ng,full_gpu,bcd_ng,bcd_gpu,avg_reduction_pct,worst_reduction_pct,published_avg_pct,published_worst_pct,flagged"
    )?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.1},{:.1},{},{},{}",
            r.model,
            r.full_ng,
            r.full_gpu,
            r.bcd_ng,
            r.bcd_gpu,
            r.avg_reduction_pct,
            r.worst_reduction_pct,
            opt(r.published_avg_pct),
            opt(r.published_worst_pct),
            r.flagged
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(gpus: u32, hours: f64, gpu: &str) -> RunRecord {
        RunRecord {
            model: "test".into(),
            dataset: None,
            method: Method::Full,
            nodes: 1,
            gpus_per_node: gpus,
            gpu: gpu.into(),
            hours: Some(hours),
            iterations: None,
            iter_time_ms: None,
        }
    }

    fn iter_record(gpus: u32, iter_ms: f64, gpu: &str) -> RunRecord {
        RunRecord {
            model: "test".into(),
            dataset: None,
            method: Method::Bcd,
            nodes: 1,
            gpus_per_node: gpus,
            gpu: gpu.into(),
            hours: None,
            iterations: Some(1.0),
            iter_time_ms: Some(iter_ms),
        }
    }

    #[test]
    fn bf_multiplier_single_pair_is_unity() {
        let bf = bf_multiplier(&[(100.0, 100.0)]).unwrap();
        assert_eq!(bf.average, 1.0);
        assert_eq!(bf.worst, 1.0);
    }

    #[test]
    fn bf_multiplier_hand_pairs() {
        let bf = bf_multiplier(&[(2.0, 1.0), (1.0, 2.0)]).unwrap();
        assert!((bf.average - 1.25).abs() < 1e-12);
        assert!((bf.worst - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bf_multiplier_bundled_adam_records() {
        let bf = bf_multiplier(&ADAM_CONVERGENCE_PAIRS).unwrap();
        assert!((bf.average - 1.395).abs() < 0.001, "average {}", bf.average);
        assert!((bf.worst - 2.778).abs() < 0.001, "worst {}", bf.worst);
        assert!(bf.worst >= bf.average);
    }

    #[test]
    fn bf_multiplier_rejects_empty_and_nonpositive() {
        assert!(bf_multiplier(&[]).is_err());
        assert!(bf_multiplier(&[(0.0, 1.0)]).is_err());
    }

    #[test]
    fn run_cost_simple_and_reference_cases() {
        let catalog = GpuCatalog::default_rental();
        // unit sanity: rate 1.0 x 1 GPU x 1 h = 1
        let unit_catalog = GpuCatalog::new([("X".to_string(), 1.0)]).unwrap();
        assert_eq!(run_cost(&record(1, 1.0, "X"), &unit_catalog).unwrap(), 1.0);
        // 2 x A800 for 19.01 h
        let c = run_cost(&record(2, 19.01, "A800"), &catalog).unwrap();
        assert!((c - 26.23).abs() < 0.01);
        assert!((c - 26.30).abs() / 26.30 < 0.01);
        // 8 x RTX4090 for 1.45 h
        let c = run_cost(&record(8, 1.45, "RTX4090"), &catalog).unwrap();
        assert!((c - 3.364).abs() < 0.001);
    }

    #[test]
    fn unknown_gpu_and_zero_rate_are_rejected() {
        let catalog = GpuCatalog::default_rental();
        assert!(matches!(
            run_cost(&record(1, 1.0, "H100"), &catalog),
            Err(Error::UnknownGpu(_))
        ));
        assert!(GpuCatalog::new([("X".to_string(), 0.0)]).is_err());
    }

    #[test]
    fn empirical_reduction_reference_case() {
        let catalog = GpuCatalog::default_rental();
        let full = record(2, 19.01, "A800");
        let bcd = record(1, 27.10, "A800");
        let pct = cost_reduction_empirical(&full, &bcd, &catalog).unwrap();
        assert!((pct - 28.7).abs() < 0.2, "got {pct}");
    }

    #[test]
    fn theoretical_reduction_cross_device_reference_case() {
        let catalog = GpuCatalog::default_rental();
        let full = iter_record(1, 1064.0, "A100");
        let bcd = iter_record(1, 378.49, "RTX4090");
        let pct = cost_reduction_theoretical(&full, &bcd, 1.39, &catalog).unwrap();
        assert!((pct - 88.8).abs() <= 1.5, "got {pct}");
        assert!((pct - 88.05).abs() < 0.01, "got {pct}");
    }

    #[test]
    fn identical_records_at_unit_multiplier_reduce_zero() {
        let catalog = GpuCatalog::default_rental();
        let a = record(2, 5.0, "A100");
        assert_eq!(cost_reduction_empirical(&a, &a, &catalog).unwrap(), 0.0);
        let t = iter_record(2, 100.0, "A100");
        assert_eq!(cost_reduction_theoretical(&t, &t, 1.0, &catalog).unwrap(), 0.0);
    }

    #[test]
    fn gpu_hours_and_same_device_equivalence() {
        assert_eq!(gpu_hours(&record(2, 3.0, "A100")).unwrap(), 6.0);
        // same GPU type: rates cancel, so GPU-hour and cost reductions match
        let catalog = GpuCatalog::default_rental();
        let full = iter_record(2, 576.0, "RTX4090");
        let bcd = iter_record(1, 378.49, "RTX4090");
        let hours_pct = gpu_hour_reduction_theoretical(&full, &bcd, 1.39).unwrap();
        let cost_pct = cost_reduction_theoretical(&full, &bcd, 1.39, &catalog).unwrap();
        assert!((hours_pct - cost_pct).abs() < 1e-9);
        assert!((hours_pct - 54.3).abs() < 0.1, "got {hours_pct}");
    }

    #[test]
    fn wall_hours_from_iterations() {
        let mut r = iter_record(1, 1000.0, "A100");
        r.iterations = Some(3600.0);
        // 3600 iterations x 1 s = 1 h
        assert!((r.wall_hours().unwrap() - 1.0).abs() < 1e-12);
        r.iterations = None;
        assert!(r.wall_hours().is_err());
    }

    #[test]
    fn theoretical_table_flags_published_mismatches() {
        let catalog = GpuCatalog::default_rental();
        let case = TheoreticalCase {
            full: iter_record(1, 1064.0, "A100"),
            bcd: iter_record(1, 378.49, "RTX4090"),
            published_avg_reduction_pct: Some(88.8),
            published_worst_reduction_pct: Some(95.0), // deliberately off
        };
        let rows = theoretical_cost_table(&[case], 1.39, 2.89, &catalog).unwrap();
        assert!(rows[0].flagged);
        assert!((rows[0].avg_reduction_pct - 88.05).abs() < 0.01);
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Cost is linear in rate, hours and GPU count.
        #[test]
        fn run_cost_is_linear(
            rate in 0.01f64..10.0,
            hours in 0.01f64..1000.0,
            gpus in 1u32..64,
            scale in 0.1f64..10.0,
        ) {
            let catalog = GpuCatalog::new([("G".to_string(), rate)]).unwrap();
            let scaled_catalog = GpuCatalog::new([("G".to_string(), rate * scale)]).unwrap();
            let base = RunRecord {
                model: "m".into(),
                dataset: None,
                method: Method::Full,
                nodes: 1,
                gpus_per_node: gpus,
                gpu: "G".into(),
                hours: Some(hours),
                iterations: None,
                iter_time_ms: None,
            };
            let c = run_cost(&base, &catalog).unwrap();
            prop_assert!((run_cost(&base, &scaled_catalog).unwrap() - c * scale).abs() <= 1e-9 * c.abs() * scale.max(1.0));
            let mut longer = base.clone();
            longer.hours = Some(hours * scale);
            prop_assert!((run_cost(&longer, &catalog).unwrap() - c * scale).abs() <= 1e-9 * c.abs() * scale.max(1.0));
        }

        /// Scaling both records' rates together leaves the reduction
        /// unchanged when the GPU types match.
        #[test]
        fn reduction_invariant_under_common_rate_rescaling(
            rate in 0.01f64..10.0,
            scale in 0.1f64..10.0,
            h_full in 0.1f64..100.0,
            h_bcd in 0.1f64..100.0,
        ) {
            let mk = |r: f64| GpuCatalog::new([("G".to_string(), r)]).unwrap();
            let rec = |h: f64| RunRecord {
                model: "m".into(),
                dataset: None,
                method: Method::Full,
                nodes: 1,
                gpus_per_node: 2,
                gpu: "G".into(),
                hours: Some(h),
                iterations: None,
                iter_time_ms: None,
            };
            let a = cost_reduction_empirical(&rec(h_full), &rec(h_bcd), &mk(rate)).unwrap();
            let b = cost_reduction_empirical(&rec(h_full), &rec(h_bcd), &mk(rate * scale)).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        /// The multiplier is permutation-invariant over its pairs.
        #[test]
        fn bf_multiplier_is_permutation_invariant(
            mut pairs in proptest::collection::vec((1.0f64..1e6, 1.0f64..1e6), 1..8)
        ) {
            let a = bf_multiplier(&pairs).unwrap();
            pairs.reverse();
            let b = bf_multiplier(&pairs).unwrap();
            prop_assert!((a.average - b.average).abs() <= 1e-9 * a.average.abs());
            prop_assert!((a.worst - b.worst).abs() == 0.0);
        }
    }
}
