//! Row-holdout evaluation: whole observed regions are withheld from training
//! and their non-zero entries are predicted.

use std::fmt::Write as _;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::{self, Hyperparams, RegularizerSpec, Variant};
use crate::gravity::CombinedWeightMatrix;
use crate::patterns::{MobilityPatternMatrix, ShoppingPatternMatrix};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct RowHoldoutSplit {
    /// Ascending region indices.
    pub held_out_rows: Vec<usize>,
    /// Original matrix with the held-out rows cleared from values and mask.
    pub train: ShoppingPatternMatrix,
    /// `(region, pattern, true value)` for every non-zero observed entry of
    /// the held-out rows.
    pub test_entries: Vec<(usize, usize, f64)>,
}

/// Number of rows withheld for a training fraction.
pub fn held_out_count(non_empty: usize, train_fraction: f64) -> usize {
    // tolerate representation error, e.g. (1 - 0.7) * 10 = 3.0000000000000004
    let raw = ((1.0 - train_fraction) * non_empty as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(non_empty.saturating_sub(1))
}

pub fn split_rows(shop: &ShoppingPatternMatrix, train_fraction: f64, seed: u64) -> Result<RowHoldoutSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "training fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let candidates = shop.non_empty_rows();
    if candidates.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "row holdout needs at least 2 non-empty rows, found {}",
            candidates.len()
        )));
    }
    let count = held_out_count(candidates.len(), train_fraction);
    let mut rng = seed::rng(seed);
    let mut held: Vec<usize> = index::sample(&mut rng, candidates.len(), count)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    held.sort_unstable();

    let mut train = shop.clone();
    let mut test_entries = Vec::new();
    for &i in &held {
        for j in 0..shop.n_patterns() {
            let v = shop.values[[i, j]];
            if shop.mask[[i, j]] != 0.0 && v != 0.0 {
                test_entries.push((i, j, v));
            }
        }
        train.values.row_mut(i).fill(0.0);
        train.mask.row_mut(i).fill(0.0);
    }
    Ok(RowHoldoutSplit {
        held_out_rows: held,
        train,
        test_entries,
    })
}

fn check_lengths(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::dims("metric inputs", truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one value".into()));
    }
    Ok(())
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth, pred)?;
    let ss: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth, pred)?;
    let s: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).abs()).sum();
    Ok(s / truth.len() as f64)
}

/// Percentage reduction of `improved` relative to `baseline`.
pub fn improvement_pct(baseline: f64, improved: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::InvalidInput(format!(
            "baseline must be positive, got {baseline}"
        )));
    }
    Ok(100.0 * (baseline - improved) / baseline)
}

/// Everything the four variants train on.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub shop: ShoppingPatternMatrix,
    pub mob: MobilityPatternMatrix,
    pub neighbor: Option<CombinedWeightMatrix>,
    pub interaction: Option<CombinedWeightMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub variants: Vec<Variant>,
    pub fractions: Vec<f64>,
    pub repeats: usize,
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(fractions: Vec<f64>, repeats: usize, hyperparams: Hyperparams, seed: u64) -> Self {
        ExperimentConfig {
            variants: Variant::ALL.to_vec(),
            fractions,
            repeats,
            hyperparams,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub variant: Variant,
    pub fraction: f64,
    pub repeat: usize,
    pub rmse: f64,
    pub mae: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCell {
    pub variant: Variant,
    pub fraction: f64,
    pub rmse: f64,
    pub mae: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub fraction: f64,
    pub baseline: Variant,
    pub improved: Variant,
    pub rmse_pct: f64,
    pub mae_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variants: Vec<Variant>,
    pub fractions: Vec<f64>,
    pub repeats: usize,
    pub seed: u64,
    pub cells: Vec<MetricCell>,
    pub means: Vec<MeanCell>,
    /// Each variant against the one listed before it.
    pub steps: Vec<Improvement>,
    /// Last variant against the first.
    pub totals: Vec<Improvement>,
}

impl MetricsReport {
    pub fn mean(&self, variant: Variant, fraction: f64) -> Option<&MeanCell> {
        self.means
            .iter()
            .find(|c| c.variant == variant && c.fraction == fraction)
    }

    pub fn cell(&self, variant: Variant, fraction: f64, repeat: usize) -> Option<&MetricCell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.fraction == fraction && c.repeat == repeat)
    }
}

/// Split and training seeds for one `(fraction, repeat)` slot, shared by all
/// variants.
pub fn slot_seeds(master: u64, fraction_index: usize, repeat: usize) -> (u64, u64) {
    let base = [fraction_index as u64, repeat as u64];
    (
        seed::child_seed(master, &[base[0], base[1], 0]),
        seed::child_seed(master, &[base[0], base[1], 1]),
    )
}

fn regularizer_for(data: &ExperimentData, variant: Variant) -> Result<RegularizerSpec> {
    match variant {
        Variant::Mf | Variant::Cmf => Ok(RegularizerSpec::none()),
        Variant::CmfN => RegularizerSpec::neighbor(
            data.neighbor
                .clone()
                .ok_or_else(|| Error::InvalidInput("CMF + N needs neighbor weights".into()))?,
        ),
        Variant::CmfI => RegularizerSpec::interaction(
            data.interaction
                .clone()
                .ok_or_else(|| Error::InvalidInput("CMF + I needs interaction weights".into()))?,
        ),
    }
}

/// Trains on one split and scores the held-out entries in original units.
pub fn evaluate_split(
    data: &ExperimentData,
    split: &RowHoldoutSplit,
    reg: &RegularizerSpec,
    h: &Hyperparams,
    variant: Variant,
) -> Result<(f64, f64)> {
    let out = factorize::train(&split.train, &data.mob, reg, h, variant)?;
    let pred = factorize::predict(&out.model);
    let truth: Vec<f64> = split.test_entries.iter().map(|e| e.2).collect();
    let est: Vec<f64> = split.test_entries.iter().map(|&(i, j, _)| pred[[i, j]]).collect();
    Ok((rmse(&truth, &est)?, mae(&truth, &est)?))
}

pub fn run_experiment(data: &ExperimentData, cfg: &ExperimentConfig) -> Result<MetricsReport> {
    if cfg.repeats == 0 {
        return Err(Error::InvalidInput("repeats must be at least 1".into()));
    }
    if cfg.variants.is_empty() || cfg.fractions.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one variant and one fraction".into(),
        ));
    }
    let regs: Vec<RegularizerSpec> = cfg
        .variants
        .iter()
        .map(|&v| regularizer_for(data, v))
        .collect::<Result<_>>()?;

    let slots: Vec<(usize, usize)> = (0..cfg.fractions.len())
        .flat_map(|fi| (0..cfg.repeats).map(move |rep| (fi, rep)))
        .collect();
    let splits: Vec<RowHoldoutSplit> = slots
        .iter()
        .map(|&(fi, rep)| {
            let (split_seed, _) = slot_seeds(cfg.seed, fi, rep);
            split_rows(&data.shop, cfg.fractions[fi], split_seed)
                .map_err(|e| e.context(format!("split for fraction {}, repeat {rep}", cfg.fractions[fi])))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..slots.len())
        .flat_map(|s| (0..cfg.variants.len()).map(move |v| (s, v)))
        .collect();
    let cells: Vec<MetricCell> = jobs
        .par_iter()
        .map(|&(s, vi)| {
            let (fi, rep) = slots[s];
            let variant = cfg.variants[vi];
            let (_, train_seed) = slot_seeds(cfg.seed, fi, rep);
            let h = Hyperparams {
                seed: train_seed,
                ..cfg.hyperparams.clone()
            };
            let fraction = cfg.fractions[fi];
            let (rmse, mae) = evaluate_split(data, &splits[s], &regs[vi], &h, variant).map_err(|e| {
                e.context(format!(
                    "{} at fraction {fraction}, repeat {rep}",
                    variant.label()
                ))
            })?;
            Ok(MetricCell {
                variant,
                fraction,
                repeat: rep,
                rmse,
                mae,
                n_test: splits[s].test_entries.len(),
            })
        })
        .collect::<Result<_>>()?;

    let mut means = Vec::new();
    for &fraction in &cfg.fractions {
        for &variant in &cfg.variants {
            let sel: Vec<&MetricCell> = cells
                .iter()
                .filter(|c| c.variant == variant && c.fraction == fraction)
                .collect();
            let k = sel.len() as f64;
            means.push(MeanCell {
                variant,
                fraction,
                rmse: sel.iter().map(|c| c.rmse).sum::<f64>() / k,
                mae: sel.iter().map(|c| c.mae).sum::<f64>() / k,
                repeats: sel.len(),
            });
        }
    }

    let mut steps = Vec::new();
    let mut totals = Vec::new();
    let lookup = |v: Variant, f: f64| *means.iter().find(|c| c.variant == v && c.fraction == f).unwrap();
    let compare = |f: f64, a: Variant, b: Variant| -> Result<Improvement> {
        let (ma, mb) = (lookup(a, f), lookup(b, f));
        Ok(Improvement {
            fraction: f,
            baseline: a,
            improved: b,
            rmse_pct: improvement_pct(ma.rmse, mb.rmse)?,
            mae_pct: improvement_pct(ma.mae, mb.mae)?,
        })
    };
    if cfg.variants.len() > 1 {
        for &f in &cfg.fractions {
            for w in cfg.variants.windows(2) {
                steps.push(compare(f, w[0], w[1])?);
            }
            totals.push(compare(f, cfg.variants[0], *cfg.variants.last().unwrap())?);
        }
    }

    Ok(MetricsReport {
        variants: cfg.variants.clone(),
        fractions: cfg.fractions.clone(),
        repeats: cfg.repeats,
        seed: cfg.seed,
        cells,
        means,
        steps,
        totals,
    })
}

/// Aligned text table: variants as rows, RMSE and MAE per training fraction.
pub fn render_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let label_w = 10;
    let col_w = 10;
    let _ = write!(out, "{:<label_w$}", "Training");
    for f in &report.fractions {
        let _ = write!(out, "| {:^w$} ", format!("{:.0}%", f * 100.0), w = 2 * col_w + 1);
    }
    out.push('\n');
    let _ = write!(out, "{:<label_w$}", "Metric");
    for _ in &report.fractions {
        let _ = write!(out, "| {:>col_w$} {:>col_w$} ", "RMSE", "MAE");
    }
    out.push('\n');
    let rule = "-".repeat(label_w + report.fractions.len() * (2 * col_w + 4));
    out.push_str(&rule);
    out.push('\n');

    for (vi, &v) in report.variants.iter().enumerate() {
        let _ = write!(out, "{:<label_w$}", v.label());
        for &f in &report.fractions {
            let m = report.mean(v, f).expect("mean for every variant and fraction");
            let _ = write!(out, "| {:>col_w$.4} {:>col_w$.4} ", m.rmse, m.mae);
        }
        out.push('\n');
        if vi > 0 {
            let _ = write!(out, "{:<label_w$}", "  improve");
            for &f in &report.fractions {
                let s = report
                    .steps
                    .iter()
                    .find(|s| s.fraction == f && s.improved == v && s.baseline == report.variants[vi - 1])
                    .expect("step for every adjacent pair");
                let _ = write!(
                    out,
                    "| {:>col_w$} {:>col_w$} ",
                    format!("{:.2}%", s.rmse_pct),
                    format!("{:.2}%", s.mae_pct)
                );
            }
            out.push('\n');
        }
    }
    if !report.totals.is_empty() {
        out.push_str(&rule);
        out.push('\n');
        let _ = write!(out, "{:<label_w$}", "Total");
        for t in &report.totals {
            let _ = write!(
                out,
                "| {:>col_w$} {:>col_w$} ",
                format!("{:.2}%", t.rmse_pct),
                format!("{:.2}%", t.mae_pct)
            );
        }
        out.push('\n');
    }
    out
}
