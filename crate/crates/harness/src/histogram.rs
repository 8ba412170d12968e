//! Distribution of recorded activation gradients.

use std::path::Path;

use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::train::activations_file;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientDistribution {
    pub count: usize,
    /// Fraction of gradients that are exactly zero.
    pub zero_fraction: f64,
    pub bins: Vec<Bin>,
    /// Empirical CDF of `|g|` as `(value, fraction <= value)`, at most 201 points.
    pub cdf_abs: Vec<(f64, f64)>,
}

/// Read the gradients recorded for `layer` in a run directory.
pub fn load_activation_grads(run: &Path, layer: usize) -> Result<Vec<f64>> {
    let path = run.join(activations_file(layer));
    if !path.exists() {
        return Err(HarnessError::config(format!(
            "layer {layer} was not instrumented in {} (set instrument_layer = {layer})",
            run.display()
        )));
    }
    let fmt = |msg: String| HarnessError::Format {
        path: path.clone(),
        msg,
    };
    let mut reader = csv::Reader::from_path(&path).map_err(|e| fmt(e.to_string()))?;
    let mut values = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let v = rec.get(2).ok_or_else(|| fmt("missing value column".into()))?;
        values.push(v.parse::<f64>().map_err(|e| fmt(e.to_string()))?);
    }
    Ok(values)
}

/// Equal-width bins over `range`; a degenerate range gives one bin.
pub fn distribution(values: &[f64], range: (f64, f64), bins: usize) -> Result<GradientDistribution> {
    if values.is_empty() {
        return Err(HarnessError::config("no gradients recorded"));
    }
    if bins == 0 {
        return Err(HarnessError::config("bins must be >= 1"));
    }
    let (lo, hi) = range;
    let bins = if hi > lo { bins } else { 1 };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = if width > 0.0 { ((v - lo) / width) as usize } else { 0 };
        counts[i.min(bins - 1)] += 1;
    }
    let out_bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| Bin {
            lo: lo + width * i as f64,
            hi: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count,
        })
        .collect();

    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    let points = n.min(201);
    let mut cdf: Vec<(f64, f64)> = (1..=points)
        .map(|k| {
            let mut idx = (k * n).div_ceil(points) - 1;
            // report the fraction at or below the value, ties included
            while idx + 1 < n && abs[idx + 1] == abs[idx] {
                idx += 1;
            }
            (abs[idx], (idx + 1) as f64 / n as f64)
        })
        .collect();
    cdf.dedup();
    Ok(GradientDistribution {
        count: n,
        zero_fraction: values.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64,
        bins: out_bins,
        cdf_abs: cdf,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramReport {
    pub layer: usize,
    pub run: GradientDistribution,
    pub baseline: Option<GradientDistribution>,
}

/// Histograms of one run and optionally a baseline run, on shared bin edges.
pub fn gradient_histogram(run: &Path, baseline: Option<&Path>, layer: usize, bins: usize) -> Result<HistogramReport> {
    let values = load_activation_grads(run, layer)?;
    let base = baseline.map(|b| load_activation_grads(b, layer)).transpose()?;
    let all = values.iter().chain(base.iter().flatten());
    let range = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    Ok(HistogramReport {
        layer,
        run: distribution(&values, range, bins)?,
        baseline: base.map(|b| distribution(&b, range, bins)).transpose()?,
    })
}
