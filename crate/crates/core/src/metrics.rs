//! Exact-arithmetic consistency and style metrics.
//!
//! "L2" throughout is root-mean-square over the compared entries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Shape};

/// Named scalar with a per-view breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub aggregate: f64,
    pub per_view: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl MetricReport {
    fn new(name: &str, aggregate: f64, per_view: Vec<f64>, note: &str) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("n_views".to_string(), per_view.len().to_string());
        metadata.insert("analog_of".to_string(), note.to_string());
        MetricReport {
            name: name.to_string(),
            aggregate,
            per_view,
            metadata,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / a.len() as f64).sqrt()
}

/// Contiguous data of view `n`, every stream.
fn view_entries(f: &FeatureMap, n: usize) -> Vec<f64> {
    let s = f.shape();
    let block = s.pixels() * s.channels;
    let mut out = Vec::with_capacity(s.streams * block);
    for st in 0..s.streams {
        let start = (st * s.views + n) * block;
        out.extend_from_slice(&f.data()[start..start + block]);
    }
    out
}

/// RMS difference of each adjacent view pair `(n, n+1)`, the last pair
/// being `(N−1, 0)`; aggregate is 100 × the mean over pairs.
pub fn cycle_consistency(views: &FeatureMap) -> Result<MetricReport> {
    let n = views.shape().views;
    if n < 2 {
        return Err(Error::domain(format!("loop metric needs at least 2 views, got {n}")));
    }
    let per_view: Vec<f64> = (0..n)
        .map(|i| rms_diff(&view_entries(views, i), &view_entries(views, (i + 1) % n)))
        .collect();
    Ok(MetricReport::new(
        "cycle_consistency",
        100.0 * mean(&per_view),
        per_view,
        "loop consistency over adjacent views, x100",
    ))
}

/// Per-view RMS depth difference; aggregate is the mean over views.
pub fn depth_delta(generated: &FeatureMap, reference: &FeatureMap) -> Result<MetricReport> {
    if generated.shape() != reference.shape() {
        return Err(Error::shape(format!(
            "depth maps {} and {} differ",
            generated.shape(),
            reference.shape()
        )));
    }
    let per_view: Vec<f64> = (0..generated.shape().views)
        .map(|i| rms_diff(&view_entries(generated, i), &view_entries(reference, i)))
        .collect();
    Ok(MetricReport::new(
        "depth_delta",
        mean(&per_view),
        per_view,
        "depth L2 against exact synthetic depth",
    ))
}

/// Per-channel population mean and standard deviation of view `n`.
fn view_stats(f: &FeatureMap, n: usize) -> (Vec<f64>, Vec<f64>) {
    let c = f.shape().channels;
    let data = view_entries(f, n);
    let count = (data.len() / c) as f64;
    let mut mu = vec![0.0; c];
    for (i, v) in data.iter().enumerate() {
        mu[i % c] += v;
    }
    for m in &mut mu {
        *m /= count;
    }
    let mut var = vec![0.0; c];
    for (i, v) in data.iter().enumerate() {
        let d = v - mu[i % c];
        var[i % c] += d * d;
    }
    let sd = var.into_iter().map(|v| (v / count).sqrt()).collect();
    (mu, sd)
}

/// `1 / (1 + ‖(Δμ, Δσ)‖)` per view from per-channel statistics; aggregate
/// is the mean over views. Both maps must have the same view count.
pub fn style_alignment(output: &FeatureMap, style_ref: &FeatureMap) -> Result<MetricReport> {
    let (a, b) = (output.shape(), style_ref.shape());
    if a.channels != b.channels || a.views != b.views {
        return Err(Error::shape(format!("cannot compare statistics of {a} and {b}")));
    }
    let per_view: Vec<f64> = (0..a.views)
        .map(|n| {
            let (mo, so) = view_stats(output, n);
            let (mr, sr) = view_stats(style_ref, n);
            let d2: f64 = (0..a.channels)
                .map(|c| (mo[c] - mr[c]).powi(2) + (so[c] - sr[c]).powi(2))
                .sum();
            1.0 / (1.0 + d2.sqrt())
        })
        .collect();
    Ok(MetricReport::new(
        "style_alignment",
        mean(&per_view),
        per_view,
        "feature-statistics similarity",
    ))
}

/// Mean squared difference of two maps of equal shape.
pub fn mean_squared_error(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{} vs {}", a.shape(), b.shape())));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64)
}

/// Linear depth readout from channel-standardized features.
///
/// Each map is standardized per channel over all its tokens, then depth is
/// `w·x + b`, fitted by least squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthProbe {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

fn standardized(f: &FeatureMap) -> Vec<Vec<f64>> {
    let c = f.shape().channels;
    let t = f.shape().tokens();
    let mut mu = vec![0.0; c];
    for (i, v) in f.data().iter().enumerate() {
        mu[i % c] += v;
    }
    mu.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = vec![0.0; c];
    for (i, v) in f.data().iter().enumerate() {
        var[i % c] += (v - mu[i % c]).powi(2);
    }
    let sd: Vec<f64> = var.iter().map(|v| (v / t as f64).sqrt().max(1e-12)).collect();
    f.data()
        .chunks_exact(c)
        .map(|row| row.iter().enumerate().map(|(k, v)| (v - mu[k]) / sd[k]).collect())
        .collect()
}

impl DepthProbe {
    /// Fits on `(features, depth)` pairs; features have one stream and
    /// depth one channel on the same grid.
    pub fn fit(pairs: &[(&FeatureMap, &FeatureMap)]) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::domain("depth probe needs data"))?;
        let c = first.0.shape().channels;
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (f, d) in pairs {
            check_probe_shapes(f.shape(), d.shape(), c)?;
            rows.extend(standardized(f));
            targets.extend_from_slice(d.data());
        }
        let x = DMatrix::from_fn(rows.len(), c + 1, |r, k| if k < c { rows[r][k] } else { 1.0 });
        let y = DVector::from_vec(targets);
        let w = x
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::numeric("depth probe fit", e.to_string()))?;
        Ok(DepthProbe {
            weights: w.iter().take(c).copied().collect(),
            intercept: w[c],
        })
    }

    pub fn predict(&self, features: &FeatureMap) -> Result<FeatureMap> {
        let s = features.shape();
        if s.channels != self.weights.len() {
            return Err(Error::shape(format!(
                "probe expects {} channels, got {}",
                self.weights.len(),
                s.channels
            )));
        }
        let data = standardized(features)
            .iter()
            .map(|row| row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>() + self.intercept)
            .collect();
        FeatureMap::new(s.with_channels(1), data)
    }
}

fn check_probe_shapes(f: Shape, d: Shape, c: usize) -> Result<()> {
    if f.channels != c || d.channels != 1 || f.with_channels(1) != d {
        return Err(Error::shape(format!("probe pair {f} / {d}")));
    }
    Ok(())
}

/// `name,aggregate,view_index,value`, one line per view.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("name,aggregate,view_index,value\n");
    for r in reports {
        for (i, v) in r.per_view.iter().enumerate() {
            writeln!(out, "{},{:e},{i},{:e}", r.name, r.aggregate, v).expect("string write");
        }
    }
    out
}

pub fn reports_to_json(reports: &[MetricReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_normal;

    #[test]
    fn loop_metric_constant_offset() {
        let s = Shape::new(1, 2, 2, 2, 3).unwrap();
        let f = FeatureMap::from_fn(s, |_, n, _, _, _| n as f64).unwrap();
        let r = cycle_consistency(&f).unwrap();
        assert_eq!(r.per_view, vec![1.0, 1.0]);
        assert_eq!(r.aggregate, 100.0);
        let same = FeatureMap::zeros(s);
        assert_eq!(cycle_consistency(&same).unwrap().aggregate, 0.0);
        assert!(cycle_consistency(&FeatureMap::zeros(s.with_views(1))).is_err());
    }

    #[test]
    fn depth_examples() {
        let s = Shape::new(1, 3, 2, 2, 1).unwrap();
        let d = seeded_normal(s, 1).unwrap();
        assert_eq!(depth_delta(&d, &d).unwrap().aggregate, 0.0);
        let up = d.map(|v| v + 0.5).unwrap();
        assert!((depth_delta(&up, &d).unwrap().aggregate - 0.5).abs() < 1e-12);
        assert!(depth_delta(&d, &FeatureMap::zeros(s.with_views(2))).is_err());
    }

    #[test]
    fn alignment_examples() {
        let s = Shape::new(1, 2, 2, 2, 3).unwrap();
        let a = seeded_normal(s, 2).unwrap();
        assert_eq!(style_alignment(&a, &a).unwrap().aggregate, 1.0);
        // reversing pixels within each view keeps every statistic
        let flipped = FeatureMap::from_fn(s, |st, n, y, x, c| a.get(st, n, 1 - y, 1 - x, c)).unwrap();
        assert!((style_alignment(&flipped, &a).unwrap().aggregate - 1.0).abs() < 1e-12);
        let b = seeded_normal(s, 3).unwrap();
        let ab = style_alignment(&a, &b).unwrap().aggregate;
        assert!(ab < 1.0);
        assert_eq!(ab, style_alignment(&b, &a).unwrap().aggregate);
    }

    #[test]
    fn probe_recovers_linear_depth() {
        let s = Shape::new(1, 2, 3, 3, 2).unwrap();
        let f = seeded_normal(s, 4).unwrap();
        let z = standardized(&f);
        let d = FeatureMap::new(s.with_channels(1), z.iter().map(|r| 2.0 * r[0] - r[1] + 3.0).collect()).unwrap();
        let probe = DepthProbe::fit(&[(&f, &d)]).unwrap();
        assert!((probe.weights[0] - 2.0).abs() < 1e-9 && (probe.intercept - 3.0).abs() < 1e-9);
        let pred = probe.predict(&f).unwrap();
        assert!(depth_delta(&pred, &d).unwrap().aggregate < 1e-9);
    }

    #[test]
    fn csv_layout() {
        let r = MetricReport::new("x", 1.5, vec![1.0, 2.0], "test");
        let csv = reports_to_csv(&[r]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().starts_with("x,1.5e0,1,2e0"));
    }
}
