//! Model evaluation over a fixed set of samples, and the key-scale sweep.
//!
//! Metrics read the conditional output (guidance weight 1).

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::{query_logits, FusionConfig};
use crate::metrics::{
    cycle_consistency, depth_delta, mean_squared_error, style_alignment, DepthProbe, MetricReport,
};
use crate::model::Model;
use crate::synth::StylePairSample;

/// Fits the depth readout on unstylized front views.
pub fn fit_depth_probe(samples: &[StylePairSample]) -> Result<DepthProbe> {
    let fronts = samples
        .iter()
        .map(|s| s.content_views.stream(0))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = fronts.iter().zip(samples).map(|(f, s)| (f, &s.depth_views)).collect();
    DepthProbe::fit(&pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    /// Cycle consistency, depth delta and style alignment, averaged over
    /// samples view by view.
    pub reports: Vec<MetricReport>,
    /// MSE between output and unstylized front content.
    pub content_error: f64,
    /// Mean scaled-style attention mass over every query and head.
    pub scaled_style_mass: f64,
    /// Whether the first sample's probe query (view 0, head 0, pixel 0)
    /// has its strictly largest logit on a positive scaled-style key.
    pub probe_max_is_scaled_style: bool,
}

impl EvalSummary {
    pub fn report(&self, name: &str) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.name == name)
    }

    fn aggregate(&self, name: &str) -> f64 {
        self.report(name).map_or(f64::NAN, |r| r.aggregate)
    }
}

fn average(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len() as f64;
    let mut out = reports[0].clone();
    out.aggregate = reports.iter().map(|r| r.aggregate).sum::<f64>() / n;
    for (i, v) in out.per_view.iter_mut().enumerate() {
        *v = reports.iter().map(|r| r.per_view[i]).sum::<f64>() / n;
    }
    out.with_meta("n_samples", reports.len())
}

pub fn evaluate(
    model: &Model,
    samples: &[StylePairSample],
    fusion: &FusionConfig,
    probe: &DepthProbe,
) -> Result<EvalSummary> {
    if samples.is_empty() {
        return Err(Error::domain("evaluation needs at least one sample"));
    }
    let mut cycle = Vec::new();
    let mut depth = Vec::new();
    let mut align = Vec::new();
    let mut content_error = 0.0;
    let mut mass = 0.0;
    for s in samples {
        let out = model.fuse(&s.content_views, &s.style_views, fusion)?;
        let front = s.content_views.stream(0)?;
        cycle.push(cycle_consistency(&out.features)?);
        depth.push(depth_delta(&probe.predict(&out.features)?, &s.depth_views)?);
        align.push(style_alignment(&out.features, &s.style_views.stream(0)?)?);
        content_error += mean_squared_error(&out.features, &front)?;
        mass += out.mean_block_mass().scaled_style;
    }
    let first = &samples[0];
    let x = model.inputs(&first.content_views, &first.style_views)?;
    let logits = query_logits(&x.latent, &x.content, &x.style, &model.projections()?, fusion, 0, 0, 0)?;
    let n = samples.len() as f64;
    let seeds: Vec<String> = samples.iter().map(|s| s.record.seed.to_string()).collect();
    let reports = [cycle, depth, align]
        .iter()
        .map(|r| average(r).with_meta("seeds", seeds.join(" ")).with_meta("tau", fusion.tau))
        .collect();
    Ok(EvalSummary {
        reports,
        content_error: content_error / n,
        scaled_style_mass: mass / n,
        probe_max_is_scaled_style: logits.max_is_positive_scaled_style(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub style_alignment: f64,
    pub cycle_consistency: f64,
    pub depth_delta: f64,
    pub content_error: f64,
    pub scaled_style_mass: f64,
    pub probe_max_is_scaled_style: bool,
}

/// One evaluation per key scale; other settings come from `base`.
pub fn sweep_tau(
    model: &Model,
    samples: &[StylePairSample],
    base: &FusionConfig,
    probe: &DepthProbe,
    taus: &[f64],
) -> Result<Vec<SweepRow>> {
    if taus.is_empty() {
        return Err(Error::domain("key-scale sweep needs at least one value"));
    }
    taus.iter()
        .map(|&tau| {
            let cfg = FusionConfig { tau, ..base.clone() };
            let e = evaluate(model, samples, &cfg, probe)?;
            Ok(SweepRow {
                tau,
                style_alignment: e.aggregate("style_alignment"),
                cycle_consistency: e.aggregate("cycle_consistency"),
                depth_delta: e.aggregate("depth_delta"),
                content_error: e.content_error,
                scaled_style_mass: e.scaled_style_mass,
                probe_max_is_scaled_style: e.probe_max_is_scaled_style,
            })
        })
        .collect()
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "tau,style_alignment,cycle_consistency,depth_delta,content_error,scaled_style_mass,probe_max_is_scaled_style\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{}",
            r.tau,
            r.style_alignment,
            r.cycle_consistency,
            r.depth_delta,
            r.content_error,
            r.scaled_style_mass,
            r.probe_max_is_scaled_style
        )
        .expect("string write");
    }
    out
}
