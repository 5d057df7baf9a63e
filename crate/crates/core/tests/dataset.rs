use std::f64::consts::TAU;

use sfa_core::metrics::style_alignment;
use sfa_core::synth::{
    apply_style_operator, render_views, IdentityParams, RenderSettings, SampleSource, SynthConfig, SyntheticDataset,
    DEPTH_LIPSCHITZ, FEATURE_LIPSCHITZ,
};
use sfa_core::tensor::FeatureMap;

fn bits_equal(a: &FeatureMap, b: &FeatureMap) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// RMS difference between views `n` and `m` of every stream.
fn view_rms(f: &FeatureMap, n: usize, m: usize) -> f64 {
    let s = f.shape();
    let mut ss = 0.0;
    for st in 0..s.streams {
        for y in 0..s.height {
            for x in 0..s.width {
                for c in 0..s.channels {
                    ss += (f.get(st, n, y, x, c) - f.get(st, m, y, x, c)).powi(2);
                }
            }
        }
    }
    (ss / (s.streams * s.pixels() * s.channels) as f64).sqrt()
}

#[test]
fn default_dataset_holds_every_invariant() {
    let data = SyntheticDataset::new(SynthConfig::default()).unwrap();
    assert_eq!(data.len(), 900);
    let cfg = *data.config();
    let step = TAU / cfg.n_views as f64;
    for i in 0..data.len() {
        let s = data.sample(i).unwrap();
        assert_ne!(s.record.content_identity, s.record.style_identity, "sample {i}");
        let op = data.style(s.record.style_domain);
        assert!(bits_equal(&s.target_views, &apply_style_operator(&s.content_views, &op).unwrap()), "sample {i}");
        assert_eq!(s.content_views.shape().views, cfg.n_views);
        assert!(s.view_angles.iter().all(|a| (0.0..TAU).contains(a)));

        let d = &s.depth_views;
        assert!(d.data().iter().all(|&v| v > 0.0), "sample {i} has nonpositive depth");
        let n = cfg.n_views;
        for v in 0..n {
            let w = (v + 1) % n;
            let ds = d.shape();
            for y in 0..ds.height {
                for x in 0..ds.width {
                    let jump = (d.get(0, v, y, x, 0) - d.get(0, w, y, x, 0)).abs();
                    assert!(jump <= DEPTH_LIPSCHITZ * step, "sample {i}: depth jump {jump} between views {v} and {w}");
                }
            }
        }
    }
}

#[test]
fn adjacent_views_respect_the_feature_bound() {
    let settings = RenderSettings::default();
    for k in 0..10 {
        let r = render_views(&IdentityParams::seeded(3, k), 16, &settings, 3).unwrap();
        let bound = FEATURE_LIPSCHITZ * settings.amplitude * TAU / 16.0;
        for n in 0..16 {
            let rms = view_rms(&r.features, n, (n + 1) % 16);
            assert!(rms <= bound, "identity {k}, views {n}: {rms} > {bound}");
        }
    }
}

#[test]
fn same_latent_same_render() {
    let id = IdentityParams::seeded(5, 2);
    let settings = RenderSettings::default();
    let a = render_views(&id, 8, &settings, 5).unwrap();
    let b = render_views(&id.clone(), 8, &settings, 5).unwrap();
    assert!(bits_equal(&a.features, &b.features) && bits_equal(&a.depths, &b.depths));
}

#[test]
fn stylized_views_align_best_with_their_own_domain() {
    let data = SyntheticDataset::new(SynthConfig::default()).unwrap();
    let n_styles = data.config().n_styles;
    for i in 0..60 {
        let s = data.sample(i).unwrap();
        let other = data.sample(i + 1 + (i % (n_styles - 1))).unwrap();
        assert_ne!(other.record.style_domain, s.record.style_domain);
        let own = style_alignment(&s.target_views, &s.style_views).unwrap().aggregate;
        let foreign = style_alignment(&s.target_views, &other.style_views).unwrap().aggregate;
        assert!(own > foreign, "sample {i}: own {own} vs other {foreign}");
    }
}
