//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p sfa-core --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use sfa_core::adain::adain;
use sfa_core::cli::main_with_args;
use sfa_core::eval::{fit_depth_probe, sweep_tau};
use sfa_core::fusion::{
    baseline_attention, fused_attention, interpolate_style, query_logits, selective_style_keys, FusionConfig,
    MaskMode, PairingMode, ProjectionSet, StyleMask,
};
use sfa_core::grad::{MicroInstance, DEFAULT_FD_STEP};
use sfa_core::metrics::cycle_consistency;
use sfa_core::model::{Model, ModelSpec};
use sfa_core::synth::{SampleSource, SynthConfig, SyntheticDataset};
use sfa_core::tensor::{
    flatten_tokens, read_feature_map, seeded_matrix, seeded_normal, write_feature_map, FeatureMap, Matrix,
    SeededRng, Shape,
};
use sfa_core::trainer::{freeze_check, train_style_path, Checkpoint, TrainConfig, TrainState};

type Outcome = std::result::Result<String, String>;
type Criterion = Box<dyn FnOnce(&mut Option<Trained>) -> Outcome>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

struct Instance {
    latent: FeatureMap,
    content: FeatureMap,
    style: FeatureMap,
    proj: ProjectionSet,
}

/// Random shapes, heads and projections.
fn random_instance(seed: u64) -> Instance {
    let mut rng = SeededRng::new(seed.wrapping_mul(0x9E37_79B9) ^ 0xACCE);
    let heads = 1 + rng.below(2);
    let c = heads * (1 + rng.below(3));
    let shape = Shape::new(2, 1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3), c).unwrap();
    let scale = rng.uniform_in(0.2, 1.5);
    let proj = ProjectionSet::new(
        seeded_matrix(c, c, scale, &mut rng),
        seeded_matrix(c, c, scale, &mut rng),
        seeded_matrix(c, c, scale, &mut rng),
        heads,
    )
    .unwrap()
    .with_style_projections(seeded_matrix(c, c, scale, &mut rng), seeded_matrix(c, c, scale, &mut rng))
    .unwrap();
    let amp = rng.uniform_in(0.5, 4.0);
    let base = rng.next_u64();
    let grow = |f: FeatureMap| f.map(|v| amp * v).unwrap();
    Instance {
        latent: grow(seeded_normal(shape.with_streams(1), base).unwrap()),
        content: grow(seeded_normal(shape, base ^ 1).unwrap()),
        style: grow(seeded_normal(shape, base ^ 2).unwrap()),
        proj,
    }
}

fn random_config(seed: u64, shape: Shape) -> FusionConfig {
    let mut rng = SeededRng::new(seed ^ 0xC0F1);
    let mask = match rng.below(3) {
        0 => None,
        _ => {
            let grid: Vec<f64> = (0..shape.height * shape.width).map(|_| (rng.below(2)) as f64).collect();
            Some(StyleMask::from_grid(shape.height, shape.width, &grid).unwrap())
        }
    };
    FusionConfig {
        tau: rng.uniform_in(0.5, 4.0),
        mask,
        mask_mode: if rng.below(2) == 0 { MaskMode::Exclusion } else { MaskMode::PaperLiteral },
        pairing_mode: if rng.below(2) == 0 { PairingMode::Aligned } else { PairingMode::AsWritten },
        ..FusionConfig::default()
    }
}

fn softmax_normalization() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut queries = 0usize;
    for seed in 0..1000 {
        let i = random_instance(seed);
        let cfg = random_config(seed, i.content.shape());
        let out = fused_attention(&i.latent, &i.content, &i.style, &i.proj, &cfg).map_err(err)?;
        for m in out.masses() {
            worst = worst.max((m.total() - 1.0).abs());
            queries += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-9, || format!("max |sum - 1| = {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{queries} queries, max |sum - 1| = {worst:.1e}, {elapsed:.2?}"))
}

/// Channel means and population standard deviations, computed directly.
fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    let mut mean = Vec::new();
    let mut sd = Vec::new();
    for c in 0..m.cols() {
        let col: Vec<f64> = (0..m.rows()).map(|r| m.get(r, c)).collect();
        let mu = col.iter().sum::<f64>() / n;
        mean.push(mu);
        sd.push((col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt());
    }
    (mean, sd)
}

fn adain_statistics() -> Outcome {
    let eps = 1e-12;
    let (mut mean_err, mut sd_err, mut self_err) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..200 {
        let mut rng = SeededRng::new(seed + 11);
        let c = 1 + rng.below(8);
        let content = seeded_matrix(2 + rng.below(30), c, rng.uniform_in(0.1, 10.0), &mut rng);
        let shift = rng.uniform_in(-5.0, 5.0);
        let style = seeded_matrix(2 + rng.below(30), c, rng.uniform_in(0.1, 10.0), &mut rng);
        let style = Matrix::new(style.rows(), c, style.data().iter().map(|v| v + shift).collect()).unwrap();
        let out = adain(&content, &style, eps).map_err(err)?;
        let (mo, so) = column_moments(&out);
        let (ms, ss) = column_moments(&style);
        for k in 0..c {
            mean_err = mean_err.max((mo[k] - ms[k]).abs());
            sd_err = sd_err.max((so[k] - ss[k]).abs());
        }
        self_err = self_err.max(adain(&content, &content, eps).map_err(err)?.max_abs_diff(&content));
    }
    ensure(mean_err <= 1e-6, || format!("mean error {mean_err:e}"))?;
    ensure(sd_err <= 1e-5, || format!("std error {sd_err:e}"))?;
    ensure(self_err <= 1e-9, || format!("adain(x, x) error {self_err:e}"))?;
    Ok(format!(
        "200 pairs: mean err {mean_err:.1e}, std err {sd_err:.1e}, self err {self_err:.1e}"
    ))
}

fn unit_tau_identity() -> Outcome {
    for seed in 0..100 {
        let i = random_instance(seed + 5000);
        let pairing = if seed % 2 == 0 { PairingMode::Aligned } else { PairingMode::AsWritten };
        let cfg = FusionConfig {
            tau: 1.0,
            pairing_mode: pairing,
            ..FusionConfig::default()
        };
        let fused = fused_attention(&i.latent, &i.content, &i.style, &i.proj, &cfg).map_err(err)?;
        let base = baseline_attention(&i.latent, &i.content, &i.style, &i.proj, pairing, cfg.eps).map_err(err)?;
        let same_bits = fused
            .features
            .data()
            .iter()
            .zip(base.features.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same_bits && fused == base, || format!("instance {seed} differs"))?;
    }
    Ok("100 instances bit-identical".into())
}

fn tau_limit() -> Outcome {
    // Probe query [1, 0] against style tokens [3, 0] and [-1, 0].
    let shape = Shape::new(1, 1, 1, 2, 2).unwrap();
    let latent = FeatureMap::new(shape, vec![1.0, 0.0, 0.0, 0.2]).unwrap();
    let content = FeatureMap::new(shape, vec![0.0, 1.0, 0.0, -1.0]).unwrap();
    let style = FeatureMap::new(shape, vec![3.0, 0.0, -1.0, 0.0]).unwrap();
    let proj = ProjectionSet::identity(2, 1).map_err(err)?;
    let at = |tau: f64| FusionConfig {
        tau,
        ..FusionConfig::default()
    };
    let logits = query_logits(&latent, &content, &style, &proj, &at(1.0), 0, 0, 0).map_err(err)?;
    ensure(logits.max_is_positive_scaled_style(), || format!("probe precondition fails: {logits:?}"))?;
    let taus = [1.0, 1.5, 2.0, 5.0, 50.0];
    let masses = taus
        .iter()
        .map(|&t| Ok(fused_attention(&latent, &content, &style, &proj, &at(t))?.query_mass(0, 0).scaled_style))
        .collect::<sfa_core::Result<Vec<f64>>>()
        .map_err(err)?;
    ensure(masses.windows(2).all(|w| w[1] > w[0]), || format!("not increasing: {masses:?}"))?;
    ensure(masses[4] >= 0.99, || format!("mass at 50 is {}", masses[4]))?;
    let shown: Vec<String> = masses.iter().map(|m| format!("{m:.4}")).collect();
    Ok(format!("scaled-style mass over {taus:?}: [{}]", shown.join(", ")))
}

fn interpolation() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let i = random_instance(seed + 900);
        let other = seeded_normal(i.style.shape(), seed + 901).unwrap();
        let (wk, wv) = (&i.proj.style_key, &i.proj.style_value);
        let single = |f: &FeatureMap| {
            let t = flatten_tokens(f);
            (t.matmul(wk).unwrap(), t.matmul(wv).unwrap())
        };
        let at = |a: f64| interpolate_style(&i.style, &other, a, wk, wv);
        let (k0, v0) = at(0.0).map_err(err)?;
        let (k1, v1) = at(1.0).map_err(err)?;
        let (s0, s1) = (single(&i.style), single(&other));
        for d in [k0.max_abs_diff(&s0.0), v0.max_abs_diff(&s0.1), k1.max_abs_diff(&s1.0), v1.max_abs_diff(&s1.1)] {
            worst = worst.max(d);
        }
        for a in [0.25, 0.5, 0.75] {
            let (k, v) = at(a).map_err(err)?;
            let lerp = |x: &Matrix, y: &Matrix| x.scale(1.0 - a).add(&y.scale(a)).unwrap();
            worst = worst.max(k.max_abs_diff(&lerp(&k0, &k1)));
            worst = worst.max(v.max_abs_diff(&lerp(&v0, &v1)));
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("20 instances, max deviation {worst:.1e}"))
}

fn mask_contracts() -> Outcome {
    let mut min_bits_equal = true;
    let mut worst_style_mass = 0.0f64;
    for seed in 0..20 {
        let i = random_instance(seed + 300);
        let s = i.content.shape();
        let plain = FusionConfig {
            tau: 1.3,
            ..FusionConfig::default()
        };
        let ones = FusionConfig {
            mask: Some(StyleMask::filled(s.height, s.width, 1.0).unwrap()),
            ..plain.clone()
        };
        let zeros = FusionConfig {
            mask: Some(StyleMask::filled(s.height, s.width, 0.0).unwrap()),
            mask_mode: MaskMode::Exclusion,
            ..plain.clone()
        };
        let a = fused_attention(&i.latent, &i.content, &i.style, &i.proj, &plain).map_err(err)?;
        let b = fused_attention(&i.latent, &i.content, &i.style, &i.proj, &ones).map_err(err)?;
        min_bits_equal &= a.features.data().iter().zip(b.features.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        let z = fused_attention(&i.latent, &i.content, &i.style, &i.proj, &zeros).map_err(err)?;
        for m in z.masses() {
            worst_style_mass = worst_style_mass.max(m.scaled_style);
        }
    }
    ensure(min_bits_equal, || "all-ones mask changed the output".into())?;
    ensure(worst_style_mass < 1e-6, || format!("style mass {worst_style_mass:e} under all-zeros mask"))?;

    // Checkerboard source choice, row by row.
    let shape = Shape::new(2, 2, 4, 4, 3).unwrap();
    let grid: Vec<f64> = (0..16).map(|k| ((k / 4 + k % 4) % 2) as f64).collect();
    let mask = StyleMask::from_grid(4, 4, &grid).map_err(err)?;
    let weights = mask.token_weights(shape).map_err(err)?;
    let mut rng = SeededRng::new(4);
    let content_keys = seeded_matrix(shape.tokens(), 3, 1.0, &mut rng);
    let style_keys = seeded_matrix(shape.tokens(), 3, 2.0, &mut rng);
    let normalized = adain(&content_keys, &style_keys, 1e-5).map_err(err)?;
    let chosen = selective_style_keys(&content_keys, &normalized, &weights).map_err(err)?;
    let (mut on, mut off) = (0, 0);
    for t in 0..shape.tokens() {
        let (y, x) = ((t % shape.pixels()) / 4, t % 4);
        let expect_style = (y + x) % 2 == 1;
        ensure(weights[t] == if expect_style { 1.0 } else { 0.0 }, || format!("token {t} weight {}", weights[t]))?;
        let source = if expect_style { normalized.row(t) } else { content_keys.row(t) };
        ensure(chosen.row(t) == source, || format!("token {t} took the wrong source"))?;
        if expect_style { on += 1 } else { off += 1 }
    }
    Ok(format!(
        "ones mask bit-exact, zeros mask style mass {worst_style_mass:.1e}, checkerboard {on} style / {off} content rows"
    ))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut entries = 0;
    for seed in 0..20 {
        let report = MicroInstance::seeded(seed)
            .and_then(|m| m.check(DEFAULT_FD_STEP, 1e-4))
            .map_err(err)?;
        worst = worst.max(report.max_rel_err);
        entries += report.entries.len();
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("20 instances, {entries} entries, max rel err {worst:.1e}, {elapsed:.2?}"))
}

struct Trained {
    data: SyntheticDataset,
    state: TrainState,
}

fn training_protocol(trained: &mut Option<Trained>) -> Outcome {
    let start = Instant::now();
    let data = SyntheticDataset::new(SynthConfig::default()).map_err(err)?;
    ensure(data.len() == 900, || format!("dataset has {} pairs", data.len()))?;
    let model = Model::seeded(&ModelSpec::default()).map_err(err)?;
    let cfg = TrainConfig::default();
    let state = train_style_path(&model, &data, &cfg, &FusionConfig::default()).map_err(err)?;
    let elapsed = start.elapsed();
    // The trainer aborts on any non-finite loss or failed freeze check, so
    // a completed run has passed both at every step.
    ensure(state.loss_history.len() == cfg.steps, || format!("{} steps recorded", state.loss_history.len()))?;
    ensure(state.loss_history.iter().all(|l| l.is_finite()), || "non-finite loss".into())?;
    ensure(freeze_check(&state), || "frozen path changed".into())?;
    let ratio = state.final_probe_loss / state.initial_probe_loss;
    ensure(ratio <= 0.5, || {
        format!(
            "probe loss {:.3} -> {:.3} (ratio {ratio:.3})",
            state.initial_probe_loss, state.final_probe_loss
        )
    })?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    let msg = format!(
        "{} steps, probe loss {:.2} -> {:.2} (ratio {ratio:.3}), {elapsed:.1?}",
        cfg.steps, state.initial_probe_loss, state.final_probe_loss
    );
    *trained = Some(Trained { data, state });
    Ok(msg)
}

/// Loop metric from first principles.
fn brute_force_cycle(f: &FeatureMap) -> (f64, Vec<f64>) {
    let s = f.shape();
    let per: Vec<f64> = (0..s.views)
        .map(|n| {
            let m = (n + 1) % s.views;
            let mut ss = 0.0;
            let mut count = 0.0;
            for st in 0..s.streams {
                for y in 0..s.height {
                    for x in 0..s.width {
                        for c in 0..s.channels {
                            ss += (f.get(st, n, y, x, c) - f.get(st, m, y, x, c)).powi(2);
                            count += 1.0;
                        }
                    }
                }
            }
            (ss / count).sqrt()
        })
        .collect();
    (100.0 * per.iter().sum::<f64>() / per.len() as f64, per)
}

fn rotate_views(f: &FeatureMap, k: usize) -> FeatureMap {
    let n = f.shape().views;
    FeatureMap::from_fn(f.shape(), |st, v, y, x, c| f.get(st, (v + k) % n, y, x, c)).unwrap()
}

fn consistency_metrics() -> Outcome {
    let shape = Shape::new(1, 5, 3, 3, 2).unwrap();
    let one = seeded_normal(shape.with_views(1), 1).unwrap();
    let identical = FeatureMap::from_fn(shape, |st, _, y, x, c| one.get(st, 0, y, x, c)).unwrap();
    let zero = cycle_consistency(&identical).map_err(err)?.aggregate;
    ensure(zero == 0.0, || format!("identical views give {zero}"))?;

    let (mut brute_err, mut rot_err) = (0.0f64, 0.0f64);
    for seed in 0..50 {
        let mut rng = SeededRng::new(seed + 70);
        let s = Shape::new(1 + rng.below(2), 2 + rng.below(7), 1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4))
            .unwrap();
        let f = seeded_normal(s, seed + 71).unwrap();
        let r = cycle_consistency(&f).map_err(err)?;
        let (agg, per) = brute_force_cycle(&f);
        brute_err = brute_err.max((r.aggregate - agg).abs());
        for (a, b) in r.per_view.iter().zip(&per) {
            brute_err = brute_err.max((a - b).abs());
        }
        let k = 1 + rng.below(s.views - 1);
        rot_err = rot_err.max((cycle_consistency(&rotate_views(&f, k)).map_err(err)?.aggregate - r.aggregate).abs());
    }
    ensure(brute_err <= 1e-10, || format!("brute-force mismatch {brute_err:e}"))?;
    ensure(rot_err <= 1e-12, || format!("rotation changes the metric by {rot_err:e}"))?;

    // Views 0..N-1 hold the constant n, so only the wrap pair differs by N-1.
    let ramp = FeatureMap::from_fn(shape, |_, n, _, _, _| n as f64).unwrap();
    let r = cycle_consistency(&ramp).map_err(err)?;
    ensure(r.per_view.len() == 5 && r.per_view[4] == 4.0, || format!("wrap pair missing: {:?}", r.per_view))?;
    Ok(format!(
        "zero on identical views, brute-force err {brute_err:.1e}, rotation err {rot_err:.1e}, wrap pair included"
    ))
}

fn trend_reproduction(trained: &Option<Trained>) -> Outcome {
    let t = trained.as_ref().ok_or("no trained checkpoint (training criterion failed)")?;
    let model = t.state.model().map_err(err)?;
    let samples = (0..6).map(|i| t.data.sample(i)).collect::<sfa_core::Result<Vec<_>>>().map_err(err)?;
    let probe = fit_depth_probe(&samples).map_err(err)?;
    let rows = sweep_tau(&model, &samples, &FusionConfig::default(), &probe, &[1.00, 1.05, 1.10]).map_err(err)?;
    let align: Vec<f64> = rows.iter().map(|r| r.style_alignment).collect();
    let content: Vec<f64> = rows.iter().map(|r| r.content_error).collect();
    let show = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    ensure(align.windows(2).all(|w| w[1] >= w[0]), || format!("style alignment not nondecreasing: [{}]", show(&align)))?;
    ensure(content.windows(2).all(|w| w[1] >= w[0]), || format!("content error not nondecreasing: [{}]", show(&content)))?;
    Ok(format!("style alignment [{}], content error [{}]", show(&align), show(&content)))
}

fn digest_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&path).unwrap())));
            }
        }
    }
    out
}

fn run_pipeline(root: &Path) -> std::result::Result<BTreeMap<String, String>, String> {
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let sample = |role: &str| p(&format!("data/sample_00000_{role}.sfa"));
    let commands: Vec<Vec<String>> = vec![
        vec!["gen-data", "--out", &p("data"), "--seed", "7", "--identities", "6", "--styles", "2", "--samples-per-style", "4", "--views", "8"]
            .into_iter().map(String::from).collect(),
        vec!["train", "--data", &p("data"), "--out", &p("model.sft"), "--seed", "7", "--steps", "40", "--views", "8"]
            .into_iter().map(String::from).collect(),
        vec!["fuse", "--content", &sample("content"), "--style", &sample("style"), "--checkpoint", &p("model.sft"), "--out", &p("fused")]
            .into_iter().map(String::from).collect(),
        vec!["eval", "--data", &p("data"), "--checkpoint", &p("model.sft"), "--out", &p("eval")]
            .into_iter().map(String::from).collect(),
    ];
    for args in commands {
        let code = main_with_args(std::iter::once("sfa".to_string()).chain(args.iter().cloned()));
        ensure(code == 0, || format!("`{}` exited with {code}", args[0]))?;
    }
    Ok(digest_tree(root))
}

fn determinism_and_io() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?);
    let first = run_pipeline(a.path())?;
    let second = run_pipeline(b.path())?;
    ensure(first == second, || {
        let diff: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
        format!("artifacts differ: {diff:?}")
    })?;

    let map = seeded_normal(Shape::new(2, 3, 4, 5, 6).unwrap(), 12).unwrap();
    let path = a.path().join("roundtrip.sfa");
    write_feature_map(&path, &map).map_err(err)?;
    let back = read_feature_map(&path).map_err(err)?;
    ensure(
        back.shape() == map.shape() && back.data().iter().zip(map.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
        || "feature map round trip changed bits".into(),
    )?;
    let ckpt_path = a.path().join("model.sft");
    let bytes = std::fs::read(&ckpt_path).map_err(err)?;
    let ckpt = Checkpoint::read(&ckpt_path).map_err(err)?;
    ensure(ckpt.to_bytes().map_err(err)? == bytes, || "checkpoint round trip changed bytes".into())?;
    let without_history = Checkpoint {
        loss_history: Vec::new(),
        ..ckpt.clone()
    };
    ensure(Checkpoint::from_bytes(&bytes).map_err(err)? == without_history, || "checkpoint decode differs".into())?;
    let sidecar = std::fs::read_to_string(Checkpoint::loss_csv_path(&ckpt_path)).map_err(err)?;
    ensure(ckpt.loss_history.len() == 40 && ckpt.loss_csv() == sidecar, || "loss history round trip differs".into())?;
    Ok(format!("{} artifacts identical across runs, round trips bit-exact", first.len()))
}

fn main() -> ExitCode {
    let mut trained = None;
    let criteria: Vec<(&str, Criterion)> = vec![
        ("attention normalization", Box::new(|_| softmax_normalization())),
        ("adain statistic matching", Box::new(|_| adain_statistics())),
        ("unit key scale matches baseline", Box::new(|_| unit_tau_identity())),
        ("large key scale limit", Box::new(|_| tau_limit())),
        ("interpolation endpoints and linearity", Box::new(|_| interpolation())),
        ("mask contracts", Box::new(|_| mask_contracts())),
        ("gradient correctness", Box::new(|_| gradient_correctness())),
        ("training protocol", Box::new(training_protocol)),
        ("consistency metrics", Box::new(|_| consistency_metrics())),
        ("key scale trade-off trend", Box::new(|t| trend_reproduction(t))),
        ("determinism and file round trips", Box::new(|_| determinism_and_io())),
    ];
    let mut failures = 0;
    for (k, (name, check)) in criteria.into_iter().enumerate() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut trained)))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {:>2}  {name}: {detail}", k + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {:>2}  {name}: {detail}", k + 1);
            }
        }
    }
    println!("{} of 11 criteria passed", 11 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
