//! Procedural multi-view feature data.
//!
//! An identity is an 8-float latent `z`. Its appearance field lives on a
//! cylinder seen from `n_views` cameras at angles `2πn/N`; pixel `(y, x)`
//! of a view at angle `θ` (stream `s`, back stream at `θ + π`) sees
//! longitude `λ = θ + sπ + asin(u)` at height `v`, where
//! `u = 0.9·(2(x + 0.5)/W − 1)` and `v = 2(y + 0.5)/H − 1`. Channel `c`
//! (indices into `z` taken mod 8) is
//!
//! ```text
//! A·[ 0.5·z_c
//!   + Σ_{k=1,2} a_ck·cos(kλ + z_{2c+k})·(1 + 0.3·v·tanh z_{c+3k})
//!   + 0.3·tanh(z_{c+5})·v
//!   + 0.15·Σ_{m=1..3} (0.5/m)·(p_mc·cos mλ + q_mc·sin mλ)·cos(m·v + r_mc) ]
//! ```
//!
//! with `a_ck = 0.5 + 0.25·tanh z_{c+k}` and texture coefficients
//! `p, q, r ~ U[−1, 1]` drawn from the dataset seed. The angular derivative
//! of every entry is at most `3.375·A`, so adjacent views differ by at most
//! [`FEATURE_LIPSCHITZ`]`·A·Δθ` in RMS.
//!
//! Depth (front stream) is `3 − sqrt(max(r² − u², 0.05))·(1 − 0.2v²)` with
//! radius `r = 1 + 0.08·tanh z_0 + 0.05·cos(λ − z_1) + 0.03·v·tanh z_2`;
//! it lies in `(1.8, 3)` and moves by at most [`DEPTH_LIPSCHITZ`] per radian.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{derive_seed, read_feature_map, write_feature_map, FeatureMap, SeededRng, Shape};

pub const LATENT_DIM: usize = 8;
/// Per-entry bound on `|∂f/∂θ|`, in units of the amplitude.
pub const FEATURE_LIPSCHITZ: f64 = 3.4;
/// Bound on `|∂depth/∂θ|`.
pub const DEPTH_LIPSCHITZ: f64 = 0.3;

const IDENTITY_SPREAD: f64 = 0.3;
const TAG_TEMPLATE: u64 = 0x7E3A;
const TAG_IDENTITY: u64 = 0x1D;
const TAG_STYLE: u64 = 0x57;
const TAG_TEXTURE: u64 = 0x7E7;
const TAG_SAMPLE: u64 = 0x5A3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityParams {
    pub latent: Vec<f64>,
}

impl IdentityParams {
    pub fn new(latent: Vec<f64>) -> Result<Self> {
        if latent.len() != LATENT_DIM || latent.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("identity latent must be {LATENT_DIM} finite floats")));
        }
        Ok(IdentityParams { latent })
    }

    /// A shared template (from `seed`) plus a small per-identity offset.
    pub fn seeded(seed: u64, index: usize) -> Self {
        let mut template = SeededRng::new(derive_seed(seed, TAG_TEMPLATE));
        let mut own = SeededRng::new(derive_seed(derive_seed(seed, TAG_IDENTITY), index as u64));
        let latent = (0..LATENT_DIM)
            .map(|_| template.normal() + IDENTITY_SPREAD * own.normal())
            .collect();
        IdentityParams { latent }
    }

    fn z(&self, i: usize) -> f64 {
        self.latent[i % LATENT_DIM]
    }
}

/// Per-channel `gain·warp(x) + bias` with
/// `warp(x) = (1 − strength)·x + strength·scale·tanh(x / scale)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub strength: f64,
    pub scale: f64,
}

impl StyleParams {
    pub fn new(gain: Vec<f64>, bias: Vec<f64>, strength: f64, scale: f64) -> Result<Self> {
        if gain.len() != bias.len() {
            return Err(Error::shape("style gain and bias lengths differ"));
        }
        if gain.iter().any(|&g| !(g > 0.0 && g.is_finite())) || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::domain("style gains must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&strength) || scale.is_nan() || scale <= 0.0 {
            return Err(Error::domain(format!("bad warp: strength {strength}, scale {scale}")));
        }
        Ok(StyleParams {
            gain,
            bias,
            strength,
            scale,
        })
    }

    pub fn identity(channels: usize) -> Self {
        StyleParams {
            gain: vec![1.0; channels],
            bias: vec![0.0; channels],
            strength: 0.0,
            scale: 1.0,
        }
    }

    /// Style domain `index`: gains `exp(0.15·N)`, biases `1.5·A·N`,
    /// strength `U[0, 0.5]`.
    pub fn seeded(seed: u64, index: usize, channels: usize, amplitude: f64) -> Self {
        let mut rng = SeededRng::new(derive_seed(derive_seed(seed, TAG_STYLE), index as u64));
        let gain = (0..channels).map(|_| (0.15 * rng.normal()).exp()).collect();
        let bias = (0..channels).map(|_| 1.5 * amplitude * rng.normal()).collect();
        let strength = rng.uniform_in(0.0, 0.5);
        StyleParams {
            gain,
            bias,
            strength,
            scale: amplitude,
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }
}

pub fn apply_style_operator(views: &FeatureMap, style: &StyleParams) -> Result<FeatureMap> {
    let c = views.shape().channels;
    if style.channels() != c {
        return Err(Error::shape(format!(
            "style has {} channels, views have {c}",
            style.channels()
        )));
    }
    let s = style.strength;
    let data = views
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let ch = i % c;
            let warped = (1.0 - s) * x + s * style.scale * (x / style.scale).tanh();
            style.gain[ch] * warped + style.bias[ch]
        })
        .collect();
    FeatureMap::new(views.shape(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub amplitude: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            height: 8,
            width: 8,
            channels: 8,
            amplitude: 16.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedViews {
    /// Front and back streams.
    pub features: FeatureMap,
    /// One channel, front stream only.
    pub depths: FeatureMap,
    pub angles: Vec<f64>,
}

struct Texture {
    /// `[m][c] -> (p, q, r)`
    coeffs: Vec<Vec<(f64, f64, f64)>>,
}

impl Texture {
    fn seeded(seed: u64, channels: usize) -> Self {
        let mut rng = SeededRng::new(derive_seed(seed, TAG_TEXTURE));
        let coeffs = (0..3)
            .map(|_| {
                (0..channels)
                    .map(|_| (rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)))
                    .collect()
            })
            .collect();
        Texture { coeffs }
    }

    fn eval(&self, c: usize, lambda: f64, v: f64) -> f64 {
        let mut acc = 0.0;
        for (m, row) in self.coeffs.iter().enumerate() {
            let m = (m + 1) as f64;
            let (p, q, r) = row[c];
            acc += 0.5 / m * (p * (m * lambda).cos() + q * (m * lambda).sin()) * (m * v + r).cos();
        }
        acc
    }
}

/// View angles `2πn/N`.
pub fn view_angles(n_views: usize) -> Vec<f64> {
    (0..n_views).map(|n| TAU * n as f64 / n_views as f64).collect()
}

fn screen(x: usize, y: usize, s: &RenderSettings) -> (f64, f64) {
    let u = 0.9 * (2.0 * (x as f64 + 0.5) / s.width as f64 - 1.0);
    let v = 2.0 * (y as f64 + 0.5) / s.height as f64 - 1.0;
    (u, v)
}

fn feature(id: &IdentityParams, tex: &Texture, c: usize, lambda: f64, v: f64, amplitude: f64) -> f64 {
    let mut f = 0.5 * id.z(c);
    for k in 1..=2 {
        let a = 0.5 + 0.25 * id.z(c + k).tanh();
        let phase = id.z(2 * c + k);
        f += a * (k as f64 * lambda + phase).cos() * (1.0 + 0.3 * v * id.z(c + 3 * k).tanh());
    }
    f += 0.3 * id.z(c + 5).tanh() * v;
    f += 0.15 * tex.eval(c, lambda, v);
    amplitude * f
}

fn depth(id: &IdentityParams, lambda: f64, u: f64, v: f64) -> f64 {
    let r = 1.0 + 0.08 * id.z(0).tanh() + 0.05 * (lambda - id.z(1)).cos() + 0.03 * v * id.z(2).tanh();
    3.0 - (r * r - u * u).max(0.05).sqrt() * (1.0 - 0.2 * v * v)
}

/// Front/back features and front depth for one identity over the circle.
/// `seed` selects the shared texture.
pub fn render_views(id: &IdentityParams, n_views: usize, settings: &RenderSettings, seed: u64) -> Result<RenderedViews> {
    if n_views < 2 {
        return Err(Error::domain(format!("need at least 2 views, got {n_views}")));
    }
    let shape = Shape::new(2, n_views, settings.height, settings.width, settings.channels)?;
    let angles = view_angles(n_views);
    let tex = Texture::seeded(seed, settings.channels);
    let features = FeatureMap::from_fn(shape, |s, n, y, x, c| {
        let (u, v) = screen(x, y, settings);
        let lambda = angles[n] + s as f64 * PI + u.asin();
        feature(id, &tex, c, lambda, v, settings.amplitude)
    })?;
    let depths = FeatureMap::from_fn(shape.with_streams(1).with_channels(1), |_, n, y, x, _| {
        let (u, v) = screen(x, y, settings);
        depth(id, angles[n] + u.asin(), u, v)
    })?;
    Ok(RenderedViews {
        features,
        depths,
        angles,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub n_styles: usize,
    pub samples_per_style: usize,
    pub n_views: usize,
    pub render: RenderSettings,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_identities: 150,
            n_styles: 6,
            samples_per_style: 150,
            n_views: 16,
            render: RenderSettings::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::domain(format!(
                "cross-identity pairing needs at least 2 identities, got {}",
                self.n_identities
            )));
        }
        if self.n_styles == 0 || self.samples_per_style == 0 {
            return Err(Error::domain("dataset needs at least one style and one sample per style"));
        }
        if self.n_views < 2 {
            return Err(Error::domain(format!("need at least 2 views, got {}", self.n_views)));
        }
        Shape::new(2, self.n_views, self.render.height, self.render.width, self.render.channels)?;
        if !(self.render.amplitude > 0.0 && self.render.amplitude.is_finite()) {
            return Err(Error::domain("amplitude must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_styles * self.samples_per_style
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bookkeeping for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub content_identity: usize,
    pub style_identity: usize,
    pub style_domain: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StylePairSample {
    pub record: SampleRecord,
    pub content_views: FeatureMap,
    pub style_views: FeatureMap,
    pub target_views: FeatureMap,
    pub depth_views: FeatureMap,
    pub view_angles: Vec<f64>,
}

impl StylePairSample {
    /// Front stream of the target, the shape the fused output takes.
    pub fn target_front(&self) -> Result<FeatureMap> {
        self.target_views.stream(0)
    }
}

/// Random access to samples.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn sample(&self, index: usize) -> Result<StylePairSample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples generated on demand from a [`SynthConfig`].
///
/// Sample `i` uses style domain `i mod n_styles` and content identity
/// `(i / n_styles) mod n_identities`; its style reference is another
/// identity drawn with the per-sample seed `derive_seed(seed, i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    config: SynthConfig,
    records: Vec<SampleRecord>,
}

impl SyntheticDataset {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let sample_seed = derive_seed(config.seed, TAG_SAMPLE);
        let records = (0..config.len())
            .map(|i| {
                let seed = derive_seed(sample_seed, i as u64);
                let content_identity = (i / config.n_styles) % config.n_identities;
                let mut rng = SeededRng::new(seed);
                let style_identity = (content_identity + 1 + rng.below(config.n_identities - 1)) % config.n_identities;
                SampleRecord {
                    index: i,
                    content_identity,
                    style_identity,
                    style_domain: i % config.n_styles,
                    seed,
                }
            })
            .collect();
        Ok(SyntheticDataset { config, records })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn identity(&self, index: usize) -> IdentityParams {
        IdentityParams::seeded(self.config.seed, index)
    }

    pub fn style(&self, domain: usize) -> StyleParams {
        StyleParams::seeded(self.config.seed, domain, self.config.render.channels, self.config.render.amplitude)
    }

    pub fn render(&self, identity: usize) -> Result<RenderedViews> {
        render_views(&self.identity(identity), self.config.n_views, &self.config.render, self.config.seed)
    }

    fn build(&self, record: SampleRecord) -> Result<StylePairSample> {
        let content = self.render(record.content_identity)?;
        let style_source = self.render(record.style_identity)?;
        let style = self.style(record.style_domain);
        Ok(StylePairSample {
            record,
            style_views: apply_style_operator(&style_source.features, &style)?,
            target_views: apply_style_operator(&content.features, &style)?,
            content_views: content.features,
            depth_views: content.depths,
            view_angles: content.angles,
        })
    }

    /// Sample whose content identity lies outside the training range
    /// (`n_identities + k`); the style reference is a training identity.
    pub fn held_out_sample(&self, style_domain: usize, k: usize) -> Result<StylePairSample> {
        let seed = derive_seed(derive_seed(self.config.seed, TAG_SAMPLE), u64::MAX - k as u64);
        let mut rng = SeededRng::new(seed);
        self.build(SampleRecord {
            index: usize::MAX,
            content_identity: self.config.n_identities + k,
            style_identity: rng.below(self.config.n_identities),
            style_domain: style_domain % self.config.n_styles,
            seed,
        })
    }
}

impl SampleSource for SyntheticDataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn sample(&self, index: usize) -> Result<StylePairSample> {
        let record = *self
            .records
            .get(index)
            .ok_or_else(|| Error::domain(format!("sample {index} out of range ({})", self.records.len())))?;
        self.build(record)
    }
}

/// Dataset with `n_samples_per_style` left at its default.
pub fn make_dataset(n_identities: usize, n_styles: usize, n_views: usize, seed: u64) -> Result<SyntheticDataset> {
    SyntheticDataset::new(SynthConfig {
        n_identities,
        n_styles,
        n_views,
        seed,
        ..SynthConfig::default()
    })
}

const MANIFEST: &str = "manifest.json";
const ROLES: [&str; 4] = ["content", "style", "target", "depth"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub record: SampleRecord,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub view_angles: Vec<f64>,
    pub samples: Vec<ManifestEntry>,
}

fn sample_file(index: usize, role: &str) -> String {
    format!("sample_{index:05}_{role}.sfa")
}

/// Writes every sample plus `manifest.json` into `dir`.
pub fn write_dataset(dataset: &SyntheticDataset, dir: &Path, force: bool) -> Result<Manifest> {
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() && !force {
        return Err(Error::WouldOverwrite(manifest_path));
    }
    fs::create_dir_all(dir)?;
    let mut samples = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let s = dataset.sample(i)?;
        let files: Vec<String> = ROLES.iter().map(|r| sample_file(i, r)).collect();
        for (file, map) in files
            .iter()
            .zip([&s.content_views, &s.style_views, &s.target_views, &s.depth_views])
        {
            write_feature_map(&dir.join(file), map)?;
        }
        samples.push(ManifestEntry { record: s.record, files });
    }
    let manifest = Manifest {
        config: *dataset.config(),
        view_angles: view_angles(dataset.config().n_views),
        samples,
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// A dataset directory written by [`write_dataset`], read on demand.
#[derive(Clone, Debug)]
pub struct DatasetDir {
    root: PathBuf,
    manifest: Manifest,
}

impl DatasetDir {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
        manifest.config.validate()?;
        Ok(DatasetDir {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn config(&self) -> &SynthConfig {
        &self.manifest.config
    }
}

impl SampleSource for DatasetDir {
    fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    fn sample(&self, index: usize) -> Result<StylePairSample> {
        let entry = self
            .manifest
            .samples
            .get(index)
            .ok_or_else(|| Error::domain(format!("sample {index} out of range ({})", self.len())))?;
        if entry.files.len() != ROLES.len() {
            return Err(Error::Format(format!("sample {index} lists {} files", entry.files.len())));
        }
        let maps = entry
            .files
            .iter()
            .map(|f| read_feature_map(&self.root.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let [content_views, style_views, target_views, depth_views]: [FeatureMap; 4] =
            maps.try_into().expect("four roles");
        Ok(StylePairSample {
            record: entry.record,
            content_views,
            style_views,
            target_views,
            depth_views,
            view_angles: self.manifest.view_angles.clone(),
        })
    }
}
