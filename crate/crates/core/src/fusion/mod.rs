//! Style fusion attention.
//!
//! Queries come from the latent map only. Keys are the concatenation of
//! three blocks per view: latent keys, content keys re-normalized onto the
//! style key statistics, and raw style keys multiplied by `tau`. Values
//! are the latent, content and style values; which appearance value block
//! pairs with which appearance key block is set by [`PairingMode`].
//!
//! Appearance maps (`f_c`, `f_s`) carry `S` streams; by convention stream 0
//! is the front reference and stream 1 the back view. Attention runs per
//! view: the queries of view `n` see the latent tokens of view `n` and the
//! appearance tokens of view `n` in every stream. AdaIN statistics are
//! pooled over all appearance tokens, per channel.

mod attention;
mod mask;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use mask::{apply_style_mask, selective_style_keys, MaskMode, StyleMask, MASKED_LOGIT_BIAS};

pub(crate) use attention::{attend, gather_view_head, logits, KeyValueBlocks, Layout};

use crate::adain::{adain, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::tensor::{flatten_tokens, FeatureMap, Matrix};

/// Key scale used when none is configured.
pub const DEFAULT_TAU: f64 = 1.05;

/// Which appearance value block each appearance key block reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Normalized keys read style values; scaled style keys read content
    /// values, following the listed order `[V_l, V_s, V_c]`.
    AsWritten,
    /// Normalized keys read content values; scaled style keys read style
    /// values.
    #[default]
    Aligned,
}

impl FromStr for PairingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" => Ok(PairingMode::AsWritten),
            "aligned" => Ok(PairingMode::Aligned),
            other => Err(Error::domain(format!("unknown pairing mode {other:?}"))),
        }
    }
}

impl fmt::Display for PairingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairingMode::AsWritten => "as_written",
            PairingMode::Aligned => "aligned",
        })
    }
}

/// Inference-time controls.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub tau: f64,
    /// Blend weight toward the second style; only read by
    /// [`fused_attention_blend`].
    pub alpha: Option<f64>,
    pub mask: Option<StyleMask>,
    pub mask_mode: MaskMode,
    pub pairing_mode: PairingMode,
    pub eps: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            tau: DEFAULT_TAU,
            alpha: None,
            mask: None,
            mask_mode: MaskMode::default(),
            pairing_mode: PairingMode::default(),
            eps: DEFAULT_EPS,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::domain(format!("tau must be positive, got {}", self.tau)));
        }
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::domain(format!("alpha must lie in [0, 1], got {a}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::domain(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Query, key and value projections plus the head split.
///
/// `style_key` and `style_value` project the style features; they start as
/// copies of `key` and `value` and are the part the trainer updates.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub style_key: Matrix,
    pub style_value: Matrix,
    heads: usize,
}

impl ProjectionSet {
    pub fn new(query: Matrix, key: Matrix, value: Matrix, heads: usize) -> Result<Self> {
        let c = query.rows();
        for (name, m) in [("query", &query), ("key", &key), ("value", &value)] {
            if m.rows() != c || m.cols() != c {
                return Err(Error::shape(format!(
                    "{name} projection is {}x{}, expected {c}x{c}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if heads == 0 || !c.is_multiple_of(heads) {
            return Err(Error::shape(format!("{heads} heads do not divide {c} channels")));
        }
        Ok(ProjectionSet {
            style_key: key.clone(),
            style_value: value.clone(),
            query,
            key,
            value,
            heads,
        })
    }

    pub fn identity(channels: usize, heads: usize) -> Result<Self> {
        let i = Matrix::identity(channels);
        ProjectionSet::new(i.clone(), i.clone(), i, heads)
    }

    /// Replaces the style-path projections.
    pub fn with_style_projections(mut self, style_key: Matrix, style_value: Matrix) -> Result<Self> {
        let c = self.channels();
        for m in [&style_key, &style_value] {
            if m.rows() != c || m.cols() != c {
                return Err(Error::shape(format!(
                    "style projection is {}x{}, expected {c}x{c}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        self.style_key = style_key;
        self.style_value = style_value;
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.query.rows()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.channels() / self.heads
    }
}

/// Attention mass of one query on each key block.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BlockMass {
    pub latent: f64,
    pub normalized_style: f64,
    pub scaled_style: f64,
}

impl BlockMass {
    pub fn total(&self) -> f64 {
        self.latent + self.normalized_style + self.scaled_style
    }
}

impl From<[f64; 3]> for BlockMass {
    fn from(m: [f64; 3]) -> Self {
        BlockMass {
            latent: m[0],
            normalized_style: m[1],
            scaled_style: m[2],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedOutput {
    /// Same shape as the latent map.
    pub features: FeatureMap,
    heads: usize,
    block_mass: Vec<[f64; 3]>,
}

impl FusedOutput {
    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn queries(&self) -> usize {
        self.block_mass.len() / self.heads
    }

    pub fn query_mass(&self, head: usize, query: usize) -> BlockMass {
        self.block_mass[head * self.queries() + query].into()
    }

    pub fn masses(&self) -> impl Iterator<Item = BlockMass> + '_ {
        self.block_mass.iter().map(|&m| m.into())
    }

    /// Mean over every head and query.
    pub fn mean_block_mass(&self) -> BlockMass {
        let n = self.block_mass.len() as f64;
        let mut acc = [0.0; 3];
        for m in &self.block_mass {
            for (a, v) in acc.iter_mut().zip(m) {
                *a += v;
            }
        }
        [acc[0] / n, acc[1] / n, acc[2] / n].into()
    }
}

/// `tokens · w`, split channel-wise into `heads` blocks.
pub fn project(tokens: &Matrix, w: &Matrix, heads: usize) -> Result<Vec<Matrix>> {
    let full = tokens.matmul(w)?;
    split_heads(&full, heads)
}

pub(crate) fn split_heads(m: &Matrix, heads: usize) -> Result<Vec<Matrix>> {
    if heads == 0 || !m.cols().is_multiple_of(heads) {
        return Err(Error::shape(format!("{heads} heads do not divide {} channels", m.cols())));
    }
    let d = m.cols() / heads;
    (0..heads).map(|h| m.column_block(h * d, d)).collect()
}

pub(crate) fn merge_heads(blocks: &[Matrix]) -> Result<Matrix> {
    let rows = blocks.first().map_or(0, Matrix::rows);
    let d = blocks.first().map_or(0, Matrix::cols);
    let mut out = Matrix::zeros(rows, d * blocks.len());
    for (h, b) in blocks.iter().enumerate() {
        out.set_column_block(h * d, b)?;
    }
    Ok(out)
}

/// Multiplies every style key by `tau`.
pub fn key_scale(style_keys: &[Matrix], tau: f64) -> Result<Vec<Matrix>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::domain(format!("tau must be positive, got {tau}")));
    }
    Ok(style_keys.iter().map(|k| k.scale(tau)).collect())
}

/// Blended style keys and values:
/// `(1 - alpha)·(F1·W) + alpha·(F2·W)` for `W` in `{w_key, w_value}`.
pub fn interpolate_style(
    first: &FeatureMap,
    second: &FeatureMap,
    alpha: f64,
    w_key: &Matrix,
    w_value: &Matrix,
) -> Result<(Matrix, Matrix)> {
    if first.shape() != second.shape() {
        return Err(Error::shape(format!(
            "style maps {} and {} differ",
            first.shape(),
            second.shape()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let (t1, t2) = (flatten_tokens(first), flatten_tokens(second));
    let blend = |a: Matrix, b: Matrix| -> Matrix {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (1.0 - alpha) * x + alpha * y)
            .collect();
        Matrix::new(a.rows(), a.cols(), data).expect("same dims")
    };
    let keys = blend(t1.matmul(w_key)?, t2.matmul(w_key)?);
    let values = blend(t1.matmul(w_value)?, t2.matmul(w_value)?);
    Ok((keys, values))
}

/// AdaIN of content keys onto style keys, head by head.
pub(crate) fn adain_per_head(content_keys: &Matrix, style_keys: &Matrix, heads: usize, eps: f64) -> Result<Matrix> {
    let c = split_heads(content_keys, heads)?;
    let s = split_heads(style_keys, heads)?;
    let blocks = c
        .iter()
        .zip(&s)
        .map(|(c, s)| adain(c, s, eps))
        .collect::<Result<Vec<_>>>()?;
    merge_heads(&blocks)
}

pub(crate) fn check_shapes(latent: &FeatureMap, content: &FeatureMap, styles: &[&FeatureMap], channels: usize) -> Result<Layout> {
    let l = latent.shape();
    let c = content.shape();
    if l.streams != 1 {
        return Err(Error::shape(format!("latent map must have one stream, got {l}")));
    }
    if (l.views, l.height, l.width) != (c.views, c.height, c.width) {
        return Err(Error::shape(format!("latent {l} and content {c} disagree on views or resolution")));
    }
    for s in styles {
        if s.shape() != c {
            return Err(Error::shape(format!("style {} does not match content {c}", s.shape())));
        }
    }
    if l.channels != channels || c.channels != channels {
        return Err(Error::shape(format!(
            "projections expect {channels} channels, got latent {} and content {}",
            l.channels, c.channels
        )));
    }
    Ok(Layout {
        views: c.views,
        pixels: c.pixels(),
        streams: c.streams,
    })
}

/// Latent and content projections shared by every path.
pub(crate) struct BaseProjections {
    pub query: Matrix,
    pub latent_keys: Matrix,
    pub latent_values: Matrix,
    pub content_keys: Matrix,
    pub content_values: Matrix,
}

pub(crate) fn base_projections(latent: &Matrix, content: &Matrix, proj: &ProjectionSet) -> Result<BaseProjections> {
    Ok(BaseProjections {
        query: latent.matmul(&proj.query)?,
        latent_keys: latent.matmul(&proj.key)?,
        latent_values: latent.matmul(&proj.value)?,
        content_keys: content.matmul(&proj.key)?,
        content_values: content.matmul(&proj.value)?,
    })
}

/// Normalizes, masks and scales the style keys, then assembles the blocks.
pub(crate) fn assemble_blocks(
    base: BaseProjections,
    style_keys: Matrix,
    style_values: Matrix,
    mask_weights: Option<&[f64]>,
    heads: usize,
    cfg: &FusionConfig,
) -> Result<KeyValueBlocks> {
    let mut normalized = adain_per_head(&base.content_keys, &style_keys, heads, cfg.eps)?;
    let (masked, bias) = match mask_weights {
        Some(w) => {
            normalized = selective_style_keys(&base.content_keys, &normalized, w)?;
            let (k, b) = apply_style_mask(&style_keys, w, cfg.mask_mode)?;
            (k, Some(b))
        }
        None => (style_keys, None),
    };
    let scaled = merge_heads(&key_scale(&split_heads(&masked, heads)?, cfg.tau)?)?;
    Ok(KeyValueBlocks {
        query: base.query,
        latent_keys: base.latent_keys,
        latent_values: base.latent_values,
        normalized_keys: normalized,
        scaled_keys: scaled,
        content_values: base.content_values,
        style_values,
        scaled_bias: bias,
    })
}

fn finish(latent: &FeatureMap, blocks: &KeyValueBlocks, layout: Layout, proj: &ProjectionSet, pairing: PairingMode) -> Result<FusedOutput> {
    let result = attend(blocks, layout, proj.heads(), pairing, false)?;
    Ok(FusedOutput {
        features: FeatureMap::new(latent.shape(), result.output.into_data())?,
        heads: proj.heads(),
        block_mass: result.block_mass,
    })
}

fn fuse_with_style(
    latent: &FeatureMap,
    content: &FeatureMap,
    style_keys: Matrix,
    style_values: Matrix,
    layout: Layout,
    proj: &ProjectionSet,
    cfg: &FusionConfig,
) -> Result<FusedOutput> {
    let weights = cfg
        .mask
        .as_ref()
        .map(|m| m.token_weights(content.shape()))
        .transpose()?;
    let base = base_projections(&flatten_tokens(latent), &flatten_tokens(content), proj)?;
    let blocks = assemble_blocks(base, style_keys, style_values, weights.as_deref(), proj.heads(), cfg)?;
    finish(latent, &blocks, layout, proj, cfg.pairing_mode)
}

/// Style fusion attention for a single style map. `cfg.alpha` is ignored.
pub fn fused_attention(
    latent: &FeatureMap,
    content: &FeatureMap,
    style: &FeatureMap,
    proj: &ProjectionSet,
    cfg: &FusionConfig,
) -> Result<FusedOutput> {
    cfg.validate()?;
    let layout = check_shapes(latent, content, &[style], proj.channels())?;
    let tokens = flatten_tokens(style);
    let keys = tokens.matmul(&proj.style_key)?;
    let values = tokens.matmul(&proj.style_value)?;
    fuse_with_style(latent, content, keys, values, layout, proj, cfg)
}

/// Style fusion attention with two styles blended by `cfg.alpha`.
pub fn fused_attention_blend(
    latent: &FeatureMap,
    content: &FeatureMap,
    first: &FeatureMap,
    second: &FeatureMap,
    proj: &ProjectionSet,
    cfg: &FusionConfig,
) -> Result<FusedOutput> {
    cfg.validate()?;
    let alpha = cfg
        .alpha
        .ok_or_else(|| Error::domain("style blending needs alpha"))?;
    let layout = check_shapes(latent, content, &[first, second], proj.channels())?;
    let (keys, values) = interpolate_style(first, second, alpha, &proj.style_key, &proj.style_value)?;
    fuse_with_style(latent, content, keys, values, layout, proj, cfg)
}

/// One style restricted to one region.
#[derive(Clone, Debug)]
pub struct StyleRegion<'a> {
    pub style: &'a FeatureMap,
    pub mask: StyleMask,
}

/// Several styles, each confined to its own region. Masks must not overlap.
///
/// Normalized keys come from the region's style where covered and from the
/// content keys elsewhere. Raw style keys and values are the sums of the
/// per-region masked contributions, so uncovered tokens carry zeros; the
/// mask mode then applies to the union mask. A single region is the same as
/// [`fused_attention`] with that mask.
pub fn fused_attention_regions(
    latent: &FeatureMap,
    content: &FeatureMap,
    regions: &[StyleRegion<'_>],
    proj: &ProjectionSet,
    cfg: &FusionConfig,
) -> Result<FusedOutput> {
    cfg.validate()?;
    match regions {
        [] => return Err(Error::domain("no style regions given")),
        [only] => {
            let cfg = FusionConfig {
                mask: Some(only.mask.clone()),
                ..cfg.clone()
            };
            return fused_attention(latent, content, only.style, proj, &cfg);
        }
        _ => {}
    }
    let styles: Vec<&FeatureMap> = regions.iter().map(|r| r.style).collect();
    let layout = check_shapes(latent, content, &styles, proj.channels())?;
    let shape = content.shape();
    let weights = regions
        .iter()
        .map(|r| r.mask.token_weights(shape))
        .collect::<Result<Vec<_>>>()?;
    let union: Vec<f64> = (0..shape.tokens())
        .map(|t| weights.iter().map(|w| w[t]).sum())
        .collect();
    if let Some(t) = union.iter().position(|&u| u > 1.0) {
        return Err(Error::domain(format!("style masks overlap at token {t}")));
    }

    let base = base_projections(&flatten_tokens(latent), &flatten_tokens(content), proj)?;
    let c = proj.channels();
    let mut normalized = base.content_keys.clone();
    let mut keys = Matrix::zeros(shape.tokens(), c);
    let mut values = Matrix::zeros(shape.tokens(), c);
    for (region, w) in regions.iter().zip(&weights) {
        let tokens = flatten_tokens(region.style);
        let k = tokens.matmul(&proj.style_key)?;
        let v = tokens.matmul(&proj.style_value)?;
        let k_hat = adain_per_head(&base.content_keys, &k, proj.heads(), cfg.eps)?;
        for (t, &on) in w.iter().enumerate() {
            if on == 1.0 {
                normalized.row_mut(t).copy_from_slice(k_hat.row(t));
                keys.row_mut(t).copy_from_slice(k.row(t));
                values.row_mut(t).copy_from_slice(v.row(t));
            }
        }
    }
    let (masked, bias) = apply_style_mask(&keys, &union, cfg.mask_mode)?;
    let blocks = KeyValueBlocks {
        query: base.query,
        latent_keys: base.latent_keys,
        latent_values: base.latent_values,
        normalized_keys: normalized,
        scaled_keys: masked.scale(cfg.tau),
        content_values: base.content_values,
        style_values: values,
        scaled_bias: Some(bias),
    };
    finish(latent, &blocks, layout, proj, cfg.pairing_mode)
}

/// Unmodified fusion: keys `[K_l, AdaIN(K_c, K_s), K_s]`, no key scaling,
/// mask or blending.
pub fn baseline_attention(
    latent: &FeatureMap,
    content: &FeatureMap,
    style: &FeatureMap,
    proj: &ProjectionSet,
    pairing: PairingMode,
    eps: f64,
) -> Result<FusedOutput> {
    let layout = check_shapes(latent, content, &[style], proj.channels())?;
    let base = base_projections(&flatten_tokens(latent), &flatten_tokens(content), proj)?;
    let tokens = flatten_tokens(style);
    let style_keys = tokens.matmul(&proj.style_key)?;
    let style_values = tokens.matmul(&proj.style_value)?;
    let normalized = adain_per_head(&base.content_keys, &style_keys, proj.heads(), eps)?;
    let blocks = KeyValueBlocks {
        query: base.query,
        latent_keys: base.latent_keys,
        latent_values: base.latent_values,
        normalized_keys: normalized,
        scaled_keys: style_keys,
        content_values: base.content_values,
        style_values,
        scaled_bias: None,
    };
    finish(latent, &blocks, layout, proj, pairing)
}

/// Logits one query assigns to each key block.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryLogits {
    pub latent: Vec<f64>,
    pub normalized_style: Vec<f64>,
    pub scaled_style: Vec<f64>,
}

impl QueryLogits {
    /// True when the single largest logit is positive and sits in the
    /// scaled-style block.
    pub fn max_is_positive_scaled_style(&self) -> bool {
        let best_other = self
            .latent
            .iter()
            .chain(&self.normalized_style)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sorted = self.scaled_style.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        match sorted.as_slice() {
            [] => false,
            [top, rest @ ..] => *top > 0.0 && *top > best_other && rest.first().is_none_or(|r| top > r),
        }
    }
}

/// Logits of one query (`query` indexes the pixels of `view`) in one head.
#[allow(clippy::too_many_arguments)]
pub fn query_logits(
    latent: &FeatureMap,
    content: &FeatureMap,
    style: &FeatureMap,
    proj: &ProjectionSet,
    cfg: &FusionConfig,
    view: usize,
    head: usize,
    query: usize,
) -> Result<QueryLogits> {
    cfg.validate()?;
    let layout = check_shapes(latent, content, &[style], proj.channels())?;
    if view >= layout.views || head >= proj.heads() || query >= layout.pixels {
        return Err(Error::shape(format!("probe ({view}, {head}, {query}) out of range")));
    }
    let weights = cfg.mask.as_ref().map(|m| m.token_weights(content.shape())).transpose()?;
    let base = base_projections(&flatten_tokens(latent), &flatten_tokens(content), proj)?;
    let tokens = flatten_tokens(style);
    let blocks = assemble_blocks(
        base,
        tokens.matmul(&proj.style_key)?,
        tokens.matmul(&proj.style_value)?,
        weights.as_deref(),
        proj.heads(),
        cfg,
    )?;
    let inputs = gather_view_head(&blocks, layout, cfg.pairing_mode, view, head, proj.head_dim())?;
    let z = logits(&inputs, proj.head_dim())?;
    let row = z.row(query);
    let app = layout.streams * layout.pixels;
    Ok(QueryLogits {
        latent: row[..layout.pixels].to_vec(),
        normalized_style: row[layout.pixels..layout.pixels + app].to_vec(),
        scaled_style: row[layout.pixels + app..].to_vec(),
    })
}
