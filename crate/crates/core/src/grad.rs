//! Hand-written reverse-mode gradients of the training loss with respect
//! to the style path, and a central-difference oracle to check them.
//!
//! The loss is the mean squared error between the conditional fused output
//! and a target map of the latent's shape. The backward pass differentiates
//! through the style encoder, the style key/value projections, optional
//! style blending, the AdaIN statistics of the style keys, masking, key
//! scaling, the per-view softmax and the value pairing. Frozen weights get
//! no gradient.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adain::{channel_stats, normalize};
use crate::error::{Error, Result};
use crate::fusion::{
    assemble_blocks, attend, base_projections, check_shapes, gather_view_head, interpolate_style, FusionConfig,
    KeyValueBlocks, Layout, MaskMode, PairingMode, ProjectionSet, StyleMask,
};
use crate::model::{Encoder, FrozenPath, ModelSpec, StylePath};
use crate::tensor::{derive_seed, flatten_tokens, seeded_normal, FeatureMap, Matrix, SeededRng, Shape};

/// Step used by the central-difference oracle.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Location of one named matrix inside a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat trainable parameters with a name index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    slots: Vec<ParamSlot>,
}

const STYLE_ENCODER_WEIGHT: &str = "style_encoder.weight";
const STYLE_ENCODER_BIAS: &str = "style_encoder.bias";
const STYLE_KEY: &str = "style_key.weight";
const STYLE_VALUE: &str = "style_value.weight";

impl ParamVector {
    /// Packs named matrices in the given order.
    pub fn pack(parts: &[(&str, &Matrix)]) -> Self {
        let mut values = Vec::new();
        let mut slots = Vec::with_capacity(parts.len());
        for (name, m) in parts {
            slots.push(ParamSlot {
                name: (*name).to_string(),
                offset: values.len(),
                rows: m.rows(),
                cols: m.cols(),
            });
            values.extend_from_slice(m.data());
        }
        ParamVector { values, slots }
    }

    pub fn from_style_path(path: &StylePath) -> Self {
        let bias = Matrix::new(1, path.encoder.bias.len(), path.encoder.bias.clone()).expect("row vector");
        ParamVector::pack(&[
            (STYLE_ENCODER_WEIGHT, &path.encoder.weight),
            (STYLE_ENCODER_BIAS, &bias),
            (STYLE_KEY, &path.key),
            (STYLE_VALUE, &path.value),
        ])
    }

    pub fn to_style_path(&self) -> Result<StylePath> {
        Ok(StylePath {
            encoder: Encoder::new(self.get(STYLE_ENCODER_WEIGHT)?, self.get(STYLE_ENCODER_BIAS)?.into_data())?,
            key: self.get(STYLE_KEY)?,
            value: self.get(STYLE_VALUE)?,
        })
    }

    /// Rebuilds a vector from its index and values; slots must tile the
    /// values contiguously.
    pub fn from_parts(slots: Vec<ParamSlot>, values: Vec<f64>) -> Result<Self> {
        let mut offset = 0;
        for s in &slots {
            if s.offset != offset {
                return Err(Error::Format(format!("parameter {} starts at {}, expected {offset}", s.name, s.offset)));
            }
            offset += s.len();
        }
        if offset != values.len() {
            return Err(Error::Format(format!("slots cover {offset} values, found {}", values.len())));
        }
        Ok(ParamVector { values, slots })
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::shape(format!(
                "{} values for a {}-entry parameter vector",
                values.len(),
                self.values.len()
            )));
        }
        Ok(ParamVector {
            values,
            slots: self.slots.clone(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            slots: self.slots.clone(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&ParamSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Result<Matrix> {
        let s = self
            .slot(name)
            .ok_or_else(|| Error::domain(format!("no parameter named {name:?}")))?;
        Matrix::new(s.rows, s.cols, self.values[s.offset..s.offset + s.len()].to_vec())
    }

    /// `name[row,col]` for flat index `i`.
    pub fn entry_name(&self, i: usize) -> String {
        for s in &self.slots {
            if (s.offset..s.offset + s.len()).contains(&i) {
                let k = i - s.offset;
                return format!("{}[{},{}]", s.name, k / s.cols, k % s.cols);
            }
        }
        format!("param[{i}]")
    }

    /// `self += k·other`.
    pub fn add_scaled(&mut self, k: f64, other: &ParamVector) -> Result<()> {
        if other.slots != self.slots {
            return Err(Error::shape("parameter layouts differ"));
        }
        for (v, g) in self.values.iter_mut().zip(&other.values) {
            *v += k * g;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn accumulate(&mut self, name: &str, m: &Matrix) {
        let s = self.slot(name).expect("known slot").clone();
        for (v, g) in self.values[s.offset..s.offset + s.len()].iter_mut().zip(m.data()) {
            *v += g;
        }
    }
}

/// One training example: raw content and style views (front and back
/// streams) and a target of the latent's shape. A second style switches on
/// blending with `cfg.alpha`.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub content: &'a FeatureMap,
    pub style: &'a FeatureMap,
    pub second_style: Option<&'a FeatureMap>,
    pub target: &'a FeatureMap,
}

struct StyleBranch {
    tokens: Matrix,
    features: Matrix,
    weight: f64,
}

struct Forward {
    layout: Layout,
    heads: usize,
    blocks: KeyValueBlocks,
    probs: Vec<Matrix>,
    output: Matrix,
    target: Matrix,
    content_keys: Matrix,
    style_keys: Matrix,
    mask_weights: Option<Vec<f64>>,
    branches: Vec<StyleBranch>,
    path: StylePath,
}

fn mse(output: &Matrix, target: &Matrix) -> f64 {
    let n = output.data().len() as f64;
    output
        .data()
        .iter()
        .zip(target.data())
        .map(|(o, t)| (o - t) * (o - t))
        .sum::<f64>()
        / n
}

fn forward(frozen: &FrozenPath, params: &ParamVector, ex: &Example<'_>, cfg: &FusionConfig) -> Result<Forward> {
    cfg.validate()?;
    let path = params.to_style_path()?;
    let proj = ProjectionSet::new(frozen.query.clone(), frozen.key.clone(), frozen.value.clone(), frozen.heads)?
        .with_style_projections(path.key.clone(), path.value.clone())?;
    let latent = ex.content.stream(0)?;
    let content = frozen.encoder.encode(ex.content)?;
    let mut raw_styles = vec![ex.style];
    raw_styles.extend(ex.second_style);
    let layout = check_shapes(&latent, &content, &raw_styles, proj.channels())?;
    if ex.target.shape() != latent.shape() {
        return Err(Error::shape(format!(
            "target {} does not match latent {}",
            ex.target.shape(),
            latent.shape()
        )));
    }

    let encoded = raw_styles
        .iter()
        .map(|s| path.encoder.encode(s))
        .collect::<Result<Vec<_>>>()?;
    let (style_keys, style_values, weights) = match encoded.as_slice() {
        [one] => {
            let t = flatten_tokens(one);
            (t.matmul(&path.key)?, t.matmul(&path.value)?, vec![1.0])
        }
        [first, second] => {
            let alpha = cfg
                .alpha
                .ok_or_else(|| Error::domain("style blending needs alpha"))?;
            let (k, v) = interpolate_style(first, second, alpha, &path.key, &path.value)?;
            (k, v, vec![1.0 - alpha, alpha])
        }
        _ => unreachable!("one or two styles"),
    };
    let branches = raw_styles
        .iter()
        .zip(encoded)
        .zip(weights)
        .map(|((raw, enc), weight)| StyleBranch {
            tokens: flatten_tokens(raw).into_matrix(),
            features: flatten_tokens(&enc).into_matrix(),
            weight,
        })
        .collect();

    let mask_weights = cfg
        .mask
        .as_ref()
        .map(|m| m.token_weights(content.shape()))
        .transpose()?;
    let base = base_projections(&flatten_tokens(&latent), &flatten_tokens(&content), &proj)?;
    let content_keys = base.content_keys.clone();
    let blocks = assemble_blocks(
        base,
        style_keys.clone(),
        style_values,
        mask_weights.as_deref(),
        proj.heads(),
        cfg,
    )?;
    let result = attend(&blocks, layout, proj.heads(), cfg.pairing_mode, true)?;
    Ok(Forward {
        layout,
        heads: proj.heads(),
        blocks,
        probs: result.probs,
        output: result.output,
        target: flatten_tokens(ex.target).into_matrix(),
        content_keys,
        style_keys,
        mask_weights,
        branches,
        path,
    })
}

/// Mean squared error of the conditional output against `ex.target`.
pub fn loss_forward(frozen: &FrozenPath, params: &ParamVector, ex: &Example<'_>, cfg: &FusionConfig) -> Result<f64> {
    let f = forward(frozen, params, ex, cfg)?;
    let loss = mse(&f.output, &f.target);
    if !loss.is_finite() {
        return Err(Error::numeric("loss", format!("loss is {loss}")));
    }
    Ok(loss)
}

/// Gradient of [`loss_forward`] with respect to every entry of `params`.
pub fn loss_backward(frozen: &FrozenPath, params: &ParamVector, ex: &Example<'_>, cfg: &FusionConfig) -> Result<ParamVector> {
    loss_and_grad(frozen, params, ex, cfg).map(|(_, g)| g)
}

/// Loss and gradient from one forward pass.
pub fn loss_and_grad(
    frozen: &FrozenPath,
    params: &ParamVector,
    ex: &Example<'_>,
    cfg: &FusionConfig,
) -> Result<(f64, ParamVector)> {
    let f = forward(frozen, params, ex, cfg)?;
    let loss = mse(&f.output, &f.target);
    if !loss.is_finite() {
        return Err(Error::numeric("loss", format!("loss is {loss}")));
    }
    let grad = backward(&f, params, cfg)?;
    if !grad.is_finite() {
        return Err(Error::numeric("loss_backward", "non-finite gradient"));
    }
    Ok((loss, grad))
}

fn backward(f: &Forward, params: &ParamVector, cfg: &FusionConfig) -> Result<ParamVector> {
    let layout = f.layout;
    let c = f.output.cols();
    let d = c / f.heads;
    let sqrt_d = (d as f64).sqrt();
    let n = f.output.data().len() as f64;
    let app_tokens = layout.appearance_tokens();
    let app = layout.streams * layout.pixels;
    let lat = layout.pixels;

    let d_out = f.output.sub(&f.target)?.scale(2.0 / n);
    let mut d_normalized = Matrix::zeros(app_tokens, c);
    let mut d_scaled = Matrix::zeros(app_tokens, c);
    let mut d_style_values = Matrix::zeros(app_tokens, c);
    let style_value_block = match cfg.pairing_mode {
        PairingMode::AsWritten => lat..lat + app,
        PairingMode::Aligned => lat + app..lat + 2 * app,
    };

    for view in 0..layout.views {
        let lat_rows = layout.latent_rows(view);
        let app_rows = layout.appearance_rows(view);
        for head in 0..f.heads {
            let inputs = gather_view_head(&f.blocks, layout, cfg.pairing_mode, view, head, d)?;
            let p = &f.probs[view * f.heads + head];
            let d_o = d_out.gather_rows(&lat_rows).column_block(head * d, d)?;
            let d_p = d_o.matmul_transposed(&inputs.values)?;
            let d_v = p.transposed_matmul(&d_o)?;
            let mut d_z = Matrix::zeros(p.rows(), p.cols());
            for r in 0..p.rows() {
                let (pr, gr) = (p.row(r), d_p.row(r));
                let inner: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((z, a), b) in d_z.row_mut(r).iter_mut().zip(pr).zip(gr) {
                    *z = a * (b - inner) / sqrt_d;
                }
            }
            let d_k = d_z.transposed_matmul(&inputs.query)?;
            for (i, &row) in app_rows.iter().enumerate() {
                for j in 0..d {
                    let col = head * d + j;
                    let v = d_normalized.get(row, col) + d_k.get(lat + i, j);
                    d_normalized.set(row, col, v);
                    let v = d_scaled.get(row, col) + d_k.get(lat + app + i, j);
                    d_scaled.set(row, col, v);
                    let v = d_style_values.get(row, col) + d_v.get(style_value_block.start + i, j);
                    d_style_values.set(row, col, v);
                }
            }
        }
    }

    // key scaling and masking
    let mut d_style_keys = d_scaled.scale(cfg.tau);
    if let Some(w) = &f.mask_weights {
        for (t, &m) in w.iter().enumerate() {
            if m == 0.0 {
                d_normalized.row_mut(t).fill(0.0);
            }
            if cfg.mask_mode == MaskMode::PaperLiteral {
                for v in d_style_keys.row_mut(t) {
                    *v *= m;
                }
            }
        }
    }

    // AdaIN: normalized = sigma_s·n_c + mu_s, with n_c fixed
    let content_stats = channel_stats(&f.content_keys, cfg.eps)?;
    let style_stats = channel_stats(&f.style_keys, cfg.eps)?;
    let unit = normalize(&f.content_keys, &content_stats);
    let mut d_mean = vec![0.0; c];
    let mut d_sigma = vec![0.0; c];
    for t in 0..app_tokens {
        for ch in 0..c {
            let g = d_normalized.get(t, ch);
            d_mean[ch] += g;
            d_sigma[ch] += g * unit.get(t, ch);
        }
    }
    let count = f.style_keys.rows() as f64;
    for t in 0..f.style_keys.rows() {
        for ch in 0..c {
            let centered = f.style_keys.get(t, ch) - style_stats.mean[ch];
            let extra = d_mean[ch] / count + d_sigma[ch] * centered / (count * style_stats.sigma[ch]);
            let v = d_style_keys.get(t, ch) + extra;
            d_style_keys.set(t, ch, v);
        }
    }

    let mut grad = params.zeros_like();
    for b in &f.branches {
        let d_k = d_style_keys.scale(b.weight);
        let d_v = d_style_values.scale(b.weight);
        grad.accumulate(STYLE_KEY, &b.features.transposed_matmul(&d_k)?);
        grad.accumulate(STYLE_VALUE, &b.features.transposed_matmul(&d_v)?);
        let d_features = d_k
            .matmul_transposed(&f.path.key)?
            .add(&d_v.matmul_transposed(&f.path.value)?)?;
        grad.accumulate(STYLE_ENCODER_WEIGHT, &b.tokens.transposed_matmul(&d_features)?);
        let bias = Matrix::new(1, c, d_features.column_sums())?;
        grad.accumulate(STYLE_ENCODER_BIAS, &bias);
    }
    Ok(grad)
}

/// Central differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h` per coordinate.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::domain(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Numeric gradient of [`loss_forward`].
pub fn finite_diff_grad(
    frozen: &FrozenPath,
    params: &ParamVector,
    ex: &Example<'_>,
    cfg: &FusionConfig,
    h: f64,
) -> Result<ParamVector> {
    let values = central_differences(params.values(), h, |x| {
        loss_forward(frozen, &params.with_values(x.to_vec())?, ex, cfg)
    })?;
    params.with_values(values)
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradEntry {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,analytic,numeric,rel_err\n");
        for e in &self.entries {
            writeln!(out, "{},{:e},{:e},{:e}", e.name, e.analytic, e.numeric, e.rel_err).expect("string write");
        }
        out
    }

    /// Merges several reports under one tolerance.
    pub fn combine(reports: Vec<GradReport>, tol: f64) -> GradReport {
        let entries: Vec<GradEntry> = reports.into_iter().flat_map(|r| r.entries).collect();
        let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
        GradReport {
            entries,
            max_rel_err,
            tol,
            passed: max_rel_err <= tol,
        }
    }
}

/// Compares two gradients entry by entry.
pub fn grad_check(analytic: &ParamVector, numeric: &ParamVector, tol: f64) -> Result<GradReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::shape(format!(
            "gradient lengths differ: {} vs {}",
            analytic.len(),
            numeric.len()
        )));
    }
    let entries: Vec<GradEntry> = analytic
        .values()
        .iter()
        .zip(numeric.values())
        .enumerate()
        .map(|(i, (&a, &n))| GradEntry {
            name: analytic.entry_name(i),
            analytic: a,
            numeric: n,
            rel_err: relative_error(a, n),
        })
        .collect();
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(GradReport {
        entries,
        max_rel_err,
        tol,
        passed: max_rel_err <= tol,
    })
}

/// A small seeded problem for gradient checking: two views of a 1×2 grid
/// (four latent and eight appearance tokens), 2 or 4 channels.
///
/// The seed also varies the configuration: pairing, head count, key scale,
/// masking mode and whether two styles are blended.
#[derive(Clone, Debug)]
pub struct MicroInstance {
    pub frozen: FrozenPath,
    pub params: ParamVector,
    pub content: FeatureMap,
    pub style: FeatureMap,
    pub second_style: Option<FeatureMap>,
    pub target: FeatureMap,
    pub cfg: FusionConfig,
}

impl MicroInstance {
    pub fn seeded(seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(derive_seed(seed, 0x6AD));
        let channels = if seed.is_multiple_of(2) { 2 } else { 4 };
        let heads = if channels == 4 && seed % 4 == 1 { 2 } else { 1 };
        let spec = ModelSpec {
            channels,
            heads,
            amplitude: 1.0,
            seed,
        };
        let frozen = FrozenPath::seeded(&spec)?;
        let mut path = StylePath::from_frozen(&frozen);
        // move the style path off the frozen copy so every term is exercised
        let jitter = |m: &Matrix, rng: &mut SeededRng| {
            m.add(&crate::tensor::seeded_matrix(m.rows(), m.cols(), 0.2, rng)).expect("same dims")
        };
        path.encoder.weight = jitter(&path.encoder.weight, &mut rng);
        path.key = jitter(&path.key, &mut rng);
        path.value = jitter(&path.value, &mut rng);
        path.encoder.bias = (0..channels).map(|_| 0.1 * rng.normal()).collect();

        let shape = Shape::new(2, 2, 1, 2, channels)?;
        let content = seeded_normal(shape, derive_seed(seed, 1))?;
        let style = seeded_normal(shape, derive_seed(seed, 2))?;
        let target = seeded_normal(shape.with_streams(1), derive_seed(seed, 3))?;
        let blend = seed % 4 == 3;
        let second_style = blend.then(|| seeded_normal(shape, derive_seed(seed, 4))).transpose()?;

        let mask = match seed % 3 {
            0 => None,
            _ => Some(StyleMask::from_grid(1, 2, &[1.0, 0.0])?),
        };
        let cfg = FusionConfig {
            tau: rng.uniform_in(1.0, 2.0),
            alpha: blend.then(|| rng.uniform_in(0.2, 0.8)),
            mask,
            mask_mode: if seed % 3 == 2 {
                MaskMode::PaperLiteral
            } else {
                MaskMode::Exclusion
            },
            pairing_mode: if seed.is_multiple_of(2) {
                PairingMode::Aligned
            } else {
                PairingMode::AsWritten
            },
            ..FusionConfig::default()
        };
        Ok(MicroInstance {
            params: ParamVector::from_style_path(&path),
            frozen,
            content,
            style,
            second_style,
            target,
            cfg,
        })
    }

    pub fn example(&self) -> Example<'_> {
        Example {
            content: &self.content,
            style: &self.style,
            second_style: self.second_style.as_ref(),
            target: &self.target,
        }
    }

    /// Analytic versus central-difference gradient.
    pub fn check(&self, h: f64, tol: f64) -> Result<GradReport> {
        let ex = self.example();
        let analytic = loss_backward(&self.frozen, &self.params, &ex, &self.cfg)?;
        let numeric = finite_diff_grad(&self.frozen, &self.params, &ex, &self.cfg, h)?;
        grad_check(&analytic, &numeric, tol)
    }
}
