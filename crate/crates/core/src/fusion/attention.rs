//! Per-view, per-head attention kernel shared by every fusion entry point
//! and by the gradient code.

use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Matrix};

use super::PairingMode;

/// Token bookkeeping for one attention call.
///
/// Latent tokens are `views × pixels`; appearance tokens (content and
/// style) are `streams × views × pixels`, stream-major. Queries of view `n`
/// attend only to keys of view `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub views: usize,
    pub pixels: usize,
    pub streams: usize,
}

impl Layout {
    pub fn latent_rows(&self, view: usize) -> Vec<usize> {
        (view * self.pixels..(view + 1) * self.pixels).collect()
    }

    pub fn appearance_rows(&self, view: usize) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.streams * self.pixels);
        for s in 0..self.streams {
            let start = (s * self.views + view) * self.pixels;
            rows.extend(start..start + self.pixels);
        }
        rows
    }

    pub fn appearance_tokens(&self) -> usize {
        self.streams * self.views * self.pixels
    }
}

/// Fully assembled key and value blocks, all at full channel width.
#[derive(Clone, Debug)]
pub(crate) struct KeyValueBlocks {
    pub query: Matrix,
    pub latent_keys: Matrix,
    pub latent_values: Matrix,
    /// AdaIN-normalized keys (after any selective masking).
    pub normalized_keys: Matrix,
    /// Style keys after masking and key scaling.
    pub scaled_keys: Matrix,
    pub content_values: Matrix,
    pub style_values: Matrix,
    /// Per appearance-token logit offset on the scaled-style block.
    pub scaled_bias: Option<Vec<f64>>,
}

impl KeyValueBlocks {
    /// Values paired with the normalized and scaled key blocks.
    pub fn paired_values(&self, pairing: PairingMode) -> (&Matrix, &Matrix) {
        match pairing {
            PairingMode::AsWritten => (&self.style_values, &self.content_values),
            PairingMode::Aligned => (&self.content_values, &self.style_values),
        }
    }
}

pub(crate) struct AttentionResult {
    pub output: Matrix,
    /// `[latent, normalized_style, scaled_style]` mass, head-major then query.
    pub block_mass: Vec<[f64; 3]>,
    /// Softmax matrices indexed `view * heads + head`, kept on request.
    pub probs: Vec<Matrix>,
}

pub(crate) struct ViewHeadInputs {
    pub query: Matrix,
    pub keys: Matrix,
    pub values: Matrix,
    pub bias: Option<Vec<f64>>,
}

/// Gathers the query, key and value rows seen by `(view, head)`.
pub(crate) fn gather_view_head(
    blocks: &KeyValueBlocks,
    layout: Layout,
    pairing: PairingMode,
    view: usize,
    head: usize,
    head_dim: usize,
) -> Result<ViewHeadInputs> {
    let lat = layout.latent_rows(view);
    let app = layout.appearance_rows(view);
    let cols = |m: &Matrix, rows: &[usize]| m.gather_rows(rows).column_block(head * head_dim, head_dim);
    let (first_values, second_values) = blocks.paired_values(pairing);

    let query = cols(&blocks.query, &lat)?;
    let keys = Matrix::vstack(&[
        &cols(&blocks.latent_keys, &lat)?,
        &cols(&blocks.normalized_keys, &app)?,
        &cols(&blocks.scaled_keys, &app)?,
    ])?;
    let values = Matrix::vstack(&[
        &cols(&blocks.latent_values, &lat)?,
        &cols(first_values, &app)?,
        &cols(second_values, &app)?,
    ])?;
    let bias = blocks.scaled_bias.as_ref().map(|b| {
        let mut full = vec![0.0; layout.pixels + app.len()];
        full.extend(app.iter().map(|&r| b[r]));
        full
    });
    Ok(ViewHeadInputs {
        query,
        keys,
        values,
        bias,
    })
}

/// Scaled logits `q·k / sqrt(d)` plus any bias.
pub(crate) fn logits(inputs: &ViewHeadInputs, head_dim: usize) -> Result<Matrix> {
    let sqrt_d = (head_dim as f64).sqrt();
    let mut z = inputs.query.matmul_transposed(&inputs.keys)?;
    for r in 0..z.rows() {
        let row = z.row_mut(r);
        for v in row.iter_mut() {
            *v /= sqrt_d;
        }
        if let Some(b) = &inputs.bias {
            for (v, b) in row.iter_mut().zip(b) {
                *v += b;
            }
        }
    }
    Ok(z)
}

pub(crate) fn attend(
    blocks: &KeyValueBlocks,
    layout: Layout,
    heads: usize,
    pairing: PairingMode,
    keep_probs: bool,
) -> Result<AttentionResult> {
    let channels = blocks.query.cols();
    let head_dim = channels / heads;
    let latent_tokens = layout.views * layout.pixels;
    let app = layout.streams * layout.pixels;
    let mut output = Matrix::zeros(latent_tokens, channels);
    let mut block_mass = vec![[0.0; 3]; heads * latent_tokens];
    let mut probs = Vec::new();

    for view in 0..layout.views {
        for head in 0..heads {
            let inputs = gather_view_head(blocks, layout, pairing, view, head, head_dim)?;
            let mut p = logits(&inputs, head_dim)?;
            if !p.is_finite() {
                return Err(Error::numeric(
                    "attention logits",
                    format!("non-finite logit in view {view}, head {head}"),
                ));
            }
            for r in 0..p.rows() {
                softmax_in_place(p.row_mut(r));
            }
            let out = p.matmul(&inputs.values)?;
            for (i, row) in (view * layout.pixels..(view + 1) * layout.pixels).enumerate() {
                output.row_mut(row)[head * head_dim..(head + 1) * head_dim].copy_from_slice(out.row(i));
                let pr = p.row(i);
                let sum = |s: &[f64]| s.iter().sum::<f64>();
                block_mass[head * latent_tokens + row] = [
                    sum(&pr[..layout.pixels]),
                    sum(&pr[layout.pixels..layout.pixels + app]),
                    sum(&pr[layout.pixels + app..]),
                ];
            }
            if keep_probs {
                probs.push(p);
            }
        }
    }
    Ok(AttentionResult {
        output,
        block_mass,
        probs,
    })
}
