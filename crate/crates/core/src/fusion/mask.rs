use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm::GrayImage;
use crate::tensor::{Matrix, Shape};

/// Logit offset that removes a masked-out style token from the softmax.
pub const MASKED_LOGIT_BIAS: f64 = -1e9;

/// How a style mask acts on the raw style keys.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Keys multiplied row-wise by the mask; masked tokens keep zero keys
    /// and still receive `e^0` weight.
    PaperLiteral,
    /// Keys untouched; masked tokens get [`MASKED_LOGIT_BIAS`].
    #[default]
    Exclusion,
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_literal" => Ok(MaskMode::PaperLiteral),
            "exclusion" => Ok(MaskMode::Exclusion),
            other => Err(Error::domain(format!("unknown mask mode {other:?}"))),
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::PaperLiteral => "paper_literal",
            MaskMode::Exclusion => "exclusion",
        })
    }
}

/// Binary spatial mask: 1 where the style applies.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl StyleMask {
    /// Thresholds `grid` (row-major, `height × width`) at 0.5.
    pub fn from_grid(height: usize, width: usize, grid: &[f64]) -> Result<Self> {
        if height == 0 || width == 0 || grid.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} mask with {} values",
                grid.len()
            )));
        }
        let values = grid
            .iter()
            .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
            .collect();
        Ok(StyleMask {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        StyleMask::from_grid(height, width, &vec![value; height * width])
    }

    /// Pixels at or above 128 are on.
    pub fn from_image(img: &GrayImage) -> Self {
        StyleMask {
            height: img.height,
            width: img.width,
            values: img
                .pixels
                .iter()
                .map(|&p| if p >= 128 { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.values.iter().map(|&v| if v > 0.0 { 255 } else { 0 }).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Nearest-neighbour resample onto a `height × width` grid, sampling
    /// source pixel `floor((i + 0.5) · src / dst)` along each axis.
    pub fn resize(&self, height: usize, width: usize) -> Result<StyleMask> {
        if height == 0 || width == 0 {
            return Err(Error::shape("resize to an empty grid"));
        }
        let pick = |i: usize, src: usize, dst: usize| {
            (((i as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1)
        };
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = pick(y, self.height, height);
            for x in 0..width {
                values.push(self.get(sy, pick(x, self.width, width)));
            }
        }
        Ok(StyleMask {
            height,
            width,
            values,
        })
    }

    /// One weight per token of a map with `shape`; every stream and view
    /// shares the resized spatial mask.
    pub fn token_weights(&self, shape: Shape) -> Result<Vec<f64>> {
        let grid = self.resize(shape.height, shape.width)?;
        let mut out = Vec::with_capacity(shape.tokens());
        for _ in 0..shape.streams * shape.views {
            out.extend_from_slice(&grid.values);
        }
        Ok(out)
    }
}

fn check_weights(keys: &Matrix, weights: &[f64]) -> Result<()> {
    if weights.len() != keys.rows() {
        return Err(Error::shape(format!(
            "mask covers {} tokens but keys have {}",
            weights.len(),
            keys.rows()
        )));
    }
    Ok(())
}

/// Row-wise source choice: normalized-style rows where the mask is 1,
/// content rows where it is 0.
pub fn selective_style_keys(content_keys: &Matrix, adain_keys: &Matrix, weights: &[f64]) -> Result<Matrix> {
    if content_keys.rows() != adain_keys.rows() || content_keys.cols() != adain_keys.cols() {
        return Err(Error::shape(format!(
            "selective keys need aligned tokens: {}x{} vs {}x{}",
            content_keys.rows(),
            content_keys.cols(),
            adain_keys.rows(),
            adain_keys.cols()
        )));
    }
    check_weights(adain_keys, weights)?;
    let mut out = adain_keys.clone();
    for (r, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            out.row_mut(r).copy_from_slice(content_keys.row(r));
        }
    }
    Ok(out)
}

/// Applies the mask to raw style keys. Returns the keys and a per-token
/// logit bias for the scaled-style block.
pub fn apply_style_mask(style_keys: &Matrix, weights: &[f64], mode: MaskMode) -> Result<(Matrix, Vec<f64>)> {
    check_weights(style_keys, weights)?;
    match mode {
        MaskMode::PaperLiteral => {
            let mut keys = style_keys.clone();
            for (r, &w) in weights.iter().enumerate() {
                for v in keys.row_mut(r) {
                    *v *= w;
                }
            }
            Ok((keys, vec![0.0; weights.len()]))
        }
        MaskMode::Exclusion => {
            let bias = weights
                .iter()
                .map(|&w| if w == 0.0 { MASKED_LOGIT_BIAS } else { 0.0 })
                .collect();
            Ok((style_keys.clone(), bias))
        }
    }
}
