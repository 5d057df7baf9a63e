//! Content and style appearance paths around the fusion layer.
//!
//! The latent map is stream 0 of the content views, used raw. Content
//! features pass through a frozen affine encoder; style features pass
//! through a trainable encoder and trainable key/value projections, all
//! initialized as copies of their frozen counterparts.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{
    baseline_attention, fused_attention, fused_attention_blend, fused_attention_regions, FusedOutput, FusionConfig,
    ProjectionSet, StyleMask, StyleRegion,
};
use crate::tensor::{flatten_tokens, derive_seed, FeatureMap, Matrix, SeededRng};

/// Per-token affine map `x·weight + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Encoder {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != weight.cols() || bias.len() != weight.cols() {
            return Err(Error::shape(format!(
                "encoder weight {}x{} with bias of length {}",
                weight.rows(),
                weight.cols(),
                bias.len()
            )));
        }
        Ok(Encoder { weight, bias })
    }

    pub fn channels(&self) -> usize {
        self.weight.cols()
    }

    pub fn apply(&self, tokens: &Matrix) -> Result<Matrix> {
        tokens.matmul(&self.weight)?.add_row_vector(&self.bias)
    }

    pub fn encode(&self, map: &FeatureMap) -> Result<FeatureMap> {
        let out = self.apply(&flatten_tokens(map))?;
        FeatureMap::new(map.shape().with_channels(out.cols()), out.into_data())
    }
}

/// Recipe for the frozen path; enough to rebuild it bit-exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub channels: usize,
    pub heads: usize,
    /// Feature scale the query/key projections are normalized by.
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            channels: 8,
            heads: 2,
            amplitude: 16.0,
            seed: 0,
        }
    }
}

/// Frozen content encoder and shared projections.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenPath {
    pub encoder: Encoder,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub heads: usize,
}

impl FrozenPath {
    /// Near-identity weights with seeded perturbations. Query and key are
    /// divided by `amplitude` so logits stay moderate on features of that
    /// scale.
    pub fn seeded(spec: &ModelSpec) -> Result<Self> {
        let c = spec.channels;
        if c == 0 || spec.heads == 0 || !c.is_multiple_of(spec.heads) {
            return Err(Error::shape(format!("{} heads do not divide {c} channels", spec.heads)));
        }
        if !(spec.amplitude > 0.0 && spec.amplitude.is_finite()) {
            return Err(Error::domain(format!("amplitude must be positive, got {}", spec.amplitude)));
        }
        let mut rng = SeededRng::new(derive_seed(spec.seed, 0x5EED));
        let mut near_identity = |scale: f64, divide: f64| {
            Matrix::identity(c)
                .add(&crate::tensor::seeded_matrix(c, c, scale, &mut rng))
                .expect("square")
                .scale(1.0 / divide)
        };
        let encoder = Encoder::new(near_identity(0.1, 1.0), vec![0.0; c])?;
        let query = near_identity(0.3, spec.amplitude);
        let key = near_identity(0.3, spec.amplitude);
        let value = near_identity(0.1, 1.0);
        Ok(FrozenPath {
            encoder,
            query,
            key,
            value,
            heads: spec.heads,
        })
    }

    pub fn channels(&self) -> usize {
        self.encoder.channels()
    }

    /// SHA-256 over every frozen value, little-endian, in a fixed order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.heads as u64).to_le_bytes());
        for m in [&self.encoder.weight, &self.query, &self.key, &self.value] {
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        }
        for v in &self.encoder.bias {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Trainable style encoder and style key/value projections.
#[derive(Clone, Debug, PartialEq)]
pub struct StylePath {
    pub encoder: Encoder,
    pub key: Matrix,
    pub value: Matrix,
}

impl StylePath {
    /// Copies of the frozen encoder and key/value projections.
    pub fn from_frozen(frozen: &FrozenPath) -> Self {
        StylePath {
            encoder: frozen.encoder.clone(),
            key: frozen.key.clone(),
            value: frozen.value.clone(),
        }
    }
}

/// Encoded inputs to one fusion call.
#[derive(Clone, Debug)]
pub struct FusionInputs {
    pub latent: FeatureMap,
    pub content: FeatureMap,
    pub style: FeatureMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub frozen: FrozenPath,
    pub style: StylePath,
}

impl Model {
    pub fn new(frozen: FrozenPath, style: StylePath) -> Result<Self> {
        let c = frozen.channels();
        if style.encoder.channels() != c || style.key.rows() != c || style.value.rows() != c {
            return Err(Error::shape("style path and frozen path disagree on channels"));
        }
        Ok(Model { frozen, style })
    }

    /// Fresh model whose style path copies the frozen path.
    pub fn seeded(spec: &ModelSpec) -> Result<Self> {
        let frozen = FrozenPath::seeded(spec)?;
        let style = StylePath::from_frozen(&frozen);
        Ok(Model { frozen, style })
    }

    pub fn projections(&self) -> Result<ProjectionSet> {
        ProjectionSet::new(
            self.frozen.query.clone(),
            self.frozen.key.clone(),
            self.frozen.value.clone(),
            self.frozen.heads,
        )?
        .with_style_projections(self.style.key.clone(), self.style.value.clone())
    }

    /// Latent, encoded content and encoded style maps. `content` and
    /// `style` carry front and back streams.
    pub fn inputs(&self, content: &FeatureMap, style: &FeatureMap) -> Result<FusionInputs> {
        Ok(FusionInputs {
            latent: content.stream(0)?,
            content: self.frozen.encoder.encode(content)?,
            style: self.style.encoder.encode(style)?,
        })
    }

    /// Conditional output.
    pub fn fuse(&self, content: &FeatureMap, style: &FeatureMap, cfg: &FusionConfig) -> Result<FusedOutput> {
        let x = self.inputs(content, style)?;
        fused_attention(&x.latent, &x.content, &x.style, &self.projections()?, cfg)
    }

    /// Output with the style input replaced by zeros.
    pub fn fuse_unconditional(&self, content: &FeatureMap, cfg: &FusionConfig) -> Result<FusedOutput> {
        self.fuse(content, &content.zeros_like(), cfg)
    }

    pub fn fuse_blend(
        &self,
        content: &FeatureMap,
        first: &FeatureMap,
        second: &FeatureMap,
        cfg: &FusionConfig,
    ) -> Result<FusedOutput> {
        let x = self.inputs(content, first)?;
        let second = self.style.encoder.encode(second)?;
        fused_attention_blend(&x.latent, &x.content, &x.style, &second, &self.projections()?, cfg)
    }

    /// One style per masked region; masks must not overlap.
    pub fn fuse_regions(
        &self,
        content: &FeatureMap,
        regions: &[(&FeatureMap, StyleMask)],
        cfg: &FusionConfig,
    ) -> Result<FusedOutput> {
        let latent = content.stream(0)?;
        let encoded_content = self.frozen.encoder.encode(content)?;
        let styles = regions
            .iter()
            .map(|(s, _)| self.style.encoder.encode(s))
            .collect::<Result<Vec<_>>>()?;
        let regions: Vec<StyleRegion<'_>> = styles
            .iter()
            .zip(regions)
            .map(|(style, (_, mask))| StyleRegion {
                style,
                mask: mask.clone(),
            })
            .collect();
        fused_attention_regions(&latent, &encoded_content, &regions, &self.projections()?, cfg)
    }

    /// Plain fusion without key scaling, masking or blending.
    pub fn fuse_baseline(&self, content: &FeatureMap, style: &FeatureMap, cfg: &FusionConfig) -> Result<FusedOutput> {
        let x = self.inputs(content, style)?;
        baseline_attention(&x.latent, &x.content, &x.style, &self.projections()?, cfg.pairing_mode, cfg.eps)
    }
}

/// Classifier-free guidance: `uncond + weight·(cond − uncond)`, evaluated
/// as `(1 − weight)·uncond + weight·cond` so weights 0 and 1 return their
/// input exactly.
pub fn cfg_combine(uncond: &FeatureMap, cond: &FeatureMap, weight: f64) -> Result<FeatureMap> {
    if uncond.shape() != cond.shape() {
        return Err(Error::shape(format!(
            "guidance inputs differ: {} vs {}",
            uncond.shape(),
            cond.shape()
        )));
    }
    let data = uncond
        .data()
        .iter()
        .zip(cond.data())
        .map(|(u, c)| (1.0 - weight) * u + weight * c)
        .collect();
    FeatureMap::new(uncond.shape(), data)
}
