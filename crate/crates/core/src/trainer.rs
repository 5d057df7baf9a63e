//! Fine-tuning of the style path with the content path frozen.
//!
//! Plain gradient descent on the conditional MSE, one sample per step in a
//! seeded shuffled order. With probability `cfg_dropout_prob` a step sees
//! an all-zero style input, which trains the unconditional branch used by
//! guidance at inference.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, PairingMode};
use crate::grad::{loss_and_grad, loss_forward, Example, ParamSlot, ParamVector};
use crate::model::{FrozenPath, Model, ModelSpec};
use crate::synth::{SampleSource, StylePairSample};
use crate::tensor::{derive_seed, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Guidance weight applied at inference.
    pub cfg_weight: f64,
    /// Views per sample; must equal the dataset's view count.
    pub views_per_batch: usize,
    pub cfg_dropout_prob: f64,
    /// Leading samples used to measure loss before and after training.
    pub probe_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            steps: 800,
            cfg_weight: 3.0,
            views_per_batch: 16,
            cfg_dropout_prob: 0.1,
            probe_samples: 6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        if !self.cfg_weight.is_finite() {
            return Err(Error::domain("guidance weight must be finite"));
        }
        if self.views_per_batch == 0 {
            return Err(Error::domain("views per batch must be positive"));
        }
        if !(0.0..=1.0).contains(&self.cfg_dropout_prob) {
            return Err(Error::domain(format!(
                "dropout probability must lie in [0, 1], got {}",
                self.cfg_dropout_prob
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParamVector,
    pub step: usize,
    /// Training loss of each step, before its update.
    pub loss_history: Vec<f64>,
    pub frozen: FrozenPath,
    pub frozen_checksum: String,
    /// Mean conditional loss over the probe samples, before training.
    pub initial_probe_loss: f64,
    pub final_probe_loss: f64,
}

impl TrainState {
    pub fn model(&self) -> Result<Model> {
        Model::new(self.frozen.clone(), self.params.to_style_path()?)
    }
}

/// True iff the frozen path still hashes to its initial checksum.
pub fn freeze_check(state: &TrainState) -> bool {
    state.frozen.checksum() == state.frozen_checksum
}

fn example_loss(frozen: &FrozenPath, params: &ParamVector, s: &StylePairSample, fusion: &FusionConfig) -> Result<f64> {
    let target = s.target_front()?;
    let ex = Example {
        content: &s.content_views,
        style: &s.style_views,
        second_style: None,
        target: &target,
    };
    loss_forward(frozen, params, &ex, fusion)
}

/// Mean conditional loss over `samples`.
pub fn mean_loss(model: &Model, samples: &[StylePairSample], fusion: &FusionConfig) -> Result<f64> {
    let params = ParamVector::from_style_path(&model.style);
    let mut total = 0.0;
    for s in samples {
        total += example_loss(&model.frozen, &params, s, fusion)?;
    }
    Ok(total / samples.len() as f64)
}

/// Runs `cfg.steps` updates starting from `model`'s style path.
pub fn train_style_path(
    model: &Model,
    data: &dyn SampleSource,
    cfg: &TrainConfig,
    fusion: &FusionConfig,
) -> Result<TrainState> {
    cfg.validate()?;
    fusion.validate()?;
    if data.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    let probes = (0..cfg.probe_samples.clamp(1, data.len()))
        .map(|i| data.sample(i))
        .collect::<Result<Vec<_>>>()?;
    let views = probes[0].content_views.shape().views;
    if views != cfg.views_per_batch {
        return Err(Error::domain(format!(
            "dataset has {views} views per sample, config expects {}",
            cfg.views_per_batch
        )));
    }

    let mut state = TrainState {
        params: ParamVector::from_style_path(&model.style),
        step: 0,
        loss_history: Vec::with_capacity(cfg.steps),
        frozen: model.frozen.clone(),
        frozen_checksum: model.frozen.checksum(),
        initial_probe_loss: mean_loss(model, &probes, fusion)?,
        final_probe_loss: f64::NAN,
    };

    let mut rng = SeededRng::new(derive_seed(cfg.seed, 0x7EA1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    for step in 0..cfg.steps {
        if step % order.len() == 0 {
            rng.shuffle(&mut order);
        }
        let sample = data.sample(order[step % order.len()])?;
        let target = sample.target_front()?;
        let dropped = rng.uniform() < cfg.cfg_dropout_prob;
        let zeros = dropped.then(|| sample.style_views.zeros_like());
        let ex = Example {
            content: &sample.content_views,
            style: zeros.as_ref().unwrap_or(&sample.style_views),
            second_style: None,
            target: &target,
        };
        let (loss, grad) = match loss_and_grad(&state.frozen, &state.params, &ex, fusion) {
            Ok(v) => v,
            Err(Error::Numeric { .. }) => {
                let loss = loss_forward(&state.frozen, &state.params, &ex, fusion).unwrap_or(f64::NAN);
                return Err(Error::Diverged { step, loss });
            }
            Err(e) => return Err(e),
        };
        state.params.add_scaled(-cfg.learning_rate, &grad)?;
        if !state.params.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        state.loss_history.push(loss);
        state.step = step + 1;
        if !freeze_check(&state) {
            return Err(Error::FrozenPathChanged(step));
        }
    }
    state.final_probe_loss = mean_loss(&state.model()?, &probes, fusion)?;
    Ok(state)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SFT1";

/// Fusion settings used during training, echoed in the checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionEcho {
    pub tau: f64,
    pub pairing_mode: PairingMode,
    pub eps: f64,
}

impl From<&FusionConfig> for FusionEcho {
    fn from(c: &FusionConfig) -> Self {
        FusionEcho {
            tau: c.tau,
            pairing_mode: c.pairing_mode,
            eps: c.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelSpec,
    train: TrainConfig,
    fusion: FusionEcho,
    frozen_checksum: String,
    steps_done: usize,
    slots: Vec<ParamSlot>,
}

/// Trained style path plus everything needed to rebuild the model.
///
/// File layout: `SFT1`, a little-endian u32 header length, a JSON header
/// (model recipe, training and fusion settings, frozen checksum, parameter
/// index), then every parameter as a little-endian f64. The loss history
/// goes to a `step,loss` CSV next to the file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub fusion: FusionEcho,
    pub frozen_checksum: String,
    pub steps_done: usize,
    pub params: ParamVector,
    pub loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn from_state(spec: ModelSpec, train: TrainConfig, fusion: &FusionConfig, state: &TrainState) -> Self {
        Checkpoint {
            model: spec,
            train,
            fusion: fusion.into(),
            frozen_checksum: state.frozen_checksum.clone(),
            steps_done: state.step,
            params: state.params.clone(),
            loss_history: state.loss_history.clone(),
        }
    }

    /// Rebuilds the frozen path from its recipe and checks its checksum.
    pub fn to_model(&self) -> Result<Model> {
        let frozen = FrozenPath::seeded(&self.model)?;
        let sum = frozen.checksum();
        if sum != self.frozen_checksum {
            return Err(Error::Format(format!(
                "frozen path checksum {sum} does not match checkpoint {}",
                self.frozen_checksum
            )));
        }
        Model::new(frozen, self.params.to_style_path()?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&CheckpointHeader {
            model: self.model,
            train: self.train,
            fusion: self.fusion,
            frozen_checksum: self.frozen_checksum.clone(),
            steps_done: self.steps_done,
            slots: self.params.slots().to_vec(),
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses a checkpoint; the loss history is left empty.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not an SFT1 checkpoint".into()));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let header_end = 8 + len;
        let header: CheckpointHeader = serde_json::from_slice(
            bytes
                .get(8..header_end)
                .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?,
        )?;
        let body = &bytes[header_end..];
        if !body.len().is_multiple_of(8) {
            return Err(Error::Format(format!("checkpoint body of {} bytes", body.len())));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Checkpoint {
            model: header.model,
            train: header.train,
            fusion: header.fusion,
            frozen_checksum: header.frozen_checksum,
            steps_done: header.steps_done,
            params: ParamVector::from_parts(header.slots, values)?,
            loss_history: Vec::new(),
        })
    }

    pub fn loss_csv_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".loss.csv");
        path.with_file_name(name)
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.loss_history.iter().enumerate() {
            writeln!(out, "{i},{l:e}").expect("string write");
        }
        out
    }

    pub fn write(&self, path: &Path, force: bool) -> Result<()> {
        let csv = Checkpoint::loss_csv_path(path);
        for p in [path, csv.as_path()] {
            if p.exists() && !force {
                return Err(Error::WouldOverwrite(p.to_path_buf()));
            }
        }
        fs::write(path, self.to_bytes()?)?;
        fs::write(csv, self.loss_csv())?;
        Ok(())
    }

    /// Reads the checkpoint and, when present, its loss sidecar.
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut ck = Checkpoint::from_bytes(&fs::read(path)?)?;
        let csv = Checkpoint::loss_csv_path(path);
        if csv.exists() {
            ck.loss_history = parse_loss_csv(&fs::read_to_string(csv)?)?;
        }
        Ok(ck)
    }
}

fn parse_loss_csv(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad loss line {l:?}")))
        })
        .collect()
}
