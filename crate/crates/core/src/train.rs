//! Training loop: warm-up, per-epoch mining and synthesis, Adam, early stopping.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::encoder::{encode, encode_isolated, init_params, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, SplitSpec};
use crate::loss::{info_nce, LossConfig};
use crate::miner::{score_hardness, select_hard_set, MinerConfig};
use crate::probe::{accuracy, fit_probe};
use crate::sparse::CsrMatrix;
use crate::synth::{synthesize_bank, MixConfig, MixMode, NegativeBank};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs_max: usize,
    /// Consecutive evaluations without improvement before stopping.
    pub patience: usize,
    pub warmup_epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Store wall time per epoch. Off by default so logs are reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            weight_decay: 0.0,
            epochs_max: 300,
            patience: 20,
            warmup_epochs: 50,
            eval_every: 5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.patience == 0 || self.eval_every == 0 {
            return bad("patience and eval_every must be >= 1".into());
        }
        // A zero-epoch run is allowed and returns the initial weights.
        if self.epochs_max > 0 && self.warmup_epochs >= self.epochs_max {
            return bad(format!(
                "warmup_epochs ({}) must be below epochs_max ({})",
                self.warmup_epochs, self.epochs_max
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam needs betas in [0, 1) and eps > 0".into());
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter matrix.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<DenseMatrix>,
    pub v: Vec<DenseMatrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[DenseMatrix]) -> Self {
        let zeros = || params.iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One Adam update with `weight_decay · w` added to each gradient.
pub fn adam_step(
    params: &mut [DenseMatrix],
    grads: &[DenseMatrix],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if g.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Diverged {
                epoch: state.step as usize,
                reason: "NaN gradient".into(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((w, &g), (m, v)) in it {
            let g = g + cfg.weight_decay * *w;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Whether negatives are synthesized from embeddings or from raw features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixLevel {
    #[default]
    Embedding,
    /// Mix feature rows, then pass the mixtures through the encoder weights.
    Feature,
}

impl MixLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            MixLevel::Embedding => "embedding",
            MixLevel::Feature => "feature",
        }
    }
}

impl std::str::FromStr for MixLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(MixLevel::Embedding),
            "feature" => Ok(MixLevel::Feature),
            _ => Err(Error::Config(format!("unknown mix level {s:?} (embedding, feature)"))),
        }
    }
}

/// Everything `train` needs besides data.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainerConfigs {
    pub encoder: EncoderConfig,
    pub miner: MinerConfig,
    pub mix: MixConfig,
    pub mix_level: MixLevel,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl TrainerConfigs {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.miner.validate()?;
        self.mix.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: Option<f64>,
    /// Mean hard-set size over anchors; 0 when no mining happened.
    pub hard_mean: f64,
    pub bank_size: usize,
    pub ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_json_lines(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_json_lines()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::DegenerateEmbedding { row } => Error::Diverged {
            epoch,
            reason: format!("embedding row {row} collapsed to zero norm"),
        },
        Error::Diverged { reason, .. } => Error::Diverged { epoch, reason },
        other => other,
    }
}

/// Builds this epoch's negative bank from the current embeddings.
fn build_bank(
    graph: &Graph,
    embeds: &crate::encoder::ViewEmbeddings,
    params: &EncoderParams,
    cfgs: &TrainerConfigs,
    epoch: usize,
) -> Result<(NegativeBank, f64)> {
    let n = embeds.n_nodes();
    if epoch < cfgs.train.warmup_epochs || cfgs.mix.mode == MixMode::None || cfgs.mix.synth_per_anchor == 0 {
        return Ok((NegativeBank::empty(n, embeds.dim()), 0.0));
    }
    let table = select_hard_set(score_hardness(embeds, &cfgs.miner)?, &cfgs.miner)?;
    let hard_mean = table.mean_hard_set_size();
    let seed = cfgs.train.seed;
    let round = epoch as u64;
    let bank = match cfgs.mix_level {
        MixLevel::Embedding => synthesize_bank(&embeds.global, &table, &cfgs.mix, seed, round)?,
        MixLevel::Feature => {
            let raw = synthesize_bank(graph.features(), &table, &cfgs.mix, seed, round)?;
            let encoded = encode_isolated(raw.vectors(), params, &cfgs.encoder)?;
            raw.with_vectors(encoded)?
        }
    };
    Ok((bank, hard_mean))
}

/// Trains the shared encoder; see [`train_observed`].
pub fn train(
    graph: &Graph,
    diffusion: &CsrMatrix,
    split: &SplitSpec,
    cfgs: &TrainerConfigs,
) -> Result<(EncoderParams, TrainLog)> {
    train_observed(graph, diffusion, split, cfgs, &mut |_| Ok(()))
}

/// Trains the shared encoder and calls `observe` after each epoch.
///
/// Epochs before `warmup_epochs` use no synthesized negatives. Validation
/// accuracy is probed every `eval_every` epochs and on the last epoch, on the
/// embeddings that fed that epoch's step. Returns the parameters of the best
/// evaluation (earliest on ties).
pub fn train_observed(
    graph: &Graph,
    diffusion: &CsrMatrix,
    split: &SplitSpec,
    cfgs: &TrainerConfigs,
    observe: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<(EncoderParams, TrainLog)> {
    cfgs.validate()?;
    let tc = &cfgs.train;
    let labels = graph
        .labels()
        .ok_or_else(|| Error::Validation("training needs labels for validation probing".into()))?;
    split.validate(graph.n_nodes())?;
    let mut params = init_params(graph.feature_dim(), cfgs.encoder.hidden, cfgs.encoder.layers, tc.seed)?;
    let mut log = TrainLog::default();
    if tc.epochs_max == 0 {
        return Ok((params, log));
    }
    let mut adam = AdamState::new(&params.weights);
    let mut best: Option<(f64, EncoderParams)> = None;
    let mut stale = 0;

    for epoch in 0..tc.epochs_max {
        let started = Instant::now();
        let wrap = diverged(epoch);
        let pass = encode(graph, diffusion, &params, &cfgs.encoder).map_err(&wrap)?;
        let embeds = pass.embeddings();
        let (bank, hard_mean) = build_bank(graph, &embeds, &params, cfgs, epoch).map_err(&wrap)?;
        let out = info_nce(&embeds, &bank, &cfgs.loss).map_err(&wrap)?;
        if !out.loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("loss is {}", out.loss),
            });
        }

        let evaluate = (epoch + 1) % tc.eval_every == 0 || epoch + 1 == tc.epochs_max;
        let val_acc = if evaluate {
            let readout = embeds.readout();
            let probe = fit_probe(&readout, labels, split)?;
            let acc = accuracy(&probe, &readout, labels, &split.val_idx)?;
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, params.clone()));
                log.best_epoch = Some(epoch);
                log.best_val_acc = Some(acc);
                stale = 0;
            } else {
                stale += 1;
            }
            Some(acc)
        } else {
            None
        };

        let grads = pass.backward(out.grad_local, out.grad_global).map_err(&wrap)?;
        drop(pass);
        adam_step(&mut params.weights, &grads, &mut adam, tc).map_err(&wrap)?;

        let ms = if tc.record_timing {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        let record = EpochRecord {
            epoch,
            loss: out.loss,
            val_acc,
            hard_mean,
            bank_size: bank.len(),
            ms,
        };
        observe(&record)?;
        log.epochs.push(record);
        if stale >= tc.patience {
            log::info!("early stop at epoch {epoch}, best val acc {:?}", log.best_val_acc);
            break;
        }
    }
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok((params, log))
}
