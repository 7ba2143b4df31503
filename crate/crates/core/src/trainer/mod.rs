//! Prompt-only tuning: losses, SGD and the two-step base/new schedule.
//!
//! In the two-step schedule the epoch budget is split evenly. The first half
//! tunes on hard-negative batches of base classes with the cross-entropy
//! restricted to each batch's candidate set; the second half continues from
//! the same prompt on pseudo-labelled new-class images, with candidates
//! swapped to the new-class vocabulary.

mod artifacts;
mod loss;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use artifacts::{
    fresh_run_dir, prompt_from_text, prompt_to_text, read_cost, read_prompt, write_run_dir,
};
pub use loss::{
    base_loss, candidate_set, full_ce_loss, new_candidates, new_loss, restricted_ce, sgd_step,
    CandidateSet, LossOutput,
};

use crate::backbone::{Backbone, Prompt, PromptSource};
use crate::dataset::{sample_few_shot, Dataset, FewShotKind, FewShotSet};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::par;
use crate::pseudo::{build_pseudo_pairs, LabelerMode, PseudoPair};
use crate::sampler::{build_index, shrink_to_fit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Plain prompt tuning on uniform base batches for the full budget.
    Backbone,
    /// Plain prompt tuning for twice the budget.
    Backbone2x,
    /// Only the hard-negative base half.
    MaoBaseOnly,
    /// Only the pseudo-labelled new half.
    MaoNewOnly,
    /// Both halves.
    MaoFull,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Backbone,
        Mode::Backbone2x,
        Mode::MaoBaseOnly,
        Mode::MaoNewOnly,
        Mode::MaoFull,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Backbone => "backbone",
            Mode::Backbone2x => "backbone_2x",
            Mode::MaoBaseOnly => "mao_base_only",
            Mode::MaoNewOnly => "mao_new_only",
            Mode::MaoFull => "mao_full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn is_mao(self) -> bool {
        matches!(self, Mode::MaoBaseOnly | Mode::MaoNewOnly | Mode::MaoFull)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Base,
    New,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Base => "base",
            Phase::New => "new",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub epochs_total: usize,
    pub lr: f64,
    /// Anchors per hard-negative batch.
    pub b: usize,
    /// Neighbours per anchor.
    pub k: usize,
    pub shots: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Restrict new-phase candidates to the new classes.
    pub new_ar: bool,
    pub labeler: LabelerMode,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            epochs_total: 20,
            lr: 0.0035,
            b: 4,
            k: 8,
            shots: 16,
            seed: 7,
            mode: Mode::MaoFull,
            new_ar: true,
            labeler: LabelerMode::Foundation,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_total < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.mode == Mode::MaoFull && !self.epochs_total.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "mao_full splits epochs evenly; {} is odd",
                self.epochs_total
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, v) in [("b", self.b), ("topk", self.k), ("shots", self.shots)] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Mini-batch size shared by every mode.
    pub fn batch_size(&self) -> usize {
        self.b * self.k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub lr: f64,
}

/// Resource accounting of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMeter {
    pub learnable_params: usize,
    pub wall_seconds_per_epoch: f64,
    pub peak_tracked_bytes: usize,
    pub inference_items_per_second: f64,
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub prompt: Prompt,
    pub epoch: usize,
    pub phase: Phase,
    pub log: Vec<EpochLog>,
    /// Prompt at the end of the base half and the start of the new half.
    pub base_end: Option<Tensor>,
    pub new_start: Option<Tensor>,
    /// Candidate set of every base-phase step, in order.
    pub base_csets: Vec<CandidateSet>,
    /// Candidate-set size of every new-phase step.
    pub new_cset_sizes: Vec<usize>,
    /// `(b, K)` actually used by the hard-negative sampler.
    pub applied_bk: (usize, usize),
    pub pseudo_pairs: Vec<PseudoPair>,
    pub notes: Vec<String>,
    pub epoch_seconds: Vec<f64>,
    /// Static buffers plus the largest step working set.
    pub peak_bytes: usize,
}

/// Few-shot draws used by a run.
#[derive(Debug, Clone)]
pub struct FewShotData {
    pub base: FewShotSet,
    pub new: Option<FewShotSet>,
}

/// Samples the run's few-shot sets from the seed's own substreams.
pub fn prepare_few_shot(cfg: &TuneConfig, ds: &Dataset) -> Result<FewShotData> {
    if !ds.has_split() {
        return Err(Error::State("dataset has no base/new split".into()));
    }
    let root = Rng::substream(cfg.seed, "tune");
    let base = sample_few_shot(ds, cfg.shots, FewShotKind::BasePairs, &mut root.derive("few-shot/base"))?;
    let new = if ds.new_classes().is_empty() {
        None
    } else {
        Some(sample_few_shot(
            ds,
            cfg.shots,
            FewShotKind::NewUnlabeled,
            &mut root.derive("few-shot/new"),
        )?)
    };
    Ok(FewShotData { base, new })
}

struct Runner<'a> {
    cfg: &'a TuneConfig,
    ds: &'a Dataset,
    backbone: &'a Backbone,
    shots: FewShotData,
    root: Rng,
    state: RunState,
    static_bytes: usize,
}

impl Runner<'_> {
    fn record(&mut self, phase: Phase, loss_sum: f64, steps: usize, started: Instant, step_bytes: usize) {
        self.state.epoch += 1;
        self.state.log.push(EpochLog {
            epoch: self.state.epoch,
            phase,
            loss: loss_sum / steps.max(1) as f64,
            lr: self.cfg.lr,
        });
        self.state.epoch_seconds.push(started.elapsed().as_secs_f64());
        self.state.peak_bytes = self.state.peak_bytes.max(self.static_bytes + step_bytes);
    }

    fn backbone_phase(&mut self, epochs: usize) -> Result<()> {
        let base_classes = self.ds.base_classes();
        let batch = self.cfg.batch_size();
        for _ in 0..epochs {
            let started = Instant::now();
            let mut order = self.shots.base.pairs.clone();
            self.root
                .derive(&format!("shuffle/{}", self.state.epoch))
                .shuffle(&mut order);
            let (mut sum, mut steps, mut bytes) = (0.0, 0, 0);
            for chunk in order.chunks(batch) {
                let out = full_ce_loss(self.backbone, &mut self.state.prompt, chunk, &base_classes, self.ds)?;
                sgd_step(&mut self.state.prompt, self.cfg.lr)?;
                sum += out.loss;
                steps += 1;
                bytes = bytes.max(out.live_bytes);
            }
            self.record(Phase::Base, sum, steps, started, bytes);
        }
        Ok(())
    }

    fn base_phase(&mut self, epochs: usize) -> Result<()> {
        let mut index = build_index(self.ds)?;
        index.restrict_pool(&self.shots.base);
        let (b, k) = self.state.applied_bk;
        for _ in 0..epochs {
            let started = Instant::now();
            let mut anchors = self.shots.base.pairs.clone();
            self.root
                .derive(&format!("shuffle/{}", self.state.epoch))
                .shuffle(&mut anchors);
            // An epoch covers as many items as one pass over the few-shot
            // pairs, so only the first `steps * b` shuffled pairs anchor.
            let n_steps = anchors.len().div_ceil(b * k);
            anchors.truncate((n_steps * b).min(anchors.len()));
            let mut draw = self.root.derive(&format!("expand/{}", self.state.epoch));
            let (mut sum, mut steps, mut bytes) = (0.0, 0, 0);
            for group in anchors.chunks(b) {
                let batch = index.expand_batch(group, k, &mut draw)?;
                let cset = candidate_set(&batch.classes());
                if cset.len() > b * k {
                    return Err(Error::Invariant("candidate set larger than b*K".into()));
                }
                let out = base_loss(self.backbone, &mut self.state.prompt, &batch, &cset, self.ds)?;
                sgd_step(&mut self.state.prompt, self.cfg.lr)?;
                self.state.base_csets.push(cset);
                sum += out.loss;
                steps += 1;
                bytes = bytes.max(out.live_bytes);
            }
            self.record(Phase::Base, sum, steps, started, bytes);
        }
        Ok(())
    }

    fn label(&self, unlabeled: &[usize]) -> Result<Vec<PseudoPair>> {
        build_pseudo_pairs(
            self.backbone,
            self.cfg.labeler,
            &self.state.prompt,
            unlabeled,
            self.ds,
            &self.ds.new_classes(),
        )
    }

    fn new_phase(&mut self, epochs: usize) -> Result<()> {
        let Some(unlabeled) = self.shots.new.as_ref().map(|s| s.unlabeled.clone()) else {
            self.state
                .notes
                .push("no new classes: new-class phase skipped".into());
            return Ok(());
        };
        self.state.phase = Phase::New;
        self.state.new_start = Some(self.state.prompt.text.tokens.value.clone());
        let cands = new_candidates(&self.ds.new_classes(), &self.ds.base_classes(), self.cfg.new_ar);
        let (b, k) = self.state.applied_bk;
        let batch = b * k;
        let mut pairs = self.label(&unlabeled)?;
        let label_bytes = std::mem::size_of_val(pairs.as_slice());
        for e in 0..epochs {
            let started = Instant::now();
            if e > 0 && self.cfg.labeler == LabelerMode::Tuned {
                pairs = self.label(&unlabeled)?;
            }
            let mut order = pairs.clone();
            self.root
                .derive(&format!("shuffle/{}", self.state.epoch))
                .shuffle(&mut order);
            let (mut sum, mut steps, mut bytes) = (0.0, 0, 0);
            for chunk in order.chunks(batch) {
                let out = new_loss(self.backbone, &mut self.state.prompt, chunk, &cands, self.ds)?;
                sgd_step(&mut self.state.prompt, self.cfg.lr)?;
                self.state.new_cset_sizes.push(cands.len());
                sum += out.loss;
                steps += 1;
                bytes = bytes.max(out.live_bytes);
            }
            self.record(Phase::New, sum, steps, started, bytes + label_bytes);
        }
        self.state.pseudo_pairs = pairs;
        Ok(())
    }
}

/// Runs the configured schedule from a fresh prompt.
pub fn run_two_step(cfg: &TuneConfig, ds: &Dataset, backbone: &Backbone) -> Result<RunState> {
    cfg.validate()?;
    let shots = prepare_few_shot(cfg, ds)?;
    let n_base = ds.base_classes().len();
    let (b, k, shrunk) = shrink_to_fit(cfg.b, cfg.k, n_base);
    let mut notes = Vec::new();
    if shrunk && cfg.mode.is_mao() {
        notes.push(format!(
            "auto-shrink: b*topK = {}*{} exceeds |C_b| = {n_base}; using b={b} topK={k}",
            cfg.b, cfg.k
        ));
    }
    let prompt = backbone.init_prompt();
    let static_bytes = backbone.frozen_nbytes() + prompt.nbytes();
    let mut runner = Runner {
        cfg,
        ds,
        backbone,
        shots,
        root: Rng::substream(cfg.seed, "tune"),
        state: RunState {
            prompt,
            epoch: 0,
            phase: Phase::Base,
            log: Vec::new(),
            base_end: None,
            new_start: None,
            base_csets: Vec::new(),
            new_cset_sizes: Vec::new(),
            applied_bk: (b, k),
            pseudo_pairs: Vec::new(),
            notes,
            epoch_seconds: Vec::new(),
            peak_bytes: static_bytes,
        },
        static_bytes,
    };
    let half = cfg.epochs_total / 2;
    match cfg.mode {
        Mode::Backbone => runner.backbone_phase(cfg.epochs_total)?,
        Mode::Backbone2x => runner.backbone_phase(2 * cfg.epochs_total)?,
        Mode::MaoBaseOnly => runner.base_phase(half.max(1))?,
        Mode::MaoNewOnly => runner.new_phase(half.max(1))?,
        Mode::MaoFull if runner.shots.new.is_none() => {
            runner
                .state
                .notes
                .push("no new classes: new phase skipped after the base half".into());
            runner.base_phase(half)?;
        }
        Mode::MaoFull => {
            runner.base_phase(half)?;
            runner.state.base_end = Some(runner.state.prompt.text.tokens.value.clone());
            runner.new_phase(half)?;
        }
    }
    Ok(runner.state)
}

/// Images per second of one full evaluation pass (base and new test
/// splits), best of `repeats`.
pub fn inference_throughput(
    backbone: &Backbone,
    prompt: &Prompt,
    ds: &Dataset,
    repeats: usize,
) -> Result<f64> {
    let src = PromptSource::Learned(prompt);
    let halves: Vec<Vec<usize>> = if ds.has_split() {
        vec![ds.base_classes(), ds.new_classes()]
    } else {
        vec![ds.class_ids()]
    };
    let mut best = 0.0f64;
    for _ in 0..repeats.max(1) {
        let started = Instant::now();
        let mut n = 0usize;
        for classes in halves.iter().filter(|c| !c.is_empty()) {
            let bank = backbone.text_bank(src, classes)?;
            let ids = ds.test_images_in(classes);
            let preds = par::try_map(&ids, |&i| backbone.proba_with(src, &bank, &ds.image(i).features))?;
            n += preds.len();
        }
        let secs = started.elapsed().as_secs_f64().max(1e-9);
        best = best.max(n as f64 / secs);
    }
    Ok(best)
}

/// Resource accounting for a finished run.
pub fn cost_meter(run: &RunState, backbone: &Backbone, ds: &Dataset) -> Result<CostMeter> {
    let epochs = run.epoch_seconds.len().max(1) as f64;
    Ok(CostMeter {
        learnable_params: backbone.param_count(),
        wall_seconds_per_epoch: run.epoch_seconds.iter().sum::<f64>() / epochs,
        peak_tracked_bytes: run.peak_bytes,
        inference_items_per_second: inference_throughput(backbone, &run.prompt, ds, 3)?,
    })
}

/// `metrics.csv` body: `epoch,phase,loss,lr`.
pub fn metrics_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,phase,loss,lr\n");
    for e in log {
        s.push_str(&format!("{},{},{:?},{:?}\n", e.epoch, e.phase.as_str(), e.loss, e.lr));
    }
    s
}
