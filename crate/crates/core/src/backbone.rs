//! Frozen toy dual encoder with learnable prompts.
//!
//! The image tower `f` is a frozen two-layer tanh MLP. The text tower `g`
//! mean-pools the prompt rows with a class-token row and feeds the result
//! through a second frozen MLP. The towers are built *aligned*: the text
//! tower's first layer is the image tower's first layer read through a fixed
//! orthonormal token map, so that with the hard template
//! `g(hard, c) = f(concept_c)`. A class's concept is what the foundation
//! model "believes" the class looks like: the class's mean training feature
//! plus a shared domain shift, a per-superclass shift and a small per-class
//! perturbation. Those shifts are the pretraining/downstream gap that prompt
//! tuning can partly undo.
//!
//! All frozen weights are a pure function of the config (seed and dims) and
//! of the registered vocabulary. Only [`Prompt`] tensors are trainable.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{ops, softmax_temp, Param, Rng, Tensor};
use crate::par;

/// Standard deviation of the seeded prompt initialisation.
pub const PROMPT_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Learnable text context only (CoOp-like).
    TextPrompt,
    /// Text context plus a visual prefix (MaPLe-like).
    JointPrompt,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::TextPrompt => "text_prompt",
            Variant::JointPrompt => "joint_prompt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "text_prompt" | "text" | "coop" => Some(Variant::TextPrompt),
            "joint_prompt" | "joint" | "maple" => Some(Variant::JointPrompt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub variant: Variant,
    /// Context length `L`.
    pub prompt_len: usize,
    pub d_token: usize,
    /// Joint embedding width.
    pub d: usize,
    pub d_img: usize,
    pub tau: f64,
    pub seed: u64,
    /// Rows in the token table; class ids must be below this.
    pub vocab_size: usize,
    /// Norm of class-token rows relative to concept space.
    pub token_scale: f64,
    /// Norm of the shift shared by every concept.
    pub domain_shift: f64,
    /// Norm of the shift shared within a superclass.
    pub super_shift: f64,
    /// Norm of the per-class concept perturbation.
    pub concept_noise: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            variant: Variant::TextPrompt,
            prompt_len: 4,
            d_token: 32,
            d: 32,
            d_img: 32,
            tau: 0.01,
            seed: 7,
            vocab_size: 1024,
            token_scale: 2.0,
            domain_shift: 0.2,
            super_shift: 0.4,
            concept_noise: 0.05,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prompt_len", self.prompt_len),
            ("d_token", self.d_token),
            ("d", self.d),
            ("d_img", self.d_img),
            ("vocab_size", self.vocab_size),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.token_scale > 0.0) {
            return Err(Error::Config("token_scale must be > 0".into()));
        }
        for (name, v) in [
            ("domain_shift", self.domain_shift),
            ("super_shift", self.super_shift),
            ("concept_noise", self.concept_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Trainable element count implied by the config.
    pub fn param_count(&self) -> usize {
        let text = self.prompt_len * self.d_token;
        match self.variant {
            Variant::TextPrompt => text,
            Variant::JointPrompt => text + self.d_img,
        }
    }
}

/// Frozen `tanh` MLP: `W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

impl Mlp {
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hidden: Vec<f64> = self
            .w1
            .value
            .matvec(x)
            .into_iter()
            .zip(self.b1.value.data())
            .map(|(z, b)| (z + b).tanh())
            .collect();
        let out = self
            .w2
            .value
            .matvec(&hidden)
            .into_iter()
            .zip(self.b2.value.data())
            .map(|(z, b)| z + b)
            .collect();
        (out, hidden)
    }

    /// Gradient w.r.t. the MLP input.
    fn backward_input(&self, hidden: &[f64], d_out: &[f64]) -> Vec<f64> {
        let dh = self.w2.value.matvec_t(d_out);
        let dz: Vec<f64> = dh
            .iter()
            .zip(hidden)
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        self.w1.value.matvec_t(&dz)
    }

    fn params(&self) -> [&Param; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTextEncoder {
    pub token_table: Param,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenImageEncoder {
    pub mlp: Mlp,
}

/// Learnable text context `[theta]_1 .. [theta]_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptVector {
    pub tokens: Param,
}

/// Learnable visual prefix (joint variant only).
#[derive(Debug, Clone, PartialEq)]
pub struct VisualPrompt {
    pub prefix: Param,
}

/// All trainable state of a tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub text: PromptVector,
    pub visual: Option<VisualPrompt>,
}

impl Prompt {
    pub fn zero_grad(&mut self) {
        self.text.tokens.zero_grad();
        if let Some(v) = &mut self.visual {
            v.prefix.zero_grad();
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.text.tokens];
        if let Some(v) = &self.visual {
            out.push(&v.prefix);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.text.tokens];
        if let Some(v) = &mut self.visual {
            out.push(&mut v.prefix);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| if p.trainable { p.numel() } else { 0 }).sum()
    }

    pub fn nbytes(&self) -> usize {
        self.params().iter().map(|p| p.nbytes()).sum()
    }
}

/// Which prompt drives a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum PromptSource<'a> {
    /// The current learned prompt.
    Learned(&'a Prompt),
    /// The fixed hard template with a zero visual prefix: the foundation
    /// model's zero-shot mode.
    Hard,
}

/// Intermediates of one text-tower forward pass.
#[derive(Debug, Clone)]
pub struct TextTrace {
    pub class_id: usize,
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

/// Intermediates of one image-tower forward pass.
#[derive(Debug, Clone)]
pub struct ImageTrace {
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

/// Unit text embeddings for an ordered candidate list.
#[derive(Debug, Clone)]
pub struct TextBank {
    pub candidates: Vec<usize>,
    pub unit: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub text: FrozenTextEncoder,
    pub image: FrozenImageEncoder,
    pub hard_template: Tensor,
    /// Orthonormal `d_token x d_img` map from concept space to token space.
    token_map: Tensor,
    registered: Vec<bool>,
}

fn orthonormal(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    // Gram-Schmidt over the shorter side.
    let (n_vec, len) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while basis.len() < n_vec {
        let mut v = rng.normal_vec(len, 1.0);
        for b in &basis {
            let p = ops::dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if let Ok(u) = ops::l2_normalize(&v) {
            if ops::norm(&v) > 1e-6 {
                basis.push(u);
            }
        }
    }
    let mut t = Tensor::zeros(&[rows, cols]);
    for (k, b) in basis.iter().enumerate() {
        for (i, &x) in b.iter().enumerate() {
            let (r, c) = if rows >= cols { (i, k) } else { (k, i) };
            t.row_mut(r)[c] = x;
        }
    }
    t
}

fn gaussian(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, rng.normal_vec(n, std)).expect("shape matches length")
}

fn direction(rng: &mut Rng, d: usize, length: f64) -> Vec<f64> {
    loop {
        if let Ok(u) = ops::l2_normalize(&rng.normal_vec(d, 1.0)) {
            return u.into_iter().map(|x| x * length).collect();
        }
    }
}

impl Backbone {
    /// Builds the frozen towers with an empty vocabulary.
    pub fn new(config: &BackboneConfig) -> Result<Backbone> {
        config.validate()?;
        let c = config;
        let root = Rng::substream(c.seed, "backbone");
        let mut wr = root.derive("image-tower");
        let hidden = c.d;
        let image_mlp = Mlp {
            w1: Param::frozen(gaussian(&[hidden, c.d_img], 2.0 / (c.d_img as f64).sqrt(), &mut wr)),
            b1: Param::frozen(gaussian(&[hidden], 0.1, &mut wr)),
            w2: Param::frozen(gaussian(&[c.d, hidden], 1.0 / (hidden as f64).sqrt(), &mut wr)),
            b2: Param::frozen(gaussian(&[c.d], 0.1, &mut wr)),
        };

        let token_map = orthonormal(c.d_token, c.d_img, &mut root.derive("token-map"));
        let hard_template = gaussian(
            &[c.prompt_len, c.d_token],
            PROMPT_INIT_STD,
            &mut root.derive("hard-template"),
        );

        // The joint variant pools a prefix slot with the image, so its
        // pretrained alignment assumes a zero prefix: inputs at half scale.
        let kappa = match c.variant {
            Variant::TextPrompt => 1.0,
            Variant::JointPrompt => 0.5,
        };
        let pool_scale = (c.prompt_len + 1) as f64 * kappa / c.token_scale;
        let w1i = &image_mlp.w1.value;
        // W1t = pool_scale * W1i * M^T, with M the token map.
        let mut w1t = Tensor::zeros(&[hidden, c.d_token]);
        for h in 0..hidden {
            let row = token_map.matvec(w1i.row(h));
            for (o, v) in w1t.row_mut(h).iter_mut().zip(row) {
                *o = pool_scale * v;
            }
        }
        let mut hard_sum = vec![0.0; c.d_token];
        for l in 0..c.prompt_len {
            for (s, v) in hard_sum.iter_mut().zip(hard_template.row(l)) {
                *s += v;
            }
        }
        let hard_pre = w1t.matvec(&hard_sum);
        let b1t: Vec<f64> = image_mlp
            .b1
            .value
            .data()
            .iter()
            .zip(&hard_pre)
            .map(|(b, h)| b - h / (c.prompt_len + 1) as f64)
            .collect();

        let text_mlp = Mlp {
            w1: Param::frozen(w1t),
            b1: Param::frozen(Tensor::from_vec(&[hidden], b1t)?),
            w2: image_mlp.w2.clone(),
            b2: image_mlp.b2.clone(),
        };
        let token_table = gaussian(
            &[c.vocab_size, c.d_token],
            PROMPT_INIT_STD,
            &mut root.derive("token-table"),
        );

        Ok(Backbone {
            config: c.clone(),
            text: FrozenTextEncoder {
                token_table: Param::frozen(token_table),
                mlp: text_mlp,
            },
            image: FrozenImageEncoder { mlp: image_mlp },
            hard_template,
            token_map,
            registered: vec![false; c.vocab_size],
        })
    }

    /// Builds the towers and registers the vocabulary of `ds`.
    pub fn pretrained(config: &BackboneConfig, ds: &Dataset) -> Result<Backbone> {
        let mut b = Backbone::new(config)?;
        b.register(ds)?;
        Ok(b)
    }

    /// Writes class-token rows for every class of `ds` (foundation
    /// pretraining). Re-registering the same dataset is a no-op.
    pub fn register(&mut self, ds: &Dataset) -> Result<()> {
        let c = &self.config;
        if ds.spec.d_img != c.d_img {
            return Err(Error::Compatibility(format!(
                "dataset d_img {} != backbone d_img {}",
                ds.spec.d_img, c.d_img
            )));
        }
        let root = Rng::substream(c.seed, "backbone");
        let common = direction(&mut root.derive("domain-shift"), c.d_img, c.domain_shift);
        let noise_std = c.concept_noise / (c.d_img as f64).sqrt();
        for entry in ds.classes() {
            let tok = entry.token_id;
            if tok >= c.vocab_size {
                return Err(Error::Compatibility(format!(
                    "token id {tok} outside vocabulary of {}",
                    c.vocab_size
                )));
            }
            let sup = direction(
                &mut root.derive(&format!("super-shift/{}", entry.super_id)),
                c.d_img,
                c.super_shift,
            );
            let mut noise = root.derive(&format!("concept-noise/{tok}"));
            let mean = ds.class_mean(entry.class_id)?;
            let concept: Vec<f64> = (0..c.d_img)
                .map(|i| mean[i] + common[i] + sup[i] + noise_std * noise.normal())
                .collect();
            let row = self.token_map.matvec(&concept);
            for (o, v) in self.text.token_table.value.row_mut(tok).iter_mut().zip(row) {
                *o = c.token_scale * v;
            }
            self.registered[tok] = true;
        }
        Ok(())
    }

    pub fn is_registered(&self, class_id: usize) -> bool {
        self.registered.get(class_id).copied().unwrap_or(false)
    }

    fn check_class(&self, class_id: usize) -> Result<()> {
        if self.is_registered(class_id) {
            Ok(())
        } else {
            Err(Error::Vocabulary(class_id))
        }
    }

    /// Fresh learnable prompt, seeded normal with std [`PROMPT_INIT_STD`].
    pub fn init_prompt(&self) -> Prompt {
        let c = &self.config;
        let mut rng = Rng::substream(c.seed, "prompt-init");
        let tokens = gaussian(&[c.prompt_len, c.d_token], PROMPT_INIT_STD, &mut rng);
        let visual = match c.variant {
            Variant::TextPrompt => None,
            Variant::JointPrompt => Some(VisualPrompt {
                prefix: Param::trainable(gaussian(&[c.d_img], PROMPT_INIT_STD, &mut rng)),
            }),
        };
        Prompt {
            text: PromptVector {
                tokens: Param::trainable(tokens),
            },
            visual,
        }
    }

    /// Learnable prompt initialised to the hard template (zero visual prefix).
    pub fn hard_prompt(&self) -> Prompt {
        Prompt {
            text: PromptVector {
                tokens: Param::trainable(self.hard_template.clone()),
            },
            visual: match self.config.variant {
                Variant::TextPrompt => None,
                Variant::JointPrompt => Some(VisualPrompt {
                    prefix: Param::trainable(Tensor::zeros(&[self.config.d_img])),
                }),
            },
        }
    }

    /// Number of trainable prompt elements; frozen weights are excluded.
    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    pub fn frozen_params(&self) -> Vec<&Param> {
        let mut out = vec![&self.text.token_table];
        out.extend(self.text.mlp.params());
        out.extend(self.image.mlp.params());
        out
    }

    pub fn frozen_nbytes(&self) -> usize {
        self.frozen_params().iter().map(|p| p.nbytes()).sum::<usize>()
            + self.hard_template.nbytes()
            + self.token_map.nbytes()
    }

    fn context_rows<'a>(&'a self, src: PromptSource<'a>) -> &'a Tensor {
        match src {
            PromptSource::Learned(p) => &p.text.tokens.value,
            PromptSource::Hard => &self.hard_template,
        }
    }

    pub fn text_forward(&self, src: PromptSource<'_>, class_id: usize) -> Result<TextTrace> {
        self.check_class(class_id)?;
        let ctx = self.context_rows(src);
        if ctx.shape() != [self.config.prompt_len, self.config.d_token] {
            return Err(Error::Shape(format!(
                "prompt shape {:?}, expected [{}, {}]",
                ctx.shape(),
                self.config.prompt_len,
                self.config.d_token
            )));
        }
        let n = (self.config.prompt_len + 1) as f64;
        let mut pooled = self.text.token_table.value.row(class_id).to_vec();
        for l in 0..ctx.rows() {
            for (p, v) in pooled.iter_mut().zip(ctx.row(l)) {
                *p += v;
            }
        }
        pooled.iter_mut().for_each(|p| *p /= n);
        let (out, hidden) = self.text.mlp.forward(&pooled);
        Ok(TextTrace {
            class_id,
            hidden,
            out,
        })
    }

    /// Gradient w.r.t. each prompt row (identical for every row under mean
    /// pooling).
    pub fn text_backward(&self, trace: &TextTrace, d_out: &[f64]) -> Vec<f64> {
        let n = (self.config.prompt_len + 1) as f64;
        self.text
            .mlp
            .backward_input(&trace.hidden, d_out)
            .into_iter()
            .map(|g| g / n)
            .collect()
    }

    /// `g(P_t, c)`.
    pub fn encode_text(&self, src: PromptSource<'_>, class_id: usize) -> Result<Vec<f64>> {
        Ok(self.text_forward(src, class_id)?.out)
    }

    fn image_input(&self, src: PromptSource<'_>, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.config.d_img {
            return Err(Error::Shape(format!(
                "image has {} features, expected {}",
                x.len(),
                self.config.d_img
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite image feature".into()));
        }
        Ok(match self.config.variant {
            Variant::TextPrompt => x.to_vec(),
            Variant::JointPrompt => {
                let zero;
                let prefix = match src {
                    PromptSource::Learned(Prompt {
                        visual: Some(v), ..
                    }) => v.prefix.value.data(),
                    _ => {
                        zero = vec![0.0; x.len()];
                        &zero
                    }
                };
                prefix.iter().zip(x).map(|(p, v)| 0.5 * (p + v)).collect()
            }
        })
    }

    pub fn image_forward(&self, src: PromptSource<'_>, x: &[f64]) -> Result<ImageTrace> {
        let input = self.image_input(src, x)?;
        let (out, hidden) = self.image.mlp.forward(&input);
        Ok(ImageTrace { hidden, out })
    }

    /// Gradient w.r.t. the visual prefix, or `None` for the text variant.
    pub fn image_backward(&self, trace: &ImageTrace, d_out: &[f64]) -> Option<Vec<f64>> {
        match self.config.variant {
            Variant::TextPrompt => None,
            Variant::JointPrompt => Some(
                self.image
                    .mlp
                    .backward_input(&trace.hidden, d_out)
                    .into_iter()
                    .map(|g| 0.5 * g)
                    .collect(),
            ),
        }
    }

    /// `f(P_v, x)`.
    pub fn encode_image(&self, src: PromptSource<'_>, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.image_forward(src, x)?.out)
    }

    /// Unit text embeddings for `candidates` (must be non-empty and unique).
    pub fn text_bank(&self, src: PromptSource<'_>, candidates: &[usize]) -> Result<TextBank> {
        check_candidates(candidates)?;
        let unit = par::try_map(candidates, |&c| {
            let e = self.encode_text(src, c)?;
            ops::l2_normalize(&e)
        })?;
        Ok(TextBank {
            candidates: candidates.to_vec(),
            unit,
        })
    }

    /// Class probabilities over `bank.candidates` for one image.
    pub fn proba_with(&self, src: PromptSource<'_>, bank: &TextBank, x: &[f64]) -> Result<Vec<f64>> {
        let img = ops::l2_normalize(&self.encode_image(src, x)?)?;
        let logits: Vec<f64> = bank.unit.iter().map(|t| ops::dot(t, &img)).collect();
        softmax_temp(&logits, self.config.tau)
    }

    /// Temperature softmax over cosine similarities to each candidate.
    pub fn predict_proba(
        &self,
        src: PromptSource<'_>,
        x: &[f64],
        candidates: &[usize],
    ) -> Result<Vec<f64>> {
        let bank = self.text_bank(src, candidates)?;
        self.proba_with(src, &bank, x)
    }

    /// Top-1 class under the foundation model (hard template).
    pub fn zero_shot_label(&self, x: &[f64], candidates: &[usize]) -> Result<(usize, f64)> {
        let probs = self.predict_proba(PromptSource::Hard, x, candidates)?;
        Ok(argmax_lowest_id(candidates, &probs))
    }
}

/// Arg-max of `probs` with ties going to the smallest class id.
pub fn argmax_lowest_id(candidates: &[usize], probs: &[f64]) -> (usize, f64) {
    let mut best = (candidates[0], probs[0]);
    for (&c, &p) in candidates.iter().zip(probs).skip(1) {
        if p > best.1 || (p == best.1 && c < best.0) {
            best = (c, p);
        }
    }
    best
}

pub fn check_candidates(candidates: &[usize]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::CandidateSet("empty candidate list".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::CandidateSet("duplicate candidate".into()));
    }
    Ok(())
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::dataset::{generate, DatasetSpec};
    use crate::numerics::cosine_sim;

    fn setup(variant: Variant) -> (Backbone, Dataset) {
        let spec = DatasetSpec {
            n_super: 2,
            classes_per_super: 3,
            d_img: 8,
            d_s: 4,
            n_train_per_class: 6,
            n_test_per_class: 2,
            ..Default::default()
        };
        let ds = generate(&spec).unwrap();
        let cfg = BackboneConfig {
            variant,
            d_img: 8,
            d_token: 8,
            d: 6,
            ..Default::default()
        };
        (Backbone::pretrained(&cfg, &ds).unwrap(), ds)
    }

    #[test]
    fn param_counts() {
        let cfg = BackboneConfig {
            prompt_len: 4,
            d_token: 32,
            ..Default::default()
        };
        assert_eq!(cfg.param_count(), 128);
        let joint = BackboneConfig {
            variant: Variant::JointPrompt,
            d_img: 64,
            ..cfg.clone()
        };
        assert_eq!(joint.param_count(), 192);
        let b = Backbone::new(&joint).unwrap();
        assert_eq!(b.param_count(), 192);
        assert_eq!(b.init_prompt().param_count(), 192);
    }

    #[test]
    fn text_encoding_is_deterministic_and_checked() {
        let (b, _) = setup(Variant::TextPrompt);
        let p = b.init_prompt();
        let e1 = b.encode_text(PromptSource::Learned(&p), 0).unwrap();
        let e2 = b.encode_text(PromptSource::Learned(&p), 0).unwrap();
        assert_eq!(e1, e2);
        let h = b.encode_text(PromptSource::Hard, 0).unwrap();
        assert_ne!(e1, h);
        let hp = b.hard_prompt();
        assert_eq!(b.encode_text(PromptSource::Learned(&hp), 0).unwrap(), h);
        assert!(matches!(
            b.encode_text(PromptSource::Hard, 99),
            Err(Error::Vocabulary(99))
        ));
    }

    #[test]
    fn text_forward_matches_scalar_oracle() {
        let (b, _) = setup(Variant::TextPrompt);
        let p = b.init_prompt();
        let got = b.encode_text(PromptSource::Learned(&p), 2).unwrap();

        let l = b.config.prompt_len;
        let dt = b.config.d_token;
        let toks = p.text.tokens.value.data();
        let table = b.text.token_table.value.data();
        let mut pooled = vec![0.0; dt];
        for (k, slot) in pooled.iter_mut().enumerate() {
            let mut s = table[2 * dt + k];
            for r in 0..l {
                s += toks[r * dt + k];
            }
            *slot = s / (l + 1) as f64;
        }
        let m = &b.text.mlp;
        let hdim = m.b1.value.len();
        let mut hidden = vec![0.0; hdim];
        for (i, h) in hidden.iter_mut().enumerate() {
            let mut z = m.b1.value.data()[i];
            for k in 0..dt {
                z += m.w1.value.data()[i * dt + k] * pooled[k];
            }
            *h = z.tanh();
        }
        for (o, g) in got.iter().enumerate() {
            let mut y = m.b2.value.data()[o];
            for i in 0..hdim {
                y += m.w2.value.data()[o * hdim + i] * hidden[i];
            }
            assert!((y - g).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_template_aligns_with_concepts() {
        // With no shifts the foundation text embedding of a class equals the
        // image embedding of its mean feature.
        let spec = DatasetSpec {
            n_super: 2,
            classes_per_super: 2,
            d_img: 6,
            d_s: 3,
            n_train_per_class: 4,
            ..Default::default()
        };
        let ds = generate(&spec).unwrap();
        for variant in [Variant::TextPrompt, Variant::JointPrompt] {
            let cfg = BackboneConfig {
                variant,
                d_img: 6,
                d_token: 9,
                d: 5,
                domain_shift: 0.0,
                super_shift: 0.0,
                concept_noise: 0.0,
                ..Default::default()
            };
            let b = Backbone::pretrained(&cfg, &ds).unwrap();
            for c in ds.class_ids() {
                let t = b.encode_text(PromptSource::Hard, c).unwrap();
                let i = b.encode_image(PromptSource::Hard, &ds.class_mean(c).unwrap()).unwrap();
                for (x, y) in t.iter().zip(&i) {
                    assert!((x - y).abs() < 1e-10, "{variant:?}");
                }
            }
        }
    }

    #[test]
    fn image_variants() {
        let (b, ds) = setup(Variant::TextPrompt);
        let x = &ds.images()[0].features;
        let mut p = b.init_prompt();
        p.visual = Some(VisualPrompt {
            prefix: Param::trainable(Tensor::from_vec(&[8], vec![3.0; 8]).unwrap()),
        });
        assert_eq!(
            b.encode_image(PromptSource::Learned(&p), x).unwrap(),
            b.encode_image(PromptSource::Hard, x).unwrap()
        );
        assert!(b.encode_image(PromptSource::Hard, &[0.0; 3]).is_err());

        let (j, _) = setup(Variant::JointPrompt);
        let mut p = j.init_prompt();
        p.visual.as_mut().unwrap().prefix.value = Tensor::from_vec(&[8], x.clone()).unwrap();
        let joint = j.encode_image(PromptSource::Learned(&p), x).unwrap();
        let (out, _) = j.image.mlp.forward(x);
        assert_eq!(joint, out);
    }

    #[test]
    fn predict_proba_cases() {
        let (b, ds) = setup(Variant::TextPrompt);
        let p = b.init_prompt();
        let src = PromptSource::Learned(&p);
        let x = &ds.images()[3].features;
        assert_eq!(b.predict_proba(src, x, &[4]).unwrap(), vec![1.0]);
        assert!(matches!(
            b.predict_proba(src, x, &[1, 2, 1]),
            Err(Error::CandidateSet(_))
        ));

        // brute force via cosine + softmax
        let cands = [0, 3, 5];
        let got = b.predict_proba(src, x, &cands).unwrap();
        let img = b.encode_image(src, x).unwrap();
        let sims: Vec<f64> = cands
            .iter()
            .map(|&c| cosine_sim(&b.encode_text(src, c).unwrap(), &img).unwrap())
            .collect();
        let want = softmax_temp(&sims, b.config.tau).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_shot_prefers_self_match() {
        let (b, ds) = setup(Variant::TextPrompt);
        let (c, p) = b.zero_shot_label(&ds.images()[0].features, &[2]).unwrap();
        assert_eq!((c, p), (2, 1.0));

        // An image whose embedding equals a class's text embedding: feed the
        // class concept directly by zeroing all shifts.
        let cfg = BackboneConfig {
            d_img: 8,
            d_token: 8,
            d: 6,
            domain_shift: 0.0,
            super_shift: 0.0,
            concept_noise: 0.0,
            ..Default::default()
        };
        let b = Backbone::pretrained(&cfg, &ds).unwrap();
        let mean = ds.class_mean(4).unwrap();
        let (c, _) = b.zero_shot_label(&mean, &ds.class_ids()).unwrap();
        assert_eq!(c, 4);
    }

    #[test]
    fn argmax_ties_pick_lowest_id() {
        assert_eq!(argmax_lowest_id(&[5, 2, 9], &[0.4, 0.4, 0.2]), (2, 0.4));
    }

    #[test]
    fn scale_invariance_of_prediction() {
        let (b, ds) = setup(Variant::TextPrompt);
        let bank = b.text_bank(PromptSource::Hard, &ds.class_ids()).unwrap();
        let x = &ds.images()[5].features;
        let emb = b.encode_image(PromptSource::Hard, x).unwrap();
        let scaled: Vec<f64> = emb.iter().map(|v| v * 7.5).collect();
        let score = |e: &[f64]| -> Vec<f64> {
            let u = ops::l2_normalize(e).unwrap();
            let l: Vec<f64> = bank.unit.iter().map(|t| ops::dot(t, &u)).collect();
            softmax_temp(&l, b.config.tau).unwrap()
        };
        let (a, s) = (score(&emb), score(&scaled));
        for (x, y) in a.iter().zip(&s) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn register_rejects_incompatible_dataset() {
        let (mut b, _) = setup(Variant::TextPrompt);
        let other = generate(&DatasetSpec {
            d_img: 5,
            n_super: 1,
            classes_per_super: 2,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(b.register(&other), Err(Error::Compatibility(_))));
    }
}
