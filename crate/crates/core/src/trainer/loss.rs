use crate::backbone::{Backbone, ImageTrace, Prompt, PromptSource, TextTrace};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{cross_entropy_temp, ops};
use crate::par;
use crate::pseudo::PseudoPair;
use crate::sampler::HardNegBatch;

/// Sorted, de-duplicated class ids of one batch. Its length `H` varies from
/// batch to batch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CandidateSet {
    ids: Vec<usize>,
}

impl CandidateSet {
    pub fn from_sorted_unique(ids: Vec<usize>) -> Result<Self> {
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::CandidateSet("ids must be strictly increasing".into()));
        }
        Ok(CandidateSet { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// `H`.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, class_id: usize) -> bool {
        self.ids.binary_search(&class_id).is_ok()
    }

    fn position(&self, class_id: usize) -> Option<usize> {
        self.ids.binary_search(&class_id).ok()
    }
}

pub fn candidate_set(batch_classes: &[usize]) -> CandidateSet {
    let mut ids = batch_classes.to_vec();
    ids.sort_unstable();
    ids.dedup();
    CandidateSet { ids }
}

/// Loss value plus the bytes of step-local buffers that were live at once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub live_bytes: usize,
}

fn vec_bytes(v: &[f64]) -> usize {
    std::mem::size_of_val(v)
}

/// Mean temperature cross-entropy of `items` over `cands`, with the prompt
/// gradient accumulated into `prompt`.
///
/// Text embeddings are computed once per call and L2-normalised before the
/// cosine logits are formed.
pub fn restricted_ce(
    backbone: &Backbone,
    prompt: &mut Prompt,
    items: &[(&[f64], usize)],
    cands: &CandidateSet,
) -> Result<LossOutput> {
    if items.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let targets: Vec<usize> = items
        .iter()
        .map(|&(_, y)| {
            cands.position(y).ok_or_else(|| {
                Error::Invariant(format!("label {y} is not in the candidate set"))
            })
        })
        .collect::<Result<_>>()?;
    let tau = backbone.config.tau;
    let n = items.len() as f64;

    let (text, images) = {
        let src = PromptSource::Learned(prompt);
        let text: Vec<TextTrace> = par::try_map(cands.ids(), |&c| backbone.text_forward(src, c))?;
        let images: Vec<ImageTrace> = par::try_map(items, |&(x, _)| backbone.image_forward(src, x))?;
        (text, images)
    };
    let unit_text: Vec<Vec<f64>> = text
        .iter()
        .map(|t| ops::l2_normalize(&t.out))
        .collect::<Result<_>>()?;
    let text_norms: Vec<f64> = text.iter().map(|t| ops::norm(&t.out)).collect();
    let unit_img: Vec<Vec<f64>> = images
        .iter()
        .map(|t| ops::l2_normalize(&t.out))
        .collect::<Result<_>>()?;

    let per_item: Vec<(f64, Vec<f64>)> = par::try_map(&targets.iter().zip(&unit_img).collect::<Vec<_>>(), |&(&y, u)| {
        let logits: Vec<f64> = unit_text.iter().map(|t| ops::dot(t, u)).collect();
        cross_entropy_temp(&logits, tau, y)
    })?;
    let loss = per_item.iter().map(|(l, _)| l).sum::<f64>() / n;

    // d loss / d unit text, accumulated item by item in batch order.
    let h = cands.len();
    let d = backbone.config.d;
    let mut d_unit_text = vec![vec![0.0; d]; h];
    for ((_, g), u) in per_item.iter().zip(&unit_img) {
        for (j, dt) in d_unit_text.iter_mut().enumerate() {
            let s = g[j] / n;
            dt.iter_mut().zip(u).for_each(|(a, b)| *a += s * b);
        }
    }
    let jobs: Vec<usize> = (0..h).collect();
    let row_grads: Vec<Vec<f64>> = par::map(&jobs, |&j| {
        let d_text = ops::l2_normalize_backward(&unit_text[j], text_norms[j], &d_unit_text[j]);
        backbone.text_backward(&text[j], &d_text)
    });
    let mut row_grad = vec![0.0; backbone.config.d_token];
    for g in &row_grads {
        row_grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    prompt.text.tokens.accumulate_each_row(&row_grad);

    let mut joint_bytes = 0;
    if prompt.visual.is_some() {
        let idx: Vec<usize> = (0..items.len()).collect();
        let prefix_grads: Vec<Vec<f64>> = par::map(&idx, |&i| {
            let mut d_unit = vec![0.0; d];
            for (j, t) in unit_text.iter().enumerate() {
                let s = per_item[i].1[j] / n;
                d_unit.iter_mut().zip(t).for_each(|(a, b)| *a += s * b);
            }
            let norm = ops::norm(&images[i].out);
            let d_img = ops::l2_normalize_backward(&unit_img[i], norm, &d_unit);
            backbone.image_backward(&images[i], &d_img).unwrap_or_default()
        });
        let mut total = vec![0.0; backbone.config.d_img];
        for g in &prefix_grads {
            total.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        joint_bytes = prefix_grads.iter().map(|g| vec_bytes(g)).sum::<usize>() + vec_bytes(&total);
        if let Some(v) = prompt.visual.as_mut() {
            v.prefix.accumulate(&total);
        }
    }

    let live_bytes = text
        .iter()
        .map(|t| vec_bytes(&t.hidden) + vec_bytes(&t.out))
        .chain(images.iter().map(|t| vec_bytes(&t.hidden) + vec_bytes(&t.out)))
        .chain(unit_text.iter().map(|v| vec_bytes(v)))
        .chain(unit_img.iter().map(|v| vec_bytes(v)))
        .chain(per_item.iter().map(|(_, g)| vec_bytes(g) * 2))
        .chain(d_unit_text.iter().map(|v| vec_bytes(v)))
        .chain(row_grads.iter().map(|v| vec_bytes(v)))
        .sum::<usize>()
        + vec_bytes(&text_norms)
        + joint_bytes;

    Ok(LossOutput { loss, live_bytes })
}

fn gather(ds: &Dataset, pairs: impl Iterator<Item = (usize, usize)>) -> Vec<(&[f64], usize)> {
    pairs
        .map(|(img, c)| (ds.image(img).features.as_slice(), c))
        .collect()
}

/// Cross-entropy of a hard-negative batch restricted to its candidate set.
pub fn base_loss(
    backbone: &Backbone,
    prompt: &mut Prompt,
    batch: &HardNegBatch,
    cset: &CandidateSet,
    ds: &Dataset,
) -> Result<LossOutput> {
    let items = gather(ds, batch.pairs.iter().copied());
    restricted_ce(backbone, prompt, &items, cset)
}

/// Ordinary prompt-tuning cross-entropy over every base class.
pub fn full_ce_loss(
    backbone: &Backbone,
    prompt: &mut Prompt,
    pairs: &[(usize, usize)],
    base_classes: &[usize],
    ds: &Dataset,
) -> Result<LossOutput> {
    let items = gather(ds, pairs.iter().copied());
    restricted_ce(backbone, prompt, &items, &candidate_set(base_classes))
}

/// Candidates for the new-class loss: `C_n` with regularisation on,
/// `C_b ∪ C_n` with it off.
pub fn new_candidates(new_classes: &[usize], base_classes: &[usize], new_ar: bool) -> CandidateSet {
    if new_ar {
        candidate_set(new_classes)
    } else {
        let mut all = new_classes.to_vec();
        all.extend_from_slice(base_classes);
        candidate_set(&all)
    }
}

/// Cross-entropy of pseudo-labelled pairs against the new-class candidates.
pub fn new_loss(
    backbone: &Backbone,
    prompt: &mut Prompt,
    pairs: &[PseudoPair],
    cands: &CandidateSet,
    ds: &Dataset,
) -> Result<LossOutput> {
    if pairs.is_empty() {
        return Err(Error::Argument("no pseudo pairs".into()));
    }
    let items = gather(ds, pairs.iter().map(|p| (p.image_id, p.class_id)));
    restricted_ce(backbone, prompt, &items, cands)
}

/// `value -= lr * grad` on every trainable prompt tensor, then clears the
/// gradients. Aborts without touching anything if a gradient is non-finite.
pub fn sgd_step(prompt: &mut Prompt, lr: f64) -> Result<()> {
    for p in prompt.params() {
        if !p.grad.is_finite() {
            return Err(Error::Numerical("non-finite gradient; training aborted".into()));
        }
    }
    for p in prompt.params_mut() {
        if p.trainable {
            let g = p.grad.data().to_vec();
            p.value
                .data_mut()
                .iter_mut()
                .zip(&g)
                .for_each(|(v, g)| *v -= lr * g);
        }
        p.zero_grad();
    }
    Ok(())
}
