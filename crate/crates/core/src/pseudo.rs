//! Zero-shot pseudo-labelling of unlabelled new-class images.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backbone::{argmax_lowest_id, Backbone, Prompt, PromptSource, TextBank};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::par;

/// Which prompt labels unlabelled images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelerMode {
    /// Frozen encoders with the hard template; independent of tuning.
    Foundation,
    /// The current learned prompt.
    Tuned,
}

impl LabelerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelerMode::Foundation => "foundation",
            LabelerMode::Tuned => "tuned",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "foundation" => Some(LabelerMode::Foundation),
            "tuned" => Some(LabelerMode::Tuned),
            _ => None,
        }
    }

    fn source(self, prompt: &Prompt) -> PromptSource<'_> {
        match self {
            LabelerMode::Foundation => PromptSource::Hard,
            LabelerMode::Tuned => PromptSource::Learned(prompt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoPair {
    pub image_id: usize,
    pub class_id: usize,
    /// Top-1 probability.
    pub confidence: f64,
}

fn label_with(
    backbone: &Backbone,
    src: PromptSource<'_>,
    bank: &TextBank,
    image_id: usize,
    x: &[f64],
) -> Result<PseudoPair> {
    let probs = backbone.proba_with(src, bank, x)?;
    let (class_id, confidence) = argmax_lowest_id(&bank.candidates, &probs);
    Ok(PseudoPair {
        image_id,
        class_id,
        confidence,
    })
}

/// Top-1 label of one image over `new_classes`.
pub fn pseudo_label(
    backbone: &Backbone,
    mode: LabelerMode,
    prompt: &Prompt,
    image_id: usize,
    x: &[f64],
    new_classes: &[usize],
) -> Result<PseudoPair> {
    if new_classes.is_empty() {
        return Err(Error::Argument("no new-class candidates".into()));
    }
    let src = mode.source(prompt);
    let bank = backbone.text_bank(src, new_classes)?;
    label_with(backbone, src, &bank, image_id, x)
}

/// One pseudo pair per unlabelled image, in input order. No confidence
/// filtering is applied.
pub fn build_pseudo_pairs(
    backbone: &Backbone,
    mode: LabelerMode,
    prompt: &Prompt,
    unlabeled: &[usize],
    ds: &Dataset,
    new_classes: &[usize],
) -> Result<Vec<PseudoPair>> {
    if unlabeled.is_empty() {
        return Err(Error::Argument("no unlabelled images".into()));
    }
    if new_classes.is_empty() {
        return Err(Error::Argument("no new-class candidates".into()));
    }
    let src = mode.source(prompt);
    let bank = backbone.text_bank(src, new_classes)?;
    par::try_map(unlabeled, |&id| {
        label_with(backbone, src, &bank, id, &ds.image(id).features)
    })
}

/// Fraction of pairs whose pseudo class equals the hidden true class.
pub fn pseudo_accuracy(pairs: &[PseudoPair], ds: &Dataset) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let hits = pairs
        .iter()
        .filter(|p| ds.image(p.image_id).true_class() == p.class_id)
        .count();
    hits as f64 / pairs.len() as f64
}

/// `image_id,pseudo_class,confidence,true_class` diagnostic rows.
pub fn pseudo_csv(pairs: &[PseudoPair], ds: &Dataset) -> String {
    let mut s = String::from("image_id,pseudo_class,confidence,true_class\n");
    for p in pairs {
        let _ = writeln!(
            s,
            "{},{},{:?},{}",
            p.image_id,
            p.class_id,
            p.confidence,
            ds.image(p.image_id).true_class()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::dataset::{generate, sample_few_shot, split_base_new, DatasetSpec, FewShotKind};
    use crate::numerics::Rng;

    fn setup(sigma_img: f64) -> (Backbone, Dataset) {
        let ds = split_base_new(
            generate(&DatasetSpec {
                sigma_img,
                ..Default::default()
            })
            .unwrap(),
        )
        .unwrap();
        let b = Backbone::pretrained(&BackboneConfig::default(), &ds).unwrap();
        (b, ds)
    }

    #[test]
    fn clean_images_are_labelled_perfectly() {
        let (b, ds) = setup(0.0);
        let shots = sample_few_shot(&ds, 4, FewShotKind::NewUnlabeled, &mut Rng::new(1)).unwrap();
        let p = b.init_prompt();
        let pairs = build_pseudo_pairs(
            &b,
            LabelerMode::Foundation,
            &p,
            &shots.unlabeled,
            &ds,
            &ds.new_classes(),
        )
        .unwrap();
        assert_eq!(pairs.len(), shots.unlabeled.len());
        assert_eq!(pseudo_accuracy(&pairs, &ds), 1.0);
    }

    #[test]
    fn single_candidate_is_certain() {
        let (b, ds) = setup(0.15);
        let p = b.init_prompt();
        let img = ds.train_images_of(20)[0];
        let pair = pseudo_label(
            &b,
            LabelerMode::Foundation,
            &p,
            img,
            &ds.image(img).features,
            &[17],
        )
        .unwrap();
        assert_eq!((pair.class_id, pair.confidence), (17, 1.0));
        assert!(pseudo_label(&b, LabelerMode::Foundation, &p, img, &ds.image(img).features, &[]).is_err());
    }

    #[test]
    fn foundation_labels_ignore_prompt_state() {
        let (b, ds) = setup(0.15);
        let ids: Vec<usize> = ds.new_classes().iter().map(|&c| ds.train_images_of(c)[0]).collect();
        let p1 = b.init_prompt();
        let mut p2 = p1.clone();
        p2.text.tokens.value.data_mut().iter_mut().for_each(|v| *v += 0.5);
        let a = build_pseudo_pairs(&b, LabelerMode::Foundation, &p1, &ids, &ds, &ds.new_classes()).unwrap();
        let c = build_pseudo_pairs(&b, LabelerMode::Foundation, &p2, &ids, &ds, &ds.new_classes()).unwrap();
        assert_eq!(a, c);
        let t = build_pseudo_pairs(&b, LabelerMode::Tuned, &p2, &ids, &ds, &ds.new_classes()).unwrap();
        assert_ne!(a, t);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let (b, ds) = setup(0.15);
        let p = b.init_prompt();
        let ids = ds.train_images_of(16);
        let pairs = build_pseudo_pairs(&b, LabelerMode::Foundation, &p, &ids[..3], &ds, &ds.new_classes()).unwrap();
        let csv = pseudo_csv(&pairs, &ds);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("image_id,pseudo_class,confidence,true_class\n"));
    }
}
