//! Seeded synthetic datasets with superclass structure.
//!
//! Classes are grouped into superclasses: each superclass centre is a random
//! unit vector in image-feature space, each class prototype a small offset
//! from its centre, and each image a noisy copy of its prototype. Every class
//! also gets a sampler-space embedding, a noisy linear image of its prototype,
//! so semantic closeness tracks visual confusability.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_sim, ops, Rng};

/// Euclidean norm of a class prototype's offset from its superclass centre.
pub const PROTOTYPE_SPREAD: f64 = 0.5;

const MAGIC: &str = "mao-dataset v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_super: usize,
    pub classes_per_super: usize,
    pub d_img: usize,
    pub d_s: usize,
    pub sigma_img: f64,
    pub sigma_sem: f64,
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    pub seed: u64,
    /// First class id. Class ids double as token ids, so datasets meant to be
    /// evaluated against one backbone use disjoint id ranges.
    pub token_offset: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_super: 8,
            classes_per_super: 4,
            d_img: 32,
            d_s: 16,
            sigma_img: 0.15,
            sigma_sem: 0.05,
            n_train_per_class: 32,
            n_test_per_class: 32,
            seed: 7,
            token_offset: 0,
        }
    }
}

impl DatasetSpec {
    pub fn n_classes(&self) -> usize {
        self.n_super * self.classes_per_super
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_super", self.n_super),
            ("classes_per_super", self.classes_per_super),
            ("n_train_per_class", self.n_train_per_class),
            ("n_test_per_class", self.n_test_per_class),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.d_img < 2 || self.d_s < 2 {
            return Err(Error::Config(format!(
                "degenerate dimensions d_img={} d_s={} (need >= 2)",
                self.d_img, self.d_s
            )));
        }
        for (name, s) in [("sigma_img", self.sigma_img), ("sigma_sem", self.sigma_sem)] {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassSplit {
    Unassigned,
    Base,
    New,
}

impl ClassSplit {
    fn as_str(self) -> &'static str {
        match self {
            ClassSplit::Unassigned => "none",
            ClassSplit::Base => "base",
            ClassSplit::New => "new",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(ClassSplit::Unassigned),
            "base" => Some(ClassSplit::Base),
            "new" => Some(ClassSplit::New),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassEntry {
    pub class_id: usize,
    pub token_id: usize,
    pub super_id: usize,
    pub split: ClassSplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub id: usize,
    pub features: Vec<f64>,
    pub split: Split,
    class_id: usize,
}

impl Image {
    /// Ground-truth class. Training code must only read this for labelled
    /// base pairs; evaluation and diagnostics may read it freely.
    pub fn true_class(&self) -> usize {
        self.class_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    classes: Vec<ClassEntry>,
    sampler_embed: Vec<Vec<f64>>,
    images: Vec<Image>,
}

/// Which half of the vocabulary a few-shot draw targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FewShotKind {
    BasePairs,
    NewUnlabeled,
}

/// Few-shot draw: labelled pairs for base classes, bare image ids for new.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FewShotSet {
    pub pairs: Vec<(usize, usize)>,
    pub unlabeled: Vec<usize>,
    pub shots: usize,
}

/// Builds a dataset from `spec`. Deterministic per `spec.seed`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let root = Rng::substream(spec.seed, "dataset");
    let mut centers_rng = root.derive("centers");
    let mut offsets_rng = root.derive("offsets");
    let mut map_rng = root.derive("sampler-map");
    let mut sem_rng = root.derive("sampler-noise");
    let mut img_rng = root.derive("images");

    let d = spec.d_img;
    let centers: Vec<Vec<f64>> = (0..spec.n_super)
        .map(|_| loop {
            let v = centers_rng.normal_vec(d, 1.0);
            if let Ok(u) = ops::l2_normalize(&v) {
                break u;
            }
        })
        .collect();

    let offset_std = PROTOTYPE_SPREAD / (d as f64).sqrt();
    let mut classes = Vec::with_capacity(spec.n_classes());
    let mut prototypes = Vec::with_capacity(spec.n_classes());
    for (s, center) in centers.iter().enumerate() {
        for _ in 0..spec.classes_per_super {
            let class_id = spec.token_offset + classes.len();
            let off = offsets_rng.normal_vec(d, offset_std);
            prototypes.push(center.iter().zip(&off).map(|(c, o)| c + o).collect::<Vec<f64>>());
            classes.push(ClassEntry {
                class_id,
                token_id: class_id,
                super_id: s,
                split: ClassSplit::Unassigned,
            });
        }
    }

    let map: Vec<Vec<f64>> = (0..spec.d_s)
        .map(|_| map_rng.normal_vec(d, 1.0 / (d as f64).sqrt()))
        .collect();
    let sampler_embed = prototypes
        .iter()
        .map(|p| {
            map.iter()
                .map(|row| ops::dot(row, p) + spec.sigma_sem * sem_rng.normal())
                .collect()
        })
        .collect();

    let mut images = Vec::with_capacity(spec.n_classes() * (spec.n_train_per_class + spec.n_test_per_class));
    for (entry, proto) in classes.iter().zip(&prototypes) {
        let plan = [
            (Split::Train, spec.n_train_per_class),
            (Split::Test, spec.n_test_per_class),
        ];
        for (split, count) in plan {
            for _ in 0..count {
                let features = proto
                    .iter()
                    .map(|p| p + spec.sigma_img * img_rng.normal())
                    .collect();
                images.push(Image {
                    id: images.len(),
                    features,
                    split,
                    class_id: entry.class_id,
                });
            }
        }
    }

    Ok(Dataset {
        spec: spec.clone(),
        classes,
        sampler_embed,
        images,
    })
}

/// Flags the first half of the (sorted) class ids as base, the rest as new.
/// An odd count gives the extra class to base.
pub fn split_base_new(mut ds: Dataset) -> Result<Dataset> {
    if ds.classes.len() < 2 {
        return Err(Error::Dataset("base/new split needs at least 2 classes".into()));
    }
    let mut order: Vec<usize> = (0..ds.classes.len()).collect();
    order.sort_by_key(|&i| ds.classes[i].class_id);
    let n_base = ds.classes.len().div_ceil(2);
    for (rank, &i) in order.iter().enumerate() {
        ds.classes[i].split = if rank < n_base {
            ClassSplit::Base
        } else {
            ClassSplit::New
        };
    }
    Ok(ds)
}

/// Flags every class as base, for tuning on a whole source dataset.
pub fn all_base(mut ds: Dataset) -> Result<Dataset> {
    if ds.classes.is_empty() {
        return Err(Error::Dataset("dataset has no classes".into()));
    }
    ds.classes.iter_mut().for_each(|c| c.split = ClassSplit::Base);
    Ok(ds)
}

/// Draws up to `shots` training images per class of the requested half,
/// uniformly without replacement.
pub fn sample_few_shot(
    ds: &Dataset,
    shots: usize,
    kind: FewShotKind,
    rng: &mut Rng,
) -> Result<FewShotSet> {
    if shots < 1 {
        return Err(Error::Argument("shots must be >= 1".into()));
    }
    let classes = match kind {
        FewShotKind::BasePairs => ds.base_classes(),
        FewShotKind::NewUnlabeled => ds.new_classes(),
    };
    if classes.is_empty() {
        return Err(Error::State("dataset has no base/new split".into()));
    }
    let mut set = FewShotSet {
        shots,
        ..Default::default()
    };
    for c in classes {
        let pool = ds.train_images_of(c);
        if pool.is_empty() {
            return Err(Error::Dataset(format!("class {c} has no training images")));
        }
        for k in rng.sample_indices(pool.len(), shots) {
            match kind {
                FewShotKind::BasePairs => set.pairs.push((pool[k], c)),
                FewShotKind::NewUnlabeled => set.unlabeled.push(pool[k]),
            }
        }
    }
    Ok(set)
}

impl Dataset {
    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn image(&self, id: usize) -> &Image {
        &self.images[id]
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn first_class(&self) -> usize {
        self.spec.token_offset
    }

    /// All class ids in ascending order.
    pub fn class_ids(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.class_id).collect()
    }

    fn local(&self, class_id: usize) -> Result<usize> {
        class_id
            .checked_sub(self.spec.token_offset)
            .filter(|&i| i < self.classes.len())
            .ok_or(Error::Vocabulary(class_id))
    }

    pub fn class(&self, class_id: usize) -> Result<&ClassEntry> {
        Ok(&self.classes[self.local(class_id)?])
    }

    pub fn sampler_embedding(&self, class_id: usize) -> Result<&[f64]> {
        Ok(&self.sampler_embed[self.local(class_id)?])
    }

    pub fn has_split(&self) -> bool {
        self.classes.iter().any(|c| c.split != ClassSplit::Unassigned)
    }

    fn classes_with(&self, split: ClassSplit) -> Vec<usize> {
        self.classes
            .iter()
            .filter(|c| c.split == split)
            .map(|c| c.class_id)
            .collect()
    }

    pub fn base_classes(&self) -> Vec<usize> {
        self.classes_with(ClassSplit::Base)
    }

    pub fn new_classes(&self) -> Vec<usize> {
        self.classes_with(ClassSplit::New)
    }

    pub fn train_images_of(&self, class_id: usize) -> Vec<usize> {
        self.images
            .iter()
            .filter(|im| im.class_id == class_id && im.split == Split::Train)
            .map(|im| im.id)
            .collect()
    }

    /// Test image ids whose class is in `classes`.
    pub fn test_images_in(&self, classes: &[usize]) -> Vec<usize> {
        self.images
            .iter()
            .filter(|im| im.split == Split::Test && classes.contains(&im.class_id))
            .map(|im| im.id)
            .collect()
    }

    /// Mean training feature of a class.
    pub fn class_mean(&self, class_id: usize) -> Result<Vec<f64>> {
        let ids = self.train_images_of(class_id);
        if ids.is_empty() {
            return Err(Error::Dataset(format!("class {class_id} has no training images")));
        }
        let mut mean = vec![0.0; self.spec.d_img];
        for &i in &ids {
            for (m, x) in mean.iter_mut().zip(&self.images[i].features) {
                *m += x;
            }
        }
        let n = ids.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    /// Mean pairwise sampler-space cosine within and across superclasses.
    pub fn superclass_cohesion(&self) -> Result<(f64, f64)> {
        let (mut within, mut nw, mut across, mut na) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..self.classes.len() {
            for j in (i + 1)..self.classes.len() {
                let c = cosine_sim(&self.sampler_embed[i], &self.sampler_embed[j])?;
                if self.classes[i].super_id == self.classes[j].super_id {
                    within += c;
                    nw += 1;
                } else {
                    across += c;
                    na += 1;
                }
            }
        }
        Ok((within / nw.max(1) as f64, across / na.max(1) as f64))
    }

    /// Serialises to the line-oriented `mao-dataset v1` text format.
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(
            out,
            "n_super={} classes_per_super={} d_img={} d_s={} sigma_img={:?} sigma_sem={:?} \
             n_train_per_class={} n_test_per_class={} seed={} token_offset={}",
            s.n_super,
            s.classes_per_super,
            s.d_img,
            s.d_s,
            s.sigma_img,
            s.sigma_sem,
            s.n_train_per_class,
            s.n_test_per_class,
            s.seed,
            s.token_offset
        );
        let _ = writeln!(out, "[vocab] {}", self.classes.len());
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                c.class_id,
                c.token_id,
                c.super_id,
                c.split.as_str()
            );
        }
        let _ = writeln!(out, "[sampler] {}", self.sampler_embed.len());
        for (c, e) in self.classes.iter().zip(&self.sampler_embed) {
            out.push_str(&c.class_id.to_string());
            for v in e {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "[images] {}", self.images.len());
        for im in &self.images {
            let split = match im.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let _ = write!(out, "{},{},{}", im.id, im.class_id, split);
            for v in &im.features {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        let lines = out.lines().count();
        let _ = writeln!(out, "lines {lines}");
        out
    }

    pub fn from_text(text: &str) -> Result<Dataset> {
        parse_dataset(text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::Dataset(format!("dataset file {} not found", path.display()))
            }
            _ => Error::io(path, e),
        })?;
        parse_dataset(&text)
    }
}

fn fmt_err(section: &str, msg: impl Into<String>) -> Error {
    Error::Format {
        section: section.into(),
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(section: &str, field: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| fmt_err(section, format!("bad value `{s}` for {field}")))
}

fn parse_dataset(text: &str) -> Result<Dataset> {
    let lines: Vec<&str> = text.lines().collect();
    let (last, body) = lines
        .split_last()
        .ok_or_else(|| fmt_err("checksum", "empty file"))?;
    let declared: usize = last
        .strip_prefix("lines ")
        .ok_or_else(|| fmt_err("checksum", "missing trailing line count"))
        .and_then(|n| parse_num("checksum", "lines", n))?;
    if declared != body.len() {
        return Err(fmt_err(
            "checksum",
            format!("declared {declared} lines, found {}", body.len()),
        ));
    }

    let mut it = body.iter().copied();
    if it.next() != Some(MAGIC) {
        return Err(fmt_err("header", format!("expected `{MAGIC}`")));
    }
    let header = it.next().ok_or_else(|| fmt_err("header", "missing dimensions line"))?;
    let mut spec = DatasetSpec::default();
    let mut seen = 0;
    for kv in header.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| fmt_err("header", format!("malformed field `{kv}`")))?;
        match k {
            "n_super" => spec.n_super = parse_num("header", k, v)?,
            "classes_per_super" => spec.classes_per_super = parse_num("header", k, v)?,
            "d_img" => spec.d_img = parse_num("header", k, v)?,
            "d_s" => spec.d_s = parse_num("header", k, v)?,
            "sigma_img" => spec.sigma_img = parse_num("header", k, v)?,
            "sigma_sem" => spec.sigma_sem = parse_num("header", k, v)?,
            "n_train_per_class" => spec.n_train_per_class = parse_num("header", k, v)?,
            "n_test_per_class" => spec.n_test_per_class = parse_num("header", k, v)?,
            "seed" => spec.seed = parse_num("header", k, v)?,
            "token_offset" => spec.token_offset = parse_num("header", k, v)?,
            _ => return Err(fmt_err("header", format!("unknown field `{k}`"))),
        }
        seen += 1;
    }
    if seen != 10 {
        return Err(fmt_err("header", format!("expected 10 fields, found {seen}")));
    }
    spec.validate()
        .map_err(|e| fmt_err("header", e.to_string()))?;

    let mut section = |name: &str| -> Result<Vec<Vec<&str>>> {
        let head = it
            .next()
            .ok_or_else(|| fmt_err(name, "missing section"))?;
        let count: usize = head
            .strip_prefix(&format!("[{name}] "))
            .ok_or_else(|| fmt_err(name, format!("expected `[{name}] <count>`, got `{head}`")))
            .and_then(|n| parse_num(name, "count", n))?;
        (0..count)
            .map(|_| {
                it.next()
                    .map(|l| l.split(',').collect())
                    .ok_or_else(|| fmt_err(name, "truncated section"))
            })
            .collect()
    };

    let vocab_rows = section("vocab")?;
    if vocab_rows.len() != spec.n_classes() {
        return Err(fmt_err("vocab", "class count disagrees with header"));
    }
    let mut classes = Vec::with_capacity(vocab_rows.len());
    for (i, r) in vocab_rows.iter().enumerate() {
        if r.len() != 4 {
            return Err(fmt_err("vocab", format!("row {i} has {} fields", r.len())));
        }
        let class_id: usize = parse_num("vocab", "class_id", r[0])?;
        if class_id != spec.token_offset + i {
            return Err(fmt_err("vocab", format!("row {i} has class id {class_id}")));
        }
        classes.push(ClassEntry {
            class_id,
            token_id: parse_num("vocab", "token_id", r[1])?,
            super_id: parse_num("vocab", "super_id", r[2])?,
            split: ClassSplit::parse(r[3])
                .ok_or_else(|| fmt_err("vocab", format!("bad split `{}`", r[3])))?,
        });
    }

    let sampler_rows = section("sampler")?;
    if sampler_rows.len() != classes.len() {
        return Err(fmt_err("sampler", "row count disagrees with vocab"));
    }
    let mut sampler_embed = Vec::with_capacity(classes.len());
    for (r, c) in sampler_rows.iter().zip(&classes) {
        if r.len() != spec.d_s + 1 {
            return Err(fmt_err(
                "sampler",
                format!("row width {} != d_s {}", r.len() - 1, spec.d_s),
            ));
        }
        if parse_num::<usize>("sampler", "class_id", r[0])? != c.class_id {
            return Err(fmt_err("sampler", "class ids out of order"));
        }
        sampler_embed.push(
            r[1..]
                .iter()
                .map(|v| parse_num("sampler", "value", v))
                .collect::<Result<Vec<f64>>>()?,
        );
    }

    let image_rows = section("images")?;
    let mut images = Vec::with_capacity(image_rows.len());
    for (i, r) in image_rows.iter().enumerate() {
        if r.len() != spec.d_img + 3 {
            return Err(fmt_err(
                "images",
                format!(
                    "row {i} width {} != d_img {}",
                    r.len().saturating_sub(3),
                    spec.d_img
                ),
            ));
        }
        let id: usize = parse_num("images", "image_id", r[0])?;
        if id != i {
            return Err(fmt_err("images", format!("row {i} has image id {id}")));
        }
        let class_id: usize = parse_num("images", "class_id", r[1])?;
        if class_id < spec.token_offset || class_id >= spec.token_offset + classes.len() {
            return Err(fmt_err("images", format!("row {i} has unknown class {class_id}")));
        }
        let split = match r[2] {
            "train" => Split::Train,
            "test" => Split::Test,
            s => return Err(fmt_err("images", format!("bad split `{s}`"))),
        };
        images.push(Image {
            id,
            class_id,
            split,
            features: r[3..]
                .iter()
                .map(|v| parse_num("images", "value", v))
                .collect::<Result<Vec<f64>>>()?,
        });
    }
    if it.next().is_some() {
        return Err(fmt_err("images", "trailing rows after last section"));
    }

    Ok(Dataset {
        spec,
        classes,
        sampler_embed,
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            n_super: 2,
            classes_per_super: 2,
            d_img: 4,
            d_s: 3,
            n_train_per_class: 5,
            n_test_per_class: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_noise_images_equal_prototype() {
        let spec = DatasetSpec {
            sigma_img: 0.0,
            ..small()
        };
        let ds = generate(&spec).unwrap();
        for c in ds.class_ids() {
            let ids = ds.train_images_of(c);
            let first = &ds.image(ids[0]).features;
            for &i in &ids {
                assert_eq!(&ds.image(i).features, first);
            }
            for (m, x) in ds.class_mean(c).unwrap().iter().zip(first) {
                assert!((m - x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c = generate(&DatasetSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a.to_text(), c.to_text());
    }

    #[test]
    fn rejects_degenerate_dims() {
        assert!(generate(&DatasetSpec { d_img: 1, ..small() }).is_err());
        assert!(generate(&DatasetSpec { n_super: 0, ..small() }).is_err());
        assert!(generate(&DatasetSpec { sigma_img: -1.0, ..small() }).is_err());
    }

    #[test]
    fn split_halves() {
        let ds = split_base_new(generate(&DatasetSpec::default()).unwrap()).unwrap();
        assert_eq!(ds.base_classes().len(), 16);
        assert_eq!(ds.new_classes().len(), 16);
        assert_eq!(ds.base_classes(), (0..16).collect::<Vec<_>>());

        let odd = DatasetSpec {
            n_super: 5,
            classes_per_super: 1,
            ..small()
        };
        let ds = split_base_new(generate(&odd).unwrap()).unwrap();
        assert_eq!((ds.base_classes().len(), ds.new_classes().len()), (3, 2));

        let eurosat = DatasetSpec {
            n_super: 5,
            classes_per_super: 2,
            ..small()
        };
        let ds = split_base_new(generate(&eurosat).unwrap()).unwrap();
        assert_eq!(ds.base_classes().len(), 5);
    }

    #[test]
    fn few_shot_cardinality_and_determinism() {
        let ds = split_base_new(generate(&DatasetSpec::default()).unwrap()).unwrap();
        let a = sample_few_shot(&ds, 16, FewShotKind::BasePairs, &mut Rng::new(1)).unwrap();
        assert_eq!(a.pairs.len(), 16 * 16);
        assert!(a.unlabeled.is_empty());
        let b = sample_few_shot(&ds, 16, FewShotKind::BasePairs, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        for &(img, c) in &a.pairs {
            assert_eq!(ds.image(img).true_class(), c);
            assert_eq!(ds.image(img).split, Split::Train);
        }

        let big = sample_few_shot(&ds, 100, FewShotKind::NewUnlabeled, &mut Rng::new(2)).unwrap();
        assert_eq!(big.unlabeled.len(), 16 * 32);
        let mut ids = big.unlabeled.clone();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 16 * 32);
    }

    #[test]
    fn few_shot_requires_split() {
        let ds = generate(&small()).unwrap();
        assert!(matches!(
            sample_few_shot(&ds, 2, FewShotKind::BasePairs, &mut Rng::new(0)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn superclasses_are_cohesive() {
        let spec = DatasetSpec {
            n_super: 4,
            classes_per_super: 4,
            ..Default::default()
        };
        let (within, across) = generate(&spec).unwrap().superclass_cohesion().unwrap();
        assert!(within > across, "{within} vs {across}");
    }

    #[test]
    fn text_round_trip_is_exact() {
        let ds = split_base_new(generate(&small()).unwrap()).unwrap();
        let back = Dataset::from_text(&ds.to_text()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn format_errors_name_section() {
        let text = generate(&small()).unwrap().to_text();
        let truncated: String = text.lines().take(12).map(|l| format!("{l}\n")).collect();
        match Dataset::from_text(&truncated) {
            Err(Error::Format { section, .. }) => assert_eq!(section, "checksum"),
            other => panic!("{other:?}"),
        }

        let bad = text.replacen("d_img=4", "d_img=5", 1);
        match Dataset::from_text(&bad) {
            Err(Error::Format { section, .. }) => assert_eq!(section, "images"),
            other => panic!("{other:?}"),
        }

        let bad = text.replacen("mao-dataset v1", "other v9", 1);
        assert!(matches!(Dataset::from_text(&bad), Err(Error::Format { .. })));
    }
}
