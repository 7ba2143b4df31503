//! Hard-negative sampling over a sampler-space index of base classes.
//!
//! An anchor pair's class embedding queries the index for its `K` nearest
//! base classes by cosine similarity; one image is then drawn per returned
//! class. The anchor's own class is eligible and, being self-similar, ranks
//! first, so the true label is always in the resulting candidate set.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::dataset::{Dataset, FewShotSet};
use crate::error::{Error, Result};
use crate::numerics::{cosine_sim, pca_project_2d, Rng};

#[derive(Debug, Clone)]
pub struct SamplerIndex {
    classes: Vec<usize>,
    embeddings: Vec<Vec<f64>>,
    /// Images eligible for each class, keyed by class id.
    pool: BTreeMap<usize, Vec<usize>>,
}

/// `b * K` labelled pairs plus the `b` anchors they were expanded from.
#[derive(Debug, Clone, PartialEq)]
pub struct HardNegBatch {
    pub pairs: Vec<(usize, usize)>,
    pub anchors: Vec<(usize, usize)>,
}

impl HardNegBatch {
    pub fn classes(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(_, c)| c).collect()
    }
}

/// Indexes every base class of `ds`; images are drawn from the full
/// training split until [`SamplerIndex::restrict_pool`] narrows it.
pub fn build_index(ds: &Dataset) -> Result<SamplerIndex> {
    if !ds.has_split() {
        return Err(Error::State("sampler index needs a base/new split".into()));
    }
    let classes = ds.base_classes();
    if classes.is_empty() {
        return Err(Error::State("dataset has no base classes".into()));
    }
    let mut embeddings = Vec::with_capacity(classes.len());
    let mut pool = BTreeMap::new();
    for &c in &classes {
        let e = ds.sampler_embedding(c)?;
        if e.iter().all(|&v| v == 0.0) {
            return Err(Error::Degenerate(format!("class {c} has a zero sampler embedding")));
        }
        embeddings.push(e.to_vec());
        pool.insert(c, ds.train_images_of(c));
    }
    Ok(SamplerIndex {
        classes,
        embeddings,
        pool,
    })
}

/// Orders by similarity descending, then class id ascending.
fn rank(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

impl SamplerIndex {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn embedding(&self, class_id: usize) -> Option<&[f64]> {
        self.classes
            .binary_search(&class_id)
            .ok()
            .map(|i| self.embeddings[i].as_slice())
    }

    /// Limits image draws to the labelled pairs of a few-shot set.
    pub fn restrict_pool(&mut self, shots: &FewShotSet) {
        let mut pool: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(img, c) in &shots.pairs {
            pool.entry(c).or_default().push(img);
        }
        for (c, imgs) in self.pool.iter_mut() {
            *imgs = pool.remove(c).unwrap_or_default();
        }
    }

    /// The `k` indexed classes most cosine-similar to `query`, best first;
    /// ties go to the lower class id.
    pub fn top_k_classes(&self, query: &[f64], k: usize) -> Result<Vec<usize>> {
        if k < 1 || k > self.len() {
            return Err(Error::Argument(format!(
                "top-K requires 1 <= K <= {}, got {k}",
                self.len()
            )));
        }
        let mut scored: Vec<(f64, usize)> = self
            .embeddings
            .iter()
            .zip(&self.classes)
            .map(|(e, &c)| cosine_sim(query, e).map(|s| (s, c)))
            .collect::<Result<_>>()?;
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(rank);
        Ok(scored.into_iter().map(|(_, c)| c).collect())
    }

    /// Expands each anchor into `k` pairs: one drawn image for each of the
    /// anchor class's top-`k` neighbours.
    pub fn expand_batch(
        &self,
        anchors: &[(usize, usize)],
        k: usize,
        rng: &mut Rng,
    ) -> Result<HardNegBatch> {
        let b = anchors.len();
        if b * k > self.len() {
            return Err(Error::Constraint {
                b,
                k,
                n_base: self.len(),
            });
        }
        let mut pairs = Vec::with_capacity(b * k);
        for &(_, anchor_class) in anchors {
            let query = self
                .embedding(anchor_class)
                .ok_or(Error::Vocabulary(anchor_class))?;
            for c in self.top_k_classes(query, k)? {
                let imgs = &self.pool[&c];
                if imgs.is_empty() {
                    return Err(Error::Dataset(format!("class {c} has no images to draw")));
                }
                pairs.push((imgs[rng.below(imgs.len())], c));
            }
        }
        Ok(HardNegBatch {
            pairs,
            anchors: anchors.to_vec(),
        })
    }
}

impl SamplerIndex {
    /// `n` pairs drawn uniformly without replacement from the whole image
    /// pool: the plain prompt-tuning batch.
    pub fn uniform_batch(&self, n: usize, rng: &mut Rng) -> Result<Vec<(usize, usize)>> {
        let all: Vec<(usize, usize)> = self
            .pool
            .iter()
            .flat_map(|(&c, imgs)| imgs.iter().map(move |&i| (i, c)))
            .collect();
        if n > all.len() {
            return Err(Error::Argument(format!(
                "uniform batch of {n} from a pool of {}",
                all.len()
            )));
        }
        Ok(rng.sample_indices(all.len(), n).into_iter().map(|i| all[i]).collect())
    }
}

/// Convenience wrapper over [`SamplerIndex::expand_batch`].
pub fn expand_batch(
    index: &SamplerIndex,
    anchors: &[(usize, usize)],
    k: usize,
    rng: &mut Rng,
) -> Result<HardNegBatch> {
    index.expand_batch(anchors, k, rng)
}

/// Shrinks `(b, k)` until `b * k <= n_base`: halve `b` down to 2, then
/// halve `k`, then drop `b` to 1. Returns the new pair and whether anything
/// changed.
pub fn shrink_to_fit(mut b: usize, mut k: usize, n_base: usize) -> (usize, usize, bool) {
    let orig = (b, k);
    while b * k > n_base {
        if b > 2 {
            b /= 2;
        } else if k > 1 {
            k /= 2;
        } else if b > 1 {
            b = 1;
        } else {
            break;
        }
    }
    (b, k, (b, k) != orig)
}

/// Mean pairwise sampler-space cosine over all unordered pairs of `classes`
/// (repeats count as distinct items).
pub fn semantic_density(classes: &[usize], ds: &Dataset) -> Result<f64> {
    if classes.len() < 2 {
        return Err(Error::Argument("semantic density needs at least 2 items".into()));
    }
    let embs: Vec<&[f64]> = classes
        .iter()
        .map(|&c| ds.sampler_embedding(c))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..embs.len() {
        for j in (i + 1)..embs.len() {
            total += cosine_sim(embs[i], embs[j])?;
            n += 1;
        }
    }
    Ok(total / n as f64)
}

/// 2-D PCA of the sampler embeddings of the distinct classes in `classes`.
pub fn pca_snapshot(classes: &[usize], ds: &Dataset) -> Result<Vec<(usize, [f64; 2])>> {
    let mut uniq = classes.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let points: Vec<Vec<f64>> = uniq
        .iter()
        .map(|&c| ds.sampler_embedding(c).map(<[f64]>::to_vec))
        .collect::<Result<_>>()?;
    let proj = pca_project_2d(&points)?;
    Ok(uniq.into_iter().zip(proj).collect())
}

/// Mean Euclidean distance over all pairs of 2-D points.
pub fn mean_pairwise_distance(points: &[(usize, [f64; 2])]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let (a, b) = (points[i].1, points[j].1);
            total += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// `class_id,x,y` rows with a header line.
pub fn snapshot_csv(points: &[(usize, [f64; 2])]) -> String {
    let mut s = String::from("class_id,x,y\n");
    for (c, p) in points {
        s.push_str(&format!("{c},{:?},{:?}\n", p[0], p[1]));
    }
    s
}
