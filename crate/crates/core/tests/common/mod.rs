//! Shared worlds and independent oracles for the integration tests.
#![allow(dead_code)]

use mao_core::backbone::{Backbone, BackboneConfig, Prompt, Variant};
use mao_core::dataset::{generate, split_base_new, Dataset, DatasetSpec};
use mao_core::numerics::cosine_sim;

pub fn default_world() -> (Dataset, Backbone) {
    world(DatasetSpec::default(), BackboneConfig::default())
}

pub fn world(spec: DatasetSpec, cfg: BackboneConfig) -> (Dataset, Backbone) {
    let ds = split_base_new(generate(&spec).unwrap()).unwrap();
    let bb = Backbone::pretrained(&cfg, &ds).unwrap();
    (ds, bb)
}

pub fn small_spec(n_super: usize, per: usize) -> DatasetSpec {
    DatasetSpec {
        n_super,
        classes_per_super: per,
        n_train_per_class: 8,
        n_test_per_class: 4,
        ..Default::default()
    }
}

pub fn joint() -> BackboneConfig {
    BackboneConfig {
        variant: Variant::JointPrompt,
        ..Default::default()
    }
}

/// Replaces the sampler embedding rows of `ds` (in class order) via the
/// text format.
pub fn with_sampler_rows(ds: &Dataset, rows: &[Vec<f64>]) -> Dataset {
    let text = ds.to_text();
    let mut out = String::new();
    let mut in_sampler = false;
    let mut i = 0;
    for line in text.lines() {
        if line.starts_with("[sampler]") {
            in_sampler = true;
        } else if line.starts_with('[') {
            in_sampler = false;
        } else if in_sampler {
            let id = line.split(',').next().unwrap();
            let vals: Vec<String> = rows[i].iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&format!("{id},{}\n", vals.join(",")));
            i += 1;
            continue;
        }
        out.push_str(line);
        out.push('\n');
    }
    Dataset::from_text(&out).unwrap()
}

/// Full-sort top-K: similarity descending, then class id ascending.
pub fn brute_top_k(query: &[f64], classes: &[usize], embs: &[Vec<f64>], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = embs
        .iter()
        .zip(classes)
        .map(|(e, &c)| (cosine_sim(query, e).unwrap(), c))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, c)| c).collect()
}

fn mlp(w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64], x: &[f64]) -> Vec<f64> {
    let (h, n_in) = (b1.len(), x.len());
    let hidden: Vec<f64> = (0..h)
        .map(|i| {
            let mut z = b1[i];
            for j in 0..n_in {
                z += w1[i * n_in + j] * x[j];
            }
            z.tanh()
        })
        .collect();
    (0..b2.len())
        .map(|i| {
            let mut z = b2[i];
            for j in 0..h {
                z += w2[i * h + j] * hidden[j];
            }
            z
        })
        .collect()
}

/// Text embedding by explicit loops over the backbone's public weights.
/// `ctx` is the `L x d_token` context (prompt or hard template).
pub fn oracle_text(bb: &Backbone, ctx: &[f64], class_id: usize) -> Vec<f64> {
    let c = &bb.config;
    let dt = c.d_token;
    let table = bb.text.token_table.value.data();
    let mut pooled = vec![0.0; dt];
    for l in 0..c.prompt_len {
        for j in 0..dt {
            pooled[j] += ctx[l * dt + j];
        }
    }
    for j in 0..dt {
        pooled[j] += table[class_id * dt + j];
        pooled[j] /= (c.prompt_len + 1) as f64;
    }
    let m = &bb.text.mlp;
    mlp(
        m.w1.value.data(),
        m.b1.value.data(),
        m.w2.value.data(),
        m.b2.value.data(),
        &pooled,
    )
}

/// Image embedding by explicit loops. `prefix` is the visual prompt of the
/// joint variant (`None` for the text variant).
pub fn oracle_image(bb: &Backbone, prefix: Option<&[f64]>, x: &[f64]) -> Vec<f64> {
    let input: Vec<f64> = match prefix {
        None => x.to_vec(),
        Some(p) => p.iter().zip(x).map(|(a, b)| (a + b) / 2.0).collect(),
    };
    let m = &bb.image.mlp;
    mlp(
        m.w1.value.data(),
        m.b1.value.data(),
        m.w2.value.data(),
        m.b2.value.data(),
        &input,
    )
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// normalize -> cosine -> softmax(/tau) -> -log p[target], averaged.
pub fn oracle_ce(
    bb: &Backbone,
    prompt: &Prompt,
    items: &[(Vec<f64>, usize)],
    candidates: &[usize],
) -> f64 {
    let ctx = prompt.text.tokens.value.data();
    let texts: Vec<Vec<f64>> = candidates.iter().map(|&c| unit(&oracle_text(bb, ctx, c))).collect();
    let prefix = prompt.visual.as_ref().map(|v| v.prefix.value.data());
    let tau = bb.config.tau;
    let mut total = 0.0;
    for (x, y) in items {
        let img = unit(&oracle_image(bb, prefix, x));
        let logits: Vec<f64> = texts
            .iter()
            .map(|t| t.iter().zip(&img).map(|(a, b)| a * b).sum::<f64>() / tau)
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        let t = candidates.iter().position(|c| c == y).unwrap();
        total += lse - logits[t];
    }
    total / items.len() as f64
}

/// Zero-shot top-1 over `candidates` by explicit loops (ties to lower id).
pub fn oracle_zero_shot(bb: &Backbone, x: &[f64], candidates: &[usize]) -> usize {
    let hard = bb.hard_template.data();
    let zero = vec![0.0; bb.config.d_img];
    let prefix = match bb.config.variant {
        Variant::TextPrompt => None,
        Variant::JointPrompt => Some(&zero[..]),
    };
    let img = unit(&oracle_image(bb, prefix, x));
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for &c in candidates {
        let t = unit(&oracle_text(bb, hard, c));
        let s: f64 = t.iter().zip(&img).map(|(a, b)| a * b).sum();
        if s > best.0 || (s == best.0 && c < best.1) {
            best = (s, c);
        }
    }
    best.1
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}
