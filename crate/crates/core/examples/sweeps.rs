//! Seed-averaged topK and shots sweeps on the default world.
use mao_core::backbone::{Backbone, BackboneConfig};
use mao_core::dataset::{generate, split_base_new, DatasetSpec};
use mao_core::evaluator::{ablate_sweep, SweepAxis};
use mao_core::trainer::TuneConfig;

fn main() -> mao_core::Result<()> {
    let ds = split_base_new(generate(&DatasetSpec::default())?)?;
    let bb = Backbone::pretrained(&BackboneConfig::default(), &ds)?;
    for (axis, values) in [(SweepAxis::TopK, vec![1, 2, 4, 8]), (SweepAxis::Shots, vec![4, 8, 16, 32])] {
        let mut mean = vec![(0.0, 0.0, 0.0); values.len()];
        for seed in 1..=5u64 {
            let cfg = TuneConfig { seed, ..Default::default() };
            let rows = ablate_sweep(axis, &values, &cfg, &bb, &ds)?;
            let line: Vec<String> = rows.iter().map(|r| format!("{:.1}/{:.1}/{:.1}", r.base_acc, r.new_acc, r.hm)).collect();
            println!("{} seed {seed}: {}", axis.as_str(), line.join("  "));
            for (m, r) in mean.iter_mut().zip(&rows) {
                m.0 += r.base_acc / 5.0;
                m.1 += r.new_acc / 5.0;
                m.2 += r.hm / 5.0;
            }
        }
        let line: Vec<String> = mean.iter().map(|m| format!("{:.2}/{:.2}/{:.2}", m.0, m.1, m.2)).collect();
        println!("{} mean: {}", axis.as_str(), line.join("  "));
    }
    Ok(())
}
