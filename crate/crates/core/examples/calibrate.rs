//! Paired 5-seed comparison of the tuning modes on one world.
//!
//! Usage: `cargo run --release --example calibrate -- [key=value ...]` with
//! any config keys as overrides.

use mao_core::backbone::{Backbone, PromptSource};
use mao_core::config::RunConfig;
use mao_core::dataset::{generate, sample_few_shot, split_base_new, FewShotKind};
use mao_core::evaluator::split_accuracies;
use mao_core::numerics::Rng;
use mao_core::pseudo::{build_pseudo_pairs, pseudo_accuracy, LabelerMode};
use mao_core::trainer::{run_two_step, Mode, TuneConfig};

fn main() -> mao_core::Result<()> {
    let overrides: Vec<(String, String)> = std::env::args()
        .skip(1)
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let cfg = RunConfig::parse("", &overrides, None)?;
    let ds = split_base_new(generate(&cfg.data)?)?;
    let backbone = Backbone::pretrained(&cfg.backbone, &ds)?;
    let (zb, zn) = split_accuracies(&backbone, PromptSource::Hard, &ds)?;
    println!("zero-shot base {zb:.2} new {zn:.2}");
    let init = backbone.init_prompt();
    let (ib, inew) = split_accuracies(&backbone, PromptSource::Learned(&init), &ds)?;
    println!("init prompt base {ib:.2} new {inew:.2}");
    for seed in 0..5u64 {
        let s = sample_few_shot(&ds, cfg.tune.shots, FewShotKind::NewUnlabeled, &mut Rng::new(seed))?;
        let p = build_pseudo_pairs(&backbone, LabelerMode::Foundation, &init, &s.unlabeled, &ds, &ds.new_classes())?;
        print!("pseudo {:.4} ", pseudo_accuracy(&p, &ds));
    }
    println!();
    let modes = [Mode::Backbone, Mode::Backbone2x, Mode::MaoBaseOnly, Mode::MaoNewOnly, Mode::MaoFull];
    for mode in modes {
        let mut sum = [0.0; 3];
        let mut line = String::new();
        for seed in 1..=5u64 {
            let t = TuneConfig { mode, seed, ..cfg.tune.clone() };
            let run = run_two_step(&t, &ds, &backbone)?;
            let (b, n) = split_accuracies(&backbone, PromptSource::Learned(&run.prompt), &ds)?;
            let hm = 2.0 * b * n / (b + n);
            sum[0] += b;
            sum[1] += n;
            sum[2] += hm;
            line.push_str(&format!(" ({b:.1},{n:.1},{hm:.1})"));
        }
        println!(
            "{:<14} base {:.2} new {:.2} hm {:.2} |{line}",
            mode.as_str(),
            sum[0] / 5.0,
            sum[1] / 5.0,
            sum[2] / 5.0
        );
    }
    Ok(())
}
