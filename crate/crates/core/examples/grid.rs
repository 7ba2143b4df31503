//! Grid search over world knobs scoring the paired directional checks.
//! Usage: `cargo run --release --example grid -- key=v1,v2 key=v3 ...`

use mao_core::backbone::{Backbone, PromptSource};
use mao_core::config::RunConfig;
use mao_core::dataset::{generate, split_base_new};
use mao_core::evaluator::split_accuracies;
use mao_core::trainer::{run_two_step, Mode, TuneConfig};

fn main() -> mao_core::Result<()> {
    let axes: Vec<(String, Vec<String>)> = std::env::args()
        .skip(1)
        .filter_map(|a| {
            a.split_once('=')
                .map(|(k, v)| (k.to_string(), v.split(',').map(str::to_string).collect()))
        })
        .collect();
    let mut combos: Vec<Vec<(String, String)>> = vec![vec![]];
    for (k, vs) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                vs.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((k.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    for ov in combos {
        let cfg = RunConfig::parse("", &ov, None)?;
        let ds = split_base_new(generate(&cfg.data)?)?;
        let bb = Backbone::pretrained(&cfg.backbone, &ds)?;
        let (zb, zn) = split_accuracies(&bb, PromptSource::Hard, &ds)?;
        let mut res = vec![];
        for mode in [Mode::Backbone, Mode::Backbone2x, Mode::MaoFull] {
            let mut per = vec![];
            for seed in 1..=5u64 {
                let t = TuneConfig { mode, seed, ..cfg.tune.clone() };
                let run = run_two_step(&t, &ds, &bb)?;
                let (b, n) = split_accuracies(&bb, PromptSource::Learned(&run.prompt), &ds)?;
                per.push((b, n, 2.0 * b * n / (b + n)));
            }
            res.push(per);
        }
        let mean = |v: &Vec<(f64, f64, f64)>, i: usize| {
            v.iter().map(|x| [x.0, x.1, x.2][i]).sum::<f64>() / 5.0
        };
        let count = |f: &dyn Fn(usize) -> bool| (0..5).filter(|&i| f(i)).count();
        let (bk, x2, mf) = (&res[0], &res[1], &res[2]);
        let a = count(&|i| mf[i].1 > bk[i].1);
        let b = count(&|i| mf[i].2 > bk[i].2);
        let c1 = count(&|i| x2[i].0 > bk[i].0);
        let c2 = count(&|i| x2[i].1 <= bk[i].1);
        let label: Vec<String> = ov.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!(
            "{:<60} zs({zb:.1},{zn:.1}) bk({:.1},{:.1},{:.1}) 2x({:.1},{:.1}) mao({:.1},{:.1},{:.1}) a{a} b{b} c{c1}/{c2}",
            label.join(" "),
            mean(bk, 0), mean(bk, 1), mean(bk, 2),
            mean(x2, 0), mean(x2, 1),
            mean(mf, 0), mean(mf, 1), mean(mf, 2),
        );
    }
    Ok(())
}
