use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use mao_core::backbone::Backbone;
use mao_core::config::{RunConfig, KEYS};
use mao_core::dataset::{generate, sample_few_shot, split_base_new, Dataset, FewShotKind};
use mao_core::evaluator::{ablate_sweep, emit_report, prompt_metrics, sweep_csv, SweepAxis};
use mao_core::numerics::Rng;
use mao_core::pseudo::{build_pseudo_pairs, pseudo_accuracy, pseudo_csv, LabelerMode};
use mao_core::sampler::{build_index, mean_pairwise_distance, pca_snapshot, semantic_density, shrink_to_fit, snapshot_csv};
use mao_core::trainer::{cost_meter, fresh_run_dir, read_cost, read_prompt, run_two_step, write_run_dir};
use mao_core::{Error, Result};

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  2   usage error (unknown subcommand or flag)
  3   configuration error (unknown key, bad value, violated invariant)
  4   dataset error (missing dataset file, empty class)
  5   malformed dataset, prompt, report or cost file
  6   other I/O error
  7   b*topK exceeds the number of base classes
  8   vocabulary, candidate-set or token-universe error
  9   numerical error (zero norm, non-finite value, shape mismatch)
  10  state or argument error
  11  internal invariant violation";

#[derive(Parser)]
#[command(name = "mao", version, about = "Prompt tuning with hard-negative batches and pseudo-labelled new classes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file (see `mao keys`)
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `-s topk=4` (repeatable)
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `-s mode=...`
    #[arg(long)]
    mode: Option<String>,
    /// Shorthand for `-s seed=...`
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded dataset and write it to `dataset`
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Tune a prompt and write a run directory under `out_dir`
    Tune {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate run directories and write report.csv / report.json
    Eval {
        /// Run directories written by `tune`
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Report directory [default: the first run directory]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include wall-clock seconds per epoch (not reproducible)
        #[arg(long)]
        timing: bool,
    },
    /// Sweep topK or shots and write a CSV of accuracies
    Ablate {
        #[command(flatten)]
        common: Common,
        /// topk | shots
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. 1,2,4,8
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
    /// Batch density statistics, PCA snapshots and pseudo-label diagnostics
    Diag {
        #[command(flatten)]
        common: Common,
        /// Number of batches per density estimate
        #[arg(long, default_value_t = 100)]
        batches: usize,
    },
    /// List every config key with its default
    Keys,
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("expected KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(m) = &common.mode {
        overrides.push(("mode".into(), m.clone()));
    }
    if let Some(s) = &common.seed {
        overrides.push(("seed".into(), s.clone()));
    }
    let env_seed = std::env::var("MAO_SEED").ok();
    match &common.config {
        Some(path) => RunConfig::load(path, &overrides, env_seed.as_deref()),
        None => RunConfig::parse("", &overrides, env_seed.as_deref()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_world(cfg: &RunConfig) -> Result<(Dataset, Backbone)> {
    let ds = Dataset::load(&cfg.dataset)?;
    let backbone = Backbone::pretrained(&cfg.backbone, &ds)?;
    Ok((ds, backbone))
}

fn gen(cfg: &RunConfig) -> Result<()> {
    let ds = split_base_new(generate(&cfg.data)?)?;
    if let Some(parent) = cfg.dataset.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    ds.save(&cfg.dataset)?;
    println!("{}", cfg.dataset.display());
    Ok(())
}

fn tune(cfg: &RunConfig) -> Result<()> {
    let (ds, backbone) = load_world(cfg)?;
    let run = run_two_step(&cfg.tune, &ds, &backbone)?;
    let cost = cost_meter(&run, &backbone, &ds)?;
    let name = format!("{}-seed{}", cfg.tune.mode.as_str(), cfg.tune.seed);
    let dir = fresh_run_dir(&cfg.out_dir, &name)?;
    write_run_dir(&dir, &cfg.snapshot(), &run, &cost)?;
    for note in &run.notes {
        eprintln!("note: {note}");
    }
    println!("{}", dir.display());
    Ok(())
}

fn eval(runs: &[PathBuf], out: Option<&Path>, timing: bool) -> Result<()> {
    let mut metrics = Vec::with_capacity(runs.len());
    for dir in runs {
        let cfg = RunConfig::load(&dir.join("config.snapshot"), &[], None)?;
        let (ds, backbone) = load_world(&cfg)?;
        let prompt = read_prompt(&dir.join("final_prompt.tensor"))?;
        let cost = read_cost(&dir.join("cost.json"))?;
        metrics.push(prompt_metrics(&prompt, &cfg.tune, &backbone, &ds, cost)?);
    }
    let out = out.unwrap_or(&runs[0]);
    let report = emit_report(&metrics, out, timing)?;
    print!("{}", report.to_csv()?);
    println!("hm_of_avg = {:.2}, avg_of_hm = {:.2}", report.hm_of_avg, report.avg_of_hm);
    Ok(())
}

fn ablate(cfg: &RunConfig, axis: &str, values: &[usize]) -> Result<()> {
    let axis = SweepAxis::parse(axis).ok_or_else(|| Error::Argument(format!("unknown axis `{axis}`")))?;
    let (ds, backbone) = load_world(cfg)?;
    let rows = ablate_sweep(axis, values, &cfg.tune, &backbone, &ds)?;
    for r in &rows {
        for note in &r.notes {
            eprintln!("note ({}={}): {note}", axis.as_str(), r.value);
        }
    }
    let dir = fresh_run_dir(&cfg.out_dir, &format!("ablate-{}", axis.as_str()))?;
    write_text(&dir.join("config.snapshot"), &cfg.snapshot())?;
    let csv = sweep_csv(axis, &rows);
    write_text(&dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    println!("{}", dir.display());
    Ok(())
}

fn svg_scatter(points: &[(usize, [f64; 2])]) -> String {
    let (w, pad) = (400.0, 20.0);
    let span = |i: usize| {
        let lo = points.iter().map(|p| p.1[i]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.1[i]).fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let ((x0, xs), (y0, ys)) = (span(0), span(1));
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{w}\">\n");
    for (c, p) in points {
        let x = pad + (p[0] - x0) / xs * (w - 2.0 * pad);
        let y = w - pad - (p[1] - y0) / ys * (w - 2.0 * pad);
        s.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\"/><text x=\"{:.2}\" y=\"{y:.2}\" font-size=\"10\">{c}</text>\n",
            x + 5.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn diag(cfg: &RunConfig, batches: usize) -> Result<()> {
    let (ds, backbone) = load_world(cfg)?;
    let t = &cfg.tune;
    let mut index = build_index(&ds)?;
    let root = Rng::substream(t.seed, "diag");
    let shots = sample_few_shot(&ds, t.shots, FewShotKind::BasePairs, &mut root.derive("few-shot"))?;
    index.restrict_pool(&shots);
    let (b, k, _) = shrink_to_fit(t.b, t.k, index.len());
    let mut rng = root.derive("batches");
    let (mut hard, mut uniform) = (0.0, 0.0);
    let (mut hard_classes, mut uniform_classes) = (Vec::new(), Vec::new());
    for i in 0..batches.max(1) {
        let anchors = index.uniform_batch(b, &mut rng)?;
        let classes = index.expand_batch(&anchors, k, &mut rng)?.classes();
        hard += semantic_density(&classes, &ds)?;
        let plain: Vec<usize> = index.uniform_batch(b * k, &mut rng)?.iter().map(|p| p.1).collect();
        uniform += semantic_density(&plain, &ds)?;
        if i == 0 {
            (hard_classes, uniform_classes) = (classes, plain);
        }
    }
    let n = batches.max(1) as f64;
    let dir = fresh_run_dir(&cfg.out_dir, "diag")?;
    write_text(&dir.join("config.snapshot"), &cfg.snapshot())?;
    let (within, across) = ds.superclass_cohesion()?;
    let mut stats = format!(
        "density_hard = {:.6}\ndensity_uniform = {:.6}\ncohesion_within = {within:.6}\ncohesion_across = {across:.6}\n",
        hard / n,
        uniform / n
    );
    for (name, classes) in [("hard", &hard_classes), ("uniform", &uniform_classes)] {
        match pca_snapshot(classes, &ds) {
            Ok(points) => {
                stats.push_str(&format!("pca_spread_{name} = {:.6}\n", mean_pairwise_distance(&points)));
                write_text(&dir.join(format!("pca_{name}.csv")), &snapshot_csv(&points))?;
                write_text(&dir.join(format!("pca_{name}.svg")), &svg_scatter(&points))?;
            }
            Err(e) => stats.push_str(&format!("pca_{name} = skipped ({e})\n")),
        }
    }
    let unlabeled = sample_few_shot(&ds, t.shots, FewShotKind::NewUnlabeled, &mut root.derive("few-shot-new"))?;
    let prompt = backbone.init_prompt();
    let pairs = build_pseudo_pairs(&backbone, LabelerMode::Foundation, &prompt, &unlabeled.unlabeled, &ds, &ds.new_classes())?;
    stats.push_str(&format!("pseudo_accuracy = {:.6}\n", pseudo_accuracy(&pairs, &ds)));
    write_text(&dir.join("pseudo_labels.csv"), &pseudo_csv(&pairs, &ds))?;
    write_text(&dir.join("stats.txt"), &stats)?;
    print!("{stats}");
    println!("{}", dir.display());
    Ok(())
}

fn key_table() -> String {
    let defaults = RunConfig::default();
    KEYS.iter()
        .map(|(key, doc)| format!("  {key:<18} {:<22} {doc}\n", defaults.get(key).unwrap_or_default()))
        .collect()
}

fn keys() {
    print!("{}", key_table());
}

fn main() -> ExitCode {
    let help = format!("{EXIT_CODES}\n\nConfig keys (key, default, meaning):\n{}", key_table());
    let matches = Cli::command().after_help(help).get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let result = match &cli.command {
        Command::Gen { common } => resolve(common).and_then(|c| gen(&c)),
        Command::Tune { common } => resolve(common).and_then(|c| tune(&c)),
        Command::Eval { runs, out, timing } => eval(runs, out.as_deref(), *timing),
        Command::Ablate { common, axis, values } => resolve(common).and_then(|c| ablate(&c, axis, values)),
        Command::Diag { common, batches } => resolve(common).and_then(|c| diag(&c, *batches)),
        Command::Keys => {
            keys();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
