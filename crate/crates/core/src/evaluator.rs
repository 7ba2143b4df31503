//! Accuracy, harmonic mean, evaluation protocols and report files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{argmax_lowest_id, Backbone, Prompt, PromptSource};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::trainer::{cost_meter, run_two_step, CostMeter, Mode, RunState, TuneConfig};

/// Percentage of `test_ids` whose arg-max over `candidates` is the true class.
pub fn accuracy(
    backbone: &Backbone,
    src: PromptSource<'_>,
    ds: &Dataset,
    test_ids: &[usize],
    candidates: &[usize],
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Argument("no candidate classes".into()));
    }
    if test_ids.is_empty() {
        return Err(Error::Argument("empty test split".into()));
    }
    let bank = backbone.text_bank(src, candidates)?;
    let hits = par::try_map(test_ids, |&i| {
        let img = ds.image(i);
        let probs = backbone.proba_with(src, &bank, &img.features)?;
        Ok::<_, Error>(argmax_lowest_id(candidates, &probs).0 == img.true_class())
    })?;
    Ok(100.0 * hits.iter().filter(|&&h| h).count() as f64 / test_ids.len() as f64)
}

/// `2ab / (a + b)` on percentages.
pub fn harmonic_mean(base: f64, new: f64) -> Result<f64> {
    if !(base >= 0.0 && new >= 0.0) {
        return Err(Error::Argument(format!("accuracies must be >= 0, got ({base}, {new})")));
    }
    if base == 0.0 && new == 0.0 {
        return Err(Error::Argument("harmonic mean of (0, 0) is undefined".into()));
    }
    Ok(2.0 * base * new / (base + new))
}

/// Rounds to 2 decimals, ties to even.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round_ties_even() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: Mode,
    pub seed: u64,
    pub base_acc: f64,
    pub new_acc: f64,
    pub hm: f64,
    /// `(dataset name, accuracy)` rows of a cross-dataset evaluation.
    pub targets: Vec<(String, f64)>,
    pub cost: CostMeter,
}

/// Base accuracy over `C_b`, new accuracy over `C_n`, their harmonic mean
/// and the run's cost.
pub fn base_to_new_eval(
    run: &RunState,
    cfg: &TuneConfig,
    backbone: &Backbone,
    ds: &Dataset,
) -> Result<RunMetrics> {
    let cost = cost_meter(run, backbone, ds)?;
    prompt_metrics(&run.prompt, cfg, backbone, ds, cost)
}

/// [`base_to_new_eval`] for a stored prompt and its recorded cost.
pub fn prompt_metrics(
    prompt: &Prompt,
    cfg: &TuneConfig,
    backbone: &Backbone,
    ds: &Dataset,
    cost: CostMeter,
) -> Result<RunMetrics> {
    let (base_acc, new_acc) = split_accuracies(backbone, PromptSource::Learned(prompt), ds)?;
    Ok(RunMetrics {
        mode: cfg.mode,
        seed: cfg.seed,
        base_acc,
        new_acc,
        hm: harmonic_mean(base_acc, new_acc)?,
        targets: Vec::new(),
        cost,
    })
}

/// `(base, new)` accuracies of one prompt source.
pub fn split_accuracies(backbone: &Backbone, src: PromptSource<'_>, ds: &Dataset) -> Result<(f64, f64)> {
    let (cb, cn) = (ds.base_classes(), ds.new_classes());
    if cb.is_empty() || cn.is_empty() {
        return Err(Error::State("base-to-new evaluation needs a base/new split".into()));
    }
    let base = accuracy(backbone, src, ds, &ds.test_images_in(&cb), &cb)?;
    let new = accuracy(backbone, src, ds, &ds.test_images_in(&cn), &cn)?;
    Ok((base, new))
}

/// Accuracy over all classes of each target with the tuned prompt and no
/// target fine-tuning.
pub fn cross_dataset_eval(backbone: &Backbone, prompt: &Prompt, targets: &[Dataset]) -> Result<Vec<f64>> {
    targets
        .iter()
        .map(|t| {
            if t.spec.d_img != backbone.config.d_img {
                return Err(Error::Compatibility(format!(
                    "target d_img {} != backbone d_img {}",
                    t.spec.d_img, backbone.config.d_img
                )));
            }
            let classes = t.class_ids();
            if let Some(&c) = classes.iter().find(|&&c| !backbone.is_registered(c)) {
                return Err(Error::Compatibility(format!(
                    "class {c} of the target is not in the backbone's token universe"
                )));
            }
            accuracy(
                backbone,
                PromptSource::Learned(prompt),
                t,
                &t.test_images_in(&classes),
                &classes,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    TopK,
    Shots,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::TopK => "topk",
            SweepAxis::Shots => "shots",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "topk" | "k" => Some(SweepAxis::TopK),
            "shots" | "s" => Some(SweepAxis::Shots),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub base_acc: f64,
    pub new_acc: f64,
    pub hm: f64,
    pub wall_seconds: f64,
    /// Auto-shrink and other schedule notes of the run.
    pub notes: Vec<String>,
}

/// One full run per value with everything else fixed. Runs are independent
/// and may execute in parallel; rows come back in `values` order.
pub fn ablate_sweep(
    axis: SweepAxis,
    values: &[usize],
    cfg: &TuneConfig,
    backbone: &Backbone,
    ds: &Dataset,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Argument("empty sweep".into()));
    }
    par::try_map(values, |&v| {
        let mut c = cfg.clone();
        match axis {
            SweepAxis::TopK => c.k = v,
            SweepAxis::Shots => c.shots = v,
        }
        let started = std::time::Instant::now();
        let run = run_two_step(&c, ds, backbone)?;
        let wall_seconds = started.elapsed().as_secs_f64();
        let (base_acc, new_acc) = split_accuracies(backbone, PromptSource::Learned(&run.prompt), ds)?;
        Ok(SweepRow {
            value: v,
            base_acc,
            new_acc,
            hm: harmonic_mean(base_acc, new_acc)?,
            wall_seconds,
            notes: run.notes,
        })
    })
}

/// `value,base,new,hm,wall_seconds` rows.
pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut s = format!("{},base,new,hm,wall_seconds\n", axis.as_str());
    for r in rows {
        s.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{:.3}\n",
            r.value,
            round2(r.base_acc),
            round2(r.new_acc),
            round2(r.hm),
            r.wall_seconds
        ));
    }
    s
}

/// One line of `report.csv`. Accuracies are rounded to 2 decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub mode: String,
    /// Run seed, or `mean` for the aggregate row.
    pub seed: String,
    pub base: f64,
    pub new: f64,
    pub hm: f64,
    pub params: usize,
    /// Left empty unless timing was requested; wall time is not reproducible.
    pub sec_per_epoch: Option<f64>,
    pub peak_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Harmonic mean of the mean base and mean new accuracy.
    pub hm_of_avg: f64,
    /// Mean of the per-run harmonic means.
    pub avg_of_hm: f64,
}

impl Report {
    /// Per-run rows plus a `mean` row whose `hm` is the mean of the run HMs.
    pub fn build(metrics: &[RunMetrics], with_timing: bool) -> Result<Report> {
        if metrics.is_empty() {
            return Err(Error::Argument("no runs to report".into()));
        }
        let mut rows: Vec<ReportRow> = metrics
            .iter()
            .map(|m| ReportRow {
                mode: m.mode.as_str().into(),
                seed: m.seed.to_string(),
                base: round2(m.base_acc),
                new: round2(m.new_acc),
                hm: round2(m.hm),
                params: m.cost.learnable_params,
                sec_per_epoch: with_timing.then_some(m.cost.wall_seconds_per_epoch),
                peak_bytes: m.cost.peak_tracked_bytes,
            })
            .collect();
        let n = metrics.len() as f64;
        let mean = |f: fn(&RunMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
        let (base, new, avg_of_hm) = (mean(|m| m.base_acc), mean(|m| m.new_acc), mean(|m| m.hm));
        let hm_of_avg = harmonic_mean(base, new)?;
        let modes: Vec<&str> = metrics.iter().map(|m| m.mode.as_str()).collect();
        rows.push(ReportRow {
            mode: if modes.iter().all(|&m| m == modes[0]) {
                modes[0].into()
            } else {
                "mixed".into()
            },
            seed: "mean".into(),
            base: round2(base),
            new: round2(new),
            hm: round2(avg_of_hm),
            params: metrics[0].cost.learnable_params,
            sec_per_epoch: with_timing.then(|| mean(|m| m.cost.wall_seconds_per_epoch)),
            peak_bytes: metrics.iter().map(|m| m.cost.peak_tracked_bytes).max().unwrap_or(0),
        });
        Ok(Report {
            rows,
            hm_of_avg: round2(hm_of_avg),
            avg_of_hm: round2(avg_of_hm),
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRow::from(r))
                .map_err(|e| Error::Argument(format!("csv encoding: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Argument(format!("csv encoding: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

/// Fixed-precision view of a row so the CSV text is byte-stable.
#[derive(Serialize, Deserialize)]
struct CsvRow {
    mode: String,
    seed: String,
    base: String,
    new: String,
    hm: String,
    params: usize,
    sec_per_epoch: String,
    peak_bytes: usize,
}

impl From<&ReportRow> for CsvRow {
    fn from(r: &ReportRow) -> Self {
        CsvRow {
            mode: r.mode.clone(),
            seed: r.seed.clone(),
            base: format!("{:.2}", r.base),
            new: format!("{:.2}", r.new),
            hm: format!("{:.2}", r.hm),
            params: r.params,
            sec_per_epoch: r.sec_per_epoch.map(|s| format!("{s:.4}")).unwrap_or_default(),
            peak_bytes: r.peak_bytes,
        }
    }
}

/// Parses `report.csv` text back into rows.
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let bad = |e: String| Error::Format {
        section: "report".into(),
        msg: e,
    };
    let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row.map_err(|e| bad(e.to_string()))?;
            Ok(ReportRow {
                base: num(&row.base)?,
                new: num(&row.new)?,
                hm: num(&row.hm)?,
                sec_per_epoch: if row.sec_per_epoch.is_empty() {
                    None
                } else {
                    Some(num(&row.sec_per_epoch)?)
                },
                mode: row.mode,
                seed: row.seed,
                params: row.params,
                peak_bytes: row.peak_bytes,
            })
        })
        .collect()
}

/// Writes `report.csv` and `report.json` into `dir`.
pub fn emit_report(metrics: &[RunMetrics], dir: &Path, with_timing: bool) -> Result<Report> {
    let report = Report::build(metrics, with_timing)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("report.csv");
    std::fs::write(&csv_path, report.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join("report.json");
    std::fs::write(&json_path, report.to_json()).map_err(|e| Error::io(&json_path, e))?;
    Ok(report)
}
