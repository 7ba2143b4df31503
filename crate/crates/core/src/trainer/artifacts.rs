//! Run-directory files.
//!
//! `final_prompt.tensor` is line-oriented text: a `text <rows> <cols>`
//! header followed by one whitespace-separated row per line, then, for the
//! joint variant, `visual <len>` and one row. Floats are written in
//! shortest round-trip form so a reload is bit-exact.

use std::path::{Path, PathBuf};

use crate::backbone::{Prompt, PromptVector, VisualPrompt};
use crate::error::{Error, Result};
use crate::numerics::{Param, Tensor};

use super::{metrics_csv, CostMeter, RunState};

fn row_text(row: &[f64]) -> String {
    row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

pub fn prompt_to_text(p: &Prompt) -> String {
    let t = &p.text.tokens.value;
    let mut s = format!("text {} {}\n", t.rows(), t.cols());
    for r in 0..t.rows() {
        s.push_str(&row_text(t.row(r)));
        s.push('\n');
    }
    if let Some(v) = &p.visual {
        s.push_str(&format!("visual {}\n{}\n", v.prefix.value.len(), row_text(v.prefix.value.data())));
    }
    s
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        section: "prompt".into(),
        msg: msg.into(),
    }
}

fn parse_row(line: Option<&str>, want: usize) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| bad("truncated file"))?;
    let row: Vec<f64> = line
        .split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|e| bad(format!("`{v}`: {e}"))))
        .collect::<Result<_>>()?;
    if row.len() != want {
        return Err(bad(format!("row has {} values, expected {want}", row.len())));
    }
    Ok(row)
}

fn header(line: Option<&str>, tag: &str) -> Result<Vec<usize>> {
    let line = line.ok_or_else(|| bad(format!("missing `{tag}` header")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(bad(format!("expected `{tag}` header, got `{line}`")));
    }
    parts
        .map(|v| v.parse::<usize>().map_err(|e| bad(format!("`{v}`: {e}"))))
        .collect()
}

pub fn prompt_from_text(text: &str) -> Result<Prompt> {
    let mut lines = text.lines();
    let dims = header(lines.next(), "text")?;
    let [rows, cols] = dims[..] else {
        return Err(bad("`text` header needs rows and cols"));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        data.extend(parse_row(lines.next(), cols)?);
    }
    let tokens = Param::trainable(Tensor::from_vec(&[rows, cols], data)?);
    let visual = match lines.next() {
        None => None,
        Some(l) => {
            let dims = header(Some(l), "visual")?;
            let [len] = dims[..] else {
                return Err(bad("`visual` header needs a length"));
            };
            let row = parse_row(lines.next(), len)?;
            Some(VisualPrompt {
                prefix: Param::trainable(Tensor::from_vec(&[len], row)?),
            })
        }
    };
    Ok(Prompt {
        text: PromptVector { tokens },
        visual,
    })
}

/// `parent/name`, or `parent/name-2`, `-3`, ... if taken. The directory is
/// created; existing directories are never reused.
pub fn fresh_run_dir(parent: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    for n in 1.. {
        let dir = if n == 1 {
            parent.join(name)
        } else {
            parent.join(format!("{name}-{n}"))
        };
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("unbounded counter")
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Writes `config.snapshot`, `metrics.csv`, `final_prompt.tensor`,
/// `cost.json` and, if there are any notes, `run.log`.
pub fn write_run_dir(dir: &Path, snapshot: &str, run: &RunState, cost: &CostMeter) -> Result<()> {
    write(dir.join("config.snapshot"), snapshot)?;
    write(dir.join("metrics.csv"), &metrics_csv(&run.log))?;
    write(dir.join("final_prompt.tensor"), &prompt_to_text(&run.prompt))?;
    let mut json = serde_json::to_string_pretty(cost).expect("cost serialises");
    json.push('\n');
    write(dir.join("cost.json"), &json)?;
    if !run.notes.is_empty() {
        write(dir.join("run.log"), &(run.notes.join("\n") + "\n"))?;
    }
    Ok(())
}

pub fn read_prompt(path: &Path) -> Result<Prompt> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    prompt_from_text(&text)
}

pub fn read_cost(path: &Path) -> Result<CostMeter> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        section: "cost".into(),
        msg: e.to_string(),
    })
}
