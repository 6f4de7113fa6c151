//! Row and summary writers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::experiment::{MethodSummary, Row};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Format {
    Jsonl,
    Csv,
}

/// `<out>.summary.csv`
pub fn summary_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".summary.csv");
    PathBuf::from(s)
}

fn join_span(span: &[u32]) -> String {
    span.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_rows(out: &Path, rows: &[Row], format: Format) -> Result<()> {
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    match format {
        Format::Jsonl => {
            for r in rows {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
        }
        Format::Csv => {
            let mut c = csv::Writer::from_writer(w);
            c.write_record([
                "task_id",
                "example",
                "method",
                "start",
                "truth",
                "predictions",
                "scores",
                "hit_rank",
                "bleu",
                "oracle_top1",
                "scoring_calls",
                "probe_calls",
                "mask_prob_count",
                "mask_prob_mean",
                "elapsed_us",
                "error",
            ])?;
            for r in rows {
                c.write_record([
                    r.task_id.to_string(),
                    r.example.to_string(),
                    r.method.clone(),
                    r.start.to_string(),
                    join_span(&r.truth),
                    r.predictions.iter().map(|p| join_span(p)).collect::<Vec<_>>().join("|"),
                    r.scores.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("|"),
                    r.hit_rank.map(|h| h.to_string()).unwrap_or_default(),
                    r.bleu.map(|b| b.to_string()).unwrap_or_default(),
                    r.oracle_top1.as_deref().map(join_span).unwrap_or_default(),
                    r.scoring_calls.to_string(),
                    r.probe_calls.to_string(),
                    r.mask_probs.count.to_string(),
                    r.mask_probs.mean.to_string(),
                    r.elapsed_us.to_string(),
                    r.error.clone().unwrap_or_default(),
                ])?;
            }
            c.flush()?;
            return Ok(());
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_jsonl(path: &Path) -> Result<Vec<Row>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

pub fn write_summary(path: &Path, summaries: &[MethodSummary], top_k: &[usize]) -> Result<()> {
    let mut c = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header: Vec<String> = vec!["method".into(), "tasks".into(), "errors".into()];
    header.extend(top_k.iter().map(|k| format!("top{k}")));
    header.extend(
        [
            "mean_bleu",
            "oracle_agreement",
            "scoring_calls",
            "probe_calls",
            "mask_prob_count",
            "mask_prob_mean",
            "mask_prob_var",
            "mean_elapsed_us",
        ]
        .map(String::from),
    );
    c.write_record(&header)?;
    for s in summaries {
        let mut rec = vec![s.method.clone(), s.tasks.to_string(), s.errors.to_string()];
        rec.extend(
            top_k
                .iter()
                .map(|&k| s.accuracy(k).map(|a| a.to_string()).unwrap_or_default()),
        );
        rec.extend([
            s.mean_bleu.to_string(),
            s.oracle_agreement.map(|a| a.to_string()).unwrap_or_default(),
            s.scoring_calls.to_string(),
            s.probe_calls.to_string(),
            s.mask_prob_count.to_string(),
            s.mask_prob_mean.to_string(),
            s.mask_prob_var.to_string(),
            s.mean_elapsed_us.to_string(),
        ]);
        c.write_record(&rec)?;
    }
    c.flush()?;
    Ok(())
}
