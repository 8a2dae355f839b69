//! Error tables, attention reports (CSV and a self-contained HTML heatmap),
//! scaling tables and run manifests.

use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::feature_map::CostRow;
use crate::train::{ErrorTable, FAIL_THRESHOLD_PCT};

/// Per-task error table with mean error and failed-task rows.
pub fn error_table(title: &str, t: &ErrorTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "{:<28} {:>9} {:>10}", "Task", "Error (%)", "Episodes");
    for r in &t.rows {
        let _ = writeln!(s, "{:<28} {:>9.1} {:>10}", r.task, r.error_pct(), r.episodes);
    }
    let _ = writeln!(s, "{:<28} {:>9.1}", "Mean error (%)", t.mean_error_pct());
    let _ = writeln!(
        s,
        "{:<28} {:>9}",
        format!("Failed tasks (err. > {FAIL_THRESHOLD_PCT:.0}%)"),
        t.failed_tasks()
    );
    s
}

/// Per-response accuracy for the plain test set and, when present, the
/// out-of-vocabulary test set.
pub fn dialog_report(plain: &ErrorTable, oov: Option<&ErrorTable>) -> String {
    let mut s = String::new();
    let mut section = |name: &str, t: &ErrorTable| {
        let _ = writeln!(s, "[{name}]");
        for r in &t.rows {
            let _ = writeln!(
                s,
                "  task {}  per-response accuracy {:6.2}%  ({} responses)",
                r.task,
                100.0 - r.error_pct(),
                r.episodes
            );
        }
    };
    section("Plain", plain);
    if let Some(o) = oov {
        section("OOV", o);
    }
    s
}

/// Attention of one episode across hops.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionReport {
    pub episode: usize,
    pub sentences: Vec<String>,
    pub question: String,
    /// `alphas[t][i]`: weight of sentence `i` at hop `t`.
    pub alphas: Vec<Vec<f64>>,
    pub betas: Vec<f64>,
    pub answer: String,
    pub gold: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub index: String,
    pub sentence: String,
    pub alphas: Vec<f64>,
}

impl AttentionReport {
    pub fn correct(&self) -> bool {
        self.answer == self.gold
    }

    pub fn marker(&self) -> &'static str {
        if self.correct() {
            "[Correct]"
        } else {
            "[Incorrect]"
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.alphas.iter().map(|a| a.iter().sum()).collect()
    }

    /// `index,sentence,alpha_1..alpha_T`, then a `sum` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["index".to_string(), "sentence".to_string()];
        header.extend((1..=self.alphas.len()).map(|t| format!("alpha_{t}")));
        w.write_record(&header).expect("in-memory write");
        for (i, s) in self.sentences.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string(), s.clone()];
            rec.extend(self.alphas.iter().map(|a| format!("{:.6}", a[i])));
            w.write_record(&rec).expect("in-memory write");
        }
        let mut rec = vec!["sum".to_string(), String::new()];
        rec.extend(self.column_sums().iter().map(|s| format!("{s:.6}")));
        w.write_record(&rec).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn read_csv(text: &str) -> Result<Vec<AttentionRow>, csv::Error> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        r.records()
            .map(|rec| {
                let rec = rec?;
                Ok(AttentionRow {
                    index: rec[0].to_string(),
                    sentence: rec[1].to_string(),
                    alphas: rec.iter().skip(2).map(|v| v.parse().unwrap_or(f64::NAN)).collect(),
                })
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:>4}  {:<44}", "#", "sentence");
        for t in 1..=self.alphas.len() {
            let _ = write!(s, " {:>8}", format!("alpha_{t}"));
        }
        s.push('\n');
        for (i, sent) in self.sentences.iter().enumerate() {
            let _ = write!(s, "{:>4}  {:<44}", i + 1, truncate(sent, 44));
            for a in &self.alphas {
                let _ = write!(s, " {:>8.4}", a[i]);
            }
            s.push('\n');
        }
        let _ = write!(s, "{:>4}  {:<44}", "", "sum");
        for c in self.column_sums() {
            let _ = write!(s, " {c:>8.2}");
        }
        s.push('\n');
        let _ = writeln!(s, "question: {}", self.question);
        let _ = writeln!(s, "answer: {}   gold: {}   {}", self.answer, self.gold, self.marker());
        s
    }

    /// Standalone HTML page; cell shading is proportional to α.
    pub fn to_html(&self) -> String {
        let mut s = String::from(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>attention</title>\n<style>\nbody{font-family:sans-serif;margin:2em}\ntable{border-collapse:collapse}\ntd,th{border:1px solid #ccc;padding:4px 8px}\ntd.a{text-align:right;font-family:monospace}\n</style></head><body>\n",
        );
        let _ = writeln!(s, "<h2>Episode {}</h2>\n<table>\n<tr><th>#</th><th>sentence</th>", self.episode);
        for (t, b) in self.betas.iter().enumerate() {
            let _ = write!(s, "<th>&alpha;<sup>{}</sup> (&beta;={b:.3})</th>", t + 1);
        }
        s.push_str("</tr>\n");
        for (i, sent) in self.sentences.iter().enumerate() {
            let _ = write!(s, "<tr><td>{}</td><td>{}</td>", i + 1, escape(sent));
            for a in &self.alphas {
                let v = a[i].clamp(0.0, 1.0);
                let _ = write!(s, "<td class=\"a\" style=\"background:rgba(220,30,30,{v:.3})\">{v:.4}</td>");
            }
            s.push_str("</tr>\n");
        }
        s.push_str("<tr><td></td><td>sum</td>");
        for c in self.column_sums() {
            let _ = write!(s, "<td class=\"a\">{c:.2}</td>");
        }
        s.push_str("</tr>\n</table>\n");
        let _ = writeln!(
            s,
            "<p>Question: {}</p>\n<p>Answer: {} &nbsp; Gold: {} &nbsp; <b>{}</b></p>\n</body></html>",
            escape(&self.question),
            escape(&self.answer),
            escape(&self.gold),
            self.marker()
        );
        s
    }
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        s.chars().take(n - 2).chain("..".chars()).collect()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scaling table for `compare`.
pub fn cost_table(rows: &[CostRow]) -> String {
    let mut s = format!("{:<8} {:>6} {:>12} {:>12}\n", "model", "n", "pair_evals", "wall_ms");
    for r in rows {
        let _ = writeln!(s, "{:<8} {:>6} {:>12} {:>12.3}", r.model, r.n, r.pair_evals, r.wall_ms);
    }
    s
}

/// Wall-time ratio between the largest and smallest `n` of each model.
pub fn cost_ratios(rows: &[CostRow]) -> Vec<(String, f64, f64)> {
    let mut models: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    models.dedup();
    models
        .into_iter()
        .filter_map(|m| {
            let mine: Vec<&CostRow> = rows.iter().filter(|r| r.model == m).collect();
            let lo = mine.iter().min_by_key(|r| r.n)?;
            let hi = mine.iter().max_by_key(|r| r.n)?;
            Some((
                m.to_string(),
                hi.wall_ms / lo.wall_ms,
                hi.pair_evals as f64 / lo.pair_evals as f64,
            ))
        })
        .collect()
}

/// What produced an output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: String,
    /// `(label, sha256)` of every input read.
    pub dataset_digests: Vec<(String, String)>,
    pub seed: u64,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, config: String, dataset_digests: Vec<(String, String)>, seed: u64) -> Self {
        let now = unix_now();
        Self {
            command: command.into(),
            config,
            dataset_digests,
            seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: now,
            finished_unix: now,
        }
    }

    /// SHA-256 over everything except the timestamps, so reruns with the
    /// same inputs share a digest.
    pub fn digest(&self) -> String {
        let stable = Self {
            started_unix: 0,
            finished_unix: 0,
            ..self.clone()
        };
        hex::encode(Sha256::digest(serde_json::to_vec(&stable).expect("serializable")))
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("serializable");
        v["digest"] = serde_json::Value::String(self.digest());
        serde_json::to_string_pretty(&v).expect("serializable")
    }
}
