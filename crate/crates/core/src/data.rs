//! Task datasets and their text file format.
//!
//! ```text
//! ctc-lifelong dataset v1
//! task_id 0
//! vocab_size 8
//! input_dim 8
//! count 2
//! utt <id> <source_task> <frames> <num_labels>
//! labels <l1> <l2> ...
//! <frame 0 values>
//! ...
//! ```
//!
//! Feature values are written in shortest round-trip form so a file reloads
//! to identical bits and rewriting it reproduces the same bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::RealArray;
use crate::error::{Error, Result};
use crate::model::Utterance;

const HEADER: &str = "ctc-lifelong dataset v1";

/// One domain's utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_id: usize,
    pub vocab_size: usize,
    pub input_dim: usize,
    pub utterances: Vec<Utterance>,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(Utterance::frames).sum()
    }

    pub fn label_corpus(&self) -> Vec<Vec<u32>> {
        self.utterances.iter().map(|u| u.labels.clone()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{HEADER}").unwrap();
        writeln!(out, "task_id {}", self.task_id).unwrap();
        writeln!(out, "vocab_size {}", self.vocab_size).unwrap();
        writeln!(out, "input_dim {}", self.input_dim).unwrap();
        writeln!(out, "count {}", self.utterances.len()).unwrap();
        for u in &self.utterances {
            writeln!(out, "utt {} {} {} {}", u.id, u.source_task, u.frames(), u.labels.len()).unwrap();
            let labels: Vec<String> = u.labels.iter().map(u32::to_string).collect();
            writeln!(out, "labels {}", labels.join(" ")).unwrap();
            for t in 0..u.frames() {
                let row: Vec<String> = u.features.row_slice(t).iter().map(|v| format!("{v:?}")).collect();
                writeln!(out, "{}", row.join(" ")).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = || lines.next().ok_or_else(|| Error::parse(0, "unexpected end of dataset"));
        let (n, header) = next()?;
        if header.trim() != HEADER {
            return Err(Error::parse(n, format!("expected `{HEADER}`")));
        }
        let mut field = |name: &str| -> Result<usize> {
            let (n, line) = next()?;
            line.strip_prefix(name)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::parse(n, format!("expected `{name} <integer>`")))
        };
        let task_id = field("task_id")?;
        let vocab_size = field("vocab_size")?;
        let input_dim = field("input_dim")?;
        let count = field("count")?;

        let mut utterances = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, line) = next()?;
            let head: Vec<&str> = line.split_whitespace().collect();
            let ["utt", id, source, frames, num_labels] = head[..] else {
                return Err(Error::parse(n, "expected `utt <id> <source_task> <frames> <num_labels>`"));
            };
            let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| Error::parse(n, "bad integer"));
            let (source_task, frames, num_labels) = (parse_usize(source)?, parse_usize(frames)?, parse_usize(num_labels)?);

            let (n, line) = next()?;
            let labels: Vec<u32> = line
                .strip_prefix("labels")
                .ok_or_else(|| Error::parse(n, "expected `labels ...`"))?
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::parse(n, "bad label")))
                .collect::<Result<_>>()?;
            if labels.len() != num_labels {
                return Err(Error::parse(n, "label count does not match header"));
            }
            let mut data = Vec::with_capacity(frames * input_dim);
            for _ in 0..frames {
                let (n, line) = next()?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|v| v.parse().map_err(|_| Error::parse(n, "bad feature value")))
                    .collect::<Result<_>>()?;
                if row.len() != input_dim {
                    return Err(Error::parse(n, "feature row width does not match input_dim"));
                }
                data.extend(row);
            }
            let utt = Utterance {
                id: id.to_string(),
                features: RealArray::new(vec![frames, input_dim], data)?,
                labels,
                source_task,
            };
            utt.validate(input_dim, vocab_size)
                .map_err(|e| Error::parse(n, e.to_string()))?;
            utterances.push(utt);
        }
        Ok(Self {
            task_id,
            vocab_size,
            input_dim,
            utterances,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
