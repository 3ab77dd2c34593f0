//! Dataset families, the canonical record shape, and JSONL loading.

mod registry;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::contract::CompressorKind;
use crate::metrics::{extract_answer, AnswerFormat, MetricKind};

pub use registry::{Registry, DATA_ROOT_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Reconstruction,
    Summarization,
    Qa,
    Math,
    Boolean,
    MultipleChoice,
    Lies,
    FewShot,
    Synthetic,
    Code,
}

impl Task {
    pub fn answer_format(self) -> AnswerFormat {
        match self {
            Task::Math => AnswerFormat::Gsm8k,
            Task::Boolean => AnswerFormat::Boolean,
            Task::MultipleChoice => AnswerFormat::MultipleChoice,
            _ => AnswerFormat::Freeform,
        }
    }

    pub fn requires_answer(self) -> bool {
        matches!(
            self,
            Task::Math | Task::Boolean | Task::MultipleChoice | Task::Lies
        )
    }
}

/// On-disk shape of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `{question, answer}` with the final answer after `####`.
    Gsm8k,
    /// `{input, target}`.
    Bbh,
    /// `{text}` or `{content}`: BBC News, ShareGPT, Arxiv.
    Reconstruction,
    /// `{source | text | document, summary}`: Gigaword, DUC2004, BNC,
    /// Broadcast, Google.
    Summarization,
    /// `{context, input, answers}`.
    LongBench,
}

impl Family {
    pub fn default_task(self) -> Task {
        match self {
            Family::Gsm8k => Task::Math,
            Family::Bbh => Task::Boolean,
            Family::Reconstruction => Task::Reconstruction,
            Family::Summarization => Task::Summarization,
            Family::LongBench => Task::Qa,
        }
    }

    /// Metrics the family can be scored with.
    pub fn metrics(self) -> &'static [MetricKind] {
        use MetricKind::*;
        match self {
            Family::Gsm8k => &[Accuracy, Bleu, Rouge1, Rouge2, RougeL, BertScore],
            Family::Bbh => &[Accuracy],
            Family::Reconstruction => &[Bleu, Rouge1, Rouge2, RougeL, BertScore],
            Family::Summarization => &[Rouge1, Rouge2, RougeL, TokenF1],
            Family::LongBench => &[Accuracy, Bleu, Rouge1, Rouge2, RougeL, BertScore, EditDistance],
        }
    }

    /// Compressors the family can be evaluated with.
    pub fn compressors(self) -> &'static [CompressorKind] {
        match self {
            Family::LongBench => &[CompressorKind::Lingua, CompressorKind::LongLingua],
            _ => &CompressorKind::ALL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Gsm8k => "gsm8k",
            Family::Bbh => "bbh",
            Family::Reconstruction => "reconstruction",
            Family::Summarization => "summarization",
            Family::LongBench => "long_bench",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| DatasetError::Registry(format!("unknown dataset family {s:?}")))
    }
}

/// One evaluation item, whatever family it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub path: PathBuf,
}

impl DatasetManifest {
    pub fn task(&self) -> Task {
        self.task.unwrap_or_else(|| self.family.default_task())
    }

    /// Field names each line must (or may) provide.
    pub fn expected_fields(&self) -> &'static str {
        match self.family {
            Family::Gsm8k => "question, answer",
            Family::Bbh => "input, target",
            Family::Reconstruction => "text | content",
            Family::Summarization => "source | text | document, summary",
            Family::LongBench => "context, input, answers",
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: file contains no records")]
    Empty { path: PathBuf },
    #[error("{path}:{line}: invalid JSON: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: missing or non-text field {field:?}")]
    MissingField {
        path: PathBuf,
        line: usize,
        field: String,
    },
    #[error("{path}:{line}: {message}")]
    Invalid {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown dataset {0:?}")]
    Unknown(String),
    #[error("registry: {0}")]
    Registry(String),
}

struct Line<'a> {
    obj: &'a serde_json::Map<String, Value>,
    path: &'a Path,
    line: usize,
}

impl Line<'_> {
    fn text(&self, key: &str) -> Option<String> {
        match self.obj.get(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            _ => None,
        }
    }

    fn first_of(&self, keys: &[&str]) -> Result<String, DatasetError> {
        keys.iter()
            .find_map(|k| self.text(k))
            .ok_or_else(|| self.missing(&keys.join(" | ")))
    }

    fn missing(&self, field: &str) -> DatasetError {
        DatasetError::MissingField {
            path: self.path.to_path_buf(),
            line: self.line,
            field: field.to_string(),
        }
    }

    fn id(&self) -> String {
        self.text("id").or_else(|| self.text("_id")).unwrap_or_else(|| {
            let file = self
                .path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default();
            format!("{file}:{}", self.line)
        })
    }
}

fn parse_record(manifest: &DatasetManifest, line: &Line<'_>) -> Result<DatasetRecord, DatasetError> {
    let task = manifest.task();
    let mut rec = DatasetRecord {
        id: line.id(),
        source: String::new(),
        question: None,
        reference: None,
        answer: None,
        task,
    };
    match manifest.family {
        Family::Gsm8k => {
            rec.source = line.first_of(&["question"])?;
            let solution = line.first_of(&["answer"])?;
            rec.answer = Some(extract_answer(&solution, AnswerFormat::Gsm8k));
            rec.reference = Some(solution);
        }
        Family::Bbh => {
            rec.source = line.first_of(&["input"])?;
            let target = line.first_of(&["target"])?;
            // "(B)" style targets are stored as the bare letter extraction yields
            let extracted = extract_answer(&target, task.answer_format());
            rec.answer = Some(if extracted.is_empty() { target } else { extracted });
        }
        Family::Reconstruction => {
            rec.source = line.first_of(&["text", "content"])?;
        }
        Family::Summarization => {
            rec.source = line.first_of(&["source", "text", "document"])?;
            rec.reference = Some(line.first_of(&["summary"])?);
        }
        Family::LongBench => {
            rec.source = line.first_of(&["context"])?;
            rec.question = Some(line.first_of(&["input"])?);
            let answer = match line.obj.get("answers") {
                Some(Value::Array(items)) => items.iter().find_map(|v| v.as_str().map(str::to_string)),
                Some(Value::String(s)) => Some(s.clone()),
                _ => None,
            }
            .ok_or_else(|| line.missing("answers"))?;
            rec.reference = Some(answer.clone());
            rec.answer = Some(answer);
        }
    }
    if rec.source.trim().is_empty() {
        return Err(DatasetError::Invalid {
            path: line.path.to_path_buf(),
            line: line.line,
            message: "source text is empty".into(),
        });
    }
    if task.requires_answer() && rec.answer.as_deref().is_none_or(str::is_empty) {
        return Err(line.missing("answer"));
    }
    if task == Task::Summarization && rec.reference.is_none() {
        return Err(line.missing("summary"));
    }
    Ok(rec)
}

/// Parses JSONL `content` as read from `path`.
pub fn parse_dataset(
    manifest: &DatasetManifest,
    path: &Path,
    content: &str,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut records = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| DatasetError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| DatasetError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected a JSON object".into(),
        })?;
        records.push(parse_record(manifest, &Line { obj, path, line: i + 1 })?);
    }
    if records.is_empty() {
        return Err(DatasetError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok(records)
}

/// Loads the manifest's file; `manifest.path` is used as given.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<DatasetRecord>, DatasetError> {
    let content = std::fs::read_to_string(&manifest.path).map_err(|source| DatasetError::Io {
        path: manifest.path.clone(),
        source,
    })?;
    parse_dataset(manifest, &manifest.path, &content)
}
