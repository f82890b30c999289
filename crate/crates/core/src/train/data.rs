use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MlrError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Passage {
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Passage {
    pub fn new(title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            text: text.into(),
        }
    }

    /// What the document encoder sees.
    pub fn full_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub question: String,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default)]
    pub positive_ctxs: Vec<Passage>,
    #[serde(default)]
    pub negative_ctxs: Vec<Passage>,
}

/// Parses a JSON list of training records, dropping those without a
/// positive passage. Returns the kept instances and the drop count.
pub fn parse_training(text: &str) -> Result<(Vec<TrainingInstance>, usize)> {
    if text.trim().is_empty() {
        return Ok((Vec::new(), 0));
    }
    let all: Vec<TrainingInstance> = serde_json::from_str(text).map_err(|e| {
        MlrError::format("training file", format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    let total = all.len();
    let kept: Vec<_> = all.into_iter().filter(|i| !i.positive_ctxs.is_empty()).collect();
    let dropped = total - kept.len();
    Ok((kept, dropped))
}

pub fn load_training_file(path: &Path) -> Result<(Vec<TrainingInstance>, usize)> {
    let text = fs::read_to_string(path).map_err(MlrError::io(path))?;
    let (kept, dropped) = parse_training(&text).map_err(|e| match e {
        MlrError::Format { msg, .. } => MlrError::Invalid(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    if dropped > 0 {
        log::info!("{}: dropped {dropped} instances without positives", path.display());
    }
    Ok((kept, dropped))
}

pub fn save_training_file(path: &Path, instances: &[TrainingInstance]) -> Result<()> {
    let text = serde_json::to_string_pretty(instances).map_err(|e| MlrError::format("training file", e.to_string()))?;
    fs::write(path, text + "\n").map_err(MlrError::io(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl CorpusDoc {
    pub fn passage(&self) -> Passage {
        Passage::new(self.title.clone(), self.text.clone())
    }
}

/// Reads a corpus as JSON lines (`{"id", "title", "text"}`) or TSV
/// (`id<TAB>title<TAB>text`, optional `id` header). The format is chosen
/// by the `.jsonl`/`.json` extension.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusDoc>> {
    let text = fs::read_to_string(path).map_err(MlrError::io(path))?;
    let jsonl = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"));
    let docs = if jsonl { parse_corpus_jsonl(&text) } else { parse_corpus_tsv(&text) };
    docs.map_err(|e| MlrError::Invalid(format!("{}: {e}", path.display())))
}

pub fn parse_corpus_jsonl(text: &str) -> Result<Vec<CorpusDoc>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| MlrError::format("corpus", format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn parse_corpus_tsv(text: &str) -> Result<Vec<CorpusDoc>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if i == 0 && fields[0] == "id" {
            continue;
        }
        let doc = match fields.as_slice() {
            [id, title, text] => CorpusDoc {
                id: id.to_string(),
                title: title.to_string(),
                text: text.to_string(),
            },
            [id, text] => CorpusDoc {
                id: id.to_string(),
                title: String::new(),
                text: text.to_string(),
            },
            _ => return Err(MlrError::format("corpus", format!("line {}: expected id, title, text", i + 1))),
        };
        out.push(doc);
    }
    Ok(out)
}

pub fn write_corpus_tsv(path: &Path, docs: &[CorpusDoc]) -> Result<()> {
    let mut s = String::from("id\ttitle\ttext\n");
    for d in docs {
        if [&d.id, &d.title, &d.text].iter().any(|f| f.contains(['\t', '\n'])) {
            return Err(MlrError::Invalid(format!("document `{}` contains a tab or newline", d.id)));
        }
        s.push_str(&format!("{}\t{}\t{}\n", d.id, d.title, d.text));
    }
    fs::write(path, s).map_err(MlrError::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_records_without_positives() {
        let text = r#"[
  {"question": "a", "answers": ["x"], "positive_ctxs": [{"title": "t", "text": "x"}], "negative_ctxs": []},
  {"question": "b", "answers": ["y"], "positive_ctxs": [], "negative_ctxs": []},
  {"question": "c", "positive_ctxs": [{"text": "z"}], "hard_negative_ctxs": []}
]"#;
        let (kept, dropped) = parse_training(text).unwrap();
        assert_eq!((kept.len(), dropped), (2, 1));
        assert_eq!(parse_training("").unwrap(), (vec![], 0));
    }

    #[test]
    fn malformed_record_names_line() {
        let text = "[\n {\"question\": \"a\"},\n {\"answers\": []}\n]";
        let err = parse_training(text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn corpus_formats() {
        let tsv = parse_corpus_tsv("id\ttitle\ttext\nd1\tT\thello world\nd2\tbare text\n").unwrap();
        assert_eq!(tsv.len(), 2);
        assert_eq!(tsv[1].text, "bare text");
        let jl = parse_corpus_jsonl("{\"id\":\"a\",\"text\":\"b\"}\n\n").unwrap();
        assert_eq!(jl[0].title, "");
        assert!(parse_corpus_tsv("only-one-field\n").is_err());
    }
}
