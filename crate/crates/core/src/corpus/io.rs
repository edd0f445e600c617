//! Corpus file formats.
//!
//! * labeled-text: one tokenized sentence per line; the style comes from the
//!   file name, either `<style>.<split>.txt` or the `<prefix>.<split>.<style>`
//!   layout of the public sentiment corpora (`sentiment.train.0`).
//! * jsonl: `{"text": .., "style": .. | null, "domain": ..}` per line.
//! * parallel-tsv: `informal<TAB>formal` per line.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{tokenize, CorpusSplit, Domain, SentenceRecord, SplitName, Style, StyleSet};
use crate::error::{Error, Result};

pub const INFORMAL: &str = "informal";
pub const FORMAL: &str = "formal";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    LabeledText,
    Jsonl,
    ParallelTsv,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled-text" => Ok(CorpusFormat::LabeledText),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "parallel-tsv" => Ok(CorpusFormat::ParallelTsv),
            other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    text: String,
    style: Option<String>,
    domain: String,
}

/// Splits a labeled-text file name into `(style, split)`.
pub fn parse_labeled_file_name(name: &str) -> Option<(String, SplitName)> {
    if let Some(stem) = name.strip_suffix(".txt") {
        let (style, split) = stem.rsplit_once('.')?;
        if style.is_empty() {
            return None;
        }
        return Some((style.to_string(), split.parse().ok()?));
    }
    let (rest, style) = name.rsplit_once('.')?;
    let split = rest.rsplit('.').next()?;
    if style.is_empty() {
        return None;
    }
    Some((style.to_string(), split.parse().ok()?))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn check_style(styles: Option<&StyleSet>, name: &str) -> Result<()> {
    match styles {
        Some(set) if !set.contains(name) => Err(Error::UnknownStyle(name.to_string())),
        _ => Ok(()),
    }
}

/// Loads one corpus file. When `styles` is given, any style outside it is
/// rejected with [`Error::UnknownStyle`].
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    domain: Domain,
    styles: Option<&StyleSet>,
) -> Result<CorpusSplit> {
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    match format {
        CorpusFormat::LabeledText => {
            let (style, split) = parse_labeled_file_name(file_name).ok_or_else(|| {
                parse_error(path, 0, "file name must look like <style>.<split>.txt")
            })?;
            check_style(styles, &style)?;
            let text = read(path)?;
            let mut records = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let tokens = tokenize(line).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
                records.push(
                    SentenceRecord::new(tokens, Style::known(style.clone()), domain)
                        .map_err(|e| parse_error(path, i + 1, e.to_string()))?,
                );
            }
            CorpusSplit::new(split, domain, records)
        }
        CorpusFormat::Jsonl => {
            let split = split_from_stem(file_name);
            let text = read(path)?;
            let mut records = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: JsonRecord = serde_json::from_str(line)
                    .map_err(|e| parse_error(path, i + 1, e.to_string()))?;
                let rec_domain: Domain = rec
                    .domain
                    .parse()
                    .map_err(|e: Error| parse_error(path, i + 1, e.to_string()))?;
                if rec_domain != domain {
                    return Err(parse_error(
                        path,
                        i + 1,
                        format!("{rec_domain} record in a {domain} corpus"),
                    ));
                }
                let style = match rec.style {
                    Some(name) => {
                        check_style(styles, &name)?;
                        Style::Known(name)
                    }
                    None => Style::Unknown,
                };
                let tokens =
                    tokenize(&rec.text).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
                records.push(
                    SentenceRecord::new(tokens, style, domain)
                        .map_err(|e| parse_error(path, i + 1, e.to_string()))?,
                );
            }
            CorpusSplit::new(split, domain, records)
        }
        CorpusFormat::ParallelTsv => {
            for name in [INFORMAL, FORMAL] {
                check_style(styles, name)?;
            }
            let split = split_from_stem(file_name);
            let text = read(path)?;
            let mut records = Vec::new();
            let mut links = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (informal, formal) = line
                    .split_once('\t')
                    .ok_or_else(|| parse_error(path, i + 1, "expected informal<TAB>formal"))?;
                if formal.contains('\t') {
                    return Err(parse_error(path, i + 1, "more than two columns"));
                }
                let side = |text: &str, style: &str| -> Result<SentenceRecord> {
                    let tokens = tokenize(text).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
                    SentenceRecord::new(tokens, Style::known(style), domain)
                        .map_err(|e| parse_error(path, i + 1, e.to_string()))
                };
                let a = records.len();
                records.push(side(informal, INFORMAL)?);
                records.push(side(formal, FORMAL)?);
                links.push((a, a + 1));
            }
            CorpusSplit::parallel(split, domain, records, links)
        }
    }
}

/// `name.<split>.ext` or `<split>.ext`; anything else is treated as train.
fn split_from_stem(file_name: &str) -> SplitName {
    let stem = file_name.rsplit_once('.').map_or(file_name, |(s, _)| s);
    stem.rsplit('.')
        .next()
        .and_then(|s| s.parse().ok())
        .unwrap_or(SplitName::Train)
}

/// Loads every `<style>.<split>.txt` file of `split` in `dir`, in style-name
/// order (or in the order of `styles` when given).
pub fn load_labeled_dir(
    dir: &Path,
    split: SplitName,
    domain: Domain,
    styles: Option<&StyleSet>,
) -> Result<CorpusSplit> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.ends_with(".txt") || name.starts_with("transfer.") {
            continue;
        }
        if let Some((style, s)) = parse_labeled_file_name(&name) {
            if s == split {
                files.push((style, entry.path()));
            }
        }
    }
    match styles {
        Some(set) => {
            for (style, _) in &files {
                check_style(Some(set), style)?;
            }
            files.sort_by_key(|(style, _)| set.position(style).unwrap_or(usize::MAX));
        }
        None => files.sort(),
    }
    if files.is_empty() {
        return Err(Error::io(
            dir.join(format!("*.{split}.txt")),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no labeled-text files"),
        ));
    }
    let mut records = Vec::new();
    for (_, path) in files {
        let part = load_corpus(&path, CorpusFormat::LabeledText, domain, styles)?;
        records.extend(part.records().iter().cloned());
    }
    CorpusSplit::new(split, domain, records)
}

/// Writes one `<style>.<split>.txt` per style present, sentences in corpus
/// order. Returns the written paths.
pub fn write_labeled_dir(corpus: &CorpusSplit, dir: &Path) -> Result<Vec<PathBuf>> {
    if corpus.has_unknown_styles() {
        return Err(Error::InvalidStyle(
            "labeled-text cannot represent unknown styles".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for style in corpus.style_names() {
        let path = dir.join(format!("{style}.{}.txt", corpus.split()));
        let mut text = String::new();
        for r in corpus.of_style(&style) {
            text.push_str(&r.text());
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Saves `corpus` at `path`: a directory for labeled-text, a file otherwise.
pub fn save_corpus(corpus: &CorpusSplit, path: &Path, format: CorpusFormat) -> Result<()> {
    let text = match format {
        CorpusFormat::LabeledText => return write_labeled_dir(corpus, path).map(|_| ()),
        CorpusFormat::Jsonl => {
            let mut out = String::new();
            for r in corpus.records() {
                let rec = JsonRecord {
                    text: r.text(),
                    style: r.style().name().map(str::to_string),
                    domain: r.domain().to_string(),
                };
                out.push_str(&serde_json::to_string(&rec)?);
                out.push('\n');
            }
            out
        }
        CorpusFormat::ParallelTsv => {
            if !corpus.is_parallel() {
                return Err(Error::Config("corpus has no parallel links".into()));
            }
            let mut out = String::new();
            for (a, b) in corpus.parallel_pairs() {
                out.push_str(&a.text());
                out.push('\t');
                out.push_str(&b.text());
                out.push('\n');
            }
            out
        }
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
