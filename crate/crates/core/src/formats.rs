//! On-disk formats.
//!
//! CSV writers take an optional config hash, written as a leading
//! `# config_hash: <hex>` comment line; every reader skips `#` lines.
//! Floats are written in Rust's shortest round-trip form, so values
//! survive a write/read cycle exactly.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::Serialize;

use crate::curriculum::TextExample;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::irt::{Response, ResponseMatrix};
use crate::trainer::TrainResult;

const HASH_PREFIX: &str = "# config_hash: ";

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serializes CSV rows into memory, preceded by the hash comment if given.
fn csv_bytes(hash: Option<&str>, fill: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    if let Some(h) = hash {
        out.extend_from_slice(format!("{HASH_PREFIX}{h}\n").as_bytes());
    }
    let mut w = csv::Writer::from_writer(out);
    fill(&mut w)?;
    w.into_inner().map_err(|e| Error::format("CSV output", e.to_string()))
}

/// Config hash recorded in a CSV file's leading comment, if any.
pub fn read_csv_hash(path: &Path) -> Result<Option<String>> {
    let mut first = String::new();
    BufReader::new(open(path)?)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    Ok(first.trim_end().strip_prefix(HASH_PREFIX).map(str::to_string))
}

fn cell_flag(raw: &str, what: &str) -> Result<Option<bool>> {
    match raw {
        "" => Ok(None),
        "0" | "false" => Ok(Some(false)),
        "1" | "true" => Ok(Some(true)),
        other => Err(Error::format(what, format!("response `{other}` is not 0 or 1"))),
    }
}

/// Dense CSV: header `model_id,<item ids...>`, one row per model, cells 0/1;
/// an empty cell is a missing response.
pub fn parse_response_csv<R: Read>(input: R) -> Result<ResponseMatrix> {
    const WHAT: &str = "response matrix CSV";
    let mut rdr = csv_reader(input);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("model_id") {
        return Err(Error::format(WHAT, "first header cell must be `model_id`"));
    }
    let item_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut model_ids = Vec::new();
    let mut cells = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != item_ids.len() + 1 {
            return Err(Error::format(
                WHAT,
                format!("row {} has {} fields, expected {}", line + 1, record.len(), item_ids.len() + 1),
            ));
        }
        model_ids.push(record[0].to_string());
        for raw in record.iter().skip(1) {
            cells.push(cell_flag(raw, WHAT)?);
        }
    }
    ResponseMatrix::from_cells(model_ids, item_ids, cells)
}

/// Long JSONL: one `{"model_id", "item_id", "correct"}` object per line.
pub fn parse_response_jsonl<R: BufRead>(input: R) -> Result<ResponseMatrix> {
    let mut responses = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::format("response JSONL", e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Response = serde_json::from_str(&line)
            .map_err(|e| Error::format("response JSONL", format!("line {}: {e}", k + 1)))?;
        responses.push(r);
    }
    ResponseMatrix::from_responses(responses)
}

/// Reads a response matrix, choosing JSONL for `.jsonl`/`.json` files and dense CSV otherwise.
pub fn read_response_matrix(path: &Path) -> Result<ResponseMatrix> {
    let file = open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "json") => parse_response_jsonl(BufReader::new(file)),
        _ => parse_response_csv(file),
    }
}

pub fn response_csv_bytes(z: &ResponseMatrix, hash: Option<&str>) -> Result<Vec<u8>> {
    csv_bytes(hash, |w| {
        w.write_record(std::iter::once("model_id").chain(z.item_ids().iter().map(String::as_str)))?;
        for j in 0..z.n_models() {
            let row = z.row(j).iter().map(|c| match c {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            });
            w.write_record(std::iter::once(z.model_ids()[j].as_str()).chain(row))?;
        }
        Ok(())
    })
}

pub fn write_response_csv(path: &Path, z: &ResponseMatrix, hash: Option<&str>) -> Result<()> {
    write_bytes(path, &response_csv_bytes(z, hash)?)
}

/// Observed cells as JSONL, in row-major order.
pub fn write_response_jsonl(path: &Path, z: &ResponseMatrix) -> Result<()> {
    let mut out = Vec::new();
    for r in z.to_responses() {
        serde_json::to_writer(&mut out, &r)?;
        out.push(b'\n');
    }
    write_bytes(path, &out)
}

fn id_value_bytes(header: [&str; 2], ids: &[String], values: &[f64], hash: Option<&str>) -> Result<Vec<u8>> {
    if ids.len() != values.len() {
        return Err(Error::invalid(format!("{} ids for {} values", ids.len(), values.len())));
    }
    csv_bytes(hash, |w| {
        w.write_record(header)?;
        for (id, v) in ids.iter().zip(values) {
            w.write_record([id.as_str(), &v.to_string()])?;
        }
        Ok(())
    })
}

fn parse_id_values<R: Read>(input: R, header: [&str; 2], what: &str) -> Result<(Vec<String>, Vec<f64>)> {
    let mut rdr = csv_reader(input);
    let found = rdr.headers()?.clone();
    if found.len() != 2 || &found[0] != header[0] || &found[1] != header[1] {
        return Err(Error::format(
            what,
            format!("header must be `{},{}`, got `{}`", header[0], header[1], found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let (mut ids, mut values) = (Vec::new(), Vec::new());
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::format(what, format!("row {} has {} fields", line + 1, record.len())));
        }
        let v: f64 = record[1]
            .parse()
            .map_err(|_| Error::format(what, format!("row {}: `{}` is not a number", line + 1, &record[1])))?;
        if !v.is_finite() {
            return Err(Error::format(what, format!("row {}: non-finite value", line + 1)));
        }
        ids.push(record[0].to_string());
        values.push(v);
    }
    Ok((ids, values))
}

const DIFFICULTY_HEADER: [&str; 2] = ["item_id", "difficulty"];
const ABILITY_HEADER: [&str; 2] = ["model_id", "ability"];

pub fn difficulty_csv_bytes(item_ids: &[String], bs: &[f64], hash: Option<&str>) -> Result<Vec<u8>> {
    id_value_bytes(DIFFICULTY_HEADER, item_ids, bs, hash)
}

pub fn write_difficulties(path: &Path, item_ids: &[String], bs: &[f64], hash: Option<&str>) -> Result<()> {
    write_bytes(path, &difficulty_csv_bytes(item_ids, bs, hash)?)
}

pub fn parse_difficulties<R: Read>(input: R) -> Result<(Vec<String>, Vec<f64>)> {
    parse_id_values(input, DIFFICULTY_HEADER, "difficulty CSV")
}

pub fn read_difficulties(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    parse_difficulties(open(path)?)
}

pub fn write_abilities(path: &Path, model_ids: &[String], thetas: &[f64], hash: Option<&str>) -> Result<()> {
    write_bytes(path, &id_value_bytes(ABILITY_HEADER, model_ids, thetas, hash)?)
}

pub fn read_abilities(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    parse_id_values(open(path)?, ABILITY_HEADER, "ability CSV")
}

/// Graded responses of one model: header `item_id,correct`, values 0/1.
pub fn parse_graded<R: Read>(input: R) -> Result<(Vec<String>, Vec<u8>)> {
    const WHAT: &str = "graded-response CSV";
    let mut rdr = csv_reader(input);
    let found = rdr.headers()?.clone();
    if found.len() != 2 || &found[0] != "item_id" || &found[1] != "correct" {
        return Err(Error::format(WHAT, "header must be `item_id,correct`"));
    }
    let (mut ids, mut z) = (Vec::new(), Vec::new());
    for record in rdr.records() {
        let record = record?;
        match cell_flag(&record[1], WHAT)? {
            Some(c) => z.push(u8::from(c)),
            None => return Err(Error::format(WHAT, format!("item `{}` has no response", &record[0]))),
        }
        ids.push(record[0].to_string());
    }
    Ok((ids, z))
}

pub fn read_graded(path: &Path) -> Result<(Vec<String>, Vec<u8>)> {
    parse_graded(open(path)?)
}

/// Dataset CSV: `x0..x{d-1}`, `label`, then optional `planted_margin`, `text`, `text_pair`.
pub fn dataset_csv_bytes(d: &Dataset, hash: Option<&str>) -> Result<Vec<u8>> {
    csv_bytes(hash, |w| {
        let mut header: Vec<String> = (0..d.n_features()).map(|k| format!("x{k}")).collect();
        header.push("label".to_string());
        if d.planted_margin().is_some() {
            header.push("planted_margin".to_string());
        }
        if d.texts().is_some() {
            header.push("text".to_string());
            header.push("text_pair".to_string());
        }
        w.write_record(&header)?;
        for k in 0..d.len() {
            let mut row: Vec<String> = d.row(k).iter().map(f64::to_string).collect();
            row.push(d.labels()[k].to_string());
            if let Some(m) = d.planted_margin() {
                row.push(m[k].to_string());
            }
            if let Some(t) = d.texts() {
                row.push(t[k].first.clone());
                row.push(t[k].second.clone().unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

pub fn write_dataset(path: &Path, d: &Dataset, hash: Option<&str>) -> Result<()> {
    write_bytes(path, &dataset_csv_bytes(d, hash)?)
}

/// Parses a dataset CSV. `n_classes` defaults to `max(label) + 1` (at least 2).
pub fn parse_dataset<R: Read>(input: R, n_classes: Option<usize>) -> Result<Dataset> {
    const WHAT: &str = "dataset CSV";
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header = rdr.headers()?.clone();
    let n_features = header
        .iter()
        .take_while(|h| h.strip_prefix('x').is_some_and(|n| n.parse::<usize>().is_ok()))
        .count();
    let col = |name: &str| header.iter().position(|h| h == name);
    let label_col = col("label").ok_or_else(|| Error::format(WHAT, "missing `label` column"))?;
    if n_features == 0 || label_col != n_features {
        return Err(Error::format(WHAT, "expected feature columns x0.. followed by `label`"));
    }
    let margin_col = col("planted_margin");
    let text_col = col("text");
    let pair_col = col("text_pair");

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut margins = Vec::new();
    let mut texts = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let num = |c: usize| -> Result<f64> {
            record
                .get(c)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::format(WHAT, format!("row {}, column {}: not a number", line + 1, &header[c])))
        };
        for c in 0..n_features {
            features.push(num(c)?);
        }
        let label = record[label_col]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::format(WHAT, format!("row {}: label `{}` is not a class index", line + 1, &record[label_col])))?;
        labels.push(label);
        if let Some(c) = margin_col {
            margins.push(num(c)?);
        }
        if let Some(c) = text_col {
            let second = pair_col.map(|p| record[p].to_string()).filter(|s| !s.is_empty());
            texts.push(TextExample {
                first: record[c].to_string(),
                second,
            });
        }
    }
    let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
    let mut d = Dataset::new(n_features, n_classes, features, labels)?;
    if margin_col.is_some() {
        d = d.with_planted_margin(margins)?;
    }
    if text_col.is_some() {
        d = d.with_texts(texts)?;
    }
    Ok(d)
}

pub fn read_dataset(path: &Path, n_classes: Option<usize>) -> Result<Dataset> {
    parse_dataset(open(path)?, n_classes)
}

/// Per-epoch trace: `epoch,theta_hat,selected_count,train_acc,dev_acc,fallback`.
pub fn trace_csv_bytes(result: &TrainResult, hash: Option<&str>) -> Result<Vec<u8>> {
    csv_bytes(hash, |w| {
        w.write_record(["epoch", "theta_hat", "selected_count", "train_acc", "dev_acc", "fallback"])?;
        for e in &result.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.theta_hat.map(|t| t.to_string()).unwrap_or_default(),
                e.selected_count.to_string(),
                e.train_acc.to_string(),
                e.dev_acc.to_string(),
                u8::from(e.fallback).to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_trace(path: &Path, result: &TrainResult, hash: Option<&str>) -> Result<()> {
    write_bytes(path, &trace_csv_bytes(result, hash)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    write_bytes(path, &out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}
