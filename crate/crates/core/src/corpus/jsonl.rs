use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

use super::grammar::GrammarSpec;
use super::Study;
use crate::classifier::Checklist;
use crate::encoders::{ViewImage, ViewTag};
use crate::error::{Error, Result};

const FIELDS: [&str; 5] = ["id", "views", "history", "report", "truth"];

#[derive(Debug)]
pub struct ReadOutcome {
    pub studies: Vec<Study>,
    /// Top-level keys outside the schema; they are ignored.
    pub unknown_fields: usize,
}

pub fn study_to_json(study: &Study, grammar: &GrammarSpec) -> Value {
    let vocab = grammar.vocab();
    let views: Vec<Value> = study
        .views
        .iter()
        .map(|v| {
            let rows: Vec<&[f32]> = v.pixels.chunks(v.width).collect();
            json!({ "tag": v.tag.as_str(), "pixels": rows })
        })
        .collect();
    let states = study.truth.argmax();
    let truth: Map<String, Value> = grammar
        .topics
        .iter()
        .zip(&states)
        .map(|(t, &s)| (t.name.clone(), Value::String(grammar.states[s].clone())))
        .collect();
    json!({
        "id": study.id,
        "views": views,
        "history": vocab.decode(&study.history),
        "report": vocab.decode(&study.report),
        "truth": truth,
    })
}

pub fn write_jsonl(path: &Path, studies: &[Study], grammar: &GrammarSpec) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in studies {
        serde_json::to_writer(&mut out, &study_to_json(s, grammar))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path, grammar: &GrammarSpec) -> Result<ReadOutcome> {
    let file = File::open(path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
    let mut studies = Vec::new();
    let mut unknown_fields = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (study, unknown) = parse_line(&line, grammar).map_err(|msg| Error::Parse { line: i + 1, msg })?;
        unknown_fields += unknown;
        studies.push(study);
    }
    Ok(ReadOutcome { studies, unknown_fields })
}

/// Parses one record; errors are plain messages so the caller can attach the
/// line number.
pub fn parse_line(line: &str, grammar: &GrammarSpec) -> std::result::Result<(Study, usize), String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("record is not an object")?;
    let field = |name: &str| obj.get(name).ok_or_else(|| format!("missing field `{name}`"));
    let unknown = obj.keys().filter(|k| !FIELDS.contains(&k.as_str())).count();

    let id = field("id")?.as_str().ok_or("`id` must be a string")?.to_string();
    let text = |name: &str| -> std::result::Result<String, String> {
        Ok(field(name)?.as_str().ok_or(format!("`{name}` must be a string"))?.to_string())
    };
    let vocab = grammar.vocab();
    let history = vocab.encode(&text("history")?);
    let report = vocab.encode_report(&text("report")?);

    let mut views = Vec::new();
    for (vi, v) in field("views")?.as_array().ok_or("`views` must be an array")?.iter().enumerate() {
        let tag = v.get("tag").and_then(Value::as_str).ok_or(format!("views[{vi}]: missing field `tag`"))?;
        let tag = ViewTag::parse(tag).ok_or(format!("views[{vi}]: unknown view tag {tag:?}"))?;
        let rows = v
            .get("pixels")
            .and_then(Value::as_array)
            .ok_or(format!("views[{vi}]: missing field `pixels`"))?;
        let width = rows.first().and_then(Value::as_array).map_or(0, Vec::len);
        let mut pixels = Vec::with_capacity(rows.len() * width);
        for row in rows {
            let row = row.as_array().ok_or(format!("views[{vi}]: pixel rows must be arrays"))?;
            if row.len() != width {
                return Err(format!("views[{vi}]: ragged pixel rows"));
            }
            for p in row {
                pixels.push(p.as_f64().ok_or(format!("views[{vi}]: pixels must be numbers"))? as f32);
            }
        }
        views.push(ViewImage::new(tag, rows.len(), width, pixels).map_err(|e| format!("views[{vi}]: {e}"))?);
    }
    if views.is_empty() {
        return Err("`views` is empty".into());
    }

    let truth_obj = field("truth")?.as_object().ok_or("`truth` must be an object")?;
    let mut states = Vec::with_capacity(grammar.n());
    for t in &grammar.topics {
        let s = truth_obj
            .get(&t.name)
            .and_then(Value::as_str)
            .ok_or(format!("truth: missing topic `{}`", t.name))?;
        states.push(grammar.state_index(s).ok_or(format!("truth: unknown state {s:?}"))?);
    }
    let truth = Checklist::one_hot(grammar.k(), &states).map_err(|e| e.to_string())?;
    Ok((Study { id, views, history, report, truth }, unknown))
}
