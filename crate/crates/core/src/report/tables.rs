//! `metrics.csv` and `summary.json`.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::pipeline::{Aggregates, CaseMetrics, EvalReport, Stat};

pub const CSV_HEADER: [&str; 6] = ["case_id", "domain", "method", "ssim", "psnr", "dice"];

/// Six significant digits, shortest form; non-finite values as `inf`,
/// `-inf` or `nan`.
pub fn format_sig6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn parse_number(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        _ => s.parse().map_err(|_| Error::contract(format!("not a number: {s:?}"))),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::contract(format!("{}: malformed csv: {other:?}", path.display())),
    }
}

/// Rows of every report, in order, under one header.
pub fn csv_bytes(reports: &[&EvalReport]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in reports {
        for c in &r.cases {
            w.write_record([
                c.case_id.as_str(),
                c.domain.as_str(),
                r.method.as_str(),
                &format_sig6(c.ssim),
                &format_sig6(c.psnr),
                &format_sig6(c.dice),
            ])
            .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}

pub fn emit_csv(reports: &[&EvalReport], path: &Path) -> Result<()> {
    write_file(path, &csv_bytes(reports))
}

/// Generic table with a header row.
pub fn table_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// One parsed CSV row: the method tag and the case values.
pub fn parse_csv(path: &Path) -> Result<Vec<(String, CaseMetrics)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::contract(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        out.push((
            rec[2].to_string(),
            CaseMetrics {
                case_id: rec[0].to_string(),
                domain: rec[1].to_string(),
                ssim: parse_number(&rec[3])?,
                psnr: parse_number(&rec[4])?,
                dice: parse_number(&rec[5])?,
            },
        ));
    }
    Ok(out)
}

/// JSON number, or a string for values JSON cannot represent.
pub fn json_number(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(format_sig6(v))
    }
}

fn read_number(v: &Value) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| Error::contract("number out of range")),
        Value::String(s) => parse_number(s),
        _ => Err(Error::contract(format!("expected a number, got {v}"))),
    }
}

fn stat_json(s: &Stat) -> Value {
    json!({ "mean": json_number(s.mean), "std": json_number(s.std) })
}

fn read_stat(v: &Value) -> Result<Stat> {
    Ok(Stat { mean: read_number(&v["mean"])?, std: read_number(&v["std"])? })
}

pub fn report_json(r: &EvalReport) -> Value {
    let cases: Vec<Value> = r
        .cases
        .iter()
        .map(|c| {
            json!({
                "case_id": c.case_id,
                "domain": c.domain,
                "ssim": json_number(c.ssim),
                "psnr": json_number(c.psnr),
                "dice": json_number(c.dice),
            })
        })
        .collect();
    json!({
        "method": r.method,
        "seed": r.seed,
        "config_hash": r.config_hash,
        "aggregate": {
            "ssim": stat_json(&r.aggregate.ssim),
            "psnr": stat_json(&r.aggregate.psnr),
            "dice": stat_json(&r.aggregate.dice),
        },
        "cases": cases,
    })
}

pub fn read_report_json(v: &Value) -> Result<EvalReport> {
    let field = |k: &str| v.get(k).ok_or_else(|| Error::contract(format!("summary entry missing {k}")));
    let cases = field("cases")?
        .as_array()
        .ok_or_else(|| Error::contract("cases must be an array"))?
        .iter()
        .map(|c| {
            Ok(CaseMetrics {
                case_id: c["case_id"].as_str().unwrap_or_default().to_string(),
                domain: c["domain"].as_str().unwrap_or_default().to_string(),
                ssim: read_number(&c["ssim"])?,
                psnr: read_number(&c["psnr"])?,
                dice: read_number(&c["dice"])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let a = field("aggregate")?;
    Ok(EvalReport {
        method: field("method")?.as_str().unwrap_or_default().to_string(),
        seed: field("seed")?.as_u64().unwrap_or_default(),
        config_hash: field("config_hash")?.as_str().unwrap_or_default().to_string(),
        cases,
        aggregate: Aggregates { ssim: read_stat(&a["ssim"])?, psnr: read_stat(&a["psnr"])?, dice: read_stat(&a["dice"])? },
    })
}

/// `summary.json`: one entry per method plus free-form extras.
pub fn summary_bytes(reports: &[&EvalReport], extra: Map<String, Value>) -> Vec<u8> {
    let mut root = Map::new();
    root.insert("reports".into(), Value::Array(reports.iter().map(|r| report_json(r)).collect()));
    for (k, v) in extra {
        root.insert(k, v);
    }
    let mut bytes = serde_json::to_vec_pretty(&Value::Object(root)).expect("summary serializes");
    bytes.push(b'\n');
    bytes
}

pub fn read_summary(path: &Path) -> Result<Vec<EvalReport>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.into(), source })?;
    v["reports"]
        .as_array()
        .ok_or_else(|| Error::contract(format!("{}: no reports array", path.display())))?
        .iter()
        .map(read_report_json)
        .collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
