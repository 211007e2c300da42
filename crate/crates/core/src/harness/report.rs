//! CSV tables built from saved JSON run or size reports.

use serde_json::Value;
use thiserror::Error;

use crate::program::size::SIZE_CSV_HEADER;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0}: not a run or size report")]
    UnknownSchema(String),
    #[error("cannot mix {0} and {1} reports")]
    MixedSchema(&'static str, &'static str),
    #[error("cannot mix reports with and without timing ({0})")]
    MixedTiming(String),
    #[error("{0}: missing field `{1}`")]
    MissingField(String, String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub const RUN_CSV_HEADER: [&str; 19] = [
    "program",
    "enable_zicfiss",
    "enable_zicfilp",
    "exit",
    "exit_code",
    "retired",
    "cfi_retired",
    "cfi_fraction",
    "lpad",
    "sspush",
    "sspopchk",
    "ssrdp",
    "ssamoswap",
    "total_cycles",
    "cfi_cycles",
    "cycle_overhead_pct",
    "text_bytes",
    "cfi_bytes",
    "size_overhead_pct",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Schema {
    Run,
    Size,
}

impl Schema {
    fn name(self) -> &'static str {
        match self {
            Schema::Run => "run",
            Schema::Size => "size",
        }
    }
}

fn schema_of(source: &str, v: &Value) -> Result<Schema, ReportError> {
    match v.get("report").and_then(Value::as_str) {
        Some("run") => Ok(Schema::Run),
        Some("size") => Ok(Schema::Size),
        _ => Err(ReportError::UnknownSchema(source.to_string())),
    }
}

fn field<'a>(source: &str, v: &'a Value, path: &str) -> Result<&'a Value, ReportError> {
    path.split('.')
        .try_fold(v, |cur, key| cur.get(key))
        .ok_or_else(|| ReportError::MissingField(source.to_string(), path.to_string()))
}

fn cell(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) if n.is_f64() => format!("{:.6}", n.as_f64().unwrap_or(0.0)),
        Some(other) => other.to_string(),
    }
}

fn run_row(source: &str, v: &Value) -> Result<Vec<String>, ReportError> {
    let get = |p: &str| field(source, v, p).map(Some);
    let opt = |p: &str| field(source, v, p).ok();
    let tags = field(source, v, "by_cfi_tag")?;
    let tag = |t: &str| tags.get(t).and_then(Value::as_u64).unwrap_or(0);
    Ok(vec![
        cell(get("program")?),
        cell(get("config.enable_zicfiss")?),
        cell(get("config.enable_zicfilp")?),
        cell(get("exit.kind")?),
        cell(opt("exit.code")),
        cell(get("retired")?),
        cell(get("cfi_retired")?),
        cell(get("cfi_fraction")?),
        tag("lpad").to_string(),
        tag("sspush").to_string(),
        tag("sspopchk").to_string(),
        tag("ssrdp").to_string(),
        (tag("ssamoswap_w") + tag("ssamoswap_d")).to_string(),
        cell(opt("cycles.total_cycles")),
        cell(opt("cycles.cfi_cycles")),
        cell(opt("cycles.overhead_pct")),
        cell(opt("size.total_text_bytes")),
        cell(opt("size.cfi_bytes")),
        cell(opt("size.overhead_pct")),
    ])
}

fn size_row(source: &str, v: &Value) -> Result<Vec<String>, ReportError> {
    SIZE_CSV_HEADER
        .iter()
        .map(|col| match *col {
            "overhead_pct" | "delta_bytes" => Ok(cell(field(source, v, col).ok())),
            _ => field(source, v, col).map(|x| cell(Some(x))),
        })
        .collect()
}

fn has_timing(v: &Value) -> bool {
    v.get("cycles").is_some_and(|c| !c.is_null())
}

/// One CSV table from `(source name, report JSON)` pairs. Rows are sorted so
/// the output does not depend on input order. An empty input yields the run
/// header alone.
pub fn reports_to_csv(inputs: &[(String, Value)]) -> Result<String, ReportError> {
    let mut schema = None;
    let mut timing: Option<(bool, &str)> = None;
    let mut rows = Vec::with_capacity(inputs.len());
    for (source, v) in inputs {
        let s = schema_of(source, v)?;
        match schema {
            None => schema = Some(s),
            Some(prev) if prev != s => return Err(ReportError::MixedSchema(prev.name(), s.name())),
            _ => {}
        }
        if s == Schema::Run {
            let t = has_timing(v);
            match timing {
                None => timing = Some((t, source)),
                Some((prev, first)) if prev != t => {
                    return Err(ReportError::MixedTiming(format!("{first} vs {source}")))
                }
                _ => {}
            }
            rows.push(run_row(source, v)?);
        } else {
            rows.push(size_row(source, v)?);
        }
    }
    rows.sort();
    let header: &[&str] = match schema {
        Some(Schema::Size) => &SIZE_CSV_HEADER,
        _ => &RUN_CSV_HEADER,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
