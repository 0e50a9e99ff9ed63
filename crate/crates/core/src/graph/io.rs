//! Readers and writers for the accounts / edges / labels record files.
//!
//! CSV files carry a header row and are matched by column name. JSONL files
//! hold one object per line with the same keys; numeric fields may be JSON
//! numbers or decimal strings (wei amounts routinely exceed 2^53).

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde_json::Value;

use super::{
    AccountId, AccountKind, BuildOptions, BuildReport, EdgeType, GraphError, HetGraph,
    InteractionEdge, Label, LabelSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecordFormat {
    #[default]
    Csv,
    Jsonl,
}

impl RecordFormat {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.to_ascii_lowercase().as_str() {
            "csv" => Some(RecordFormat::Csv),
            "jsonl" | "ndjson" => Some(RecordFormat::Jsonl),
            _ => None,
        }
    }

    /// Guesses from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("ndjson") => {
                RecordFormat::Jsonl
            }
            _ => RecordFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Skip malformed rows (collecting their errors) instead of failing.
    pub lenient: bool,
}

/// Rows read from one file, with the errors of skipped rows in lenient mode.
#[derive(Debug)]
pub struct Parsed<T> {
    pub rows: Vec<T>,
    pub skipped: Vec<GraphError>,
}

impl<T> Default for Parsed<T> {
    fn default() -> Self {
        Parsed {
            rows: Vec::new(),
            skipped: Vec::new(),
        }
    }
}

impl<T> Parsed<T> {
    pub fn total_rows(&self) -> usize {
        self.rows.len() + self.skipped.len()
    }
}

/// A generic row: named string fields plus the source line number.
struct RawRow {
    line: u64,
    fields: Vec<(String, Option<String>)>,
}

impl RawRow {
    fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .and_then(|(_, v)| v.as_deref())
            .filter(|v| !v.trim().is_empty())
    }

    fn require(&self, key: &str) -> Result<&str, GraphError> {
        self.get(key).ok_or_else(|| GraphError::MalformedRow {
            line: self.line,
            reason: format!("missing field `{key}`"),
        })
    }
}

fn read_rows<R: Read>(
    reader: R,
    format: RecordFormat,
    required: &[&str],
) -> Result<Vec<Result<RawRow, GraphError>>, GraphError> {
    match format {
        RecordFormat::Csv => read_csv_rows(reader, required),
        RecordFormat::Jsonl => read_jsonl_rows(reader),
    }
}

fn read_csv_rows<R: Read>(
    reader: R,
    required: &[&str],
) -> Result<Vec<Result<RawRow, GraphError>>, GraphError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(rec) => rec.map_err(|e| csv_error(e, 1))?,
    };
    let columns: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    for key in required {
        if !columns.iter().any(|c| c == key) {
            return Err(GraphError::MalformedRow {
                line: 1,
                reason: format!("header lacks column `{key}`"),
            });
        }
    }
    let mut out = Vec::new();
    for rec in records {
        let row = rec.map_err(|e| csv_error(e, 0)).and_then(|rec| {
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != columns.len() {
                return Err(GraphError::MalformedRow {
                    line,
                    reason: format!("expected {} fields, found {}", columns.len(), rec.len()),
                });
            }
            Ok(RawRow {
                line,
                fields: columns
                    .iter()
                    .cloned()
                    .zip(rec.iter().map(|s| Some(s.to_string())))
                    .collect(),
            })
        });
        out.push(row);
    }
    Ok(out)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> GraphError {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GraphError::Io(io),
        other => GraphError::MalformedRow {
            line,
            reason: format!("{other:?}"),
        },
    }
}

fn read_jsonl_rows<R: Read>(reader: R) -> Result<Vec<Result<RawRow, GraphError>>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i as u64 + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let row = match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(map)) => Ok(RawRow {
                line: line_no,
                fields: map
                    .into_iter()
                    .map(|(k, v)| (k.to_ascii_lowercase(), json_scalar(&v)))
                    .collect(),
            }),
            Ok(_) => Err(GraphError::MalformedRow {
                line: line_no,
                reason: "expected a JSON object".into(),
            }),
            Err(e) => Err(GraphError::MalformedRow {
                line: line_no,
                reason: e.to_string(),
            }),
        };
        out.push(row);
    }
    Ok(out)
}

fn json_scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        other => Some(other.to_string()),
    }
}

fn collect<T>(
    rows: Vec<Result<RawRow, GraphError>>,
    opts: ParseOptions,
    mut convert: impl FnMut(&RawRow) -> Result<T, GraphError>,
) -> Result<Parsed<T>, GraphError> {
    let mut parsed = Parsed {
        rows: Vec::with_capacity(rows.len()),
        skipped: Vec::new(),
    };
    for row in rows {
        match row.and_then(|r| convert(&r)) {
            Ok(value) => parsed.rows.push(value),
            Err(e @ GraphError::Io(_)) => return Err(e),
            Err(e) if opts.lenient => parsed.skipped.push(e),
            Err(e) => return Err(e),
        }
    }
    Ok(parsed)
}

fn parse_id(row: &RawRow, key: &str) -> Result<AccountId, GraphError> {
    AccountId::new(row.require(key)?).map_err(|_| GraphError::MalformedRow {
        line: row.line,
        reason: format!("empty `{key}`"),
    })
}

fn parse_amount(row: &RawRow, raw: &str) -> Result<u128, GraphError> {
    let raw = raw.trim();
    if raw.starts_with('-') {
        return Err(GraphError::NegativeAmount {
            line: row.line,
            value: raw.to_string(),
        });
    }
    raw.parse::<u128>().map_err(|_| GraphError::MalformedRow {
        line: row.line,
        reason: format!("amount `{raw}` is not a base-10 integer"),
    })
}

fn parse_timestamp(row: &RawRow, raw: &str) -> Result<u64, GraphError> {
    raw.trim().parse::<u64>().map_err(|_| GraphError::MalformedRow {
        line: row.line,
        reason: format!("timestamp `{raw}` is not a non-negative integer"),
    })
}

pub fn parse_accounts<R: Read>(
    reader: R,
    format: RecordFormat,
    opts: ParseOptions,
) -> Result<Parsed<(AccountId, AccountKind)>, GraphError> {
    let rows = read_rows(reader, format, &["address", "kind"])?;
    collect(rows, opts, |row| {
        let id = parse_id(row, "address")?;
        let raw = row.require("kind")?;
        let kind = AccountKind::parse(raw).ok_or_else(|| GraphError::MalformedRow {
            line: row.line,
            reason: format!("unknown account kind `{raw}`"),
        })?;
        Ok((id, kind))
    })
}

pub fn parse_edges<R: Read>(
    reader: R,
    format: RecordFormat,
    opts: ParseOptions,
) -> Result<Parsed<InteractionEdge>, GraphError> {
    let rows = read_rows(reader, format, &["src", "dst", "etype", "amount", "timestamp"])?;
    collect(rows, opts, |row| {
        let src = parse_id(row, "src")?;
        let dst = parse_id(row, "dst")?;
        let raw_type = row.require("etype")?;
        let etype = EdgeType::parse(raw_type).ok_or_else(|| GraphError::UnknownEdgeType {
            line: row.line,
            value: raw_type.to_string(),
        })?;
        let amount = match (etype, row.get("amount")) {
            (_, Some(raw)) => parse_amount(row, raw)?,
            (EdgeType::Call, None) => 0,
            (EdgeType::Trans, None) => {
                return Err(GraphError::MalformedRow {
                    line: row.line,
                    reason: "transaction edges require an amount".into(),
                })
            }
        };
        let timestamp = match (etype, row.get("timestamp")) {
            (_, Some(raw)) => parse_timestamp(row, raw)?,
            (EdgeType::Call, None) => 0,
            (EdgeType::Trans, None) => {
                return Err(GraphError::MalformedRow {
                    line: row.line,
                    reason: "transaction edges require a timestamp".into(),
                })
            }
        };
        Ok(InteractionEdge {
            src,
            dst,
            etype,
            amount,
            timestamp,
        })
    })
}

pub fn parse_labels<R: Read>(
    reader: R,
    format: RecordFormat,
    opts: ParseOptions,
) -> Result<Parsed<(AccountId, Label)>, GraphError> {
    let rows = read_rows(reader, format, &["address", "label"])?;
    collect(rows, opts, |row| {
        let id = parse_id(row, "address")?;
        let raw = row.require("label")?;
        let label = Label::parse(raw).ok_or_else(|| GraphError::MalformedRow {
            line: row.line,
            reason: format!("unknown label `{raw}`"),
        })?;
        Ok((id, label))
    })
}

fn labels_from_rows(rows: Vec<(AccountId, Label)>) -> Result<LabelSet, GraphError> {
    let mut labels = LabelSet::new();
    for (id, label) in rows {
        labels.insert(id, label)?;
    }
    Ok(labels)
}

/// Paths of one dataset on disk.
#[derive(Debug, Clone)]
pub struct DatasetPaths<'a> {
    pub accounts: &'a Path,
    pub edges: &'a Path,
    pub labels: Option<&'a Path>,
}

/// Row counts and skipped rows from loading a dataset.
#[derive(Debug, Default, serde::Serialize)]
pub struct IngestReport {
    pub account_rows: usize,
    pub edge_rows: usize,
    pub label_rows: usize,
    pub skipped_rows: usize,
    #[serde(skip)]
    pub skipped: Vec<GraphError>,
    pub build: BuildReport,
}

fn open(path: &Path) -> Result<File, GraphError> {
    File::open(path).map_err(|e| {
        GraphError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Reads all three files and builds the heterogeneous graph.
pub fn load_dataset(
    paths: &DatasetPaths<'_>,
    format: Option<RecordFormat>,
    parse: ParseOptions,
    build: BuildOptions,
) -> Result<(HetGraph, IngestReport), GraphError> {
    let fmt = |p: &Path| format.unwrap_or_else(|| RecordFormat::from_path(p));
    let accounts = parse_accounts(open(paths.accounts)?, fmt(paths.accounts), parse)?;
    let edges = parse_edges(open(paths.edges)?, fmt(paths.edges), parse)?;
    let labels = match paths.labels {
        Some(p) => parse_labels(open(p)?, fmt(p), parse)?,
        None => Parsed::default(),
    };
    let mut report = IngestReport {
        account_rows: accounts.total_rows(),
        edge_rows: edges.total_rows(),
        label_rows: labels.total_rows(),
        ..Default::default()
    };
    report.skipped.extend(accounts.skipped);
    report.skipped.extend(edges.skipped);
    report.skipped.extend(labels.skipped);
    report.skipped_rows = report.skipped.len();
    let label_set = labels_from_rows(labels.rows)?;
    let (graph, build_report) = super::build_het_graph(accounts.rows, edges.rows, label_set, build)?;
    report.build = build_report;
    Ok((graph, report))
}

pub fn write_accounts_csv<'a, W: Write>(
    w: W,
    accounts: impl Iterator<Item = (&'a AccountId, AccountKind)>,
) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["address", "kind"])?;
    for (id, kind) in accounts {
        out.write_record([id.as_str(), kind.as_str()])?;
    }
    out.flush()
}

pub fn write_edges_csv<W: Write>(w: W, edges: impl Iterator<Item = InteractionEdge>) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["src", "dst", "etype", "amount", "timestamp"])?;
    for e in edges {
        out.write_record([
            e.src.as_str(),
            e.dst.as_str(),
            e.etype.as_str(),
            &e.amount.to_string(),
            &e.timestamp.to_string(),
        ])?;
    }
    out.flush()
}

pub fn write_labels_csv<'a, W: Write>(
    w: W,
    labels: impl Iterator<Item = (&'a AccountId, Label)>,
) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["address", "label"])?;
    for (id, label) in labels {
        out.write_record([id.as_str(), label.as_str()])?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LENIENT: ParseOptions = ParseOptions { lenient: true };
    const STRICT: ParseOptions = ParseOptions { lenient: false };

    #[test]
    fn single_account_and_trans_edge() {
        let accounts = parse_accounts("address,kind\n0xA,EOA\n".as_bytes(), RecordFormat::Csv, STRICT).unwrap();
        assert_eq!(accounts.rows, vec![(AccountId::from("0xa"), AccountKind::Eoa)]);

        let edges = parse_edges(
            "src,dst,etype,amount,timestamp\n0xA,0xB,trans,100,1609459200\n".as_bytes(),
            RecordFormat::Csv,
            STRICT,
        )
        .unwrap();
        assert_eq!(edges.rows, vec![InteractionEdge::trans("0xa", "0xb", 100, 1_609_459_200)]);
    }

    #[test]
    fn empty_streams_parse_to_nothing() {
        for fmt in [RecordFormat::Csv, RecordFormat::Jsonl] {
            assert!(parse_edges("".as_bytes(), fmt, STRICT).unwrap().rows.is_empty());
            assert!(parse_accounts("".as_bytes(), fmt, STRICT).unwrap().rows.is_empty());
            assert!(parse_labels("".as_bytes(), fmt, STRICT).unwrap().rows.is_empty());
        }
    }

    #[test]
    fn unknown_edge_type_reports_line() {
        let text = "src,dst,etype,amount,timestamp\na,b,trans,1,1\na,b,xfer,1,1\n";
        let err = parse_edges(text.as_bytes(), RecordFormat::Csv, STRICT).unwrap_err();
        assert!(matches!(err, GraphError::UnknownEdgeType { line: 3, ref value } if value == "xfer"));
    }

    #[test]
    fn negative_amount_rejected() {
        let text = "src,dst,etype,amount,timestamp\na,b,trans,-5,1\n";
        let err = parse_edges(text.as_bytes(), RecordFormat::Csv, STRICT).unwrap_err();
        assert!(matches!(err, GraphError::NegativeAmount { line: 2, .. }));
    }

    #[test]
    fn lenient_mode_skips_and_collects() {
        let text = "src,dst,etype,amount,timestamp\na,b,trans,1,1\na,b,xfer,1,1\na,b\nb,c,call,,\n";
        let parsed = parse_edges(text.as_bytes(), RecordFormat::Csv, LENIENT).unwrap();
        assert_eq!(parsed.rows.len(), 2);
        assert_eq!(parsed.skipped.len(), 2);
        assert_eq!(parsed.skipped[0].line(), Some(3));
        assert_eq!(parsed.skipped[1].line(), Some(4));
        assert_eq!(parsed.rows[1], InteractionEdge::call("b", "c", 0));
    }

    #[test]
    fn trans_requires_timestamp() {
        let text = "src,dst,etype,amount,timestamp\na,b,trans,1,\n";
        assert!(matches!(
            parse_edges(text.as_bytes(), RecordFormat::Csv, STRICT),
            Err(GraphError::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn header_is_required() {
        let text = "a,b,trans,1,1\n";
        assert!(matches!(
            parse_edges(text.as_bytes(), RecordFormat::Csv, STRICT),
            Err(GraphError::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn jsonl_accepts_numbers_and_big_strings() {
        let text = concat!(
            r#"{"src":"0xA","dst":"0xB","etype":"trans","amount":"340282366920938463463374607431768211455","timestamp":5}"#,
            "\n\n",
            r#"{"src":"0xB","dst":"0xC","etype":"call","timestamp":9}"#,
            "\n"
        );
        let parsed = parse_edges(text.as_bytes(), RecordFormat::Jsonl, STRICT).unwrap();
        assert_eq!(parsed.rows[0].amount, u128::MAX);
        assert_eq!(parsed.rows[1], InteractionEdge::call("0xb", "0xc", 9));

        let bad = r#"{"src":"a","dst":"b","etype":"trans","amount":-3,"timestamp":1}"#;
        assert!(matches!(
            parse_edges(bad.as_bytes(), RecordFormat::Jsonl, STRICT),
            Err(GraphError::NegativeAmount { line: 1, .. })
        ));
    }

    #[test]
    fn labels_parse_case_insensitively() {
        let text = "address,label\n0xAB,Ponzi\n0xcd,nonponzi\n";
        let parsed = parse_labels(text.as_bytes(), RecordFormat::Csv, STRICT).unwrap();
        assert_eq!(parsed.rows[0], (AccountId::from("0xab"), Label::Ponzi));
        assert_eq!(parsed.rows[1].1, Label::NonPonzi);
    }
}
