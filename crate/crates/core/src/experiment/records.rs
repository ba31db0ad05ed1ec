//! `results.csv`: one row per measured quantity.
//!
//! Header `run_id,metric,layer,time,epsilon,width,value,tag`. Absent indices
//! are empty fields; layers are 1-based; floats use 17 significant digits so
//! every value round-trips exactly.

use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::fmt17;

pub const HEADER: [&str; 8] = ["run_id", "metric", "layer", "time", "epsilon", "width", "value", "tag"];

/// What kind of number a record holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Measured,
    Bound,
    Diagnostic,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Measured => "measured",
            Tag::Bound => "bound",
            Tag::Diagnostic => "diagnostic",
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "measured" => Ok(Tag::Measured),
            "bound" => Ok(Tag::Bound),
            "diagnostic" => Ok(Tag::Diagnostic),
            _ => Err(Error::Format {
                what: "results tag",
                message: format!("unknown tag {s:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    /// `<name>-<config hash prefix>`
    pub run_id: String,
    pub metric: String,
    /// 1-based layer.
    pub layer: Option<usize>,
    pub time: Option<f64>,
    pub epsilon: Option<f64>,
    pub width: Option<usize>,
    pub value: f64,
    pub tag: Tag,
}

impl ResultRecord {
    pub fn new(run_id: &str, metric: &str, value: f64, tag: Tag) -> Self {
        ResultRecord {
            run_id: run_id.to_string(),
            metric: metric.to_string(),
            layer: None,
            time: None,
            epsilon: None,
            width: None,
            value,
            tag,
        }
    }

    /// Stores the 0-based layer `l` as `l + 1`.
    pub fn layer(mut self, l: usize) -> Self {
        self.layer = Some(l + 1);
        self
    }

    pub fn time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    pub fn epsilon(mut self, e: f64) -> Self {
        self.epsilon = Some(e);
        self
    }

    pub fn width(mut self, w: usize) -> Self {
        self.width = Some(w);
        self
    }

    fn fields(&self) -> [String; 8] {
        [
            self.run_id.clone(),
            self.metric.clone(),
            self.layer.map(|v| v.to_string()).unwrap_or_default(),
            self.time.map(fmt17).unwrap_or_default(),
            self.epsilon.map(fmt17).unwrap_or_default(),
            self.width.map(|v| v.to_string()).unwrap_or_default(),
            fmt17(self.value),
            self.tag.as_str().to_string(),
        ]
    }
}

/// Writes the header and all records; every float must be finite.
pub fn write_results<W: Write>(out: W, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::Format {
        what: "results csv",
        message: e.to_string(),
    };
    w.write_record(HEADER).map_err(fail)?;
    for r in records {
        let finite = r.value.is_finite() && r.time.is_none_or(f64::is_finite) && r.epsilon.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::Numerical(format!(
                "non-finite value in record {} ({})",
                r.metric, r.run_id
            )));
        }
        w.write_record(r.fields()).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::Format {
        what: "results csv",
        message: e.to_string(),
    })
}

pub fn results_to_string(records: &[ResultRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_results(&mut buf, records)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn bad(message: String) -> Error {
    Error::Format {
        what: "results csv",
        message,
    }
}

fn opt<T: FromStr>(s: &str, field: &str, row: usize) -> Result<Option<T>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| bad(format!("row {row}: cannot parse {field} from {s:?}")))
}

fn finite(v: Option<f64>, field: &str, row: usize) -> Result<Option<f64>> {
    match v {
        Some(x) if !x.is_finite() => Err(bad(format!("row {row}: {field} is not finite"))),
        _ => Ok(v),
    }
}

/// Parses `results.csv` text, checking the header and every field.
pub fn parse_results(text: &str) -> Result<Vec<ResultRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(bad(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != HEADER.len() {
            return Err(bad(format!("row {row}: expected 8 fields, got {}", rec.len())));
        }
        let value: f64 = opt(&rec[6], "value", row)?.ok_or_else(|| bad(format!("row {row}: missing value")))?;
        let layer: Option<usize> = opt(&rec[2], "layer", row)?;
        if layer == Some(0) {
            return Err(bad(format!("row {row}: layers are 1-based")));
        }
        out.push(ResultRecord {
            run_id: rec[0].to_string(),
            metric: rec[1].to_string(),
            layer,
            time: finite(opt(&rec[3], "time", row)?, "time", row)?,
            epsilon: finite(opt(&rec[4], "epsilon", row)?, "epsilon", row)?,
            width: opt(&rec[5], "width", row)?,
            value: finite(Some(value), "value", row)?.unwrap(),
            tag: rec[7].parse()?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<ResultRecord> {
        vec![
            ResultRecord::new("run-abc", "w1", 0.1 + 0.2, Tag::Measured)
                .layer(0)
                .time(0.25)
                .epsilon(1.0 / 3.0),
            ResultRecord::new("run-abc", "velocity, max row", -0.0, Tag::Diagnostic).width(32),
            ResultRecord::new("run-abc", "bound", 2.0, Tag::Bound),
        ]
    }

    #[test]
    fn round_trip_is_exact() {
        let recs = sample();
        let text = results_to_string(&recs).unwrap();
        assert!(text.starts_with("run_id,metric,layer,time,epsilon,width,value,tag\n"));
        let back = parse_results(&text).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].value.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(back[0].epsilon.unwrap().to_bits(), (1.0f64 / 3.0).to_bits());
        assert_eq!(back[0].layer, Some(1));
        assert_eq!(back[1].metric, "velocity, max row");
        assert_eq!(results_to_string(&back).unwrap(), text);
    }

    #[test]
    fn non_finite_values_are_refused() {
        let r = ResultRecord::new("x", "m", f64::NAN, Tag::Measured);
        assert!(matches!(results_to_string(&[r]), Err(Error::Numerical(_))));
    }

    #[test]
    fn malformed_input_is_an_error() {
        assert!(parse_results("").is_err());
        assert!(parse_results("a,b\n").is_err());
        let head = HEADER.join(",");
        assert!(parse_results(&format!("{head}\nr,m,,,,,1.0,other\n")).is_err());
        assert!(parse_results(&format!("{head}\nr,m,0,,,,1.0,bound\n")).is_err());
        assert!(parse_results(&format!("{head}\nr,m,,,,,inf,bound\n")).is_err());
        assert!(parse_results(&format!("{head}\nr,m,,,,,,bound\n")).is_err());
        assert!(parse_results(&format!("{head}\nr,m,,,\n")).is_err());
        assert_eq!(parse_results(&format!("{head}\n")).unwrap().len(), 0);
    }
}
