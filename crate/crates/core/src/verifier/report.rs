//! Report types shared by all experiments, with JSON and CSV forms.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sample of a series. Non-finite values are stored as `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub parameter: f64,
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<f64>,
}

impl Point {
    pub fn new(parameter: f64, value: f64) -> Self {
        Self { parameter, value: finite(value), fitted: None, predicted: None }
    }

    pub fn with_fit(mut self, fitted: f64, predicted: f64) -> Self {
        self.fitted = finite(fitted);
        self.predicted = finite(predicted);
        self
    }
}

pub(crate) fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    /// What the `parameter` column holds (`t`, `lambda`, `m`, ...).
    pub parameter: String,
    pub points: Vec<Point>,
}

impl Series {
    pub fn new(name: impl Into<String>, parameter: impl Into<String>) -> Self {
        Self { name: name.into(), parameter: parameter.into(), points: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub experiment: String,
    pub inputs: BTreeMap<String, serde_json::Value>,
    pub series: Vec<Series>,
    /// Fitted or estimated quantities (finite values only).
    pub fitted: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_unix: Option<u64>,
}

impl VerificationReport {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            inputs: BTreeMap::new(),
            series: Vec::new(),
            fitted: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            pass: false,
            notes: Vec::new(),
            generated_unix: None,
        }
    }

    pub fn input(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.inputs.insert(key.to_string(), v);
    }

    pub fn fit(&mut self, key: &str, value: f64) {
        if value.is_finite() {
            self.fitted.insert(key.to_string(), value);
        }
    }

    pub fn tolerance(&mut self, key: &str, value: f64) {
        self.tolerances.insert(key.to_string(), value);
    }

    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    /// Merges another report's series, fits and notes under a name prefix; the
    /// combined pass flag is the conjunction.
    pub fn absorb(&mut self, prefix: &str, other: VerificationReport) {
        for mut s in other.series {
            s.name = format!("{prefix}/{}", s.name);
            self.series.push(s);
        }
        for (k, v) in other.fitted {
            self.fitted.insert(format!("{prefix}/{k}"), v);
        }
        for (k, v) in other.tolerances {
            self.tolerances.entry(k).or_insert(v);
        }
        self.notes.extend(other.notes.into_iter().map(|n| format!("{prefix}: {n}")));
        self.pass = self.pass && other.pass;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat CSV with columns `experiment, parameter, value, fitted, predicted,
    /// pass`; `experiment` holds `name:series`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.series {
            for p in &s.points {
                w.serialize(CsvRow {
                    experiment: format!("{}:{}", self.experiment, s.name),
                    parameter: p.parameter,
                    value: p.value,
                    fitted: p.fitted,
                    predicted: p.predicted,
                    pass: self.pass,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    /// Rebuilds the experiment name, series and pass flag from CSV rows.
    /// Series parameter labels, fits and inputs are not part of the CSV form.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let mut report: Option<VerificationReport> = None;
        for row in rd.deserialize::<CsvRow>() {
            let row = row?;
            let (exp, series) = row
                .experiment
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("malformed experiment column '{}'", row.experiment)))?;
            let rep = report.get_or_insert_with(|| {
                let mut r = VerificationReport::new(exp);
                r.pass = row.pass;
                r
            });
            if rep.experiment != exp {
                return Err(Error::InvalidArgument(format!("mixed experiments '{}' and '{exp}'", rep.experiment)));
            }
            if rep.series.last().map(|s| s.name.as_str()) != Some(series) {
                rep.series.push(Series::new(series, ""));
            }
            rep.series.last_mut().expect("just pushed").points.push(Point {
                parameter: row.parameter,
                value: row.value,
                fitted: row.fitted,
                predicted: row.predicted,
            });
        }
        report.ok_or_else(|| Error::InvalidArgument("empty report CSV".into()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    experiment: String,
    parameter: f64,
    value: Option<f64>,
    fitted: Option<f64>,
    predicted: Option<f64>,
    pass: bool,
}
