//! File formats: wide dataset CSVs, permutation files and estimate tables.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::design::{DesignSchedule, MeasurementSeries};
use crate::error::{Error, Result};
use crate::estimators::VarianceEstimate;
use crate::permutation::PermutationSpec;

/// A schedule plus zero or more response series sharing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub design: DesignSchedule,
    pub series: Vec<MeasurementSeries>,
}

/// Shortest-free decimal form with 17 significant digits; parses back bit-exactly.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "NA".to_string()
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads a CSV with columns `t, stimulus, block, series...`. The `block` column is
/// optional; without it the design has no blocks. Rows may appear in any order but
/// `t` must run over `1..=T` exactly once. Lines starting with `#` are skipped.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 || header[0] != "t" || header[1] != "stimulus" {
        return Err(parse_err(1, "header must start with `t,stimulus`"));
    }
    let has_blocks = header.get(2).is_some_and(|h| h == "block");
    let first_series = if has_blocks { 3 } else { 2 };
    let names = header[first_series..].to_vec();

    let mut rows: Vec<(usize, usize, String, Option<String>, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let t: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad time index {:?}", &rec[0])))?;
        let values = (first_series..rec.len())
            .map(|i| {
                let v: f64 = rec[i].parse().map_err(|_| {
                    parse_err(line, format!("bad value {:?} in column {}", &rec[i], header[i]))
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(line, format!("non-finite value in column {}", header[i])))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let block = has_blocks.then(|| rec[2].to_string());
        rows.push((line, t, rec[1].to_string(), block, values));
    }
    if rows.is_empty() {
        return Err(Error::EmptySchedule);
    }
    let big_t = rows.len();
    let mut seen = vec![false; big_t];
    for (line, t, ..) in &rows {
        if *t == 0 || *t > big_t {
            return Err(parse_err(*line, format!("time index {t} outside 1..={big_t}")));
        }
        if std::mem::replace(&mut seen[t - 1], true) {
            return Err(parse_err(*line, format!("duplicate time index {t}")));
        }
    }
    rows.sort_by_key(|r| r.1);

    let stimuli: Vec<&str> = rows.iter().map(|r| r.2.as_str()).collect();
    let blocks: Option<Vec<&str>> = has_blocks.then(|| {
        rows.iter()
            .map(|r| r.3.as_deref().unwrap_or_default())
            .collect()
    });
    let design = DesignSchedule::build(&stimuli, blocks.as_deref())?;
    let series = names
        .iter()
        .enumerate()
        .map(|(k, name)| MeasurementSeries::new(name.clone(), rows.iter().map(|r| r.4[k]).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { design, series })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?)
}

pub fn write_dataset<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let d = &ds.design;
    for s in &ds.series {
        if s.len() != d.len() {
            return Err(Error::LengthMismatch {
                expected: d.len(),
                actual: s.len(),
            });
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "stimulus".to_string()];
    if d.has_blocks() {
        header.push("block".into());
    }
    header.extend(ds.series.iter().map(|s| s.id.clone()));
    w.write_record(&header)?;
    let stim_labels = d.stimulus_labels();
    for t in 0..d.len() {
        let mut rec = vec![(t + 1).to_string(), stim_labels[d.stimulus_of()[t]].clone()];
        if let (Some(labels), Some(block_of)) = (d.block_labels(), d.block_of()) {
            rec.push(labels[block_of[t]].clone());
        }
        rec.extend(ds.series.iter().map(|s| format_f64(s.values[t])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a permutation as one 1-based source index per line; blank lines and `#`
/// comments are ignored.
pub fn read_permutation<R: Read>(input: R) -> Result<PermutationSpec> {
    let mut targets = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let text = line.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let v: usize = text
            .parse()
            .map_err(|_| parse_err(i + 1, format!("bad permutation entry {text:?}")))?;
        targets.push(v);
    }
    PermutationSpec::from_one_based(&targets)
}

pub fn load_permutation(path: &Path) -> Result<PermutationSpec> {
    read_permutation(std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?)
}

pub fn write_permutation<W: Write>(p: &PermutationSpec, mut out: W) -> Result<()> {
    for v in p.one_based() {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

pub const ESTIMATE_HEADER: [&str; 9] = [
    "series_id",
    "method",
    "alpha",
    "sigma2_A_raw",
    "sigma2_A",
    "noise_level",
    "ms_between",
    "omega2",
    "flags",
];

/// One output line: an estimate, or the reason this series/method pair failed.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub series_id: String,
    pub method: String,
    pub outcome: std::result::Result<VarianceEstimate, String>,
}

/// Writes `# `-prefixed preamble lines, then the estimate table.
pub fn write_estimates<W: Write>(rows: &[EstimateRow], preamble: &[String], mut out: W) -> Result<()> {
    for line in preamble {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATE_HEADER)?;
    for row in rows {
        let rec = match &row.outcome {
            Ok(e) => [
                row.series_id.clone(),
                row.method.clone(),
                e.alpha.map_or_else(|| "NA".into(), format_f64),
                format_f64(e.sigma2_a_raw),
                format_f64(e.sigma2_a),
                format_f64(e.noise_level),
                format_f64(e.total),
                format_f64(e.omega2),
                e.flags.labels(),
            ],
            Err(reason) => {
                let mut rec: [String; 9] = Default::default();
                rec[0] = row.series_id.clone();
                rec[1] = row.method.clone();
                rec[2..8].iter_mut().for_each(|f| *f = "NA".into());
                rec[8] = format!("error:{reason}");
                rec
            }
        };
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
