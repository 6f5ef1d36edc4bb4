//! CSV formats.
//!
//! Every file starts with `#`-prefixed metadata lines followed by a header
//! row. Statistics files have columns `x,y,probability` where `x` is Alice's
//! outcome (`H`, `V`, `D`, `A`) and `y` Bob's outcome label; rows with zero
//! probability may be omitted. A `# scheme=<active|passive>` line fixes the
//! alphabet; without it the scheme is inferred from the labels.

use std::io::{Read, Write};

use evmix_core::detectors::{DetectorModel, Scheme};
use evmix_core::evm::{AliceOutcome, ObservedStatistics};
use evmix_core::photon_bounds::PhotonBoundTable;
use evmix_core::povm::Outcome;

use crate::error::AppError;

pub const TOOL: &str = concat!("evmix ", env!("CARGO_PKG_VERSION"));

/// Ordered `key=value` metadata written as comment lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metadata(pub Vec<(String, String)>);

impl Metadata {
    pub fn new() -> Self {
        Metadata(vec![("tool".into(), TOOL.into())])
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (k, v) in &self.0 {
            writeln!(w, "# {k}={v}")?;
        }
        Ok(())
    }

    /// Split leading comment lines off `text`.
    pub fn split(text: &str) -> (Metadata, &str) {
        let mut meta = Vec::new();
        let mut rest = text;
        while let Some(line) = rest.lines().next() {
            let Some(body) = line.strip_prefix('#') else { break };
            if let Some((k, v)) = body.trim().split_once('=') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
            rest = &rest[line.len()..];
            rest = rest.strip_prefix("\r\n").or_else(|| rest.strip_prefix('\n')).unwrap_or(rest);
        }
        (Metadata(meta), rest)
    }
}

pub fn model_string(m: &DetectorModel) -> String {
    let rows: Vec<String> = m
        .rows()
        .iter()
        .map(|r| format!("[{}]", r.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")))
        .collect();
    format!("{}:[{}]", m.scheme().name(), rows.join(" "))
}

pub fn write_statistics<W: Write>(obs: &ObservedStatistics, meta: &Metadata, w: W) -> Result<(), AppError> {
    let mut w = w;
    meta.clone().with("scheme", obs.scheme.name()).write(&mut w)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["x", "y", "probability"])?;
    for (x, y, p) in obs.entries() {
        csv.write_record([x.name(), y.name(), &format!("{p:.17e}")])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_statistics<R: Read>(mut r: R, scheme: Option<Scheme>) -> Result<ObservedStatistics, AppError> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let (meta, body) = Metadata::split(&text);
    let mut rows = Vec::new();
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(body.as_bytes());
    let headers = csv.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| AppError::Config(format!("statistics CSV lacks a '{name}' column")))
    };
    let (cx, cy, cp) = (col("x")?, col("y")?, col("probability")?);
    for rec in csv.records() {
        let rec = rec?;
        let x = AliceOutcome::parse(&rec[cx])?;
        let y = Outcome::parse(&rec[cy])?;
        let p: f64 = rec[cp].parse().map_err(|_| AppError::Config(format!("bad probability '{}'", &rec[cp])))?;
        rows.push((x, y, p));
    }
    let scheme = match (scheme, meta.get("scheme")) {
        (Some(s), _) => s,
        (None, Some(s)) => Scheme::parse(s)?,
        (None, None) => {
            if rows.iter().any(|r| matches!(r.1, Outcome::CC | Outcome::Empty)) {
                Scheme::Passive
            } else {
                Scheme::Active
            }
        }
    };
    let mut obs = ObservedStatistics::new(scheme);
    for (x, y, p) in rows {
        obs.set(x, y, p)?;
    }
    Ok(obs)
}

pub fn write_bounds<W: Write>(tables: &[PhotonBoundTable], meta: &Metadata, w: W) -> Result<(), AppError> {
    let mut w = w;
    meta.write(&mut w)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["n", "kind", "model", "value", "status"])?;
    for t in tables {
        for row in &t.rows {
            csv.write_record([
                row.n.to_string(),
                t.kind.name().to_string(),
                t.model_id.clone(),
                format!("{:.10}", row.bound.value),
                row.bound.status.name().to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Gnuplot-ready columns from one of our CSV files.
///
/// Curves keep `(abscissa, eta_min, margin)`; other files keep every column
/// that parses as a number. Metadata and the header become `#` comments and
/// non-numeric cells become `nan`.
pub fn emit_plot_data(csv_text: &str) -> Result<String, AppError> {
    let (meta, body) = Metadata::split(csv_text);
    let mut out = String::new();
    for (k, v) in &meta.0 {
        out.push_str(&format!("# {k}={v}\n"));
    }
    if body.trim().is_empty() {
        return Ok(out);
    }
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers = csv.headers()?.clone();
    let records: Vec<csv::StringRecord> = csv.records().collect::<Result<_, _>>()?;
    let pick: Vec<usize> = if let Some(e) = headers.iter().position(|h| h == "eta_min") {
        let x = headers.iter().position(|h| h == "omega" || h == "eta_v").unwrap_or(0);
        let m = headers.iter().position(|h| h == "margin");
        let mut v = vec![x, e];
        v.extend(m);
        v
    } else {
        (0..headers.len())
            .filter(|&c| records.iter().any(|r| r.get(c).map(|s| s.parse::<f64>().is_ok()).unwrap_or(false)))
            .collect()
    };
    out.push_str(&format!("# {}\n", pick.iter().map(|&c| &headers[c]).collect::<Vec<_>>().join(" ")));
    for r in &records {
        let cells: Vec<String> = pick
            .iter()
            .map(|&c| match r.get(c).and_then(|s| s.parse::<f64>().ok()) {
                Some(v) => format!("{v}"),
                None => "nan".into(),
            })
            .collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use evmix_core::channel::{simulate_statistics, ChannelParams, Resend};

    #[test]
    fn statistics_roundtrip() {
        for scheme in [Scheme::Active, Scheme::Passive] {
            let m = DetectorModel::uniform(scheme, 1, 0.7).unwrap();
            let obs = simulate_statistics(&ChannelParams::new(0.1, 0.2, 0.05, Resend::Photons(2)).unwrap(), &m).unwrap();
            let mut buf = Vec::new();
            write_statistics(&obs, &Metadata::new(), &mut buf).unwrap();
            let back = read_statistics(buf.as_slice(), None).unwrap();
            assert_eq!(back.scheme, scheme);
            for (x, y, p) in obs.entries() {
                assert_eq!(back.get(x, y), p);
            }
        }
    }

    #[test]
    fn plot_data_shapes() {
        let empty = "# tool=x\n";
        assert_eq!(emit_plot_data(empty).unwrap(), "# tool=x\n");
        let one = "# tool=x\nr,p,omega,eta_min,lower,margin,status\n0,0.01,0.1,0.2,0.199,-1e-3,ok\n";
        let out = emit_plot_data(one).unwrap();
        let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows, vec!["0.1 0.2 -0.001"]);
    }

    #[test]
    fn metadata_split_keeps_body() {
        let (m, body) = Metadata::split("# a=1\n# b = two\nx,y\n1,2\n");
        assert_eq!(m.get("b"), Some("two"));
        assert_eq!(body, "x,y\n1,2\n");
    }
}
