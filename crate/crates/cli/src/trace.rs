//! Solver traces as CSV: a `#schema=` line, a header naming every column,
//! then one row per traced iteration, CRLF line ends. Reals use 17 significant digits;
//! absent estimates are empty fields.

use std::io::{Read, Write};

use lsbe::solver::TraceRow;

use crate::error::CliError;

pub const SCHEMA: &str = "lsbe-trace/1";

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<(), CliError> {
    let mut out = out;
    write!(out, "#schema={SCHEMA}\r\n").map_err(|e| CliError::Io { path: "trace".into(), message: e.to_string() })?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
    let io = |e: csv::Error| CliError::Io { path: "trace".into(), message: e.to_string() };
    w.write_record(TraceRow::COLUMNS).map_err(io)?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            real(r.norm_r),
            real(r.norm_atr),
            opt(r.norm_r_theta),
            opt(r.nu_sketched),
            opt(r.lb_fresh),
            opt(r.lb_refined),
            opt(r.lb_recycled),
            opt(r.ub_deflation),
            opt(r.ub_generous),
            opt(r.mu_true),
            r.matvec_count.to_string(),
            r.rmatvec_count.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io { path: "trace".into(), message: e.to_string() })?;
    Ok(())
}

pub fn trace_to_string(rows: &[TraceRow]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// Parses a trace written by [`write_trace`], checking schema and header.
pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>, CliError> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text).map_err(|e| CliError::Io { path: "trace".into(), message: e.to_string() })?;
    let perr = |line: usize, msg: String| CliError::Parse { path: "trace".into(), line, message: msg };
    let (first, rest) = text.split_once('\n').ok_or_else(|| perr(1, "empty trace".into()))?;
    if first.trim_end() != format!("#schema={SCHEMA}") {
        return Err(perr(1, format!("expected '#schema={SCHEMA}', found '{}'", first.trim_end())));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let header = rdr.headers().map_err(|e| perr(2, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != TraceRow::COLUMNS {
        return Err(perr(2, format!("unexpected header: {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 3;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        let f = |i: usize| -> Result<Option<f64>, CliError> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| perr(line, format!("bad number '{s}' in column {}", TraceRow::COLUMNS[i])))
            }
        };
        let req = |i: usize| -> Result<f64, CliError> { f(i)?.ok_or_else(|| perr(line, format!("missing {}", TraceRow::COLUMNS[i]))) };
        let int = |i: usize| -> Result<usize, CliError> {
            rec[i].parse().map_err(|_| perr(line, format!("bad count '{}' in column {}", &rec[i], TraceRow::COLUMNS[i])))
        };
        rows.push(TraceRow {
            iter: int(0)?,
            norm_r: req(1)?,
            norm_atr: req(2)?,
            norm_r_theta: f(3)?,
            nu_sketched: f(4)?,
            lb_fresh: f(5)?,
            lb_refined: f(6)?,
            lb_recycled: f(7)?,
            ub_deflation: f(8)?,
            ub_generous: f(9)?,
            mu_true: f(10)?,
            matvec_count: int(11)?,
            rmatvec_count: int(12)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iter: usize) -> TraceRow {
        TraceRow {
            iter,
            norm_r: 1.0 / 3.0,
            norm_atr: 1e-300,
            norm_r_theta: Some(0.1),
            nu_sketched: None,
            lb_fresh: Some(2.0_f64.sqrt()),
            lb_refined: None,
            lb_recycled: Some(0.0),
            ub_deflation: Some(f64::MIN_POSITIVE),
            ub_generous: Some(1e10),
            mu_true: None,
            matvec_count: 3,
            rmatvec_count: 7,
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let rows = vec![row(0), row(5)];
        let text = trace_to_string(&rows);
        assert!(text.starts_with("#schema=lsbe-trace/1\r\n"));
        assert!(text.lines().nth(1).unwrap().starts_with("iter,norm_r,norm_Atr,"));
        assert_eq!(read_trace(text.as_bytes()).unwrap(), rows);
    }

    #[test]
    fn rejects_wrong_schema() {
        assert!(read_trace("#schema=other\niter\n".as_bytes()).is_err());
    }
}
