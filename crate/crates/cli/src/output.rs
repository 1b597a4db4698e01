//! CSV emission and ingestion. Every artifact embeds the resolved config
//! and the repository version as `#`-prefixed comment lines; numeric
//! columns are formatted deterministically so identical runs produce
//! byte-identical files.

use crate::error::{AppError, ExitCode};
use dqn_core::observables::integral_error;
use std::io::Write;
use std::path::Path;
use std::process::Command;

/// Column order of every trajectory CSV.
pub const TRAJECTORY_HEADER: &str = "t,I_L,I_R,n_up,n_dn,S12,SvN,Ehyb,trace,ds2";

/// One emitted trajectory sample; `None` renders as an empty field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajRow {
    pub t: f64,
    pub i_l: Option<f64>,
    pub i_r: Option<f64>,
    pub n_up: Option<f64>,
    pub n_dn: Option<f64>,
    pub s12: Option<f64>,
    pub svn: Option<f64>,
    pub ehyb: Option<f64>,
    pub trace: f64,
    pub ds2: Option<f64>,
}

/// One per-step solver diagnostics sample.
#[derive(Debug, Clone)]
pub struct DiagRow {
    pub t: f64,
    pub ds2: f64,
    pub trace_re: f64,
    pub trace_im: f64,
    pub lambda: f64,
    pub path: String,
}

fn fmt_field(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.12e}"),
        None => String::new(),
    }
}

/// `git describe` of the working tree, or `unknown` outside a repository.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn write_preamble(out: &mut impl Write, resolved_toml: &str, version: &str) -> std::io::Result<()> {
    writeln!(out, "# version: {version}")?;
    writeln!(out, "# resolved config:")?;
    for line in resolved_toml.lines() {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

pub fn write_trajectory_csv(
    path: &Path,
    rows: &[TrajRow],
    resolved_toml: &str,
    version: &str,
) -> Result<(), AppError> {
    let mut buf = Vec::new();
    write_preamble(&mut buf, resolved_toml, version)?;
    writeln!(buf, "{TRAJECTORY_HEADER}")?;
    for r in rows {
        writeln!(
            buf,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_field(Some(r.t)),
            fmt_field(r.i_l),
            fmt_field(r.i_r),
            fmt_field(r.n_up),
            fmt_field(r.n_dn),
            fmt_field(r.s12),
            fmt_field(r.svn),
            fmt_field(r.ehyb),
            fmt_field(Some(r.trace)),
            fmt_field(r.ds2),
        )?;
    }
    std::fs::write(path, buf)
        .map_err(|e| AppError::new(ExitCode::Io, format!("writing {}: {e}", path.display())))
}

pub fn write_diag_csv(
    path: &Path,
    rows: &[DiagRow],
    resolved_toml: &str,
    version: &str,
) -> Result<(), AppError> {
    let mut buf = Vec::new();
    write_preamble(&mut buf, resolved_toml, version)?;
    writeln!(buf, "t,ds2,trace_re,trace_im,lambda,path")?;
    for r in rows {
        writeln!(
            buf,
            "{},{},{},{},{},{}",
            fmt_field(Some(r.t)),
            fmt_field(Some(r.ds2)),
            fmt_field(Some(r.trace_re)),
            fmt_field(Some(r.trace_im)),
            fmt_field(Some(r.lambda)),
            r.path,
        )?;
    }
    std::fs::write(path, buf)
        .map_err(|e| AppError::new(ExitCode::Io, format!("writing {}: {e}", path.display())))
}

/// A parsed CSV: header names and per-column optional values.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub columns: Vec<Vec<Option<f64>>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.header.iter().position(|h| h == name).map(|i| self.columns[i].as_slice())
    }

    /// The time column as dense values (errors if any entry is missing).
    pub fn times(&self) -> Result<Vec<f64>, AppError> {
        let col = self
            .column("t")
            .ok_or_else(|| AppError::new(ExitCode::Check, "CSV has no `t` column"))?;
        col.iter()
            .map(|v| v.ok_or_else(|| AppError::new(ExitCode::Check, "empty entry in `t` column")))
            .collect()
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::new(ExitCode::Io, format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| AppError::new(ExitCode::Check, format!("{}: no header", path.display())))?;
    let header: Vec<String> = header_line.split(',').map(|s| s.trim().to_string()).collect();
    let mut columns = vec![Vec::new(); header.len()];
    for (ln, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(AppError::new(
                ExitCode::Check,
                format!(
                    "{}: row {} has {} fields, header has {}",
                    path.display(),
                    ln + 2,
                    fields.len(),
                    header.len()
                ),
            ));
        }
        for (c, f) in fields.iter().enumerate() {
            let f = f.trim();
            if f.is_empty() {
                columns[c].push(None);
            } else {
                let v = f.parse::<f64>().map_err(|e| {
                    AppError::new(
                        ExitCode::Check,
                        format!("{}: row {}, column {}: {e}", path.display(), ln + 2, header[c]),
                    )
                })?;
                columns[c].push(Some(v));
            }
        }
    }
    Ok(CsvTable { header, columns })
}

/// Validates the trajectory schema: exact column set and a strictly
/// increasing time column.
pub fn check_trajectory_schema(table: &CsvTable) -> Result<(), AppError> {
    let want: Vec<&str> = TRAJECTORY_HEADER.split(',').collect();
    if table.header != want {
        return Err(AppError::new(
            ExitCode::Check,
            format!("header {:?} differs from `{TRAJECTORY_HEADER}`", table.header.join(",")),
        ));
    }
    let ts = table.times()?;
    if ts.is_empty() {
        return Err(AppError::new(ExitCode::Check, "no data rows"));
    }
    for w in ts.windows(2) {
        if !(w[1] > w[0]) {
            return Err(AppError::new(
                ExitCode::Check,
                format!("time column not strictly increasing at t = {}", w[0]),
            ));
        }
    }
    Ok(())
}

/// Relative integral errors between the shared, fully populated columns of
/// two trajectory tables (the first table is the test curve, the second the
/// reference).
pub fn compare_tables(
    test: &CsvTable,
    reference: &CsvTable,
) -> Result<Vec<(String, f64)>, AppError> {
    let ts_test = test.times()?;
    let ts_ref = reference.times()?;
    let mut out = Vec::new();
    for name in TRAJECTORY_HEADER.split(',').skip(1) {
        let (Some(a), Some(b)) = (test.column(name), reference.column(name)) else {
            continue;
        };
        let dense = |col: &[Option<f64>]| -> Option<Vec<f64>> { col.iter().copied().collect() };
        let (Some(ya), Some(yb)) = (dense(a), dense(b)) else {
            continue;
        };
        let err = integral_error(&ts_test, &ya, &ts_ref, &yb, ts_ref[0])
            .map_err(AppError::from)?;
        out.push((name.to_string(), err));
    }
    if out.is_empty() {
        return Err(AppError::new(ExitCode::Check, "no shared populated columns to compare"));
    }
    Ok(out)
}
