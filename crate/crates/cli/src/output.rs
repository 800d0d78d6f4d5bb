use std::path::PathBuf;

use serde::Serialize;

use crate::config::{ExperimentConfig, Format, SCHEMA_VERSION};
use crate::CliError;

/// Environment variable naming the directory that receives artifacts when
/// neither `--out` nor the config's `output.path` is set.
pub const OUT_DIR_ENV: &str = "DIFFCTL_OUT_DIR";

/// Versioned JSON envelope shared by every command.
#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema_version: u32,
    pub command: &'a str,
    #[serde(flatten)]
    pub body: &'a T,
    pub config_echo: &'a ExperimentConfig,
}

pub fn to_json<T: Serialize>(command: &str, body: &T, cfg: &ExperimentConfig) -> Result<String, CliError> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        command,
        body,
        config_echo: cfg,
    };
    let mut s = serde_json::to_string_pretty(&env).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Two-column key/value table.
#[derive(Default)]
pub struct Table {
    rows: Vec<(String, String)>,
}

impl Table {
    pub fn row(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.rows.push((key.into(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let w = self.rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in &self.rows {
            let pad = w - k.chars().count();
            out.push_str(k);
            out.push_str(&" ".repeat(pad + 2));
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

/// Column-aligned rendering of a CSV document.
pub fn csv_as_table(csv: &str) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncol)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r.iter().enumerate().map(|(i, s)| format!("{s:>w$}", w = widths[i])).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn resolve_format(flag: Option<Format>, cfg: &ExperimentConfig, default: Format) -> Format {
    flag.or(cfg.output.format).unwrap_or(default)
}

fn extension(f: Format) -> &'static str {
    match f {
        Format::Csv => "csv",
        Format::Json => "json",
        Format::Table => "txt",
    }
}

/// `--out`, then `output.path`, then `$DIFFCTL_OUT_DIR/<command>.<ext>`;
/// `None` means standard output.
pub fn destination(flag: Option<PathBuf>, cfg: &ExperimentConfig, command: &str, format: Format) -> Option<PathBuf> {
    flag.or_else(|| cfg.output.path.as_ref().map(PathBuf::from)).or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .filter(|d| !d.is_empty())
            .map(|d| PathBuf::from(d).join(format!("{command}.{}", extension(format))))
    })
}

pub fn emit(dest: Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match dest {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
            }
            std::fs::write(&p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            eprintln!("wrote {}", p.display());
            Ok(())
        }
    }
}
