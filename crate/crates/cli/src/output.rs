use crate::config::{CliResult, Failure};
use clap::ValueEnum;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Output directory plus the format for tabular data.
pub struct Output {
    dir: PathBuf,
    format: Format,
}

#[derive(Serialize)]
struct Table<'a> {
    columns: &'a [&'a str],
    rows: &'a [Vec<f64>],
}

impl Output {
    pub fn new(dir: &Path, format: Format) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        Ok(Output { dir: dir.to_path_buf(), format })
    }

    pub fn format(&self) -> Format {
        self.format
    }

    fn create(&self, name: &str) -> CliResult<(PathBuf, BufWriter<File>)> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        Ok((path, BufWriter::new(f)))
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let (path, mut w) = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(path)
    }

    /// Write through a caller-supplied CSV writer function.
    pub fn with_writer(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> CliResult<()>) -> CliResult<PathBuf> {
        let (path, mut w) = self.create(name)?;
        f(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    /// Numeric table as `<stem>.csv` or `<stem>.json` depending on the format.
    pub fn table(&self, stem: &str, columns: &[&str], rows: &[Vec<f64>]) -> CliResult<PathBuf> {
        match self.format {
            Format::Json => self.json(&format!("{stem}.json"), &Table { columns, rows }),
            Format::Csv => self.with_writer(&format!("{stem}.csv"), |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(columns)?;
                for r in rows {
                    c.write_record(r.iter().map(|v| v.to_string()))?;
                }
                c.flush()?;
                Ok(())
            }),
        }
    }
}
