use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sweep::{SweepReport, SweepRow};
use crate::error::{Error, Result};
use crate::mdp::EpisodeFunctions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// Picks the format from a `.csv` or `.json` extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(ReportFormat::Csv),
            Some("json") => Ok(ReportFormat::Json),
            _ => Err(Error::InvalidArgument(format!("cannot infer report format from {}", path.display()))),
        }
    }
}

const CSV_HEADER: [&str; 16] = [
    "episodes",
    "seed",
    "opt",
    "opt_gap",
    "reward",
    "regret",
    "term_i",
    "term_ii",
    "term_iii",
    "stop_episode",
    "stop_step",
    "consumption",
    "budget",
    "covered",
    "runtime_secs",
    "status",
];

/// CSV holds one line per cell (shortest round-trip float formatting); JSON
/// holds the whole report including aggregates.
pub fn emit_report(report: &SweepReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    match format {
        ReportFormat::Json => serde_json::to_writer_pretty(out, report)?,
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(CSV_HEADER)?;
            for row in &report.rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn load_report_json(path: impl AsRef<Path>) -> Result<SweepReport> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn load_rows_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Reads an episode stream stored as a JSON list of `{"f": .., "g": ..}`.
pub fn load_episodes(path: impl AsRef<Path>) -> Result<Vec<EpisodeFunctions>> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn save_episodes(episodes: &[EpisodeFunctions], path: impl AsRef<Path>) -> Result<()> {
    serde_json::to_writer(BufWriter::new(File::create(path)?), episodes)?;
    Ok(())
}
