//! Scenario files, result tables, plots and experiment runners.
//!
//! A scenario file is flat `key = value` text with `[section]` headers. The
//! root section holds `experiment` and `seed`; parameters live in a section
//! named after the experiment (for example `[ber_sweep]`).

pub mod config;
pub mod experiments;
pub mod svg;
pub mod table;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use config::{Config, Section};
pub use svg::{emit_svg, PlotKind, PlotSpec};
pub use table::{Cell, Column, FloatFormat, Provenance, ResultTable};

use crate::error::{Error, Result};
use crate::rng::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    BerSweep,
    ChannelStats,
    DoaHist,
    CmaConvergence,
    MudCompare,
    LaSim,
    BroadcastSim,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Self::BerSweep,
        Self::ChannelStats,
        Self::DoaHist,
        Self::CmaConvergence,
        Self::MudCompare,
        Self::LaSim,
        Self::BroadcastSim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::BerSweep => "ber_sweep",
            Self::ChannelStats => "channel_stats",
            Self::DoaHist => "doa_hist",
            Self::CmaConvergence => "cma_convergence",
            Self::MudCompare => "mud_compare",
            Self::LaSim => "la_sim",
            Self::BroadcastSim => "broadcast_sim",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config { line: 0, msg: format!("unknown experiment `{s}`") })
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub experiment: Experiment,
    pub seed: Seed,
    pub config: Config,
    pub output_dir: PathBuf,
    /// Directory relative paths in the config resolve against.
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    /// Validates the root section. `experiment` and `seed` override the file;
    /// a file that names a different experiment is rejected.
    pub fn new(config: Config, experiment: Option<Experiment>, seed: Option<Seed>, output_dir: &Path) -> Result<Self> {
        let root = config.root();
        let declared: Option<Experiment> =
            if root.contains("experiment") { Some(root.get::<String>("experiment")?.parse()?) } else { None };
        let experiment = match (experiment, declared) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config { line: 0, msg: format!("config is for `{b}`, not `{a}`") });
            }
            (Some(e), _) | (None, Some(e)) => e,
            (None, None) => return Err(Error::MissingKey { section: String::new(), key: "experiment".into() }),
        };
        let seed = match seed {
            Some(s) => s,
            None => Seed(root.get::<u64>("seed")?),
        };
        Ok(Self { experiment, seed, config, output_dir: output_dir.to_path_buf(), base_dir: PathBuf::from(".") })
    }

    pub fn load(path: &Path, experiment: Option<Experiment>, seed: Option<Seed>, output_dir: &Path) -> Result<Self> {
        let config = Config::load(path).map_err(|e| match e {
            Error::Io(io) => Error::Config { line: 0, msg: format!("{}: {io}", path.display()) },
            other => other,
        })?;
        let mut scenario = Self::new(config, experiment, seed, output_dir)?;
        scenario.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(scenario)
    }

    /// Parameters of the chosen experiment; an absent section reads as empty.
    pub fn params(&self) -> Section {
        self.config.section_or_empty(self.experiment.name())
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.seed, &self.config.source)
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    /// Written as `<name>.csv`.
    pub tables: Vec<ResultTable>,
    /// `(file stem, SVG document)`, written as `<stem>.svg`.
    pub plots: Vec<(String, String)>,
    /// Other files, `(file name, contents)`.
    pub files: Vec<(String, String)>,
}

impl ExperimentOutput {
    pub fn table(&self, name: &str) -> Option<&ResultTable> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, bytes: &[u8]| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, bytes)?;
            written.push(path);
            Ok(())
        };
        for t in &self.tables {
            put(format!("{}.csv", t.name), t.to_csv_string().as_bytes())?;
        }
        for (stem, svg) in &self.plots {
            put(format!("{stem}.svg"), svg.as_bytes())?;
        }
        for (name, text) in &self.files {
            put(name.clone(), text.as_bytes())?;
        }
        Ok(written)
    }
}

pub fn run_experiment(scenario: &ScenarioConfig) -> Result<ExperimentOutput> {
    use experiments::*;
    match scenario.experiment {
        Experiment::BerSweep => run_ber_sweep(scenario),
        Experiment::ChannelStats => run_channel_stats(scenario),
        Experiment::DoaHist => run_doa_hist(scenario),
        Experiment::CmaConvergence => run_cma_convergence(scenario),
        Experiment::MudCompare => run_mud_compare(scenario),
        Experiment::LaSim => run_la_sim(scenario),
        Experiment::BroadcastSim => run_broadcast_sim(scenario),
    }
}
