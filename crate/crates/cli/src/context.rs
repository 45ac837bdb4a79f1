use std::path::{Path, PathBuf};

use replayroi_core::config::ProjectConfig;
use replayroi_core::history::{GitCli, VersionSequence};
use replayroi_core::ledger::{fold_events, Event, Ledger, MeasurementTables};
use replayroi_core::report::ReportOptions;
use replayroi_core::session::{GitHost, Phase, Session, SystemClock};

use crate::error::CliError;

/// A loaded config plus the ledger it points at.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ProjectConfig,
    pub ledger_path: PathBuf,
}

impl Context {
    pub fn load(config: &Path, ledger: Option<&Path>) -> Result<Self, CliError> {
        let config = ProjectConfig::load(config)?;
        let ledger_path = ledger.map(Path::to_path_buf).unwrap_or_else(|| config.ledger.clone());
        Ok(Context { config, ledger_path })
    }

    /// Opens the ledger for writing and rebuilds the session. The project is
    /// (re)configured from the config while the session is still in its
    /// baseline phase.
    pub fn open_session(&self) -> Result<Session, CliError> {
        let ledger = Ledger::open(&self.ledger_path)?;
        let host = GitHost::new(GitCli::new(&self.config.repo), &self.config.workspace, self.config.build.clone());
        let mut session = Session::new(ledger, Box::new(host), Box::new(SystemClock::default()));
        if session.state().phase == Phase::Baseline {
            session.configure(self.config.project.clone(), &self.config.hash)?;
        }
        Ok(session)
    }

    pub fn events(&self) -> Result<Vec<Event>, CliError> {
        read_events(&self.ledger_path)
    }

    /// Folded ledger. Before the first session command the project comes
    /// from the config so estimates report what is missing.
    pub fn tables(&self) -> Result<MeasurementTables, CliError> {
        let mut tables = fold_events(&self.events()?);
        if tables.project.is_none() {
            tables.project = Some(self.config.project.clone());
        }
        Ok(tables)
    }

    pub fn report_options(&self) -> ReportOptions {
        self.config.report_options()
    }

    pub fn load_versions(&self) -> Result<VersionSequence, CliError> {
        let path = &self.config.versions_file;
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::usage(format!(
                    "no versions selected yet ({} missing); run `versions select` first",
                    path.display()
                ))
            } else {
                CliError::io(format!("reading {}", path.display()), e)
            }
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{} is not a version list: {e}", path.display())))
    }

    pub fn save_versions(&self, seq: &VersionSequence) -> Result<(), CliError> {
        let path = &self.config.versions_file;
        let json = serde_json::to_string_pretty(seq).map_err(|e| CliError::Internal(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }
}

/// Events of the ledger at `path`; a missing file is an empty ledger.
pub fn read_events(path: &Path) -> Result<Vec<Event>, CliError> {
    match Ledger::read_only(path) {
        Ok(ev) => Ok(ev),
        Err(replayroi_core::ledger::LedgerError::Storage(e)) if e.kind() == std::io::ErrorKind::NotFound => {
            Ok(Vec::new())
        }
        Err(e) => Err(e.into()),
    }
}
