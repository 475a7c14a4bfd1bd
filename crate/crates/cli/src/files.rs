//! Loading inputs with built-in fallbacks, and small output helpers.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ikmr_core::autodiff::ParamStore;
use ikmr_core::io;
use ikmr_core::net::RetargetModel;
use ikmr_core::skeleton::Skeleton;
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failed, Failure, Invalid};

const BUILTIN_SKELETONS: [(&str, &str); 3] = [("toy-human", io::TOY_HUMAN), ("toy-robot", io::TOY_ROBOT), ("g1-like", io::G1_LIKE)];

/// A built-in skeleton name or a path to a skeleton file.
pub fn skeleton(name_or_path: &str) -> CliResult<Skeleton> {
    match BUILTIN_SKELETONS.iter().find(|(name, _)| *name == name_or_path) {
        Some((_, text)) => io::skeleton_from_json(text).invalid(),
        None => io::read_skeleton(Path::new(name_or_path)).invalid(),
    }
}

pub fn model(path: &Path) -> CliResult<RetargetModel> {
    RetargetModel::load(path).invalid()
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn optimizer_path(model: &Path) -> PathBuf {
    with_suffix(model, ".optim")
}

pub fn train_state_path(model: &Path) -> PathBuf {
    with_suffix(model, ".train.json")
}

/// Settings a resumed pretraining run needs to continue the same batch
/// sequence and update rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub format_version: u64,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: ikmr_core::training::OptimizerKind,
    pub lambda_align: f64,
    pub lambda_consis: f64,
}

pub fn read_train_state(model: &Path) -> CliResult<(TrainState, ParamStore)> {
    let path = train_state_path(model);
    let text = fs::read_to_string(&path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    let state: TrainState =
        serde_json::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    if state.format_version != io::FORMAT_VERSION {
        return Err(Failure::validation(format!("{}: unsupported format_version {}", path.display(), state.format_version)));
    }
    let opt = optimizer_path(model);
    let bytes = fs::read(&opt).map_err(|e| Failure::validation(format!("{}: {e}", opt.display())))?;
    let store = ParamStore::from_bytes(&bytes).invalid_ctx(&opt.display().to_string())?;
    Ok((state, store))
}

pub fn write_train_state(model: &Path, state: &TrainState, optimizer: &ParamStore) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(state).map_err(|e| Failure::runtime(e.to_string()))?;
    text.push('\n');
    fs::write(train_state_path(model), text).failed()?;
    fs::write(optimizer_path(model), optimizer.to_bytes()).failed()
}

/// JSON lines writer; a no-op without a path.
pub struct Log(Option<BufWriter<File>>);

impl Log {
    pub fn open(path: Option<&Path>, append: bool) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self(None)) };
        let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path).failed()?;
        Ok(Self(Some(BufWriter::new(file))))
    }

    pub fn record<T: Serialize>(&mut self, rec: &T) -> ikmr_core::Result<()> {
        if let Some(w) = &mut self.0 {
            let line = serde_json::to_string(rec)?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn finish(self) -> CliResult<()> {
        if let Some(mut w) = self.0 {
            w.flush().failed()?;
        }
        Ok(())
    }
}

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).failed(),
        _ => Ok(()),
    }
}
