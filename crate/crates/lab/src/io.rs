//! File access: model specs, token files and atomic output.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use svip_core::models::{phrase_model, temper, train_ngram, ModelSpec, TabularModel};
use svip_core::{AutoregressiveModel, SessionRng, TokenId};

use crate::config::{DraftSource, LoadedConfig, TargetSource};
use crate::error::LabError;

pub type SharedModel = Arc<dyn AutoregressiveModel + Send + Sync>;

pub fn read(path: &Path) -> Result<Vec<u8>, LabError> {
    fs::read(path).map_err(|source| LabError::Read { path: path.to_path_buf(), source })
}

/// Writes via a temporary file in the destination directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), LabError> {
    let err = |source| LabError::Write { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

fn parse_tokens(path: &Path, line_no: usize, line: &str) -> Result<Vec<TokenId>, LabError> {
    line.split_whitespace()
        .map(|w| {
            w.parse::<usize>().map(TokenId).map_err(|_| LabError::TokenFile {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!("`{w}` is not a token id"),
            })
        })
        .collect()
}

/// Whole file as one token stream.
pub fn read_corpus(path: &Path) -> Result<Vec<TokenId>, LabError> {
    let text = String::from_utf8_lossy(&read(path)?).into_owned();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        out.extend(parse_tokens(path, i + 1, line)?);
    }
    Ok(out)
}

/// One prompt per non-empty line.
pub fn read_prompts(path: &Path) -> Result<Vec<Vec<TokenId>>, LabError> {
    let text = String::from_utf8_lossy(&read(path)?).into_owned();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if !line.trim().is_empty() {
            out.push(parse_tokens(path, i + 1, line)?);
        }
    }
    Ok(out)
}

pub fn read_model_spec(path: &Path) -> Result<TabularModel, LabError> {
    let spec: ModelSpec =
        serde_json::from_slice(&read(path)?).map_err(|source| LabError::Parse { path: path.to_path_buf(), source })?;
    Ok(TabularModel::from_spec(&spec)?)
}

pub fn write_model_spec(path: &Path, model: &TabularModel) -> Result<(), LabError> {
    let mut bytes = serde_json::to_vec_pretty(&model.to_spec()).expect("spec serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_target(cfg: &LoadedConfig) -> Result<SharedModel, LabError> {
    Ok(match &cfg.config.target {
        TargetSource::Spec(p) => Arc::new(read_model_spec(&cfg.resolve(p))?),
        TargetSource::Ngram { corpus, vocab_size, order, k_add } => {
            let tokens = read_corpus(&cfg.resolve(corpus))?;
            Arc::new(train_ngram(&tokens, *vocab_size, *order, *k_add)?)
        }
        source @ TargetSource::Phrase { .. } => {
            let (params, seed) = source.phrase_params().expect("phrase source");
            Arc::new(phrase_model(&params, &mut SessionRng::new(seed))?)
        }
    })
}

pub fn load_draft(cfg: &LoadedConfig, target: &SharedModel) -> Result<SharedModel, LabError> {
    let draft: SharedModel = match &cfg.config.draft {
        None => return Err(LabError::config("draft", "required by this command")),
        Some(DraftSource::Spec(p)) => Arc::new(read_model_spec(&cfg.resolve(p))?),
        Some(DraftSource::Temper { tau, epsilon }) => Arc::new(temper(target.clone(), *tau, *epsilon)?),
    };
    if draft.vocab_size() != target.vocab_size() {
        return Err(LabError::config(
            "draft",
            format!("vocabulary {} does not match target vocabulary {}", draft.vocab_size(), target.vocab_size()),
        ));
    }
    Ok(draft)
}
