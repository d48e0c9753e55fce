//! Locale-independent, diff-stable output formatting.

use serde::Serialize;

use svip_core::engine::RoundRecord;
use svip_core::TokenId;

use crate::error::LabError;

/// Nine significant digits in scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn opt_token(t: Option<TokenId>) -> String {
    t.map(|t| t.0.to_string()).unwrap_or_default()
}

pub fn tokens(ts: &[TokenId]) -> String {
    ts.iter().map(|t| t.0.to_string()).collect::<Vec<_>>().join(" ")
}

/// Pretty JSON with a trailing newline.
pub fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("documents serialize");
    out.push(b'\n');
    out
}

/// Collects rows into CSV bytes.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Result<Self, LabError> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Table { writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), LabError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<u8>, LabError> {
        self.writer.into_inner().map_err(|e| LabError::Csv(e.into_error().into()))
    }
}

pub const ROUND_COLUMNS: [&str; 7] =
    ["round_index", "proposed", "accepted", "correction", "bonus", "mean_entropy", "next_entropy"];

pub fn round_fields(r: &RoundRecord) -> [String; 7] {
    let mean_entropy = if r.draft_entropies.is_empty() {
        None
    } else {
        Some(r.draft_entropies.iter().sum::<f64>() / r.draft_entropies.len() as f64)
    };
    [
        r.round_index.to_string(),
        r.proposed().to_string(),
        r.accepted_count.to_string(),
        opt_token(r.correction),
        opt_token(r.bonus),
        opt_num(mean_entropy),
        opt_num(r.next_entropy),
    ]
}
