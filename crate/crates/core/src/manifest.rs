//! Conversation manifests: ordered utterances with timestamps, posterior
//! file references and optional reference transcripts. Serialized as JSON
//! lines, one conversation per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub posterior_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let mut prev_start = f64::NEG_INFINITY;
        for u in &self.utterances {
            if u.start_s > u.end_s {
                return Err(Error::Input(format!(
                    "utterance {} ends before it starts",
                    u.utterance_id
                )));
            }
            if u.start_s < prev_start {
                return Err(Error::Input(format!(
                    "conversation {}: utterances not ordered by start time at {}",
                    self.conversation_id, u.utterance_id
                )));
            }
            prev_start = u.start_s;
            if !seen.insert(&u.utterance_id) {
                return Err(Error::Input(format!(
                    "duplicate utterance id {} in conversation {}",
                    u.utterance_id, self.conversation_id
                )));
            }
        }
        Ok(())
    }
}

pub fn parse_manifest(reader: impl BufRead) -> Result<Vec<Conversation>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let conv: Conversation = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1)))?;
        conv.validate()?;
        out.push(conv);
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Conversation>> {
    let file = File::open(path.as_ref())?;
    parse_manifest(BufReader::new(file))
}

pub fn write_manifest(convs: &[Conversation], mut writer: impl Write) -> Result<()> {
    for conv in convs {
        serde_json::to_writer(&mut writer, conv)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_manifest(convs: &[Conversation], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_manifest(convs, &mut w)?;
    w.flush()?;
    Ok(())
}
