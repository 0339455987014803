//! Per-episode result rows and their CSV form.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "run_id,variant,seed,phase,episode_index,env_steps_so_far,episodic_reward";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    MetaEmpty,
    MetaFull,
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::MetaEmpty, Variant::MetaFull, Variant::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::MetaEmpty => "meta_empty",
            Variant::MetaFull => "meta_full",
            Variant::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Pretrain,
    PostFault,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::PostFault => "post_fault",
        }
    }
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Phase::Pretrain),
            "post_fault" => Ok(Phase::PostFault),
            _ => Err(Error::InvalidArgument(format!("unknown phase `{s}`"))),
        }
    }
}

/// One finished episode. Pretraining rows carry the variant tag `nominal`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub variant: String,
    pub seed: u64,
    pub phase: Phase,
    pub episode_index: usize,
    pub env_steps_so_far: usize,
    pub episodic_reward: f64,
}

impl RunRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6}",
            self.run_id,
            self.variant,
            self.seed,
            self.phase.as_str(),
            self.episode_index,
            self.env_steps_so_far,
            self.episodic_reward
        )
    }
}

pub fn render_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to write".into()));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(render_csv(records).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Csv {
                line: 1,
                message: format!("unexpected header `{h}`"),
            })
        }
        None => {
            return Err(Error::Csv {
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            parse_row(l).map_err(|message| Error::Csv { line: i + 1, message })
        })
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<RunRecord>> {
    parse_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn parse_row(line: &str) -> std::result::Result<RunRecord, String> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 7 {
        return Err(format!("expected 7 fields, got {}", f.len()));
    }
    fn num<V: FromStr>(name: &str, s: &str) -> std::result::Result<V, String> {
        s.parse().map_err(|_| format!("bad {name} `{s}`"))
    }
    Ok(RunRecord {
        run_id: f[0].to_string(),
        variant: f[1].to_string(),
        seed: num("seed", f[2])?,
        phase: f[3].parse().map_err(|e: Error| e.to_string())?,
        episode_index: num("episode_index", f[4])?,
        env_steps_so_far: num("env_steps_so_far", f[5])?,
        episodic_reward: num("episodic_reward", f[6])?,
    })
}
