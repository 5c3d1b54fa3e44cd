use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row per team per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub steps: usize,
    pub team: usize,
    pub total_reward: f64,
    /// Mean loss of the team's learner over the episode; empty while the
    /// buffer is warming up.
    pub mean_loss: Option<f64>,
    /// Kills by the team in battle; scoring surround pairs in predator-prey.
    pub kills_or_surrounds: usize,
    /// Wall-clock time; the only column that differs between reruns.
    pub wall_ms: u64,
}

impl EpisodeMetrics {
    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &EpisodeMetrics) -> bool {
        EpisodeMetrics { wall_ms: 0, ..self.clone() } == EpisodeMetrics { wall_ms: 0, ..other.clone() }
    }
}

pub fn write_metrics<W: Write>(out: W, rows: &[EpisodeMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| crate::Error::io("metrics", e))?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<EpisodeMetrics>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<EpisodeMetrics>, _>>()?;
    Ok(rows)
}
