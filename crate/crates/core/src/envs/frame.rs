//! Per-step snapshots, JSONL traces and a plain-text renderer.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::EnvKind;
use super::world::{AgentState, GridWorld};
use crate::error::{Error, Result};

pub const FRAME_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub schema_version: u32,
    pub step: usize,
    pub width: usize,
    pub height: usize,
    pub kind: EnvKind,
    pub obstacles: Vec<(i32, i32)>,
    /// All agents, dead ones included with `alive = false`.
    pub agents: Vec<AgentState>,
}

impl Frame {
    pub fn capture(world: &GridWorld) -> Self {
        let c = world.config();
        Self {
            schema_version: FRAME_SCHEMA_VERSION,
            step: world.step_count(),
            width: c.width,
            height: c.height,
            kind: c.kind,
            obstacles: world.obstacle_cells().collect(),
            agents: world.agents().to_vec(),
        }
    }

    /// One character per cell: `#` obstacle, `a`/`b` for live agents of
    /// team 0/1 (upper case at full HP), `.` empty. Battle maps show teams as
    /// `a`/`b`; predator-prey maps as `P`/`o`.
    pub fn render_ascii(&self) -> String {
        let mut grid = vec![vec!['.'; self.width]; self.height];
        for &(x, y) in &self.obstacles {
            if let Some(cell) = grid.get_mut(y as usize).and_then(|r| r.get_mut(x as usize)) {
                *cell = '#';
            }
        }
        let full = self.agents.iter().map(|a| a.hp).fold(0.0f32, f32::max);
        for a in self.agents.iter().filter(|a| a.alive) {
            let ch = match (self.kind, a.team) {
                (EnvKind::PredatorPrey, 0) => 'P',
                (EnvKind::PredatorPrey, _) => 'o',
                (EnvKind::Battle, 0) if a.hp >= full => 'A',
                (EnvKind::Battle, 0) => 'a',
                (EnvKind::Battle, _) if a.hp >= full => 'B',
                (EnvKind::Battle, _) => 'b',
            };
            if let Some(cell) = grid.get_mut(a.y as usize).and_then(|r| r.get_mut(a.x as usize)) {
                *cell = ch;
            }
        }
        let alive = |t| self.agents.iter().filter(|a| a.alive && a.team == t).count();
        let mut out = String::new();
        let _ = writeln!(out, "step {}  team0 {}  team1 {}", self.step, alive(0), alive(1));
        for row in grid {
            out.extend(row);
            out.push('\n');
        }
        out
    }
}

pub fn write_frame<W: Write>(mut out: W, frame: &Frame) -> Result<()> {
    serde_json::to_writer(&mut out, frame)?;
    out.write_all(b"\n").map_err(|e| Error::io("trace", e))
}

pub fn read_frames<R: BufRead>(input: R) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("trace", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        let found = v.get("schema_version").and_then(|s| s.as_u64());
        if found != Some(FRAME_SCHEMA_VERSION as u64) {
            return Err(Error::Schema {
                what: "frame trace",
                found: found.unwrap_or(0) as u32,
                expected: FRAME_SCHEMA_VERSION,
            });
        }
        frames.push(serde_json::from_value(v)?);
    }
    Ok(frames)
}
