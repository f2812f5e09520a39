//! JSON-lines episode traces for replay and debugging.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::actions::ActionSpec;
use super::world::{ObjectId, Pose, WorldState};
use super::SimError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u32,
    pub action: ActionSpec,
    pub reward: f64,
    pub done: bool,
    pub agent_pose: Pose,
    pub changed_object_ids: Vec<ObjectId>,
}

/// Ids whose state differs between two worlds, ascending.
pub fn changed_objects(before: &WorldState, after: &WorldState) -> Vec<ObjectId> {
    after
        .objects
        .iter()
        .filter(|(id, o)| before.objects.get(id) != Some(o))
        .map(|(id, _)| *id)
        .collect()
}

pub fn write_trace(records: &[TraceRecord], mut w: impl Write) -> Result<(), SimError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| SimError::Trace(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace(r: impl BufRead) -> Result<Vec<TraceRecord>, SimError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SimError::Trace(e.to_string()))?);
    }
    Ok(out)
}
