//! Chrome Trace Event export: one process per node, one thread per
//! `(rank, stream)` lane named `"rank.stream"`.

use std::collections::BTreeSet;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::simulator::{Phase, Stream, Timeline};

const MICROS: f64 = 1e6;

fn tid(rank: usize, stream: Stream) -> usize {
    rank * Stream::ALL.len() + stream.index()
}

pub fn trace_json(timeline: &Timeline) -> Value {
    let mut records = Vec::with_capacity(timeline.events.len() + 16);
    let lanes: BTreeSet<(usize, Stream)> = timeline.events.iter().map(|e| (e.rank, e.stream)).collect();
    let nodes: BTreeSet<usize> = lanes.iter().map(|&(r, _)| timeline.node_of(r)).collect();
    for node in nodes {
        records.push(json!({
            "ph": "M", "name": "process_name", "pid": node, "tid": 0,
            "args": { "name": format!("node {node}") },
        }));
    }
    for &(rank, stream) in &lanes {
        records.push(json!({
            "ph": "M", "name": "thread_name", "pid": timeline.node_of(rank), "tid": tid(rank, stream),
            "args": { "name": format!("{rank}.{}", stream.label()) },
        }));
    }
    for e in &timeline.events {
        let mut args = Map::new();
        args.insert("rank".into(), json!(e.rank));
        args.insert("stream".into(), json!(e.stream.label()));
        args.insert("payload".into(), json!(e.payload));
        if let Some(p) = e.peer {
            args.insert("peer".into(), json!(p));
        }
        if let Some(r) = e.route {
            args.insert("route".into(), json!(r));
        }
        if let Some(r) = e.ring {
            args.insert("ring".into(), json!(r));
        }
        if let Some(r) = e.round {
            args.insert("round".into(), json!(r));
        }
        records.push(json!({
            "name": e.kind.label(),
            "cat": match e.phase { Phase::Forward => "forward", Phase::Backward => "backward" },
            "ph": "X",
            "ts": e.start * MICROS,
            "dur": e.duration * MICROS,
            "pid": timeline.node_of(e.rank),
            "tid": tid(e.rank, e.stream),
            "args": Value::Object(args),
        }));
    }
    json!({ "traceEvents": records, "displayTimeUnit": "ms" })
}

pub fn export_trace(timeline: &Timeline, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&trace_json(timeline)).expect("trace serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
