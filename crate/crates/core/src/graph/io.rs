//! Plain-text graph ingestion and export.
//!
//! Edge file: whitespace-separated "u v" pairs, one per line, 0-based ids,
//! `#` comment lines allowed. Feature file: headerless CSV, one row per node
//! in id order. Label file: one 0/1 integer per line in id order.

use super::SparseGraph;
use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Loads a graph from the three-file format. Directed input is symmetrized,
/// duplicates deduplicated, self-loops dropped. Node count comes from the
/// feature file; a nonempty edge file must agree (max id + 1).
pub fn load_graph(edge_path: &Path, feature_path: &Path, label_path: &Path) -> Result<SparseGraph> {
    let edge_text =
        fs::read_to_string(edge_path).map_err(|e| Error::io(edge_path, e))?;
    let mut edges = Vec::new();
    let mut max_id: Option<usize> = None;
    for (lineno, raw) in edge_text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>, lineno: usize| -> Result<usize> {
            tok.ok_or_else(|| Error::parse(edge_path, lineno + 1, "expected \"u v\""))?
                .parse::<usize>()
                .map_err(|e| Error::parse(edge_path, lineno + 1, format!("bad node id: {e}")))
        };
        let u = parse(it.next(), lineno)?;
        let v = parse(it.next(), lineno)?;
        if it.next().is_some() {
            return Err(Error::parse(
                edge_path,
                lineno + 1,
                "trailing tokens after \"u v\"",
            ));
        }
        max_id = Some(max_id.map_or(u.max(v), |m| m.max(u).max(v)));
        edges.push((u, v));
    }

    let feature_text =
        fs::read_to_string(feature_path).map_err(|e| Error::io(feature_path, e))?;
    let mut features = Vec::new();
    let mut feature_dim = None;
    let mut num_rows = 0usize;
    for (lineno, raw) in feature_text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(feature_path, lineno + 1, format!("bad value: {e}")))
            })
            .collect::<Result<_>>()?;
        match feature_dim {
            None => feature_dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::parse(
                    feature_path,
                    lineno + 1,
                    format!("row has {} columns, expected {d}", row.len()),
                ))
            }
            _ => {}
        }
        features.extend(row);
        num_rows += 1;
    }
    if num_rows == 0 {
        return Err(Error::InvalidInput(format!(
            "{}: no feature rows",
            feature_path.display()
        )));
    }
    if let Some(m) = max_id {
        if m + 1 != num_rows {
            return Err(Error::InvalidInput(format!(
                "feature file has {num_rows} rows but edge file references ids up to {m}"
            )));
        }
    }

    let label_text = fs::read_to_string(label_path).map_err(|e| Error::io(label_path, e))?;
    let mut labels = Vec::new();
    for (lineno, raw) in label_text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let v: u8 = line
            .parse()
            .map_err(|e| Error::parse(label_path, lineno + 1, format!("bad label: {e}")))?;
        if v > 1 {
            return Err(Error::parse(label_path, lineno + 1, format!("label {v} is not 0/1")));
        }
        labels.push(v);
    }
    if labels.len() != num_rows {
        return Err(Error::InvalidInput(format!(
            "label file has {} lines but feature file has {num_rows} rows",
            labels.len()
        )));
    }

    let graph = SparseGraph::from_edges(
        num_rows,
        &edges,
        features,
        feature_dim.unwrap(),
        Some(labels),
    )?;
    graph.validate()?;
    Ok(graph)
}

/// Writes the three-file format; `load_graph` on the result reproduces the
/// in-memory graph exactly.
pub fn save_graph(
    graph: &SparseGraph,
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
) -> Result<()> {
    let write = |path: &Path, body: String| -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    };

    let mut edge_body = String::new();
    for (u, v) in graph.undirected_edges() {
        edge_body.push_str(&format!("{u} {v}\n"));
    }
    write(edge_path, edge_body)?;

    let f = graph.feature_dim();
    let mut feat_body = String::new();
    for row in graph.features().chunks(f) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        feat_body.push_str(&line.join(","));
        feat_body.push('\n');
    }
    write(feature_path, feat_body)?;

    let labels = graph
        .labels()
        .ok_or_else(|| Error::InvalidInput("cannot save a graph without labels".into()))?;
    let mut label_body = String::new();
    for l in labels {
        label_body.push_str(&format!("{l}\n"));
    }
    write(label_path, label_body)
}
