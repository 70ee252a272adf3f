//! Artifact files: value tables, policies, refinement tables, metadata.
//!
//! CSV files start with a `# config_hash=<hex>, version=<v>` line; readers
//! skip `#` lines. JSON files carry `config_hash` and `version` keys.
//! Floats are written in shortest round-trip form so reloads are exact.
//!
//! Column orders:
//!
//! * `value.csv`: `node, theta_1..theta_N, value, argmin`
//! * `policy.csv`: `node, theta_1..theta_N, action, v_1..v_d`
//! * `refinement.csv`: `n, delta, value, gap, iterations`
//! * path CSVs: `t, Y, u_index, theta_1..theta_N`

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actions::ActionGrid;
use crate::dp::{RefineRow, ValueFunction, ValueMetadata};
use crate::error::{Error, Result};
use crate::measures::{make_simplex_grid, AtomSet, DEFAULT_NODE_CAP};

pub const ARTIFACT_VERSION: &str = concat!("mvm-control/", env!("CARGO_PKG_VERSION"));

/// Hex SHA-256 of `bytes`.
pub fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn header_line(hash: &str) -> String {
    format!("# config_hash={hash}, version={ARTIFACT_VERSION}\n")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Opens `path` for writing and emits the header comment.
pub fn create_stamped(path: &Path, hash: &str) -> Result<BufWriter<File>> {
    let mut out = create(path)?;
    out.write_all(header_line(hash).as_bytes())?;
    Ok(out)
}

/// Writes `value` as pretty JSON with `config_hash` and `version` added.
pub fn write_json(path: &Path, value: &impl Serialize, hash: &str) -> Result<()> {
    let mut json = serde_json::to_value(value)?;
    if let Some(map) = json.as_object_mut() {
        map.insert("config_hash".into(), hash.into());
        map.insert("version".into(), ARTIFACT_VERSION.into());
    }
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &json)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?)
}

fn theta_headers(n: usize) -> impl Iterator<Item = String> {
    (1..=n).map(|i| format!("theta_{i}"))
}

/// Metadata stored next to a value table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueArtifact {
    pub atoms: Vec<f64>,
    pub m: u32,
    pub beta: f64,
    pub action_grid: serde_json::Value,
    #[serde(flatten)]
    pub meta: ValueMetadata,
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub version: String,
}

pub fn write_value_artifacts(
    dir: &Path,
    v: &ValueFunction,
    actions: &ActionGrid,
    beta: f64,
    hash: &str,
) -> Result<()> {
    let grid = &v.grid;
    let n = grid.atoms().len();

    let mut w = csv::Writer::from_writer(create_stamped(&dir.join("value.csv"), hash)?);
    let mut header = vec!["node".to_string()];
    header.extend(theta_headers(n));
    header.extend(["value".into(), "argmin".into()]);
    w.write_record(&header)?;
    for node in 0..grid.len() {
        let mut row = vec![node.to_string()];
        row.extend(grid.node_weights(node).iter().map(|x| x.to_string()));
        row.push(v.values[node].to_string());
        row.push(
            v.policy
                .as_ref()
                .map(|p| p[node].to_string())
                .unwrap_or_default(),
        );
        w.write_record(&row)?;
    }
    w.flush()?;

    if let Some(policy) = &v.policy {
        let mut w = csv::Writer::from_writer(create_stamped(&dir.join("policy.csv"), hash)?);
        let mut header = vec!["node".to_string()];
        header.extend(theta_headers(n));
        header.push("action".into());
        header.extend((1..=actions.order()).map(|i| format!("v_{i}")));
        w.write_record(&header)?;
        for (node, &a) in policy.iter().enumerate() {
            let mut row = vec![node.to_string()];
            row.extend(grid.node_weights(node).iter().map(|x| x.to_string()));
            row.push(a.to_string());
            row.extend(actions.candidates()[a].coeffs().iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
    }

    let artifact = ValueArtifact {
        atoms: grid.atoms().as_slice().to_vec(),
        m: grid.resolution(),
        beta,
        action_grid: serde_json::from_str(&actions.to_json()?)?,
        meta: v.meta.clone(),
        config_hash: hash.into(),
        version: ARTIFACT_VERSION.into(),
    };
    write_json(&dir.join("metadata.json"), &artifact, hash)
}

/// Reloads a value table written by [`write_value_artifacts`]. With
/// `expected` set, a different atom set is an artifact mismatch.
pub fn load_value_artifacts(
    dir: &Path,
    expected: Option<&AtomSet>,
) -> Result<(ValueFunction, ActionGrid, ValueArtifact)> {
    let text = std::fs::read_to_string(dir.join("metadata.json"))?;
    let artifact: ValueArtifact = serde_json::from_str(&text)?;
    let atoms = AtomSet::new(artifact.atoms.clone())
        .map_err(|e| Error::ArtifactMismatch(format!("stored atoms: {e}")))?;
    if let Some(want) = expected {
        if want != &atoms {
            return Err(Error::ArtifactMismatch(format!(
                "value artifact atoms {:?} differ from configured {:?}",
                atoms.as_slice(),
                want.as_slice()
            )));
        }
    }
    let actions = ActionGrid::from_json(&artifact.action_grid.to_string())?;
    let grid = Arc::new(make_simplex_grid(atoms, artifact.m, DEFAULT_NODE_CAP)?);

    let n = grid.atoms().len();
    let mut values = Vec::with_capacity(grid.len());
    let mut policy = Vec::with_capacity(grid.len());
    let mut has_policy = true;
    for (node, record) in csv_reader(&dir.join("value.csv"))?.records().enumerate() {
        let record = record?;
        if record.len() != n + 3 || node >= grid.len() {
            return Err(Error::ArtifactMismatch("value table does not match its grid".into()));
        }
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| Error::ArtifactMismatch(format!("bad number {:?}: {e}", &record[i])))
        };
        let stored: Vec<f64> = (1..=n).map(parse).collect::<Result<_>>()?;
        let expect = grid.node_weights(node);
        if stored.iter().zip(&expect).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::ArtifactMismatch(format!("node {node} weights differ from grid")));
        }
        values.push(parse(n + 1)?);
        match record[n + 2].parse::<usize>() {
            Ok(a) if a < actions.len() => policy.push(a),
            _ => has_policy = false,
        }
    }
    if values.len() != grid.len() {
        return Err(Error::ArtifactMismatch(format!(
            "value table has {} rows for {} nodes",
            values.len(),
            grid.len()
        )));
    }
    let v = ValueFunction {
        grid,
        values,
        policy: has_policy.then_some(policy),
        meta: artifact.meta.clone(),
    };
    Ok((v, actions, artifact))
}

pub fn write_refinement_csv(path: &Path, rows: &[RefineRow], hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_stamped(path, hash)?);
    w.write_record(["n", "delta", "value", "gap", "iterations"])?;
    for r in rows {
        w.write_record([
            r.level.to_string(),
            r.delta.to_string(),
            r.value.to_string(),
            r.gap.map(|g| g.to_string()).unwrap_or_default(),
            r.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_refinement_csv(path: &Path) -> Result<Vec<RefineRow>> {
    let mut rows = Vec::new();
    for record in csv_reader(path)?.records() {
        let r = record?;
        let num = |i: usize| -> Result<f64> {
            r[i].parse::<f64>()
                .map_err(|e| Error::ArtifactMismatch(format!("refinement column {i}: {e}")))
        };
        rows.push(RefineRow {
            level: num(0)? as u32,
            delta: num(1)?,
            value: num(2)?,
            gap: if r[3].is_empty() { None } else { Some(num(3)?) },
            iterations: num(4)? as usize,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::ActionVec;

    fn sample() -> (ValueFunction, ActionGrid) {
        let atoms = AtomSet::new(vec![-1.0, 0.5, 1.0]).unwrap();
        let grid = Arc::new(make_simplex_grid(atoms, 3, DEFAULT_NODE_CAP).unwrap());
        let actions = ActionGrid::from_candidates(
            vec![
                ActionVec::zero(2, 2.0, 4.0).unwrap(),
                ActionVec::new(vec![0.5, 0.1], 2.0, 4.0).unwrap(),
            ],
            "test",
        )
        .unwrap();
        let values: Vec<f64> = (0..grid.len()).map(|i| 0.1 * i as f64 + 1.0 / 3.0).collect();
        let policy = (0..grid.len()).map(|i| i % 2).collect();
        let v = ValueFunction {
            grid,
            values,
            policy: Some(policy),
            meta: ValueMetadata {
                level: 2,
                iterations: 7,
                residual: 1e-12,
                ..Default::default()
            },
        };
        (v, actions)
    }

    #[test]
    fn value_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (v, actions) = sample();
        write_value_artifacts(dir.path(), &v, &actions, 1.0, "abc").unwrap();
        let text = std::fs::read_to_string(dir.path().join("value.csv")).unwrap();
        assert!(text.starts_with("# config_hash=abc, version="));
        assert!(text.lines().nth(1).unwrap().starts_with("node,theta_1,theta_2,theta_3,value,argmin"));
        let (back, grid_back, meta) = load_value_artifacts(dir.path(), Some(v.grid.atoms())).unwrap();
        assert_eq!(back.values, v.values);
        assert_eq!(back.policy, v.policy);
        assert_eq!(back.meta, v.meta);
        assert_eq!(grid_back.candidates(), actions.candidates());
        assert_eq!(meta.config_hash, "abc");
    }

    #[test]
    fn atom_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (v, actions) = sample();
        write_value_artifacts(dir.path(), &v, &actions, 1.0, "abc").unwrap();
        let other = AtomSet::new(vec![-1.0, 1.0]).unwrap();
        assert!(matches!(
            load_value_artifacts(dir.path(), Some(&other)),
            Err(Error::ArtifactMismatch(_))
        ));
    }

    #[test]
    fn refinement_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            RefineRow { level: 0, delta: 1.0, value: 0.9, iterations: 5, gap: None },
            RefineRow { level: 1, delta: 0.5, value: 0.85, iterations: 9, gap: Some(0.05) },
        ];
        let path = dir.path().join("refinement.csv");
        write_refinement_csv(&path, &rows, "h").unwrap();
        assert_eq!(read_refinement_csv(&path).unwrap(), rows);
    }
}
