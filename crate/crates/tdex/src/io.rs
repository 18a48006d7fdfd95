//! Trajectory files: one JSON record per line.
//!
//! Fields per record: `t`, `tactile` (15x4x4x3 nested arrays), `ee_pos`,
//! `ee_quat`, `joints`, `fingertips` (4x3), optional `visual_feature`,
//! optional `action` (23 numbers ordered ee_pos | ee_quat | joints).
//! Readers accept scientific notation.

use crate::data::{
    Action, Frame, RobotState, TactileFrame, Trajectory, NUM_AXES, NUM_PADS, PAD_COLS, PAD_ROWS,
};
use crate::error::{Result, TdexError};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Serialize, Deserialize)]
struct TrajRecord {
    t: f64,
    tactile: Vec<Vec<Vec<Vec<f64>>>>,
    ee_pos: [f64; 3],
    ee_quat: [f64; 4],
    joints: Vec<f64>,
    fingertips: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    visual_feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action: Option<Vec<f64>>,
}

fn frame_to_record(frame: &Frame) -> TrajRecord {
    let mut tactile = Vec::with_capacity(NUM_PADS);
    for pad in 0..NUM_PADS {
        let mut rows = Vec::with_capacity(PAD_ROWS);
        for row in 0..PAD_ROWS {
            let mut cols = Vec::with_capacity(PAD_COLS);
            for col in 0..PAD_COLS {
                cols.push(
                    (0..NUM_AXES)
                        .map(|axis| frame.tactile.get(pad, row, col, axis))
                        .collect(),
                );
            }
            rows.push(cols);
        }
        tactile.push(rows);
    }
    TrajRecord {
        t: frame.t,
        tactile,
        ee_pos: frame.state.ee_pos,
        ee_quat: frame.state.ee_quat,
        joints: frame.state.joints.to_vec(),
        fingertips: frame.state.fingertips.to_vec(),
        visual_feature: frame.visual_feature.clone(),
        action: frame.action.as_ref().map(Action::to_vec),
    }
}

fn record_to_frame(record: TrajRecord, line: usize) -> Result<Frame> {
    let bad = |what: &str| TdexError::InvalidData(format!("line {line}: {what}"));
    if record.tactile.len() != NUM_PADS {
        return Err(bad("tactile must have 15 pads"));
    }
    let mut values = Vec::with_capacity(NUM_PADS * PAD_ROWS * PAD_COLS * NUM_AXES);
    for pad in &record.tactile {
        if pad.len() != PAD_ROWS {
            return Err(bad("each pad must have 4 rows"));
        }
        for row in pad {
            if row.len() != PAD_COLS {
                return Err(bad("each pad row must have 4 columns"));
            }
            for taxel in row {
                if taxel.len() != NUM_AXES {
                    return Err(bad("each taxel must have 3 axes"));
                }
                values.extend_from_slice(taxel);
            }
        }
    }
    let joints: [f64; 16] = record
        .joints
        .as_slice()
        .try_into()
        .map_err(|_| bad("joints must have 16 entries"))?;
    let fingertips: [[f64; 3]; 4] = record
        .fingertips
        .as_slice()
        .try_into()
        .map_err(|_| bad("fingertips must have 4 entries"))?;
    Ok(Frame {
        t: record.t,
        tactile: TactileFrame::from_values(values)?,
        state: RobotState {
            ee_pos: record.ee_pos,
            ee_quat: record.ee_quat,
            joints,
            fingertips,
        },
        visual_feature: record.visual_feature,
        action: record
            .action
            .as_deref()
            .map(Action::from_slice)
            .transpose()?,
    })
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    for frame in traj.frames() {
        serde_json::to_writer(&mut out, &frame_to_record(frame))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajRecord = serde_json::from_str(&line)?;
        frames.push(record_to_frame(record, i + 1)?);
    }
    Trajectory::from_frames(frames)
}

/// Reads every `*.jsonl` file in a directory, sorted by file name so the
/// result is deterministic.
pub fn read_trajectory_dir(dir: &Path) -> Result<Vec<(String, Trajectory)>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "jsonl").unwrap_or(false))
        .collect();
    names.sort();
    let mut out = Vec::with_capacity(names.len());
    for path in names {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push((name, read_trajectory(&path)?));
    }
    Ok(out)
}

pub fn write_trajectory_dir(dir: &Path, trajs: &[Trajectory], prefix: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, traj) in trajs.iter().enumerate() {
        write_trajectory(&dir.join(format!("{prefix}_{i:04}.jsonl")), traj)?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct FeatureManifest {
    rows: usize,
    dim: usize,
    dtype: String,
    meta: serde_json::Map<String, serde_json::Value>,
}

/// Writes a feature matrix as `<base>.json` (manifest) plus `<base>.bin`
/// (little-endian f32, row-major).
pub fn write_feature_matrix(
    base: &Path,
    rows: &[Vec<f64>],
    meta: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    let dim = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(TdexError::InvalidData("ragged feature rows".into()));
    }
    if let Some(dir) = base.parent() {
        fs::create_dir_all(dir)?;
    }
    let manifest = FeatureManifest {
        rows: rows.len(),
        dim,
        dtype: "f32".into(),
        meta,
    };
    fs::write(
        base.with_extension("json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    let mut buf = Vec::with_capacity(rows.len() * dim * 4);
    for row in rows {
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(base.with_extension("bin"), buf)?;
    Ok(())
}

pub fn read_feature_matrix(
    base: &Path,
) -> Result<(Vec<Vec<f64>>, serde_json::Map<String, serde_json::Value>)> {
    let manifest: FeatureManifest =
        serde_json::from_str(&fs::read_to_string(base.with_extension("json"))?)?;
    let bytes = fs::read(base.with_extension("bin"))?;
    if bytes.len() != manifest.rows * manifest.dim * 4 {
        return Err(TdexError::InvalidData(format!(
            "feature blob has {} bytes, manifest expects {}",
            bytes.len(),
            manifest.rows * manifest.dim * 4
        )));
    }
    let mut rows = Vec::with_capacity(manifest.rows);
    let mut offset = 0usize;
    for _ in 0..manifest.rows {
        let mut row = Vec::with_capacity(manifest.dim);
        for _ in 0..manifest.dim {
            row.push(f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as f64);
            offset += 4;
        }
        rows.push(row);
    }
    Ok((rows, manifest.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IDENTITY_QUAT;

    fn sample_traj(with_action: bool) -> Trajectory {
        let mut frames = Vec::new();
        for i in 0..3 {
            let mut tactile = TactileFrame::zeros();
            tactile.set(1, 2, 3, 0, 0.5 + i as f64);
            frames.push(Frame {
                t: i as f64 * 0.1,
                tactile,
                state: RobotState {
                    ee_pos: [0.1 * i as f64, 0.0, 0.2],
                    ee_quat: IDENTITY_QUAT,
                    joints: [0.01; 16],
                    fingertips: [[0.1, 0.2, 0.3]; 4],
                },
                visual_feature: Some(vec![1.0, -2.5e-3]),
                action: with_action.then(|| Action {
                    ee_pos: [0.0, 0.1, 0.2],
                    ee_quat: IDENTITY_QUAT,
                    joints: [0.5; 16],
                }),
            });
        }
        Trajectory::from_frames(frames).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let traj = sample_traj(true);
        write_trajectory(&path, &traj).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn reader_accepts_scientific_notation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_trajectory(&path, &sample_traj(false)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        // rewrite one field in scientific notation
        let text = text.replace("\"t\":0.1", "\"t\":1e-1");
        assert!(text.contains("1e-1"));
        fs::write(&path, text).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.frames()[1].t, 0.1);
    }

    #[test]
    fn malformed_tactile_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_trajectory(&path, &sample_traj(false)).unwrap();
        let mut lines: Vec<String> = fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        lines[0] = lines[0].replacen("[[[[", "[[[[9.0,", 1); // 4 axes on one taxel
        fs::write(&path, lines.join("\n")).unwrap();
        assert!(read_trajectory(&path).is_err());
    }

    #[test]
    fn feature_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("features");
        let rows = vec![vec![1.0, -2.5, 0.125], vec![3.5, 0.0, 9.0]];
        let mut meta = serde_json::Map::new();
        meta.insert("variant".into(), serde_json::Value::from("raw_720"));
        write_feature_matrix(&base, &rows, meta).unwrap();
        let (back, meta) = read_feature_matrix(&base).unwrap();
        assert_eq!(back, rows); // exactly representable in f32
        assert_eq!(meta.get("variant").unwrap(), "raw_720");
    }

    #[test]
    fn dir_read_is_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let trajs = vec![sample_traj(false), sample_traj(true)];
        write_trajectory_dir(dir.path(), &trajs, "traj").unwrap();
        let back = read_trajectory_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "traj_0000");
        assert_eq!(back[1].0, "traj_0001");
        assert_eq!(back[1].1, trajs[1]);
    }
}
