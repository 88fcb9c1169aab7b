use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ingested, Point, RawTrajectory};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    points: Vec<[f64; 3]>,
}

/// One JSON object per line: `{"id": .., "points": [[lon, lat, t], ..]}`.
/// Bad lines are skipped with a warning.
pub fn ingest_jsonl(path: &Path) -> Result<Ingested> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Ingested::default();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Record>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| {
                let t = RawTrajectory::new(r.id, r.points.iter().map(|p| Point::new(p[0], p[1], p[2])).collect());
                t.validate().map(|_| t).map_err(|e| e.to_string())
            });
        match parsed {
            Ok(t) => out.trajectories.push(t),
            Err(reason) => {
                log::warn!("{}:{}: skipping line: {reason}", path.display(), n + 1);
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, trajs: &[RawTrajectory]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in trajs {
        let rec = Record {
            id: t.id.clone(),
            points: t.points.iter().map(|p| [p.lon, p.lat, p.t]).collect(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        fs::write(&p, "{\"id\":\"a\",\"points\":[[0,0,0],[1,1,10]]}\n").unwrap();
        let got = ingest_jsonl(&p).unwrap();
        assert_eq!(got.trajectories.len(), 1);
        assert_eq!(got.trajectories[0].len(), 2);
        assert_eq!(got.trajectories[0].points[1], Point::new(1.0, 1.0, 10.0));
    }

    #[test]
    fn empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        fs::write(&p, "").unwrap();
        assert!(ingest_jsonl(&p).unwrap().trajectories.is_empty());
    }

    #[test]
    fn bad_lines_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.jsonl");
        fs::write(
            &p,
            "{\"id\":\"a\",\"points\":[[0,0,0]]}\nnot json\n{\"points\":[[0,0,0]]}\n{\"id\":\"b\",\"points\":[[0,0,5],[0,0,1]]}\n",
        )
        .unwrap();
        let got = ingest_jsonl(&p).unwrap();
        assert_eq!((got.trajectories.len(), got.skipped), (1, 3));
    }

    #[test]
    fn hundred_line_round_trip_preserves_ids() {
        let trajs: Vec<RawTrajectory> = (0..100)
            .map(|i| {
                let pts = (0..=i % 7)
                    .map(|k| Point::new(-8.6 + k as f64 * 1e-3, 41.1 + i as f64 * 1e-4, k as f64 * 15.0))
                    .collect();
                RawTrajectory::new(format!("t{i}"), pts)
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.jsonl");
        write_jsonl(&p, &trajs).unwrap();
        let got = ingest_jsonl(&p).unwrap();
        assert_eq!(got.trajectories, trajs);
    }
}
