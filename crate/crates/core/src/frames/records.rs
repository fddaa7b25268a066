//! CSV event, kinematics and manifest files, and whole-trial load/store.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::container::{read_frames, write_frames};
use super::{
    check_increasing, Annotation, FrameError, GaitEvent, GaitEventKind, KinematicsSample, Task,
    TrialMeta, TrialRecord,
};

const EVENTS_HEADER: [&str; 3] = ["timestamp_ms", "kind", "annotation"];
const KINEMATICS_HEADER: [&str; 3] = ["timestamp_ms", "knee_angle_deg", "knee_velocity_deg_s"];
const MANIFEST_HEADER: [&str; 6] = [
    "subject_id",
    "task",
    "trial_index",
    "frames_path",
    "events_path",
    "kinematics_path",
];

/// File locations of one trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialPaths {
    pub frames: PathBuf,
    pub events: PathBuf,
    pub kinematics: PathBuf,
}

/// One manifest row. Paths are stored as written; relative paths resolve
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub meta: TrialMeta,
    pub paths: TrialPaths,
}

pub fn load_trial(
    frame_path: &Path,
    events_path: &Path,
    kinematics_path: &Path,
    meta: TrialMeta,
) -> Result<TrialRecord, FrameError> {
    let frames = read_frames(frame_path)?;
    let events = read_events(events_path)?;
    let kinematics = read_kinematics(kinematics_path)?;
    TrialRecord::new(meta, frames, events, kinematics)
}

pub fn write_trial(trial: &TrialRecord, paths: &TrialPaths) -> Result<(), FrameError> {
    write_frames(&paths.frames, &trial.frames)?;
    write_events(&paths.events, &trial.events)?;
    write_kinematics(&paths.kinematics, &trial.kinematics)
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<File>, FrameError> {
    let file = File::open(path).map_err(|e| FrameError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    check_header(&mut rdr, path, header)?;
    Ok(rdr)
}

fn check_header<R: Read>(
    rdr: &mut csv::Reader<R>,
    path: &Path,
    expected: &[&str],
) -> Result<(), FrameError> {
    let found = rdr
        .headers()
        .map_err(|e| malformed(path, 0, e.to_string()))?;
    if found.iter().ne(expected.iter().copied()) {
        return Err(malformed(
            path,
            0,
            format!(
                "expected header {}, found {}",
                expected.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(())
}

fn malformed(path: &Path, row: usize, message: impl Into<String>) -> FrameError {
    FrameError::MalformedRow {
        path: path.display().to_string(),
        row,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
    path: &Path,
    row: usize,
) -> Result<T, FrameError>
where
    T::Err: std::fmt::Display,
{
    let raw = rec
        .get(idx)
        .ok_or_else(|| malformed(path, row, format!("missing field {name}")))?;
    raw.parse::<T>()
        .map_err(|e| malformed(path, row, format!("field {name} = {raw:?}: {e}")))
}

pub fn read_events(path: &Path) -> Result<Vec<GaitEvent>, FrameError> {
    let mut rdr = open_csv(path, &EVENTS_HEADER)?;
    let mut events = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| malformed(path, row, e.to_string()))?;
        events.push(GaitEvent {
            timestamp_ms: field(&rec, 0, "timestamp_ms", path, row)?,
            kind: field::<GaitEventKind>(&rec, 1, "kind", path, row)?,
            annotation: field::<Annotation>(&rec, 2, "annotation", path, row)?,
        });
    }
    if events.is_empty() {
        return Err(FrameError::EmptyTrial {
            what: "gait events",
        });
    }
    check_increasing(
        events.iter().map(|e| e.timestamp_ms),
        &path.display().to_string(),
    )?;
    Ok(events)
}

pub fn read_kinematics(path: &Path) -> Result<Vec<KinematicsSample>, FrameError> {
    let mut rdr = open_csv(path, &KINEMATICS_HEADER)?;
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| malformed(path, row, e.to_string()))?;
        let s = KinematicsSample {
            timestamp_ms: field(&rec, 0, "timestamp_ms", path, row)?,
            knee_angle_deg: field(&rec, 1, "knee_angle_deg", path, row)?,
            knee_velocity_deg_s: field(&rec, 2, "knee_velocity_deg_s", path, row)?,
        };
        if !(s.knee_angle_deg.is_finite() && s.knee_velocity_deg_s.is_finite()) {
            return Err(malformed(path, row, "non-finite kinematics value"));
        }
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(FrameError::EmptyTrial { what: "kinematics" });
    }
    check_increasing(
        samples.iter().map(|s| s.timestamp_ms),
        &path.display().to_string(),
    )?;
    Ok(samples)
}

fn create(path: &Path) -> Result<BufWriter<File>, FrameError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| FrameError::io(path, e))
}

pub fn write_events(path: &Path, events: &[GaitEvent]) -> Result<(), FrameError> {
    let mut w = create(path)?;
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "{}", EVENTS_HEADER.join(","))?;
        for e in events {
            writeln!(
                w,
                "{},{},{}",
                e.timestamp_ms,
                e.kind.as_str(),
                e.annotation.as_str()
            )?;
        }
        w.flush()
    })();
    res.map_err(|e| FrameError::io(path, e))
}

pub fn write_kinematics(path: &Path, samples: &[KinematicsSample]) -> Result<(), FrameError> {
    let mut w = create(path)?;
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "{}", KINEMATICS_HEADER.join(","))?;
        for s in samples {
            writeln!(
                w,
                "{},{},{}",
                s.timestamp_ms, s.knee_angle_deg, s.knee_velocity_deg_s
            )?;
        }
        w.flush()
    })();
    res.map_err(|e| FrameError::io(path, e))
}

/// Reads a manifest, resolving relative paths against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, FrameError> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let mut rdr = open_csv(path, &MANIFEST_HEADER)?;
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| malformed(path, row, e.to_string()))?;
        let task: Task = field(&rec, 1, "task", path, row)?;
        let get = |idx: usize| rec.get(idx).unwrap_or_default();
        entries.push(ManifestEntry {
            meta: TrialMeta {
                subject_id: get(0).to_string(),
                task,
                trial_index: field(&rec, 2, "trial_index", path, row)?,
            },
            paths: TrialPaths {
                frames: resolve(get(3)),
                events: resolve(get(4)),
                kinematics: resolve(get(5)),
            },
        });
    }
    Ok(entries)
}

/// Writes manifest rows with paths exactly as given.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), FrameError> {
    let mut w = create(path)?;
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "{}", MANIFEST_HEADER.join(","))?;
        for e in entries {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.meta.subject_id,
                e.meta.task,
                e.meta.trial_index,
                e.paths.frames.display(),
                e.paths.events.display(),
                e.paths.kinematics.display()
            )?;
        }
        w.flush()
    })();
    res.map_err(|e| FrameError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{FrameGeometry, FrameSequence, UltrasoundFrame};

    fn trial() -> TrialRecord {
        let g = FrameGeometry::new(4, 3, 0.5).unwrap();
        let frames = (0..3)
            .map(|i| UltrasoundFrame::new(i * 50, g, vec![i as u8 * 10; 12]).unwrap())
            .collect();
        let events = vec![
            GaitEvent {
                timestamp_ms: 0,
                kind: GaitEventKind::HeelStrike,
                annotation: Annotation::None,
            },
            GaitEvent {
                timestamp_ms: 100,
                kind: GaitEventKind::HeelStrike,
                annotation: Annotation::WalkToStair,
            },
        ];
        let kinematics = (0..11)
            .map(|i| KinematicsSample {
                timestamp_ms: i * 10,
                knee_angle_deg: i as f64 * 0.1 + 1.0 / 3.0,
                knee_velocity_deg_s: -(i as f64) * 2.5,
            })
            .collect();
        TrialRecord::new(
            TrialMeta {
                subject_id: "s01".into(),
                task: Task::StairAscent,
                trial_index: 2,
            },
            FrameSequence::new(g, frames).unwrap(),
            events,
            kinematics,
        )
        .unwrap()
    }

    fn paths(dir: &Path) -> TrialPaths {
        TrialPaths {
            frames: dir.join("t.uskf"),
            events: dir.join("t.events.csv"),
            kinematics: dir.join("t.kinematics.csv"),
        }
    }

    #[test]
    fn trial_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let t = trial();
        let p = paths(dir.path());
        write_trial(&t, &p).unwrap();
        let back = load_trial(&p.frames, &p.events, &p.kinematics, t.meta()).unwrap();
        assert_eq!(back.frames.len(), 3);
        assert_eq!(back, t);
    }

    #[test]
    fn non_monotonic_events_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(
            &path,
            "timestamp_ms,kind,annotation\n100,heel_strike,none\n90,toe_off,none\n",
        )
        .unwrap();
        assert!(matches!(
            read_events(&path),
            Err(FrameError::NonMonotonicTimestamps { row: 1, .. })
        ));
    }

    #[test]
    fn malformed_row_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        std::fs::write(
            &path,
            "timestamp_ms,knee_angle_deg,knee_velocity_deg_s\n0,1.0,2.0\n10,abc,2.0\n",
        )
        .unwrap();
        match read_kinematics(&path) {
            Err(FrameError::MalformedRow {
                row: 2, message, ..
            }) => assert!(message.contains("knee_angle_deg")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_event_kind_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "timestamp_ms,kind,annotation\n0,mid_stance,none\n").unwrap();
        assert!(matches!(
            read_events(&path),
            Err(FrameError::MalformedRow { row: 1, .. })
        ));
    }

    #[test]
    fn empty_events_file_is_empty_trial() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "timestamp_ms,kind,annotation\n").unwrap();
        assert!(matches!(
            read_events(&path),
            Err(FrameError::EmptyTrial { .. })
        ));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let entry = ManifestEntry {
            meta: trial().meta(),
            paths: TrialPaths {
                frames: "s01/a.uskf".into(),
                events: "s01/a.events.csv".into(),
                kinematics: "/abs/a.kinematics.csv".into(),
            },
        };
        let mpath = dir.path().join("manifest.csv");
        write_manifest(&mpath, std::slice::from_ref(&entry)).unwrap();
        let back = read_manifest(&mpath).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].meta, entry.meta);
        assert_eq!(back[0].paths.frames, dir.path().join("s01/a.uskf"));
        assert_eq!(
            back[0].paths.kinematics,
            PathBuf::from("/abs/a.kinematics.csv")
        );
    }
}
