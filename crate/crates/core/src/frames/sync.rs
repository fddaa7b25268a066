use std::fmt;

use super::{FrameError, GaitEventKind, KinematicsSample, TrialRecord};

/// Frames whose bracketing kinematics samples are further apart than this
/// (one nominal 20 Hz frame period) are dropped.
pub const MAX_BRACKET_GAP_MS: i64 = 50;

const MIN_MEAN_FRAME_GAP_MS: f64 = 25.0;
const MAX_MEAN_FRAME_GAP_MS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncedSample {
    pub frame_index: usize,
    pub timestamp_ms: i64,
    pub knee_angle_deg: f64,
    pub knee_velocity_deg_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyncResult {
    pub samples: Vec<SyncedSample>,
    /// Frame indices without usable kinematics.
    pub dropped: Vec<usize>,
}

/// Linearly interpolates angle and velocity at every frame timestamp.
pub fn synchronize_kinematics(trial: &TrialRecord) -> Result<SyncResult, FrameError> {
    let kin = &trial.kinematics;
    let (k_first, k_last) = match (kin.first(), kin.last()) {
        (Some(a), Some(b)) => (a.timestamp_ms, b.timestamp_ms),
        _ => return Err(FrameError::EmptyTrial { what: "kinematics" }),
    };
    let frames = trial.frames.frames();
    let (f_first, f_last) = (
        frames[0].timestamp_ms,
        frames[frames.len() - 1].timestamp_ms,
    );
    if f_last < k_first || f_first > k_last {
        return Err(FrameError::NoOverlap);
    }

    let mut out = SyncResult::default();
    for (frame_index, frame) in frames.iter().enumerate() {
        match interpolate_at(kin, frame.timestamp_ms) {
            Some((angle, velocity)) => out.samples.push(SyncedSample {
                frame_index,
                timestamp_ms: frame.timestamp_ms,
                knee_angle_deg: angle,
                knee_velocity_deg_s: velocity,
            }),
            None => out.dropped.push(frame_index),
        }
    }
    Ok(out)
}

fn interpolate_at(kin: &[KinematicsSample], t: i64) -> Option<(f64, f64)> {
    let idx = kin.partition_point(|k| k.timestamp_ms < t);
    if idx < kin.len() && kin[idx].timestamp_ms == t {
        let k = &kin[idx];
        return Some((k.knee_angle_deg, k.knee_velocity_deg_s));
    }
    if idx == 0 || idx == kin.len() {
        return None;
    }
    let (a, b) = (&kin[idx - 1], &kin[idx]);
    let gap = b.timestamp_ms - a.timestamp_ms;
    if gap > MAX_BRACKET_GAP_MS {
        return None;
    }
    let w = (t - a.timestamp_ms) as f64 / gap as f64;
    Some((
        a.knee_angle_deg + w * (b.knee_angle_deg - a.knee_angle_deg),
        a.knee_velocity_deg_s + w * (b.knee_velocity_deg_s - a.knee_velocity_deg_s),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return f.write_str("pass");
        }
        write!(f, "fail: {}", self.violations.join("; "))
    }
}

/// Checks trial invariants and the domain requirements for stride analysis.
pub fn validate_trial(trial: &TrialRecord) -> ValidationReport {
    let mut v = Vec::new();
    let frames = trial.frames.frames();
    let g = trial.frames.geometry();

    if frames.is_empty() {
        v.push("no frames".to_string());
    }
    if g.pixel_spacing_mm.is_nan() || g.pixel_spacing_mm <= 0.0 {
        v.push("pixel spacing not positive".to_string());
    }
    if frames
        .iter()
        .any(|f| f.intensities.len() != g.pixel_count() || f.geometry != g)
    {
        v.push("frame raster size mismatch".to_string());
    }
    if frames
        .windows(2)
        .any(|w| w[1].timestamp_ms <= w[0].timestamp_ms)
    {
        v.push("frame timestamps not strictly increasing".to_string());
    }
    if trial
        .events
        .windows(2)
        .any(|w| w[1].timestamp_ms <= w[0].timestamp_ms)
    {
        v.push("event timestamps not strictly increasing".to_string());
    }
    if trial
        .kinematics
        .windows(2)
        .any(|w| w[1].timestamp_ms <= w[0].timestamp_ms)
    {
        v.push("kinematics timestamps not strictly increasing".to_string());
    }
    let heel_strikes = trial
        .events
        .iter()
        .filter(|e| e.kind == GaitEventKind::HeelStrike)
        .count();
    if heel_strikes < 2 {
        v.push("insufficient gait events".to_string());
    }
    if frames.len() >= 2 {
        let span = frames[frames.len() - 1].timestamp_ms - frames[0].timestamp_ms;
        let mean_gap = span as f64 / (frames.len() - 1) as f64;
        if !(MIN_MEAN_FRAME_GAP_MS..=MAX_MEAN_FRAME_GAP_MS).contains(&mean_gap) {
            v.push(format!(
                "frame rate out of range (mean gap {mean_gap:.1} ms)"
            ));
        }
    }
    if let (Some(k0), Some(k1)) = (trial.kinematics.first(), trial.kinematics.last()) {
        let outside = frames
            .iter()
            .filter(|f| f.timestamp_ms < k0.timestamp_ms || f.timestamp_ms > k1.timestamp_ms)
            .count();
        if outside > 0 {
            v.push(format!("{outside} frames outside kinematics span"));
        }
    } else {
        v.push("no kinematics".to_string());
    }
    ValidationReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{
        Annotation, FrameGeometry, FrameSequence, GaitEvent, Task, TrialMeta, UltrasoundFrame,
    };
    use proptest::prelude::*;

    fn meta() -> TrialMeta {
        TrialMeta {
            subject_id: "s".into(),
            task: Task::Level,
            trial_index: 0,
        }
    }

    fn hs(t: i64) -> GaitEvent {
        GaitEvent {
            timestamp_ms: t,
            kind: GaitEventKind::HeelStrike,
            annotation: Annotation::None,
        }
    }

    fn kin(t: i64, angle: f64) -> KinematicsSample {
        KinematicsSample {
            timestamp_ms: t,
            knee_angle_deg: angle,
            knee_velocity_deg_s: -angle,
        }
    }

    fn trial_with(
        frame_times: &[i64],
        events: Vec<GaitEvent>,
        kinematics: Vec<KinematicsSample>,
    ) -> TrialRecord {
        let g = FrameGeometry::new(1, 1, 1.0).unwrap();
        let frames = frame_times
            .iter()
            .map(|&t| UltrasoundFrame::new(t, g, vec![0]).unwrap())
            .collect();
        TrialRecord::new(
            meta(),
            FrameSequence::new(g, frames).unwrap(),
            events,
            kinematics,
        )
        .unwrap()
    }

    #[test]
    fn midpoint_interpolation() {
        let t = trial_with(
            &[50],
            vec![hs(0)],
            vec![kin(0, 0.0), kin(50, 5.0), kin(100, 10.0)],
        );
        let s = synchronize_kinematics(&t).unwrap();
        assert_eq!(s.samples[0].knee_angle_deg, 5.0);

        let t = trial_with(
            &[50],
            vec![hs(0)],
            vec![kin(0, 0.0), kin(40, 4.0), kin(60, 6.0), kin(100, 10.0)],
        );
        let s = synchronize_kinematics(&t).unwrap();
        assert_eq!(s.samples[0].knee_angle_deg, 5.0);
        assert_eq!(s.samples[0].knee_velocity_deg_s, -5.0);
    }

    #[test]
    fn exact_hit_returns_sample() {
        let t = trial_with(&[0], vec![hs(0)], vec![kin(0, 7.0), kin(10, 8.0)]);
        let s = synchronize_kinematics(&t).unwrap();
        assert_eq!(s.samples[0].knee_angle_deg, 7.0);
    }

    #[test]
    fn wide_gap_drops_frame() {
        let t = trial_with(
            &[0, 100, 200],
            vec![hs(0)],
            vec![kin(0, 0.0), kin(200, 10.0)],
        );
        let s = synchronize_kinematics(&t).unwrap();
        assert_eq!(s.dropped, vec![1]);
        assert_eq!(s.samples.len(), 2);
    }

    #[test]
    fn gap_of_exactly_fifty_is_kept() {
        let t = trial_with(&[25], vec![hs(0)], vec![kin(0, 0.0), kin(50, 10.0)]);
        let s = synchronize_kinematics(&t).unwrap();
        assert_eq!(s.samples[0].knee_angle_deg, 5.0);
    }

    #[test]
    fn disjoint_spans_is_no_overlap() {
        let t = trial_with(&[500, 550], vec![hs(0)], vec![kin(0, 0.0), kin(100, 1.0)]);
        assert!(matches!(
            synchronize_kinematics(&t),
            Err(FrameError::NoOverlap)
        ));
    }

    #[test]
    fn well_formed_trial_validates() {
        let frames: Vec<i64> = (0..20).map(|i| i * 50).collect();
        let k = (0..=100).map(|i| kin(i * 10, i as f64)).collect();
        let t = trial_with(&frames, vec![hs(0), hs(500), hs(950)], k);
        let r = validate_trial(&t);
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn single_heel_strike_fails_validation() {
        let frames: Vec<i64> = (0..20).map(|i| i * 50).collect();
        let k = (0..=100).map(|i| kin(i * 10, i as f64)).collect();
        let r = validate_trial(&trial_with(&frames, vec![hs(0)], k));
        assert!(!r.passed());
        assert!(r.violations.iter().any(|v| v == "insufficient gait events"));
    }

    #[test]
    fn fast_frame_rate_fails_validation() {
        let frames: Vec<i64> = (0..20).map(|i| i * 10).collect();
        let k = (0..=20).map(|i| kin(i * 10, i as f64)).collect();
        let r = validate_trial(&trial_with(&frames, vec![hs(0), hs(100)], k));
        assert!(r
            .violations
            .iter()
            .any(|v| v.starts_with("frame rate out of range")));
    }

    proptest! {
        #[test]
        fn affine_kinematics_interpolate_exactly(
            slope in -50.0f64..50.0,
            offset in -90.0f64..90.0,
            frame_times in proptest::collection::btree_set(0i64..2000, 1..40),
        ) {
            let k = (0..=200).map(|i| {
                let t = i * 10;
                KinematicsSample { timestamp_ms: t, knee_angle_deg: offset + slope * t as f64 / 1000.0, knee_velocity_deg_s: slope }
            }).collect();
            let times: Vec<i64> = frame_times.into_iter().collect();
            let t = trial_with(&times, vec![hs(0)], k);
            let s = synchronize_kinematics(&t).unwrap();
            prop_assert!(s.samples.len() <= times.len());
            prop_assert!(s.dropped.is_empty());
            for sample in &s.samples {
                let want = offset + slope * sample.timestamp_ms as f64 / 1000.0;
                prop_assert!((sample.knee_angle_deg - want).abs() <= 1e-9 * want.abs().max(1.0));
            }
        }

        #[test]
        fn retained_frames_have_close_neighbours(
            kin_times in proptest::collection::btree_set(0i64..3000, 2..60),
            frame_times in proptest::collection::btree_set(0i64..3000, 1..60),
        ) {
            let k: Vec<KinematicsSample> = kin_times.iter().map(|&t| kin(t, t as f64)).collect();
            let times: Vec<i64> = frame_times.into_iter().collect();
            let t = trial_with(&times, vec![hs(0)], k.clone());
            if let Ok(s) = synchronize_kinematics(&t) {
                prop_assert_eq!(s.samples.len() + s.dropped.len(), times.len());
                for sample in &s.samples {
                    let idx = k.partition_point(|x| x.timestamp_ms < sample.timestamp_ms);
                    if k[idx].timestamp_ms != sample.timestamp_ms {
                        prop_assert!(k[idx].timestamp_ms - k[idx - 1].timestamp_ms <= MAX_BRACKET_GAP_MS);
                    }
                }
            }
        }
    }
}
