//! Mean and SD bands of stride-normalized measured and predicted traces.

use std::io::Write;

use super::{CellResult, ExperimentError, StridePrediction};
use crate::frames::Task;
use crate::gait::{
    trajectory_band, transition_triplets, write_band_rows, NormalizedStride, Stride, StrideLabel,
};

const TRIPLET_OFFSETS: [f64; 3] = [-100.0, 0.0, 100.0];

fn as_stride(p: &StridePrediction) -> Stride {
    Stride {
        subject_id: String::new(),
        task: p.key.task,
        trial_index: p.key.trial_index,
        stride_index: p.key.stride_index,
        start_ms: p.start_ms,
        end_ms: p.end_ms,
        label: p.label,
        sample_rows: Vec::new(),
    }
}

fn write_pair<W: Write>(
    w: &mut W,
    series: &str,
    offset: f64,
    members: &[&StridePrediction],
) -> Result<(), ExperimentError> {
    if members.is_empty() {
        return Ok(());
    }
    for (kind, pick) in [("measured", false), ("predicted", true)] {
        let normalized: Vec<NormalizedStride> = members
            .iter()
            .map(|p| {
                if pick {
                    p.normalized_predicted()
                } else {
                    p.normalized_measured()
                }
            })
            .collect::<Result<_, _>>()?;
        let band = trajectory_band(&normalized)?;
        write_band_rows(&mut *w, &format!("{series}/{kind}"), offset, &band)?;
    }
    Ok(())
}

/// Writes `series,percent,mean,sd` rows pooled over all given cells.
///
/// Per task the series is `<paradigm>/<feature_set>/<target>/<task>/all`
/// over 0..100 percent. Stair tasks add one series per label and, for
/// walk-to-stair / steady / stair-to-walk triplets, `.../transition/<label>`
/// bands placed at -100..0, 0..100, and 100..200 percent.
pub fn write_trajectories<W: Write>(mut w: W, cells: &[CellResult]) -> Result<(), ExperimentError> {
    writeln!(w, "series,percent,mean,sd")?;
    let mut groups: Vec<(String, Vec<&CellResult>)> = Vec::new();
    for c in cells {
        let name = format!("{}/{}/{}", c.paradigm, c.feature_set, c.target);
        match groups.iter_mut().find(|(n, _)| *n == name) {
            Some((_, v)) => v.push(c),
            None => groups.push((name, vec![c])),
        }
    }
    for (name, group) in &groups {
        for task in Task::ALL {
            let all: Vec<&StridePrediction> =
                group.iter().flat_map(|c| c.predictions(task)).collect();
            write_pair(&mut w, &format!("{name}/{task}/all"), 0.0, &all)?;
            if !task.is_stair() {
                continue;
            }
            for label in StrideLabel::ALL {
                let members: Vec<&StridePrediction> =
                    all.iter().copied().filter(|p| p.label == label).collect();
                write_pair(&mut w, &format!("{name}/{task}/{label}"), 0.0, &members)?;
            }
            let mut slots: [Vec<&StridePrediction>; 3] = Default::default();
            for cell in group {
                let mut preds: Vec<&StridePrediction> = cell.predictions(task).collect();
                preds.sort_by_key(|p| p.key);
                let strides: Vec<Stride> = preds.iter().map(|p| as_stride(p)).collect();
                for triplet in transition_triplets(&strides) {
                    if triplet.iter().all(Option::is_some) {
                        for (slot, idx) in slots.iter_mut().zip(triplet) {
                            slot.push(preds[idx.expect("checked above")]);
                        }
                    }
                }
            }
            for ((slot, offset), label) in slots.iter().zip(TRIPLET_OFFSETS).zip(StrideLabel::ALL) {
                write_pair(
                    &mut w,
                    &format!("{name}/{task}/transition/{label}"),
                    offset,
                    slot,
                )?;
            }
        }
    }
    Ok(())
}
