//! Reading per-frame pose-estimator output and repairing it into a
//! consistent two-dancer sequence.
//!
//! Input is line-delimited JSON, one object per frame:
//!
//! ```text
//! {"frame": 0, "people": [{"score": 0.93, "joints": [x0, y0, z0, x1, ...]}, ...]}
//! ```
//!
//! A person's position for distance tests is its root joint (index 0).

use std::io::{BufRead, Write};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::sequence::{JointSequence, COORDS};

pub type Pose = Vec<[f64; 3]>;

pub const ROOT_JOINT: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    /// Position of the record in the upstream person list.
    pub person_id: u32,
    pub score: f64,
    pub joints: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub detections: Vec<DetectionRecord>,
}

impl FrameDetections {
    pub fn sort_by_score(&mut self) {
        // stable: equal scores keep upstream order
        self.detections
            .sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    }
}

/// Exactly two dancers per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDuetSequence {
    pub frames: Vec<(Pose, Pose)>,
    pub fps: f64,
}

impl RawDuetSequence {
    pub fn new(frames: Vec<(Pose, Pose)>, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::NoData("duet sequence has no frames".into()));
        }
        Ok(Self { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn to_sequences(&self) -> Result<(JointSequence, JointSequence)> {
        let a: Vec<Pose> = self.frames.iter().map(|(a, _)| a.clone()).collect();
        let b: Vec<Pose> = self.frames.iter().map(|(_, b)| b.clone()).collect();
        Ok((
            JointSequence::from_poses(&a, self.fps)?,
            JointSequence::from_poses(&b, self.fps)?,
        ))
    }

    pub fn from_sequences(a: &JointSequence, b: &JointSequence) -> Result<Self> {
        if !a.same_layout(b) {
            return Err(Error::dim("dancer sequences differ in shape"));
        }
        let pose = |s: &JointSequence, t: usize| -> Pose { (0..s.joints()).map(|j| s.joint(t, j)).collect() };
        let frames = (0..a.frames()).map(|t| (pose(a, t), pose(b, t))).collect();
        Self::new(frames, a.fps)
    }
}

fn parse_err(location: String, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        location,
        field: field.to_string(),
        message: message.into(),
    }
}

/// Parses the line-delimited detection format. Every record must carry
/// `joints * 3` finite coordinates; detections come back sorted by
/// descending score and frame indices must strictly increase.
pub fn parse_detections(reader: impl BufRead, joints: usize) -> Result<Vec<FrameDetections>> {
    let mut out: Vec<FrameDetections> = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let here = format!("line {}", line_no + 1);
        let obj: Value = serde_json::from_str(&line).map_err(|e| parse_err(here.clone(), "<record>", e.to_string()))?;
        let frame_index = obj
            .get("frame")
            .and_then(Value::as_u64)
            .ok_or_else(|| parse_err(here.clone(), "frame", "missing or not a non-negative integer"))?;
        let loc = format!("frame {frame_index}");
        if let Some(prev) = out.last() {
            if frame_index <= prev.frame_index {
                return Err(parse_err(
                    loc,
                    "frame",
                    format!("index must exceed previous frame {}", prev.frame_index),
                ));
            }
        }
        let people = obj
            .get("people")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err(loc.clone(), "people", "missing or not a list"))?;
        let mut detections = Vec::with_capacity(people.len());
        for (pid, person) in people.iter().enumerate() {
            let score = person
                .get("score")
                .and_then(Value::as_f64)
                .filter(|s| s.is_finite())
                .ok_or_else(|| parse_err(loc.clone(), "score", format!("person {pid}: missing or not a finite number")))?;
            let raw = person
                .get("joints")
                .and_then(Value::as_array)
                .ok_or_else(|| parse_err(loc.clone(), "joints", format!("person {pid}: missing or not a list")))?;
            if raw.len() != joints * COORDS {
                return Err(Error::Dimension(format!(
                    "frame {frame_index}, person {pid}: joints has {} values ({} rows), expected M={joints} rows of D={COORDS}",
                    raw.len(),
                    raw.len() as f64 / COORDS as f64
                )));
            }
            let mut coords = Vec::with_capacity(raw.len());
            for v in raw {
                let x = v
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(loc.clone(), "joints", format!("person {pid}: non-numeric or non-finite coordinate")))?;
                coords.push(x);
            }
            let pose = coords.chunks_exact(COORDS).map(|c| [c[0], c[1], c[2]]).collect();
            detections.push(DetectionRecord {
                person_id: pid as u32,
                score,
                joints: pose,
            });
        }
        let mut frame = FrameDetections {
            frame_index,
            detections,
        };
        frame.sort_by_score();
        out.push(frame);
    }
    Ok(out)
}

/// Writes frames in the line-delimited detection format.
pub fn write_detections(mut writer: impl Write, frames: &[FrameDetections]) -> Result<()> {
    for f in frames {
        let people: Vec<Value> = f
            .detections
            .iter()
            .map(|d| {
                let flat: Vec<f64> = d.joints.iter().flat_map(|j| j.iter().copied()).collect();
                json!({ "score": d.score, "joints": flat })
            })
            .collect();
        serde_json::to_writer(&mut writer, &json!({ "frame": f.frame_index, "people": people }))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn root_distance(a: &Pose, b: &Pose) -> f64 {
    let (p, q) = (a[ROOT_JOINT], b[ROOT_JOINT]);
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

/// Reduces a frame to exactly two dancers.
///
/// Two or more detections keep the two highest scores. A single detection is
/// paired with a copy of whichever previous-frame dancer is farther from it.
/// An empty frame repeats the previous pair.
pub fn select_top_two(frame: &FrameDetections, previous: Option<&(Pose, Pose)>) -> Result<(Pose, Pose)> {
    let mut order: Vec<&DetectionRecord> = frame.detections.iter().collect();
    order.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    match (order.len(), previous) {
        (2.., _) => Ok((order[0].joints.clone(), order[1].joints.clone())),
        (1, Some((pa, pb))) => {
            let det = &order[0].joints;
            let replica = if root_distance(det, pa) > root_distance(det, pb) { pa } else { pb };
            Ok((det.clone(), replica.clone()))
        }
        (0, Some(prev)) => Ok(prev.clone()),
        (n, None) => Err(Error::UnrecoverableStart(format!(
            "frame {} has {n} detection(s) and no previous frame to borrow from",
            frame.frame_index
        ))),
    }
}

/// Fills frames without detections from the nearest preceding non-empty
/// frame; leading empty frames borrow from the first non-empty one.
pub fn impute_missing(frames: &[FrameDetections]) -> Result<Vec<FrameDetections>> {
    let first = frames
        .iter()
        .position(|f| !f.detections.is_empty())
        .ok_or_else(|| Error::NoData("every frame is empty".into()))?;
    let mut source = &frames[first].detections;
    Ok(frames
        .iter()
        .map(|f| {
            if f.detections.is_empty() {
                FrameDetections {
                    frame_index: f.frame_index,
                    detections: source.clone(),
                }
            } else {
                source = &f.detections;
                f.clone()
            }
        })
        .collect())
}

/// Like [`resolve_identities`], also reporting how many frames were reordered.
pub fn resolve_identities_counted(seq: &RawDuetSequence) -> (RawDuetSequence, usize) {
    let mut frames = seq.frames.clone();
    let mut swaps = 0;
    for t in 1..frames.len() {
        let (prev, curr) = frames.split_at_mut(t);
        let (pa, pb) = &prev[t - 1];
        let (ca, cb) = &mut curr[0];
        let keep = root_distance(ca, pa) + root_distance(cb, pb);
        let swapped = root_distance(ca, pb) + root_distance(cb, pa);
        if swapped < keep {
            std::mem::swap(ca, cb);
            swaps += 1;
        }
    }
    (
        RawDuetSequence {
            frames,
            fps: seq.fps,
        },
        swaps,
    )
}

/// Reorders each frame's dancers to best match the previous (already
/// resolved) frame by root-joint distance. Frame 0 fixes the identities; ties
/// keep the incoming order.
pub fn resolve_identities(seq: &RawDuetSequence) -> RawDuetSequence {
    resolve_identities_counted(seq).0
}

/// Counts gathered while repairing one detection file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RepairStats {
    pub frames: usize,
    pub frames_imputed: usize,
    pub single_detection_frames: usize,
    pub ghosts_culled: usize,
    pub swaps_fixed: usize,
}

/// impute → top-two selection → identity resolution.
pub fn repair_detections(frames: &[FrameDetections], fps: f64) -> Result<(RawDuetSequence, RepairStats)> {
    let mut stats = RepairStats {
        frames: frames.len(),
        frames_imputed: frames.iter().filter(|f| f.detections.is_empty()).count(),
        ..Default::default()
    };
    let filled = impute_missing(frames)?;
    let mut pairs: Vec<(Pose, Pose)> = Vec::with_capacity(filled.len());
    for f in &filled {
        let n = f.detections.len();
        stats.ghosts_culled += n.saturating_sub(2);
        if n == 1 {
            stats.single_detection_frames += 1;
        }
        let pair = select_top_two(f, pairs.last())?;
        pairs.push(pair);
    }
    let (resolved, swaps) = resolve_identities_counted(&RawDuetSequence::new(pairs, fps)?);
    stats.swaps_fixed = swaps;
    Ok((resolved, stats))
}
