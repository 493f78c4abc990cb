//! Procedural duets and corrupted detection fixtures built from them.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::pose_ingest::{DetectionRecord, FrameDetections, Pose, RepairStats};
use crate::sequence::{JointSequence, COORDS, DEFAULT_FPS};

/// Highest sinusoid frequency in cycles per frame: 10% of Nyquist.
pub const MAX_FREQUENCY: f64 = 0.05;
pub const MIN_FREQUENCY: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Mirror,
    Orbit,
    LeadFollow,
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mirror" => Ok(Style::Mirror),
            "orbit" => Ok(Style::Orbit),
            "lead-follow" => Ok(Style::LeadFollow),
            other => Err(Error::arg(format!(
                "unknown style `{other}` (expected mirror, orbit or lead-follow)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    /// Mirror: frames dancer 2 trails its reflection of dancer 1.
    pub mirror_lag: usize,
    /// Lead-follow: frames dancer 2 trails dancer 1.
    pub follow_delay: usize,
    /// Lead-follow: per-coordinate noise added to the follower.
    pub follow_noise: f64,
    /// Distance between the dancers' roots along x.
    pub separation: f64,
    pub sinusoids: usize,
    pub amplitude: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            mirror_lag: 4,
            follow_delay: 8,
            follow_noise: 0.005,
            separation: 2.0,
            sinusoids: 3,
            amplitude: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    amp: f64,
    freq: f64,
    phase: f64,
}

/// A smooth body: fixed joint offsets plus a few sinusoids per coordinate.
struct Body {
    rest: Vec<f64>,
    waves: Vec<Vec<Wave>>,
}

impl Body {
    fn random(joints: usize, p: &SynthParams, rng: &mut impl Rng) -> Self {
        let rest = (0..joints)
            .flat_map(|j| {
                let spread = if j == 0 { 0.0 } else { 0.3 };
                [rng.random_range(-spread..=spread), 0.1 * j as f64, rng.random_range(-spread..=spread)]
            })
            .collect();
        let waves = (0..joints * COORDS)
            .map(|_| {
                (0..p.sinusoids)
                    .map(|_| Wave {
                        amp: p.amplitude * rng.random_range(0.2..1.0),
                        freq: rng.random_range(MIN_FREQUENCY..MAX_FREQUENCY),
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                    })
                    .collect()
            })
            .collect();
        Self { rest, waves }
    }

    fn channel(&self, ch: usize, t: f64) -> f64 {
        let motion: f64 = self.waves[ch]
            .iter()
            .map(|w| w.amp * (std::f64::consts::TAU * w.freq * t + w.phase).sin())
            .sum();
        self.rest[ch] + motion
    }

    fn frame(&self, t: f64, root: [f64; 3]) -> Vec<f64> {
        (0..self.rest.len()).map(|ch| root[ch % COORDS] + self.channel(ch, t)).collect()
    }
}

/// Smooth coupled two-dancer motion, deterministic per seed.
pub fn synth_duet(length: usize, joints: usize, seed: u64, style: Style) -> Result<(JointSequence, JointSequence)> {
    synth_duet_with(length, joints, seed, style, &SynthParams::default())
}

pub fn synth_duet_with(
    length: usize,
    joints: usize,
    seed: u64,
    style: Style,
    p: &SynthParams,
) -> Result<(JointSequence, JointSequence)> {
    if length < 2 || joints == 0 {
        return Err(Error::arg(format!("synthetic duet needs T >= 2 and M >= 1, got T={length}, M={joints}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lead = Body::random(joints, p, &mut rng);
    let half = 0.5 * p.separation;
    let w = joints * COORDS;
    let mut a = Vec::with_capacity(length * w);
    let mut b = Vec::with_capacity(length * w);
    match style {
        Style::Mirror => {
            let lag = p.mirror_lag as f64;
            for t in 0..length {
                let t = t as f64;
                a.extend(lead.frame(t, [half, 0.0, 0.0]));
                let mut r = lead.frame(t - lag, [half, 0.0, 0.0]);
                r.iter_mut().step_by(COORDS).for_each(|x| *x = -*x);
                b.extend(r);
            }
        }
        Style::Orbit => {
            let partner = Body::random(joints, p, &mut rng);
            let freq = rng.random_range(MIN_FREQUENCY..MAX_FREQUENCY) * 0.5;
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            for t in 0..length {
                let angle = std::f64::consts::TAU * freq * t as f64 + theta;
                let (s, c) = angle.sin_cos();
                a.extend(lead.frame(t as f64, [half * c, 0.0, half * s]));
                b.extend(partner.frame(t as f64, [-half * c, 0.0, -half * s]));
            }
        }
        Style::LeadFollow => {
            let k = p.follow_delay as f64;
            let noise = Normal::new(0.0, p.follow_noise).map_err(|e| Error::arg(e.to_string()))?;
            for t in 0..length {
                let t = t as f64;
                a.extend(lead.frame(t, [half, 0.0, 0.0]));
                let f = lead.frame(t - k, [half, 0.0, 0.0]);
                b.extend(
                    f.into_iter()
                        .enumerate()
                        .map(|(ch, v)| v + follow_offset(ch, p) + noise.sample(&mut rng)),
                );
            }
        }
    }
    Ok((
        JointSequence::new(a, length, joints, COORDS, DEFAULT_FPS)?,
        JointSequence::new(b, length, joints, COORDS, DEFAULT_FPS)?,
    ))
}

/// Lead-follow places the follower `separation` behind the leader on x.
pub fn follow_offset(channel: usize, p: &SynthParams) -> f64 {
    if channel % COORDS == 0 {
        -p.separation
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorruptionSpec {
    /// Frames where the dancers' detection scores (and hence order) are swapped.
    pub swap_frames: Vec<usize>,
    /// Frames with no detections at all.
    pub drop_frames: Vec<usize>,
    /// Frames that gain a third, low-score detection.
    pub ghost_frames: Vec<usize>,
    pub ghost_score: f64,
    /// Noise added to every rendered coordinate.
    pub jitter_sigma: f64,
}

impl CorruptionSpec {
    /// Random isolated corruptions: distinct frames, none at frame 0, no two
    /// within one frame of each other.
    pub fn random(frames: usize, swaps: usize, drops: usize, ghosts: usize, rng: &mut impl Rng) -> Result<Self> {
        let needed = swaps + drops + ghosts;
        let slots = frames.saturating_sub(1) / 2;
        if needed > slots {
            return Err(Error::arg(format!(
                "{needed} isolated corruptions do not fit in {frames} frames"
            )));
        }
        let picks: Vec<usize> = sample(rng, slots, needed).into_iter().map(|s| 1 + 2 * s).collect();
        Ok(Self {
            swap_frames: picks[..swaps].to_vec(),
            drop_frames: picks[swaps..swaps + drops].to_vec(),
            ghost_frames: picks[swaps + drops..].to_vec(),
            ghost_score: 0.05,
            jitter_sigma: 0.0,
        })
    }
}

/// A corrupted detection stream with its ground truth.
#[derive(Debug, Clone)]
pub struct Corrupted {
    pub frames: Vec<FrameDetections>,
    /// The clean input pair.
    pub clean: (JointSequence, JointSequence),
    /// What repair should produce: the jittered pair with dropped frames
    /// forward-filled (leading drops back-filled).
    pub expected: (JointSequence, JointSequence),
    /// Injected counts in the shape repair reports them.
    pub injected: RepairStats,
}

pub const PRIMARY_SCORE: f64 = 0.9;
pub const SECONDARY_SCORE: f64 = 0.8;

fn pose_of(seq: &JointSequence, t: usize) -> Pose {
    (0..seq.joints()).map(|j| seq.joint(t, j)).collect()
}

pub fn corrupt(pair: &(JointSequence, JointSequence), spec: &CorruptionSpec, seed: u64) -> Result<Corrupted> {
    let (a, b) = pair;
    if !a.same_layout(b) {
        return Err(Error::dim("corrupt: dancers differ in shape"));
    }
    let n = a.frames();
    for (what, list) in [("swap", &spec.swap_frames), ("drop", &spec.drop_frames), ("ghost", &spec.ghost_frames)] {
        if let Some(&bad) = list.iter().find(|&&f| f >= n) {
            return Err(Error::arg(format!("{what} frame {bad} out of range for {n} frames")));
        }
    }
    let drops: BTreeSet<usize> = spec.drop_frames.iter().copied().collect();
    if drops.len() == n {
        return Err(Error::arg("corrupt: every frame dropped"));
    }
    let swaps: BTreeSet<usize> = spec.swap_frames.iter().copied().collect();
    let ghosts: BTreeSet<usize> = spec.ghost_frames.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, spec.jitter_sigma).map_err(|e| Error::arg(e.to_string()))?;

    let mut ja = a.clone();
    let mut jb = b.clone();
    if spec.jitter_sigma > 0.0 {
        for v in ja.data_mut().iter_mut().chain(jb.data_mut().iter_mut()) {
            *v += jitter.sample(&mut rng);
        }
    }

    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let mut detections = Vec::new();
        if !drops.contains(&t) {
            let (s1, s2) = if swaps.contains(&t) {
                (SECONDARY_SCORE, PRIMARY_SCORE)
            } else {
                (PRIMARY_SCORE, SECONDARY_SCORE)
            };
            let mut people = vec![(s1, pose_of(&ja, t)), (s2, pose_of(&jb, t))];
            people.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal));
            if ghosts.contains(&t) {
                let root = ja.joint(t, 0);
                let shift = [rng.random_range(-3.0..3.0), 0.0, rng.random_range(-3.0..3.0)];
                let ghost = (0..a.joints())
                    .map(|j| {
                        let p = ja.joint(t, j);
                        [p[0] - root[0] + shift[0], p[1], p[2] - root[2] + shift[2]]
                    })
                    .collect();
                people.push((spec.ghost_score, ghost));
            }
            detections = people
                .into_iter()
                .enumerate()
                .map(|(i, (score, joints))| DetectionRecord {
                    person_id: i as u32,
                    score,
                    joints,
                })
                .collect();
        }
        frames.push(FrameDetections {
            frame_index: t as u64,
            detections,
        });
    }

    let first_kept = (0..n).find(|t| !drops.contains(t)).expect("not all dropped");
    let mut ea = ja.clone();
    let mut eb = jb.clone();
    let mut source = first_kept;
    for t in 0..n {
        if drops.contains(&t) {
            ea.frame_mut(t).copy_from_slice(ja.frame(source));
            eb.frame_mut(t).copy_from_slice(jb.frame(source));
        } else {
            source = t;
        }
    }

    let injected = RepairStats {
        frames: n,
        frames_imputed: drops.len(),
        single_detection_frames: 0,
        ghosts_culled: ghosts.difference(&drops).count(),
        swaps_fixed: swaps.difference(&drops).count(),
    };
    Ok(Corrupted {
        frames,
        clean: pair.clone(),
        expected: (ea, eb),
        injected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_ingest::{impute_missing, repair_detections, resolve_identities, select_top_two, RawDuetSequence};
    use crate::preprocess::dct_lowpass;

    #[test]
    fn style_names() {
        assert_eq!("lead-follow".parse::<Style>().unwrap(), Style::LeadFollow);
        assert!(matches!("tango".parse::<Style>(), Err(Error::Argument(_))));
    }

    #[test]
    fn mirror_is_lagged_reflection() {
        let p = SynthParams::default();
        let (a, b) = synth_duet(40, 4, 3, Style::Mirror).unwrap();
        for t in p.mirror_lag..40 {
            for (ch, (x, y)) in a.frame(t - p.mirror_lag).iter().zip(b.frame(t)).enumerate() {
                let want = if ch % 3 == 0 { -x } else { *x };
                assert_eq!(*y, want);
            }
        }
    }

    #[test]
    fn follower_is_delayed_leader_plus_noise() {
        let p = SynthParams::default();
        let (a, b) = synth_duet(60, 4, 5, Style::LeadFollow).unwrap();
        let k = p.follow_delay;
        let mut worst: f64 = 0.0;
        for t in k..60 {
            for (ch, (x, y)) in a.frame(t - k).iter().zip(b.frame(t)).enumerate() {
                worst = worst.max((y - x - follow_offset(ch, &p)).abs());
            }
        }
        assert!(worst > 0.0 && worst < 6.0 * p.follow_noise, "{worst}");
    }

    #[test]
    fn deterministic_per_seed() {
        for style in [Style::Mirror, Style::Orbit, Style::LeadFollow] {
            assert_eq!(synth_duet(30, 3, 9, style).unwrap(), synth_duet(30, 3, 9, style).unwrap());
            assert_ne!(synth_duet(30, 3, 9, style).unwrap(), synth_duet(30, 3, 10, style).unwrap());
        }
    }

    #[test]
    fn low_frequency_content_survives_smoothing() {
        for style in [Style::Mirror, Style::Orbit, Style::LeadFollow] {
            let (a, b) = synth_duet(128, 4, 1, style).unwrap();
            for s in [a, b] {
                let out = dct_lowpass(&s, 0.25).unwrap();
                let diff: f64 = out.data().iter().zip(s.data()).map(|(x, y)| (x - y).powi(2)).sum();
                let norm: f64 = s.data().iter().map(|x| x * x).sum();
                assert!((diff / norm).sqrt() < 0.01, "{style:?}: {}", (diff / norm).sqrt());
            }
        }
    }

    #[test]
    fn fixture_examples() {
        let pair = synth_duet(40, 4, 2, Style::Orbit).unwrap();
        let spec = CorruptionSpec {
            swap_frames: vec![30],
            drop_frames: vec![10, 11],
            ghost_frames: vec![20],
            ghost_score: 0.05,
            jitter_sigma: 0.0,
        };
        let c = corrupt(&pair, &spec, 1).unwrap();
        assert_eq!(c.frames[20].detections.len(), 3);
        let top = select_top_two(&c.frames[20], None).unwrap();
        assert_eq!(top, (pose_of(&pair.0, 20), pose_of(&pair.1, 20)));

        let filled = impute_missing(&c.frames).unwrap();
        assert_eq!(filled[10].detections, c.frames[9].detections);
        assert_eq!(filled[11].detections, c.frames[9].detections);

        let mut prev = None;
        let pairs: Vec<_> = filled
            .iter()
            .map(|f| {
                let p = select_top_two(f, prev.as_ref()).unwrap();
                prev = Some(p.clone());
                p
            })
            .collect();
        assert_eq!(pairs[30].0, pose_of(&pair.1, 30));
        let resolved = resolve_identities(&RawDuetSequence::new(pairs, 30.0).unwrap());
        assert_eq!(resolved.frames[30], (pose_of(&pair.0, 30), pose_of(&pair.1, 30)));

        let (seq, stats) = repair_detections(&c.frames, 30.0).unwrap();
        assert_eq!(seq.to_sequences().unwrap(), c.expected);
        assert_eq!(stats, c.injected);
    }

    #[test]
    fn out_of_range_indices() {
        let pair = synth_duet(10, 2, 2, Style::Mirror).unwrap();
        let spec = CorruptionSpec {
            drop_frames: vec![10],
            ..Default::default()
        };
        assert!(matches!(corrupt(&pair, &spec, 0), Err(Error::Argument(_))));
    }
}
