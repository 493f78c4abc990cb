//! Joint sequences and the cleaned duet interchange file.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mat;

pub const COORDS: usize = 3;
pub const HYBRIK_JOINTS: usize = 29;
pub const DEFAULT_FPS: f64 = 30.0;

/// `T x M x D` joint positions for one dancer, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSequence {
    data: Vec<f64>,
    frames: usize,
    joints: usize,
    coords: usize,
    pub fps: f64,
}

impl JointSequence {
    pub fn new(data: Vec<f64>, frames: usize, joints: usize, coords: usize, fps: f64) -> Result<Self> {
        if data.len() != frames * joints * coords {
            return Err(Error::dim(format!(
                "sequence {frames}x{joints}x{coords} needs {} values, got {}",
                frames * joints * coords,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite coordinate at flat index {i}")));
        }
        Ok(Self {
            data,
            frames,
            joints,
            coords,
            fps,
        })
    }

    pub fn zeros(frames: usize, joints: usize, coords: usize, fps: f64) -> Self {
        Self {
            data: vec![0.0; frames * joints * coords],
            frames,
            joints,
            coords,
            fps,
        }
    }

    /// Builds from per-frame poses, each a list of `[x, y, z]` joints.
    pub fn from_poses(poses: &[Vec<[f64; 3]>], fps: f64) -> Result<Self> {
        let joints = poses.first().map_or(0, |p| p.len());
        if poses.iter().any(|p| p.len() != joints) {
            return Err(Error::dim("poses have differing joint counts"));
        }
        let data = poses.iter().flatten().flat_map(|j| j.iter().copied()).collect();
        Self::new(data, poses.len(), joints, COORDS, fps)
    }

    /// Interprets a `T x (M*D)` matrix as a sequence.
    pub fn from_mat(m: &Mat, joints: usize, coords: usize, fps: f64) -> Result<Self> {
        if m.cols() != joints * coords {
            return Err(Error::dim(format!(
                "matrix width {} is not {joints}x{coords}",
                m.cols()
            )));
        }
        Self::new(m.data().to_vec(), m.rows(), joints, coords, fps)
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_vec(self.frames, self.frame_dim(), self.data.clone()).expect("consistent dims")
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn coords(&self) -> usize {
        self.coords
    }

    pub fn frame_dim(&self) -> usize {
        self.joints * self.coords
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.frames, self.joints, self.coords]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.frame_dim();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let w = self.frame_dim();
        &mut self.data[t * w..(t + 1) * w]
    }

    pub fn joint(&self, t: usize, j: usize) -> [f64; 3] {
        let f = self.frame(t);
        let c = self.coords;
        [f[j * c], f[j * c + 1], f[j * c + 2]]
    }

    /// Frames `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames {
            return Err(Error::arg(format!(
                "frames {start}..{} out of {}",
                start + len,
                self.frames
            )));
        }
        let w = self.frame_dim();
        Ok(Self {
            data: self.data[start * w..(start + len) * w].to_vec(),
            frames: len,
            joints: self.joints,
            coords: self.coords,
            fps: self.fps,
        })
    }

    pub fn same_layout(&self, other: &JointSequence) -> bool {
        self.shape() == other.shape()
    }

    /// Values of one scalar channel (`joint * coords + coord`) over time.
    pub fn channel(&self, ch: usize) -> Vec<f64> {
        let w = self.frame_dim();
        (0..self.frames).map(|t| self.data[t * w + ch]).collect()
    }

    pub fn set_channel(&mut self, ch: usize, values: &[f64]) {
        let w = self.frame_dim();
        for (t, v) in values.iter().enumerate() {
            self.data[t * w + ch] = *v;
        }
    }
}

/// Cleaned two-dancer sequence file: `fps`, `shape = [T, M, D]` and both
/// dancers as flat row-major lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanedSequenceFile {
    pub fps: f64,
    pub shape: [usize; 3],
    pub dancer1: Vec<f64>,
    pub dancer2: Vec<f64>,
}

impl CleanedSequenceFile {
    pub fn from_pair(a: &JointSequence, b: &JointSequence) -> Result<Self> {
        if !a.same_layout(b) {
            return Err(Error::dim(format!(
                "dancer shapes differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        Ok(Self {
            fps: a.fps,
            shape: a.shape(),
            dancer1: a.data().to_vec(),
            dancer2: b.data().to_vec(),
        })
    }

    pub fn into_pair(self) -> Result<(JointSequence, JointSequence)> {
        let [t, m, d] = self.shape;
        let a = JointSequence::new(self.dancer1, t, m, d, self.fps)?;
        let b = JointSequence::new(self.dancer2, t, m, d, self.fps)?;
        Ok((a, b))
    }

    pub fn read(reader: impl Read) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn write(&self, mut writer: impl Write) -> Result<()> {
        serde_json::to_writer(&mut writer, self)?;
        writer.write_all(b"\n")?;
        Ok(())
    }
}

/// Writes `frame,dancer,joint,x,y,z` rows for every frame of both dancers.
pub fn write_animation_csv(
    mut writer: impl Write,
    dancer1: &JointSequence,
    dancer2: &JointSequence,
) -> Result<()> {
    if !dancer1.same_layout(dancer2) {
        return Err(Error::dim("animation export needs equal dancer shapes"));
    }
    writeln!(writer, "frame,dancer,joint,x,y,z")?;
    for t in 0..dancer1.frames() {
        for (d, seq) in [(1, dancer1), (2, dancer2)] {
            for j in 0..seq.joints() {
                let [x, y, z] = seq.joint(t, j);
                writeln!(writer, "{t},{d},{j},{x},{y},{z}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_nan() {
        assert!(JointSequence::new(vec![0.0; 5], 2, 1, 3, 30.0).is_err());
        assert!(JointSequence::new(vec![0.0, f64::NAN, 0.0], 1, 1, 3, 30.0).is_err());
    }

    #[test]
    fn cleaned_file_round_trip_is_exact() {
        let a = JointSequence::new((0..12).map(|i| i as f64 * 0.1 + 1e-17).collect(), 2, 2, 3, 30.0).unwrap();
        let b = JointSequence::new((0..12).map(|i| -(i as f64).sqrt() / 7.0).collect(), 2, 2, 3, 30.0).unwrap();
        let file = CleanedSequenceFile::from_pair(&a, &b).unwrap();
        let mut buf = Vec::new();
        file.write(&mut buf).unwrap();
        let (a2, b2) = CleanedSequenceFile::read(buf.as_slice()).unwrap().into_pair().unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn animation_csv_layout() {
        let a = JointSequence::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 1, 3, 30.0).unwrap();
        let b = JointSequence::zeros(2, 1, 3, 30.0);
        let mut buf = Vec::new();
        write_animation_csv(&mut buf, &a, &b).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "frame,dancer,joint,x,y,z");
        assert_eq!(lines[1], "0,1,0,1,2,3");
        assert_eq!(lines[3], "1,1,0,4,5,6");
    }
}
