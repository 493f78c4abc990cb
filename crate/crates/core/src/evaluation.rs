//! Horizon MSE of partner rollouts and the CSV report.

use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::inference::rollout_partner;
use crate::model::{Dancer, DuetModel};
use crate::sequence::JointSequence;
use crate::training::make_windows;

pub const DEFAULT_HORIZONS: [usize; 4] = [16, 32, 48, 64];
pub const DEFAULT_SEQUENCES: usize = 10;

/// Published MSE per horizon for the reference model.
pub const PAPER_REFERENCE: [(usize, f64); 4] = [(16, 0.0126), (32, 0.0197), (48, 0.0219), (64, 0.0263)];

pub fn paper_reference(horizon: usize) -> Option<f64> {
    PAPER_REFERENCE.iter().find(|(h, _)| *h == horizon).map(|(_, v)| *v)
}

/// Context length used when none is given: 16 frames, shortened to half the
/// smallest horizon so every horizon has generated frames to score.
pub fn default_context(horizons: &[usize]) -> usize {
    let min = horizons.iter().copied().min().unwrap_or(32);
    16.min(min / 2).max(1)
}

/// One evaluation window in raw coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalWindow {
    pub leader: JointSequence,
    pub partner: JointSequence,
}

/// Produces the full partner sequence for a window. Implementations other
/// than test stubs must only read `partner` frames before `context`.
pub trait Predictor {
    fn predict(&self, window: &EvalWindow, context: usize, target: Dancer, rng: &mut ChaCha8Rng) -> Result<JointSequence>;
}

impl Predictor for DuetModel {
    fn predict(&self, window: &EvalWindow, context: usize, target: Dancer, rng: &mut ChaCha8Rng) -> Result<JointSequence> {
        let ctx = window.partner.slice(0, context)?;
        Ok(rollout_partner(self, &window.leader, &ctx, target, rng)?.sequence)
    }
}

/// Returns the ground truth.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoOracle;

impl Predictor for EchoOracle {
    fn predict(&self, window: &EvalWindow, _: usize, _: Dancer, _: &mut ChaCha8Rng) -> Result<JointSequence> {
        Ok(window.partner.clone())
    }
}

/// Copies the context, then emits `value` in every coordinate.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor {
    pub value: f64,
}

impl Predictor for ConstantPredictor {
    fn predict(&self, window: &EvalWindow, context: usize, _: Dancer, _: &mut ChaCha8Rng) -> Result<JointSequence> {
        let mut out = window.partner.clone();
        let start = context * out.frame_dim();
        out.data_mut()[start..].iter_mut().for_each(|v| *v = self.value);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub horizons: Vec<usize>,
    pub n_sequences: usize,
    /// Window length; also the longest admissible horizon.
    pub seq_len: usize,
    pub context: usize,
    pub stride: usize,
    pub target: Dancer,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            horizons: DEFAULT_HORIZONS.to_vec(),
            n_sequences: DEFAULT_SEQUENCES,
            seq_len: 64,
            context: default_context(&DEFAULT_HORIZONS),
            stride: 32,
            target: Dancer::Two,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonRow {
    pub horizon: usize,
    pub mse: f64,
    pub paper_reference: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HorizonTable {
    pub rows: Vec<HorizonRow>,
}

impl HorizonTable {
    pub fn sorted(&self) -> Vec<HorizonRow> {
        let mut rows = self.rows.clone();
        rows.sort_by_key(|r| r.horizon);
        rows
    }

    pub fn mse(&self, horizon: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.horizon == horizon).map(|r| r.mse)
    }
}

/// Mean squared error over frames `[from, to)` and every coordinate.
pub fn frame_range_mse(pred: &JointSequence, truth: &JointSequence, from: usize, to: usize) -> Result<f64> {
    if !pred.same_layout(truth) {
        return Err(Error::dim(format!(
            "prediction {:?} and truth {:?} differ",
            pred.shape(),
            truth.shape()
        )));
    }
    if from >= to || to > truth.frames() {
        return Err(Error::arg(format!("frame range {from}..{to} is empty or exceeds {}", truth.frames())));
    }
    let w = truth.frame_dim();
    let (p, t) = (&pred.data()[from * w..to * w], &truth.data()[from * w..to * w]);
    Ok(p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64)
}

/// Samples `n_sequences` windows, rolls out the target dancer from the
/// context and averages the MSE of generated frames `[context, h)` per horizon.
pub fn horizon_mse(
    predictor: &impl Predictor,
    test_set: &[(JointSequence, JointSequence)],
    opts: &EvalOptions,
    rng: &mut impl Rng,
) -> Result<HorizonTable> {
    if opts.horizons.is_empty() {
        return Err(Error::arg("no horizons requested"));
    }
    if let Some(&h) = opts.horizons.iter().find(|&&h| h <= opts.context || h > opts.seq_len) {
        return Err(Error::arg(format!(
            "horizon {h} must lie in ({}, {}]",
            opts.context, opts.seq_len
        )));
    }
    let windows = make_windows(test_set, opts.seq_len, opts.stride)?;
    if windows.is_empty() {
        return Err(Error::NoData(format!("test set has no window of {} frames", opts.seq_len)));
    }
    if opts.n_sequences == 0 || opts.n_sequences > windows.len() {
        return Err(Error::arg(format!(
            "cannot sample {} sequences from {} windows",
            opts.n_sequences,
            windows.len()
        )));
    }
    let picks = sample(rng, windows.len(), opts.n_sequences).into_vec();
    let mut sums = vec![0.0; opts.horizons.len()];
    for i in picks {
        let (a, b) = &windows[i];
        let (leader, partner) = match opts.target {
            Dancer::Two => (a.clone(), b.clone()),
            Dancer::One => (b.clone(), a.clone()),
        };
        let window = EvalWindow { leader, partner };
        let mut seq_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let pred = predictor.predict(&window, opts.context, opts.target, &mut seq_rng)?;
        for (s, &h) in sums.iter_mut().zip(&opts.horizons) {
            *s += frame_range_mse(&pred, &window.partner, opts.context, h)?;
        }
    }
    let n = opts.n_sequences as f64;
    Ok(HorizonTable {
        rows: opts
            .horizons
            .iter()
            .zip(sums)
            .map(|(&horizon, s)| HorizonRow {
                horizon,
                mse: s / n,
                paper_reference: paper_reference(horizon),
            })
            .collect(),
    })
}

pub const REPORT_HEADER: &str = "horizon,mse,paper_reference";

/// Writes rows sorted by horizon; a horizon without a published value has
/// an empty reference cell.
pub fn emit_report(table: &HorizonTable, mut writer: impl Write) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::NoData("empty horizon table".into()));
    }
    writeln!(writer, "{REPORT_HEADER}")?;
    for r in table.sorted() {
        let reference = r.paper_reference.map(|v| v.to_string()).unwrap_or_default();
        writeln!(writer, "{},{},{}", r.horizon, r.mse, reference)?;
    }
    Ok(())
}

pub fn parse_report(reader: impl BufRead) -> Result<HorizonTable> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != REPORT_HEADER {
        return Err(Error::Parse {
            location: "line 1".into(),
            field: "header".into(),
            message: format!("expected `{REPORT_HEADER}`"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("line {}", i + 2);
        let bad = |field: &str, message: String| Error::Parse {
            location: location.clone(),
            field: field.into(),
            message,
        };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return Err(bad("<row>", format!("expected 3 cells, got {}", cells.len())));
        }
        let horizon = cells[0].trim().parse().map_err(|_| bad("horizon", format!("`{}` is not an integer", cells[0])))?;
        let mse = cells[1].trim().parse().map_err(|_| bad("mse", format!("`{}` is not a number", cells[1])))?;
        let paper_reference = match cells[2].trim() {
            "" => None,
            v => Some(v.parse().map_err(|_| bad("paper_reference", format!("`{v}` is not a number")))?),
        };
        rows.push(HorizonRow {
            horizon,
            mse,
            paper_reference,
        });
    }
    Ok(HorizonTable { rows })
}
