use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use duetgen::evaluation::{default_context, emit_report, horizon_mse, EchoOracle, EvalOptions, HorizonTable};
use duetgen::inference::{generate_duet, rollout_partner};
use duetgen::model::{Dancer, DuetModel};
use duetgen::nn::ModelConfig;
use duetgen::pose_ingest::{parse_detections, repair_detections, write_detections, RepairStats};
use duetgen::preprocess::dct_lowpass;
use duetgen::sequence::{write_animation_csv, CleanedSequenceFile, JointSequence, DEFAULT_FPS};
use duetgen::synth::{corrupt, synth_duet, CorruptionSpec, Style};
use duetgen::training::{train_with, write_train_report, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::args::{
    EvaluateArgs, GenerateArgs, GenerateMode, ModelSize, OracleArg, PreprocessArgs, StyleArg, SynthArgs, TrainArgs,
};
use crate::output::{create_dir, Staged};

impl From<StyleArg> for Style {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::Mirror => Style::Mirror,
            StyleArg::Orbit => Style::Orbit,
            StyleArg::LeadFollow => Style::LeadFollow,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn read_pair(path: &Path) -> Result<(JointSequence, JointSequence)> {
    let file = CleanedSequenceFile::read(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    Ok(file.into_pair()?)
}

fn load_model(path: &Path) -> Result<DuetModel> {
    DuetModel::load(open(path)?).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_pair(staged: &mut Staged, path: &Path, a: &JointSequence, b: &JointSequence) -> Result<()> {
    let file = CleanedSequenceFile::from_pair(a, b)?;
    staged.write(path, |w| Ok(file.write(w)?))
}

fn clean_one(input: &Path, args: &PreprocessArgs) -> Result<(CleanedSequenceFile, RepairStats)> {
    let frames = parse_detections(open(input)?, args.joints).with_context(|| format!("parsing {}", input.display()))?;
    let (raw, stats) = repair_detections(&frames, args.fps).with_context(|| format!("repairing {}", input.display()))?;
    let (a, b) = raw.to_sequences()?;
    let a = dct_lowpass(&a, args.dct_keep)?;
    let b = dct_lowpass(&b, args.dct_keep)?;
    Ok((CleanedSequenceFile::from_pair(&a, &b)?, stats))
}

pub fn preprocess(args: PreprocessArgs) -> Result<()> {
    let several = args.inputs.len() > 1;
    let targets: Vec<PathBuf> = if several {
        create_dir(&args.out)?;
        args.inputs
            .iter()
            .map(|p| {
                let stem = p.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "out".into());
                args.out.join(stem).with_extension("seq")
            })
            .collect()
    } else {
        vec![args.out.clone()]
    };
    let results: Vec<Result<(CleanedSequenceFile, RepairStats)>> = std::thread::scope(|s| {
        let handles: Vec<_> = args.inputs.iter().map(|p| s.spawn(|| clean_one(p, &args))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| bail!("worker thread panicked")))
            .collect()
    });
    let mut staged = Staged::new();
    let mut lines = Vec::new();
    for ((input, target), result) in args.inputs.iter().zip(&targets).zip(results) {
        let (file, st) = result?;
        staged.write(target, |w| Ok(file.write(w)?))?;
        lines.push(format!(
            "{}: frames {}, frames imputed {}, swaps fixed {}, ghosts culled {}, single detections {}",
            input.display(),
            st.frames,
            st.frames_imputed,
            st.swaps_fixed,
            st.ghosts_culled,
            st.single_detection_frames
        ));
    }
    staged.commit()?;
    for l in lines {
        println!("{l}");
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    train: Option<TrainConfig>,
    model: Option<ModelConfig>,
}

fn train_config(args: &TrainArgs, file: &ConfigFile) -> TrainConfig {
    let mut c = file.train.clone().unwrap_or_default();
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = args.$field { c.$field = v; } )* };
    }
    set!(epochs, seed, p, alpha, beta, eta, lr, t_max, seq_len, batch_size, noise_sigma, frames);
    c
}

pub fn train(args: TrainArgs) -> Result<()> {
    let file: ConfigFile = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ConfigFile::default(),
    };
    let cfg = train_config(&args, &file);
    let pairs = if args.synthetic {
        (0..args.synthetic_count as u64)
            .map(|i| {
                synth_duet(
                    args.synthetic_frames,
                    args.synthetic_joints,
                    cfg.seed.wrapping_add(i),
                    args.synthetic_style.into(),
                )
            })
            .collect::<duetgen::Result<Vec<_>>>()?
    } else {
        args.data.iter().map(|p| read_pair(p)).collect::<Result<Vec<_>>>()?
    };
    let joints = pairs.first().map(|(a, _)| a.joints()).context("no training data")?;
    let mut model_cfg = match (&file.model, args.model) {
        (Some(m), _) => m.clone(),
        (None, ModelSize::Paper) => ModelConfig::default(),
        (None, ModelSize::Desk) => ModelConfig::desk(joints),
    };
    model_cfg.joints = joints;
    let mut model = DuetModel::new(model_cfg, cfg.seed)?;

    let mut staged = Staged::new();
    let report = train_with(&mut model, &pairs, &cfg, |record, m| {
        eprintln!(
            "epoch {:>3}  total {:.6}  mse {:.6}  velocity {:.6}  kl {:.4}  focused {:.2}",
            record.epoch, record.total, record.l_mse, record.l_velocity, record.l_kl, record.mode_fraction
        );
        if args.save_every_epoch {
            let mut name = args.checkpoint.clone().into_os_string();
            name.push(format!(".epoch{}", record.epoch));
            staged
                .write(Path::new(&name), |w| Ok(m.save(w)?))
                .map_err(|e| duetgen::Error::State(format!("{e:#}")))?;
        }
        Ok(())
    })?;
    staged.write(&args.checkpoint, |w| Ok(model.save(w)?))?;
    staged.write(&args.report, |w| Ok(write_train_report(w, &report.epochs)?))?;
    staged.commit()?;
    println!(
        "trained {} epochs ({} steps, {} parameters); checkpoint {}, report {}",
        report.epochs.len(),
        report.steps.len(),
        model.params.scalar_count(),
        args.checkpoint.display(),
        args.report.display()
    );
    Ok(())
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (a, b) = match args.mode {
        GenerateMode::Duet => generate_duet(&model, args.length, DEFAULT_FPS, &mut rng)?,
        GenerateMode::Partner => {
            let path = args.leader.as_ref().context("--leader is required in partner mode")?;
            let (d1, d2) = read_pair(path)?;
            let lead_dancer = Dancer::from_index(args.leader_dancer)?;
            let (leader, partner) = match lead_dancer {
                Dancer::One => (d1, d2),
                Dancer::Two => (d2, d1),
            };
            if leader.frames() < args.length {
                bail!(
                    "leader has {} frames, {} requested",
                    leader.frames(),
                    args.length
                );
            }
            let leader = leader.slice(0, args.length)?;
            let context = partner.slice(0, args.context.min(partner.frames()))?;
            let rollout = rollout_partner(&model, &leader, &context, lead_dancer.other(), &mut rng)?;
            eprintln!("generated {} frames with {} decoder calls", rollout.sequence.frames(), rollout.decoder_calls);
            match lead_dancer {
                Dancer::One => (leader, rollout.sequence),
                Dancer::Two => (rollout.sequence, leader),
            }
        }
    };
    let mut staged = Staged::new();
    write_pair(&mut staged, &args.out, &a, &b)?;
    staged.write(&args.csv, |w| Ok(write_animation_csv(w, &a, &b)?))?;
    staged.commit()?;
    println!("wrote {} and {}", args.out.display(), args.csv.display());
    Ok(())
}

fn print_table(table: &HorizonTable) {
    println!("{:>8}  {:>12}  {:>10}", "horizon", "mse", "reference");
    for r in table.sorted() {
        let reference = r.paper_reference.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!("{:>8}  {:>12.6}  {:>10}", r.horizon, r.mse, reference);
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let test = args.test.iter().map(|p| read_pair(p)).collect::<Result<Vec<_>>>()?;
    let longest = args.horizons.iter().copied().max().context("no horizons")?;
    let opts = EvalOptions {
        horizons: args.horizons.clone(),
        n_sequences: args.sequences,
        seq_len: args.seq_len.unwrap_or(longest),
        context: args.context.unwrap_or_else(|| default_context(&args.horizons)),
        stride: args.stride,
        target: Dancer::Two,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let table = match (args.oracle, &args.checkpoint) {
        (Some(OracleArg::Echo), _) => horizon_mse(&EchoOracle, &test, &opts, &mut rng)?,
        (None, Some(path)) => horizon_mse(&load_model(path)?, &test, &opts, &mut rng)?,
        (None, None) => bail!("--checkpoint is required"),
    };
    let mut staged = Staged::new();
    staged.write(&args.out, |w| Ok(emit_report(&table, w)?))?;
    staged.commit()?;
    print_table(&table);
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    if args.out.is_none() && args.detections.is_none() {
        bail!("nothing to write: give --out and/or --detections");
    }
    let pair = synth_duet(args.frames, args.joints, args.seed, args.style.into())?;
    let mut staged = Staged::new();
    if let Some(out) = &args.out {
        write_pair(&mut staged, out, &pair.0, &pair.1)?;
    }
    if let Some(det) = &args.detections {
        let spec = CorruptionSpec {
            swap_frames: args.swap.clone(),
            drop_frames: args.drop.clone(),
            ghost_frames: args.ghost.clone(),
            ghost_score: args.ghost_score,
            jitter_sigma: args.jitter,
        };
        let c = corrupt(&pair, &spec, args.seed)?;
        staged.write(det, |w: &mut dyn Write| Ok(write_detections(w, &c.frames)?))?;
    }
    staged.commit()?;
    Ok(())
}
