//! The `dsta` command line: `generate`, `train`, `eval`, `bench`, `gradcheck`.
//!
//! Configuration is resolved in three layers, later layers winning:
//! built-in defaults, then the TOML file given by `--config`, then flags.
//! The top-level `seed` is copied into the data and training sections, so a
//! run is fully determined by one number.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_flops, attention_pairs, AttentionScheme};
use crate::data::{
    generate, read_dataset, write_dataset, CropMode, Split, SyntheticSpec, Task, VideoClip,
    FORMAT_DOC,
};
use crate::error::{Error, Result};
use crate::inference::evaluate;
use crate::model::{BlockKeys, Checkpoint, ForwardOptions, Model, ModelConfig};
use crate::tensor::{Fault, Tape, Tensor};
use crate::training::{train_with, Record, TrainConfig};

/// Everything a run needs, after merging file and flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Parent directory of per-run output directories.
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub deterministic_crops: bool,
    /// Number of videos written by `generate`.
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: SyntheticSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            threads: None,
            deterministic_crops: false,
            count: 1200,
            dataset: None,
            checkpoint: None,
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            data: SyntheticSpec {
                val_items: 200,
                ..SyntheticSpec::default()
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Apply command-line overrides and derive the sub-seeds.
    pub fn resolve(mut self, flags: &CommonArgs) -> Result<Self> {
        if let Some(seed) = flags.seed {
            self.seed = seed;
        }
        if let Some(scheme) = flags.scheme {
            self.model.scheme = scheme;
        }
        if let Some(epochs) = flags.epochs {
            self.train.epochs = epochs;
            // a shortened run keeps only the decays that still fall inside it
            self.train.decay_epochs.retain(|&d| d <= epochs);
        }
        if let Some(t) = flags.threads {
            self.threads = Some(t);
        }
        if flags.deterministic_crops {
            self.deterministic_crops = true;
        }
        if let Some(out) = &flags.out {
            self.out = out.clone();
        }
        self.train.seed = self.seed;
        self.data.seed = self.seed;
        self.model.validate()?;
        self.train.validate()?;
        if self.threads == Some(0) {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        Ok(self)
    }

    pub fn crop_mode(&self) -> CropMode {
        if self.deterministic_crops {
            CropMode::Deterministic
        } else {
            CropMode::Random
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dsta", version, about = "Divided space-time attention video transformer")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// space | joint | divided
    #[arg(long, global = true)]
    pub scheme: Option<AttentionScheme>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Left/center/right crops and evenly spaced clips at inference.
    #[arg(long, global = true)]
    pub deterministic_crops: bool,
    /// Parent directory for run outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic state-change dataset.
    Generate {
        #[arg(long)]
        count: Option<usize>,
        /// Shuffle both classes, leaving nothing to learn.
        #[arg(long)]
        control: bool,
        /// Print the dataset file layout and exit.
        #[arg(long)]
        format: bool,
    },
    /// Train a model and keep the best-validation checkpoint.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Nine-clip ensemble evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: Split,
    },
    /// Attention FLOPs and forward wall time for every scheme.
    Bench {
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Finite-difference check of every parameter gradient on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Scale the GELU derivative to break the backward pass.
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
}

/// Create `<out>/<timestamp>-seed<seed>`, adding a suffix if it exists.
pub fn create_run_dir(out: &Path, seed: u64) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{stamp}-seed{seed}");
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for k in 0.. {
        let name = if k == 0 {
            base.clone()
        } else {
            format!("{base}-{k}")
        };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("some suffix is free")
}

struct Session<'a> {
    cfg: ExperimentConfig,
    scheme_flag: Option<AttentionScheme>,
    stdout: &'a mut dyn Write,
}

impl Session<'_> {
    fn say(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.stdout, "{}", line.as_ref());
    }

    fn echo_config(&mut self, run_dir: Option<&Path>) -> Result<()> {
        let text = self.cfg.to_toml();
        self.say("# resolved configuration");
        for line in text.lines() {
            self.say(format!("# {line}"));
        }
        if let Some(dir) = run_dir {
            let path = dir.join("config.toml");
            fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            self.say(format!("# run directory {}", dir.display()));
        }
        Ok(())
    }

    fn dataset_path(&self, flag: &Option<PathBuf>) -> Result<PathBuf> {
        flag.clone()
            .or_else(|| self.cfg.dataset.clone())
            .ok_or_else(|| Error::Config("no dataset given (use --dataset or `dataset` in the config)".into()))
    }
}

fn cmd_generate(s: &mut Session, count: Option<usize>, control: bool) -> Result<()> {
    if let Some(c) = count {
        s.cfg.count = c;
    }
    if control {
        s.cfg.data.task = Task::FrameShuffleControl;
    }
    s.cfg.data.validate(s.cfg.count)?;
    let dir = create_run_dir(&s.cfg.out, s.cfg.seed)?;
    s.echo_config(Some(&dir))?;
    let ds = generate(&s.cfg.data, s.cfg.count)?;
    let path = dir.join("dataset.bin");
    write_dataset(&ds, &path)?;
    s.say(format!(
        "wrote {} items ({} train, {} val, {} test) to {}",
        ds.len(),
        ds.split(Split::Train).len(),
        ds.split(Split::Val).len(),
        ds.split(Split::Test).len(),
        path.display()
    ));
    Ok(())
}

fn cmd_train(s: &mut Session, dataset: &Option<PathBuf>) -> Result<()> {
    let data_path = s.dataset_path(dataset)?;
    s.cfg.dataset = Some(data_path.clone());
    let dir = create_run_dir(&s.cfg.out, s.cfg.seed)?;
    s.echo_config(Some(&dir))?;
    let ds = read_dataset(&data_path)?;
    let mut model = Model::new(s.cfg.model.clone(), s.cfg.seed)?;
    let log_path = dir.join("metrics.log");
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log_err = None;
    let tc = s.cfg.train.clone();
    let stdout = &mut *s.stdout;
    let report = train_with(&mut model, &ds, &tc, |r| {
        if let Err(e) = writeln!(log, "{r}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
        if matches!(r, Record::Epoch { .. }) {
            let _ = writeln!(stdout, "{r}");
        }
    });
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }
    let report = report?;
    let best = dir.join("best.ckpt");
    report.best.save(&best)?;
    let last = dir.join("last.ckpt");
    Checkpoint::from(&model).save(&last)?;
    let val = report
        .best_val_acc
        .map_or("none".to_string(), |v| v.to_string());
    s.say(format!(
        "best_epoch={} best_val_acc={val} checkpoint={}",
        report.best_epoch,
        best.display()
    ));
    Ok(())
}

fn cmd_eval(
    s: &mut Session,
    checkpoint: &Option<PathBuf>,
    dataset: &Option<PathBuf>,
    split: Split,
) -> Result<()> {
    let ck_path = checkpoint
        .clone()
        .or_else(|| s.cfg.checkpoint.clone())
        .ok_or_else(|| Error::Config("no checkpoint given (use --checkpoint)".into()))?;
    let data_path = s.dataset_path(dataset)?;
    s.cfg.checkpoint = Some(ck_path.clone());
    s.cfg.dataset = Some(data_path.clone());
    let model = Checkpoint::load(&ck_path)?.into_model()?;
    // the checkpoint decides the architecture
    s.cfg.model = model.config().clone();
    let dir = create_run_dir(&s.cfg.out, s.cfg.seed)?;
    s.echo_config(Some(&dir))?;
    let ds = read_dataset(&data_path)?;
    let videos = ds.split(split);
    let ev = evaluate(&videos, &model, s.cfg.seed, s.cfg.crop_mode())?;
    let text = ev.to_string();
    let path = dir.join("eval.txt");
    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    let _ = write!(s.stdout, "{text}");
    Ok(())
}

fn random_clip(cfg: &ModelConfig, rng: &mut ChaCha8Rng, label: usize) -> VideoClip {
    VideoClip {
        pixels: Tensor::from_fn(
            [cfg.height, cfg.width, cfg.channels, cfg.frames],
            |_| rng.gen::<f64>(),
        ),
        label,
        source: 0,
    }
}

fn cmd_bench(s: &mut Session, repeats: usize) -> Result<()> {
    s.echo_config(None)?;
    let base = s.cfg.model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(s.cfg.seed);
    let clip = random_clip(&base, &mut rng, 0);
    s.say(format!(
        "{:<8} {:>16} {:>18} {:>18} {:>12}",
        "scheme", "pairs_per_block", "analytic_flops", "counted_flops", "forward_ms"
    ));
    let mut flops = Vec::new();
    for scheme in AttentionScheme::ALL {
        let cfg = base.clone().with_scheme(scheme);
        let model = Model::new(cfg.clone(), s.cfg.seed)?;
        let keys = BlockKeys::new(&cfg)?;
        let analytic = cfg.depth as u64 * attention_flops(&cfg, scheme);
        let mut counted = 0;
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let mut tape = Tape::new();
            let t = Instant::now();
            model.forward_on_tape(&mut tape, &clip.pixels, &keys, ForwardOptions::default())?;
            best = best.min(t.elapsed().as_secs_f64() * 1e3);
            counted = tape.attention_macs();
        }
        s.say(format!(
            "{:<8} {:>16} {:>18} {:>18} {:>12.3}",
            scheme.as_str(),
            attention_pairs(cfg.frames, cfg.patches_per_frame(), scheme),
            analytic,
            counted,
            best
        ));
        flops.push((scheme, analytic, counted));
    }
    let get = |sc| flops.iter().find(|(s, ..)| *s == sc).expect("all schemes").1;
    s.say(format!(
        "divided/joint flop ratio: {:.4}",
        get(AttentionScheme::DividedSpaceTime) as f64 / get(AttentionScheme::JointSpaceTime) as f64
    ));
    let full = ModelConfig::base();
    s.say(format!(
        "divided/joint flop ratio at 224x224, 8 frames, 16x16 patches: {:.4}",
        attention_flops(&full, AttentionScheme::DividedSpaceTime) as f64
            / attention_flops(&full, AttentionScheme::JointSpaceTime) as f64
    ));
    if flops.iter().any(|(_, a, c)| a != c) {
        return Err(Error::Numeric(
            "analytic and counted attention FLOPs disagree".into(),
        ));
    }
    Ok(())
}

fn cmd_gradcheck(s: &mut Session, step: f64, tolerance: f64, corrupt: bool) -> Result<()> {
    s.echo_config(None)?;
    let schemes: Vec<AttentionScheme> = match s.scheme_flag {
        Some(scheme) => vec![scheme],
        None => AttentionScheme::ALL.to_vec(),
    };
    let mut worst = 0.0f64;
    for scheme in schemes {
        let cfg = ModelConfig::tiny().with_scheme(scheme);
        let model = Model::new(cfg.clone(), s.cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.cfg.seed);
        let clip = random_clip(&cfg, &mut rng, 1);
        let checks = if corrupt {
            model.gradcheck_on(&clip, step, || Tape::with_fault(Fault::GeluGradScale(1.5)))?
        } else {
            model.gradcheck(&clip, step)?
        };
        for c in &checks {
            s.say(format!(
                "{scheme} {:<32} max_rel_err={:.3e} at={} analytic={:e} numeric={:e}",
                c.name, c.max_rel_err, c.worst_index, c.analytic, c.numeric
            ));
            worst = worst.max(c.max_rel_err);
        }
    }
    s.say(format!("max_rel_err={worst:.3e} tolerance={tolerance:e}"));
    if worst > tolerance {
        return Err(Error::Numeric(format!(
            "gradient check failed: max relative error {worst:.3e} exceeds {tolerance:e}"
        )));
    }
    Ok(())
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let file = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = file.resolve(&cli.common)?;
    if let Some(n) = cfg.threads {
        // fails only if a pool already exists, e.g. on a second call in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut s = Session {
        cfg,
        scheme_flag: cli.common.scheme,
        stdout,
    };
    match &cli.command {
        Command::Generate { format: true, .. } => {
            let _ = write!(s.stdout, "{FORMAT_DOC}");
            Ok(())
        }
        Command::Generate { count, control, .. } => cmd_generate(&mut s, *count, *control),
        Command::Train { dataset } => cmd_train(&mut s, dataset),
        Command::Eval {
            checkpoint,
            dataset,
            split,
        } => cmd_eval(&mut s, checkpoint, dataset, *split),
        Command::Bench { repeats } => cmd_bench(&mut s, *repeats),
        Command::Gradcheck {
            step,
            tolerance,
            corrupt_backward,
        } => cmd_gradcheck(&mut s, *step, *tolerance, *corrupt_backward),
    }
}

/// Parse `args` (including the program name), run, and return the exit code:
/// 0 success, 1 usage or configuration error, 2 data error, 3 numeric error.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 0 {
                let _ = write!(stdout, "{e}");
            } else {
                let _ = write!(stderr, "{e}");
            }
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
