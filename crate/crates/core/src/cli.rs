//! Command line front end: `synth`, `run`, `sweep-blocks` and `selftest`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalio::{
    confusion, metrics, read_pgm, synth_pair, write_binary_pgm, write_pgm, BinaryGrid, Ellipse, MetricsReport,
    SynthConfig,
};
use crate::model::{predict_map, save_checkpoint, threshold_map, train, ModelConfig, TrainHistory};
use crate::preclass::{hfcm_partition, log_ratio, HfcmConfig, Label, LabelMap};
use crate::tensor::Tensor;
use crate::selftest;

const PRECEDENCE: &str = "Values are resolved as: command-line flags, then the --config JSON file, then built-in defaults.";

#[derive(Debug, Parser)]
#[command(name = "wbanet", version, about = "Wavelet bi-dimensional aggregation network for SAR change detection")]
#[command(after_help = PRECEDENCE)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic speckled image pair and its change mask as PGM files.
    #[command(after_help = PRECEDENCE)]
    Synth(SynthArgs),
    /// Pre-classify, train and predict a change map for an image pair.
    #[command(after_help = PRECEDENCE)]
    Run(RunArgs),
    /// Train once per block count and tabulate accuracy.
    #[command(after_help = PRECEDENCE)]
    SweepBlocks(SweepArgs),
    /// Run the built-in invariant suites.
    Selftest,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with a full or partial run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// Image side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Number of speckle looks.
    #[arg(long)]
    pub looks: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// First-date image (P5 PGM).
    #[arg(long)]
    pub i1: Option<PathBuf>,
    /// Second-date image (P5 PGM).
    #[arg(long)]
    pub i2: Option<PathBuf>,
    /// Optional ground-truth mask (P5 PGM, nonzero = changed).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Smallest block count; 0 adds the network-free threshold row.
    #[arg(long, default_value_t = 1)]
    pub min_blocks: usize,
    #[arg(long, default_value_t = 5)]
    pub max_blocks: usize,
}

/// Synthetic pair settings; the ellipse defaults to a centered one covering
/// `change_fraction` of the frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub size: usize,
    pub looks: f64,
    pub change_fraction: f64,
    pub aspect: f64,
    pub background: f64,
    pub changed: f64,
    pub ellipse: Option<Ellipse>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let base = SynthConfig::square(128, 4.0, 0);
        Self {
            size: 128,
            looks: 4.0,
            change_fraction: 0.05,
            aspect: 1.5,
            background: base.background,
            changed: base.changed,
            ellipse: None,
        }
    }
}

impl SynthSettings {
    pub fn to_config(&self, seed: u64) -> SynthConfig {
        let mut cfg = SynthConfig::centered(self.size, self.size, self.looks, self.change_fraction, self.aspect, seed);
        cfg.background = self.background;
        cfg.changed = self.changed;
        if let Some(e) = self.ellipse {
            cfg.change = e;
        }
        cfg
    }
}

/// Everything a command needs; persisted as `config.json` next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seeds synthesis, pre-classification, sampling, initialisation and shuffling.
    pub seed: u64,
    pub out: PathBuf,
    pub i1: Option<PathBuf>,
    pub i2: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub synth: SynthSettings,
    pub hfcm: HfcmConfig,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            i1: None,
            i2: None,
            gt: None,
            synth: SynthSettings::default(),
            hfcm: HfcmConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    fn apply_common(&mut self, c: &CommonArgs) {
        if let Some(s) = c.seed {
            self.seed = s;
        }
        if let Some(o) = &c.out {
            self.out = o.clone();
        }
    }

    fn apply_model(&mut self, m: &ModelArgs) {
        let cfg = &mut self.model;
        cfg.patch_size = m.patch.unwrap_or(cfg.patch_size);
        cfg.embed_dim = m.dim.unwrap_or(cfg.embed_dim);
        cfg.n_heads = m.heads.unwrap_or(cfg.n_heads);
        cfg.n_blocks = m.blocks.unwrap_or(cfg.n_blocks);
        cfg.epochs = m.epochs.unwrap_or(cfg.epochs);
        cfg.lr = m.lr.unwrap_or(cfg.lr);
    }

    fn apply_run(&mut self, r: &RunArgs) {
        self.apply_common(&r.common);
        self.apply_model(&r.model);
        for (slot, flag) in [(&mut self.i1, &r.i1), (&mut self.i2, &r.i2), (&mut self.gt, &r.gt)] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
    }

    /// Propagate the run seed into every stage.
    fn finish(mut self) -> Self {
        self.model.seed = self.seed;
        self.hfcm.seed = self.seed;
        self
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serialises");
        std::fs::write(dir.join("config.json"), text + "\n")?;
        Ok(())
    }
}

fn base_config(common: &CommonArgs) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

pub fn resolve_synth(args: &SynthArgs) -> Result<RunConfig> {
    let mut cfg = base_config(&args.common)?;
    cfg.apply_common(&args.common);
    cfg.synth.size = args.size.unwrap_or(cfg.synth.size);
    cfg.synth.looks = args.looks.unwrap_or(cfg.synth.looks);
    Ok(cfg.finish())
}

pub fn resolve_run(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = base_config(&args.common)?;
    cfg.apply_run(args);
    Ok(cfg.finish())
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes `i1.pgm`, `i2.pgm`, `gt.pgm` and `config.json`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let sc = cfg.synth.to_config(cfg.seed);
    let pair = synth_pair::<f64>(&sc)?;
    create_out(&cfg.out)?;
    write_pgm(cfg.out.join("i1.pgm"), &pair.i1, 255)?;
    write_pgm(cfg.out.join("i2.pgm"), &pair.i2, 255)?;
    write_binary_pgm(cfg.out.join("gt.pgm"), &pair.gt)?;
    cfg.save(&cfg.out)?;
    eprintln!("synth: {}x{} looks={} seed={} -> {}", sc.height, sc.width, sc.looks, cfg.seed, cfg.out.display());
    Ok(())
}

/// Images, difference image and pseudo-labels shared by `run` and `sweep-blocks`.
pub struct Prepared {
    pub i1: Tensor<f64>,
    pub i2: Tensor<f64>,
    pub gt: Option<BinaryGrid>,
    pub di: crate::preclass::DifferenceImage<f64>,
    pub labels: LabelMap,
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::config(format!("missing --{flag}")))
}

pub fn read_mask(path: &Path) -> Result<BinaryGrid> {
    let t = read_pgm::<f64>(path)?;
    let s = t.shape();
    BinaryGrid::new(s[0], s[1], t.data().iter().map(|&v| v > 0.0).collect())
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let i1 = read_pgm::<f64>(required(&cfg.i1, "i1")?)?;
    let i2 = read_pgm::<f64>(required(&cfg.i2, "i2")?)?;
    let di = log_ratio(&i1, &i2)?;
    let gt = match &cfg.gt {
        Some(p) => {
            let g = read_mask(p)?;
            if (g.height, g.width) != di.dims() {
                return Err(Error::Input(format!(
                    "ground truth is {}x{}, images are {:?}",
                    g.height,
                    g.width,
                    di.dims()
                )));
            }
            Some(g)
        }
        None => None,
    };
    let labels = hfcm_partition(&di, &cfg.hfcm)?;
    if labels.degenerate {
        return Err(Error::Degenerate("difference image is constant; pre-classification found no change".into()));
    }
    eprintln!(
        "preclass: changed={} unchanged={} intermediate={} seed={}",
        labels.count(Label::Changed),
        labels.count(Label::Unchanged),
        labels.count(Label::Intermediate),
        cfg.hfcm.seed
    );
    Ok(Prepared { i1, i2, gt, di, labels })
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub metrics: Option<MetricsReport>,
    pub history: TrainHistory,
}

#[derive(Serialize)]
struct HistoryFile<'a> {
    loss: &'a [f64],
    accuracy: &'a [f64],
    short_sample: bool,
}

/// Writes `change_map.pgm`, `checkpoint.wban`, `history.json`,
/// `config.json` and, with ground truth, `metrics.json`.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.model.validate()?;
    let prep = prepare(cfg)?;
    create_out(&cfg.out)?;
    cfg.save(&cfg.out)?;
    let start = Instant::now();
    let (params, history) = train(&prep.i1, &prep.i2, &prep.labels, &cfg.model)?;
    eprintln!(
        "train: blocks={} epochs={} seed={} final loss={:.4} acc={:.4} ({:.1}s)",
        cfg.model.n_blocks,
        cfg.model.epochs,
        cfg.model.seed,
        history.loss.last().copied().unwrap_or(f64::NAN),
        history.accuracy.last().copied().unwrap_or(f64::NAN),
        start.elapsed().as_secs_f64()
    );
    let map = predict_map(&prep.i1, &prep.i2, &prep.labels, &params, &cfg.model)?;
    write_binary_pgm(cfg.out.join("change_map.pgm"), &map.map)?;
    save_checkpoint(cfg.out.join("checkpoint.wban"), &cfg.model, &params)?;
    let hist = HistoryFile { loss: &history.loss, accuracy: &history.accuracy, short_sample: history.short_sample };
    std::fs::write(cfg.out.join("history.json"), serde_json::to_string(&hist).expect("history serialises") + "\n")?;
    let report = match &prep.gt {
        Some(gt) => {
            let m = metrics(&confusion(&map.map, gt)?)?;
            std::fs::write(cfg.out.join("metrics.json"), m.to_json() + "\n")?;
            eprintln!("metrics: {}", m.to_json());
            Some(m)
        }
        None => None,
    };
    Ok(RunOutcome { metrics: report, history })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub pcc: f64,
    pub kc: f64,
    pub seconds: f64,
}

pub const SWEEP_HEADER: &str = "n,pcc,kc,seconds";

/// Writes `pcc_vs_n.csv` and `config.json`.
pub fn cmd_sweep_blocks(cfg: &RunConfig, min_blocks: usize, max_blocks: usize) -> Result<Vec<SweepRow>> {
    if min_blocks > max_blocks || max_blocks > crate::model::MAX_BLOCKS {
        return Err(Error::config(format!(
            "block range {min_blocks}..={max_blocks} must be ordered and within 0..={}",
            crate::model::MAX_BLOCKS
        )));
    }
    let prep = prepare(cfg)?;
    let gt = prep.gt.as_ref().ok_or_else(|| Error::config("sweep-blocks needs --gt"))?;
    create_out(&cfg.out)?;
    cfg.save(&cfg.out)?;
    let mut rows = Vec::new();
    let mut csv = format!("{SWEEP_HEADER}\n");
    for n in min_blocks..=max_blocks {
        let start = Instant::now();
        let map = if n == 0 {
            threshold_map(&prep.di, &prep.labels)?
        } else {
            let model = ModelConfig { n_blocks: n, ..cfg.model.clone() };
            let (params, _) = train(&prep.i1, &prep.i2, &prep.labels, &model)?;
            predict_map(&prep.i1, &prep.i2, &prep.labels, &params, &model)?
        };
        let m = metrics(&confusion(&map.map, gt)?)?;
        let row = SweepRow { n, pcc: m.pcc, kc: m.kc, seconds: start.elapsed().as_secs_f64() };
        writeln!(csv, "{},{:.6},{:.6},{:.3}", row.n, row.pcc, row.kc, row.seconds).unwrap();
        eprintln!("sweep: n={} pcc={:.4} kc={:.4} ({:.1}s)", row.n, row.pcc, row.kc, row.seconds);
        rows.push(row);
    }
    std::fs::write(cfg.out.join("pcc_vs_n.csv"), csv)?;
    Ok(rows)
}

pub fn cmd_selftest() -> bool {
    let reports = selftest::run_all();
    for r in &reports {
        println!("{r}");
    }
    let passed = reports.iter().all(|r| r.passed);
    println!("{}", if passed { "selftest: all suites passed" } else { "selftest: FAILED" });
    passed
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&resolve_synth(&a)?).map(|_| 0),
        Command::Run(a) => cmd_run(&resolve_run(&a)?).map(|_| 0),
        Command::SweepBlocks(a) => cmd_sweep_blocks(&resolve_run(&a.run)?, a.min_blocks, a.max_blocks).map(|_| 0),
        Command::Selftest => Ok(if cmd_selftest() { 0 } else { 1 }),
    }
}

/// Parse `args` (including the program name), run the command and return
/// the process exit code: 0 success, 2 input or config error, 3 degenerate
/// data, 1 selftest failure.
pub fn run_from<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
