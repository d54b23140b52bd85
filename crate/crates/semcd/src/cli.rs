//! The `semcd` command line.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use semcd_core::baselines::{difference_image, pca_kmeans_cd, threshold_fixed, threshold_otsu, PcaKmeans, DEFAULT_FIXED_THRESHOLD};
use semcd_core::checkpoint::Checkpoint;
use semcd_core::config::{Strategy, TrainConfig};
use semcd_core::inference::{decode_strategy, predict_pair, Decoded};
use semcd_core::raster::ImagePair;
use semcd_core::synth::SynthSpec;
use semcd_core::tiling::TileSpec;
use semcd_core::train::{train, TrainEvent};

use crate::error::{io, Error, Result};
use crate::files::{load_checkpoint, read_config, save_checkpoint};
use crate::layout::{manifest_path, write_synth, DatasetIndex, Split, ROLES};
use crate::raster_io::{read_image, write_codes, write_labels};
use crate::report::{evaluate_dir, imbalance, render_imbalance};

/// Environment variable giving the dataset root when `--data` is omitted.
pub const DATA_ROOT_ENV: &str = "SEMCD_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(name = "semcd", version, about = "Semantic change detection on co-registered image pairs")]
pub struct Cli {
    /// Training configuration file (`key = value` lines); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress progress on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Dataset root.
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data: PathBuf,
    /// Manifest file; defaults to `<data>/manifest.tsv`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl DataArgs {
    pub fn index(&self) -> Result<DatasetIndex> {
        DatasetIndex::build(&self.data, &manifest_path(&self.data, self.manifest.as_deref()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Args, Clone, Default)]
pub struct TileArgs {
    #[arg(long)]
    pub tile_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

impl TileArgs {
    /// A tile size given alone also caps the stride at the new size.
    fn apply(&self, spec: &mut TileSpec) {
        if let Some(t) = self.tile_size {
            spec.tile_size = t;
            spec.stride = spec.stride.min(t);
        }
        if let Some(s) = self.stride {
            spec.stride = s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Otsu,
    Fixed,
    PcaKmeans,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset in the standard layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        pairs: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        /// Mark the last N pairs as test and the rest as train instead of
        /// the hashed split.
        #[arg(long)]
        test: Option<usize>,
    },
    /// Validate a dataset and list its pairs.
    Index {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Print the change-class imbalance table.
    Stats {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Train a strategy on the training split.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for checkpoints, config and metrics log.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Epochs of every stage.
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        tile: TileArgs,
        /// Any configuration key, as `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Predict change and land-cover maps with a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset root; predicts every pair of `--split`.
        #[arg(long, env = DATA_ROOT_ENV, conflicts_with_all = ["image1", "image2"])]
        data: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Single pair instead of a dataset.
        #[arg(long, requires = "image2")]
        image1: Option<PathBuf>,
        #[arg(long, requires = "image1")]
        image2: Option<PathBuf>,
        #[arg(long, default_value = "pair")]
        pair_id: String,
        #[command(flatten)]
        tile: TileArgs,
    },
    /// Score predictions against the ground truth of a split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Directory written by `predict` or `baseline`.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Write the tab-separated report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unsupervised change detection on every pair of a split.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Threshold of the fixed method.
        #[arg(long, default_value_t = DEFAULT_FIXED_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = PcaKmeans::default().block_size)]
        block_size: usize,
        #[arg(long, default_value_t = PcaKmeans::default().n_components)]
        components: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn progress(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(io(p))
}

/// Runs one command, writing its primary output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let quiet = cli.quiet;
    let w = |out: &mut dyn Write, s: &str| out.write_all(s.as_bytes()).map_err(io("<stdout>"));
    match cli.command {
        Command::Synth { out: dir, seed, pairs, size, density, test } => {
            let rows = write_synth(&dir, &SynthSpec::new(seed, pairs, size, density), test)?;
            w(out, &format!("wrote {} pairs to {}\n", rows.len(), dir.display()))
        }
        Command::Index { data } => {
            let index = data.index()?;
            let mut s = String::from("pair_id\tsplit\tavailable\n");
            for e in &index.entries {
                let have: Vec<&str> = ROLES.iter().copied().filter(|r| e.has(r)).collect();
                s.push_str(&format!("{}\t{}\t{}\n", e.pair_id, e.split.name(), have.join(",")));
            }
            let n = |sp| index.entries(Some(sp)).count();
            progress(quiet, format!("{} pairs: {} train, {} test", index.entries.len(), n(Split::Train), n(Split::Test)));
            w(out, &s)
        }
        Command::Stats { data, split } => {
            let index = data.index()?;
            let pairs = index.load_split(split.split())?;
            let table = imbalance(&pairs, &index.nomenclature)?;
            w(out, &render_imbalance(&table, &index.nomenclature))
        }
        Command::Train { data, out: dir, strategy, epochs, seed, tile, set } => {
            let config = train_config(cli.config.as_deref(), strategy, epochs, seed, &tile, &set)?;
            let ck = cmd_train(&data, &dir, config, quiet)?;
            w(out, &format!("trained {} for {} epochs; checkpoints in {}\n", ck.config.strategy, ck.history.len(), dir.display()))
        }
        Command::Predict { checkpoint, out: dir, data, manifest, split, image1, image2, pair_id, tile } => {
            let ck = load_checkpoint(&checkpoint)?;
            let mut spec = ck.config.tile;
            if let Some(c) = &cli.config {
                spec = read_config(c)?.tile;
            }
            tile.apply(&mut spec);
            let pairs = match (image1, image2, data) {
                (Some(a), Some(b), _) => vec![ImagePair::new(pair_id, read_image(&a)?, read_image(&b)?, None, None, None)?],
                (_, _, Some(root)) => {
                    let index = DatasetIndex::build(&root, &manifest_path(&root, manifest.as_deref()))?;
                    index.load_split(split.split())?
                }
                _ => return Err(Error::Usage(format!("predict needs --data (or {DATA_ROOT_ENV}) or --image1/--image2"))),
            };
            for p in &pairs {
                progress(quiet, format!("predict {}", p.pair_id));
                let decoded = decode_strategy(&predict_pair(&ck.models, p, &spec)?, ck.config.strategy, &ck.models.land_cover)?;
                write_decoded(&dir.join(&p.pair_id), &decoded)?;
            }
            w(out, &format!("wrote predictions for {} pairs to {}\n", pairs.len(), dir.display()))
        }
        Command::Eval { data, pred, split, out: report } => {
            let index = data.index()?;
            let ev = evaluate_dir(&index, split.split(), &pred)?;
            match report {
                Some(p) => {
                    fs::write(&p, ev.to_tsv()).map_err(io(&p))?;
                    w(out, &ev.render())
                }
                None => {
                    progress(quiet, ev.render());
                    w(out, &ev.to_tsv())
                }
            }
        }
        Command::Baseline { data, method, out: dir, split, threshold, block_size, components, seed } => {
            let index = data.index()?;
            let params = PcaKmeans { block_size, n_components: components, seed };
            let mut meta = match method {
                Method::Otsu => "method\totsu\n".to_string(),
                Method::Fixed => format!("method\tfixed\nthreshold\t{threshold}\n"),
                Method::PcaKmeans => format!("method\tpca_kmeans\nblock_size\t{block_size}\ncomponents\t{components}\nseed\t{seed}\n"),
            };
            let mut n = 0;
            for e in index.entries(split.split()) {
                let p = index.load(e)?;
                let change = match method {
                    Method::Otsu => {
                        let (t, map) = threshold_otsu(&difference_image(&p)?)?;
                        meta.push_str(&format!("threshold.{}\t{}\n", p.pair_id, t.map_or("none".into(), |t| t.to_string())));
                        map
                    }
                    Method::Fixed => threshold_fixed(&difference_image(&p)?, threshold)?,
                    Method::PcaKmeans => pca_kmeans_cd(&p, params)?,
                };
                let d = dir.join(&p.pair_id);
                create_dir(&d)?;
                write_labels(&d.join("change.png"), &change)?;
                n += 1;
            }
            create_dir(&dir)?;
            let m = dir.join("baseline.tsv");
            fs::write(&m, meta).map_err(io(&m))?;
            w(out, &format!("wrote {n} change maps to {}\n", dir.display()))
        }
    }
}

/// Resolves the training configuration: the file (or the strategy
/// defaults), then the explicit flags, then every `--set`.
pub fn train_config(
    file: Option<&Path>,
    strategy: Option<Strategy>,
    epochs: Option<u32>,
    seed: Option<u64>,
    tile: &TileArgs,
    set: &[String],
) -> Result<TrainConfig> {
    let mut c = match (file, strategy) {
        (Some(f), _) => read_config(f)?,
        (None, Some(s)) => TrainConfig::new(s),
        (None, None) => return Err(Error::Usage("train needs --strategy or a --config naming one".into())),
    };
    if let Some(s) = strategy {
        c.set("strategy", s.name())?;
        if c.lambda.is_none() && s == Strategy::S4_1 {
            c.lambda = TrainConfig::new(s).lambda;
        }
        if s != Strategy::S4_1 {
            c.lambda = None;
        }
    }
    if let Some(e) = epochs {
        c.epochs_stage1 = e;
        c.epochs_stage2 = e;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    tile.apply(&mut c.tile);
    for kv in set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        c.set(k.trim(), v.trim())?;
    }
    c.validate()?;
    Ok(c)
}

/// Trains on the training split. Writes `config.txt`, appends every epoch
/// to `metrics.log`, rewrites `last.ck` after every epoch and `best.ck` on
/// every new best validation kappa, and saves the returned checkpoint as
/// `final.ck`.
pub fn cmd_train(data: &DataArgs, dir: &Path, config: TrainConfig, quiet: bool) -> Result<Checkpoint> {
    let index = data.index()?;
    let pairs = index.load_split(Some(Split::Train))?;
    create_dir(dir)?;
    let cfg_path = dir.join("config.txt");
    fs::write(&cfg_path, config.render()).map_err(io(&cfg_path))?;
    let log_path = dir.join("metrics.log");
    let mut log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(io(&log_path))?;
    let mut file_err: Option<Error> = None;
    let result = train(config, &index.nomenclature, &pairs, &mut |e| {
        let r = match e {
            TrainEvent::Epoch { record, checkpoint, best } => {
                progress(quiet, record.log_line());
                writeln!(log, "{}", record.log_line())
                    .map_err(io(&log_path))
                    .and_then(|_| save_checkpoint(&dir.join("last.ck"), checkpoint))
                    .and_then(|_| if best { save_checkpoint(&dir.join("best.ck"), checkpoint) } else { Ok(()) })
            }
            TrainEvent::Warning(msg) => {
                progress(quiet, format!("warning: {msg}"));
                writeln!(log, "warning\t{msg}").map_err(io(&log_path))
            }
            TrainEvent::Step { .. } => Ok(()),
        };
        r.map_err(|err| {
            let msg = err.to_string();
            file_err = Some(err);
            semcd_core::Error::InvalidArgument(msg)
        })
    });
    let ck = match (result, file_err) {
        (Ok(ck), _) => ck,
        (Err(_), Some(e)) => return Err(e),
        (Err(e), None) => return Err(e.into()),
    };
    save_checkpoint(&dir.join("final.ck"), &ck)?;
    Ok(ck)
}

/// Writes `change.png`, `lcm1.png`/`lcm2.png` when present, and the
/// semantic change planes `from.png`/`to.png` (code 0 where unchanged).
pub fn write_decoded(dir: &Path, d: &Decoded) -> Result<()> {
    create_dir(dir)?;
    write_labels(&dir.join("change.png"), &d.change)?;
    for (name, m) in [("lcm1", &d.lcm1), ("lcm2", &d.lcm2)] {
        if let Some(m) = m {
            write_labels(&dir.join(format!("{name}.png")), m)?;
        }
    }
    if let Some(s) = &d.semantic {
        write_codes(&dir.join("from.png"), s.height, s.width, &s.from)?;
        write_codes(&dir.join("to.png"), s.height, s.width, &s.to)?;
    }
    Ok(())
}
