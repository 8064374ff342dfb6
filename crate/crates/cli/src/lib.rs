//! The `dasnet` command line: baseline training, calibration, masked
//! finetuning, evaluation, layer benchmarks and θ sweeps.
//!
//! Every command resolves one [`RunConfig`] (JSON file, then flags on top),
//! reads its inputs from and writes its artifacts to the output directory,
//! and stamps each report with the SHA-256 of the resolved config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dasnet_core::calibration::{pruning_summary, CalibrationReport, CalibrationStats, DEFAULT_SAMPLES};
use dasnet_core::compression::{fc_weight_density, magnitude_prune_fc, quantize_weights_linear8};
use dasnet_core::cost::{bench_layer, count_macs, BenchRecord, LayerGeometry};
use dasnet_core::data::{
    load_cifar10_dir, load_mnist_dir, resolve_data_root, synthetic_dataset, DataKind, Dataset, Split,
};
use dasnet_core::nn::checkpoint::{self, Int8Weights};
use dasnet_core::nn::{build_network, evaluate, finetune_dasnet, train_baseline, NetName, Network, TrainConfig};
use dasnet_core::FvMode;

pub mod error;

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "dasnet", version, about = "Dynamic activation sparsity pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a dense baseline and write `<net>_baseline.dasn`.
    Train(Flags),
    /// Map energy thresholds to winner rates; writes `calibration.json` and `calibration.csv`.
    Calibrate(Flags),
    /// Finetune the baseline under WTA masks; writes `<net>_dasnet.dasn`.
    Finetune(Flags),
    /// Masked and unmasked test accuracy, pruning and MAC reduction.
    Eval(Flags),
    /// Per-layer dense vs ranking+condensed timings.
    Bench(Flags),
    /// calibrate -> finetune -> eval for every θ in a list; writes `sweep.csv`.
    Sweep(Flags),
    /// Weight compression of the DASNet: 8-bit quantization or fc magnitude pruning.
    Compress(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepTarget {
    Fc,
    Conv,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CompressMode {
    Quantize,
    Prune,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON file with any RunConfig fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub net: Option<String>,
    /// Dataset kind (mnist, cifar10, synthetic) or dataset root directory.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub data_kind: Option<String>,
    /// Dataset root; defaults to $DASNET_DATA_DIR.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub theta_conv: Option<f64>,
    #[arg(long)]
    pub theta_fc: Option<f64>,
    #[arg(long)]
    pub fv_mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Calibration inputs drawn from the training split.
    #[arg(long)]
    pub calibration_samples: Option<usize>,
    /// Finetuning epochs (default: 20% of the baseline epochs).
    #[arg(long)]
    pub finetune_epochs: Option<u32>,
    /// Finetuning learning rate (default: a tenth of the baseline rate).
    #[arg(long)]
    pub finetune_lr: Option<f32>,
    /// Images in a synthetic dataset.
    #[arg(long)]
    pub synthetic_samples: Option<usize>,
    /// Train on at most this many training images per epoch.
    #[arg(long)]
    pub max_train_samples: Option<usize>,
    /// Comma-separated θ values for `sweep`.
    #[arg(long, value_delimiter = ',')]
    pub thetas: Option<Vec<f64>>,
    /// Which layer kinds a sweep θ applies to.
    #[arg(long, value_enum)]
    pub sweep_target: Option<SweepTarget>,
    /// Timed repetitions per bench phase.
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Winner rate for layers without a calibrated rate in `bench`.
    #[arg(long)]
    pub bench_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub compress_mode: Option<CompressMode>,
    /// Kept fraction of fc weights for `compress --compress-mode prune`.
    #[arg(long)]
    pub density: Option<f64>,
    /// Checkpoint to read instead of the default artifact.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Print per-epoch progress to stderr.
    #[arg(long)]
    pub verbose: bool,
}

/// Fully resolved settings of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub net: NetName,
    pub data_kind: Option<DataKind>,
    pub data_dir: Option<PathBuf>,
    pub theta_conv: f64,
    pub theta_fc: f64,
    pub fv_mode: FvMode,
    pub epochs: Option<u32>,
    pub lr: Option<f32>,
    pub batch_size: Option<usize>,
    pub dropout: Option<f32>,
    pub seed: u64,
    pub out: PathBuf,
    pub calibration_samples: usize,
    pub finetune_epochs: Option<u32>,
    pub finetune_lr: Option<f32>,
    pub synthetic_samples: usize,
    pub max_train_samples: Option<usize>,
    pub thetas: Vec<f64>,
    pub sweep_target: Option<SweepTarget>,
    pub repetitions: usize,
    pub bench_rate: f64,
    pub compress_mode: CompressMode,
    pub density: f64,
    pub checkpoint: Option<PathBuf>,
    #[serde(skip)]
    pub verbose: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            net: NetName::Mlp3,
            data_kind: None,
            data_dir: None,
            theta_conv: dasnet_core::calibration::DEFAULT_THETA_CONV,
            theta_fc: dasnet_core::calibration::DEFAULT_THETA_FC,
            fv_mode: FvMode::Max,
            epochs: None,
            lr: None,
            batch_size: None,
            dropout: None,
            seed: 0,
            out: PathBuf::from("runs"),
            calibration_samples: DEFAULT_SAMPLES,
            finetune_epochs: None,
            finetune_lr: None,
            synthetic_samples: 2000,
            max_train_samples: None,
            thetas: vec![0.8, 0.85, 0.9, 0.95, 0.99],
            sweep_target: None,
            repetitions: 9,
            bench_rate: 0.2,
            compress_mode: CompressMode::Quantize,
            density: 0.2,
            checkpoint: None,
            verbose: false,
        }
    }
}

fn check_theta(name: &str, v: f64) -> Result<()> {
    if v.is_nan() || v <= 0.0 || v > 1.0 {
        return Err(CliError::Config(format!("{name} must lie in (0, 1], got {v}")));
    }
    Ok(())
}

impl RunConfig {
    /// Loads the JSON config named by `--config` (if any) and applies flags on top.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut c = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(n) = &flags.net {
            c.net = n.parse()?;
        }
        if let Some(d) = &flags.data {
            match d.parse::<DataKind>() {
                Ok(kind) => c.data_kind = Some(kind),
                Err(_) => c.data_dir = Some(PathBuf::from(d)),
            }
        }
        if let Some(k) = &flags.data_kind {
            c.data_kind = Some(k.parse()?);
        }
        if let Some(m) = &flags.fv_mode {
            c.fv_mode = m.parse()?;
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = flags.$field.clone() {
                    c.$field = v;
                }
            )*};
        }
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if let Some(v) = flags.$field.clone() {
                    c.$field = Some(v);
                }
            )*};
        }
        set!(theta_conv, theta_fc, seed, out, calibration_samples, synthetic_samples, thetas, repetitions, bench_rate, compress_mode, density);
        set_opt!(data_dir, epochs, lr, batch_size, dropout, finetune_epochs, finetune_lr, max_train_samples, sweep_target, checkpoint);
        c.verbose = flags.verbose;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check_theta("theta_conv", self.theta_conv)?;
        check_theta("theta_fc", self.theta_fc)?;
        for &t in &self.thetas {
            check_theta("sweep theta", t)?;
        }
        if self.calibration_samples == 0 {
            return Err(CliError::Config("calibration_samples must be positive".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(CliError::Config(format!("density {} outside (0, 1]", self.density)));
        }
        if self.repetitions < 3 {
            return Err(CliError::Config("bench needs at least 3 repetitions".into()));
        }
        self.train_config().validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON of this config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn data_kind(&self) -> DataKind {
        self.data_kind.unwrap_or(self.net.data_kind())
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::for_net(self.net);
        t.seed = self.seed;
        t.verbose = self.verbose;
        t.max_train_samples = self.max_train_samples;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.dropout {
            t.dropout = v;
        }
        t
    }

    pub fn finetune_config(&self) -> TrainConfig {
        let mut t = self.train_config().finetune_from();
        if let Some(v) = self.finetune_epochs {
            t.epochs = v;
        }
        if let Some(v) = self.finetune_lr {
            t.lr = v;
        }
        t
    }

    pub fn baseline_path(&self) -> PathBuf {
        self.out.join(format!("{}_baseline.dasn", self.net))
    }

    pub fn dasnet_path(&self) -> PathBuf {
        self.out.join(format!("{}_dasnet.dasn", self.net))
    }

    pub fn calibration_path(&self) -> PathBuf {
        self.out.join("calibration.json")
    }
}

/// Loads the dataset a config names, cropping CIFAR-10 to the network input.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let shape = cfg.net.input_shape();
    let data = match cfg.data_kind() {
        DataKind::Synthetic => synthetic_dataset(cfg.seed, cfg.synthetic_samples, shape, 10)?,
        DataKind::Mnist => load_mnist_dir(&resolve_data_root(cfg.data_dir.as_deref())?)?,
        DataKind::Cifar10 => {
            let full = load_cifar10_dir(&resolve_data_root(cfg.data_dir.as_deref())?)?;
            if full.image_shape()[0] == shape[0] {
                full
            } else {
                full.center_crop(shape[0])?
            }
        }
    };
    if data.image_shape() != shape {
        return Err(CliError::Config(format!(
            "{} images are {:?} but {} expects {:?}",
            data.source(),
            data.image_shape(),
            cfg.net,
            shape
        )));
    }
    Ok(data)
}

fn require(path: &Path, what: &str, command: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing {
            path: path.to_path_buf(),
            what: what.into(),
            command: command.into(),
        })
    }
}

fn load_baseline(cfg: &RunConfig) -> Result<Network> {
    let path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.baseline_path());
    require(&path, "baseline checkpoint", &format!("dasnet train --net {}", cfg.net))?;
    Ok(checkpoint::load_network(&path)?)
}

fn load_dasnet(cfg: &RunConfig) -> Result<Network> {
    let path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.dasnet_path());
    require(&path, "DASNet checkpoint", &format!("dasnet finetune --net {}", cfg.net))?;
    Ok(checkpoint::load_network(&path)?)
}

fn load_calibration(cfg: &RunConfig) -> Result<CalibrationReport> {
    let path = cfg.calibration_path();
    require(&path, "calibration report", &format!("dasnet calibrate --net {}", cfg.net))?;
    Ok(CalibrationReport::load_json(&path)?)
}

/// A report with provenance.
#[derive(Debug, Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config_hash: String,
    config: &'a RunConfig,
    report: T,
}

fn write_report<T: Serialize>(cfg: &RunConfig, command: &str, name: &str, report: T) -> Result<PathBuf> {
    let path = cfg.out.join(name);
    let env = Envelope {
        command,
        config_hash: cfg.hash(),
        config: cfg,
        report,
    };
    let text = serde_json::to_string_pretty(&env).expect("report serializes");
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    epochs: Vec<dasnet_core::nn::EpochRecord>,
    test_accuracy: f64,
    checkpoint: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    prepare_out(cfg)?;
    let data = load_dataset(cfg)?;
    let mut net = build_network(cfg.net, cfg.seed);
    net.set_fv_mode(cfg.fv_mode);
    let report = train_baseline(&mut net, &data, &cfg.train_config())?;
    let test_accuracy = evaluate(&net, &data, Split::Test, false)?;
    let path = cfg.baseline_path();
    checkpoint::save(&net, &path)?;
    write_report(
        cfg,
        "train",
        "train_report.json",
        TrainSummary {
            epochs: report.epochs,
            test_accuracy,
            checkpoint: path.clone(),
        },
    )?;
    Ok(format!(
        "trained {} for {} epochs: test accuracy {:.2}%\ncheckpoint: {}\n",
        cfg.net,
        net.meta.epochs_completed,
        100.0 * test_accuracy,
        path.display()
    ))
}

pub fn cmd_calibrate(cfg: &RunConfig) -> Result<String> {
    prepare_out(cfg)?;
    let net = load_baseline(cfg)?;
    let data = load_dataset(cfg)?;
    let stats = CalibrationStats::collect(&net, &data, cfg.calibration_samples, cfg.seed)?;
    let report = stats.report(&net, cfg.theta_conv, cfg.theta_fc)?;
    report.save_json(&cfg.calibration_path())?;
    let csv = cfg.out.join("calibration.csv");
    write_text(&csv, &report.curve_csv())?;
    let mut s = format!(
        "calibrated {} on {} samples (theta_conv {}, theta_fc {})\n",
        cfg.net, report.sample_count, cfg.theta_conv, cfg.theta_fc
    );
    for l in &report.layers {
        let _ = writeln!(s, "  {:<6} p = {:.4} ({} of {})", l.name, l.p, (l.p * l.neurons as f64).round(), l.neurons);
    }
    let _ = writeln!(s, "report: {}\ncurve: {}", cfg.calibration_path().display(), csv.display());
    Ok(s)
}

#[derive(Debug, Serialize)]
struct FinetuneSummary {
    finetune: dasnet_core::nn::FinetuneReport,
    baseline_test_accuracy: f64,
    dasnet_test_accuracy: f64,
    accuracy_drop: f64,
    pruning: dasnet_core::calibration::PruningSummary,
    checkpoint: PathBuf,
}

fn finetune_with(
    cfg: &RunConfig,
    baseline: &Network,
    data: &Dataset,
    rates: &[Option<f64>],
) -> Result<(Network, FinetuneSummary)> {
    let baseline_acc = evaluate(baseline, data, Split::Test, false)?;
    let mut net = baseline.clone();
    net.set_fv_mode(cfg.fv_mode);
    let ft = finetune_dasnet(&mut net, data, rates, &cfg.finetune_config())?;
    let acc = evaluate(&net, data, Split::Test, true)?;
    let summary = FinetuneSummary {
        finetune: ft,
        baseline_test_accuracy: baseline_acc,
        dasnet_test_accuracy: acc,
        accuracy_drop: baseline_acc - acc,
        pruning: pruning_summary(&net, rates),
        checkpoint: cfg.dasnet_path(),
    };
    Ok((net, summary))
}

pub fn cmd_finetune(cfg: &RunConfig) -> Result<String> {
    prepare_out(cfg)?;
    let baseline = load_baseline(cfg)?;
    let calibration = load_calibration(cfg)?;
    let data = load_dataset(cfg)?;
    let rates = calibration.winner_rates(&baseline)?;
    let (net, summary) = finetune_with(cfg, &baseline, &data, &rates)?;
    checkpoint::save(&net, &cfg.dasnet_path())?;
    let s = format!(
        "finetuned {}: baseline {:.2}%, DASNet {:.2}% (drop {:.2} points)\n\
         pruned: fc {:.1}%, conv channels {:.1}%\ncheckpoint: {}\n",
        cfg.net,
        100.0 * summary.baseline_test_accuracy,
        100.0 * summary.dasnet_test_accuracy,
        100.0 * summary.accuracy_drop,
        100.0 * summary.pruning.fc_pruned,
        100.0 * summary.pruning.conv_channels_pruned,
        cfg.dasnet_path().display()
    );
    write_report(cfg, "finetune", "finetune_report.json", summary)?;
    Ok(s)
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    unmasked_accuracy: f64,
    masked_accuracy: f64,
    winner_rates: Vec<Option<f64>>,
    pruning: dasnet_core::calibration::PruningSummary,
    cost: dasnet_core::cost::CostReport,
    baseline_accuracy: Option<f64>,
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<String> {
    prepare_out(cfg)?;
    let net = load_dasnet(cfg)?;
    let data = load_dataset(cfg)?;
    let masked = evaluate(&net, &data, Split::Test, true)?;
    let unmasked = evaluate(&net, &data, Split::Test, false)?;
    let baseline = if cfg.baseline_path().exists() {
        Some(evaluate(&checkpoint::load_network(&cfg.baseline_path())?, &data, Split::Test, false)?)
    } else {
        None
    };
    let rates = net.winner_rates();
    let pruning = pruning_summary(&net, &rates);
    let cost = count_macs(&net, &rates)?;
    write_text(&cfg.out.join("cost.csv"), &cost.to_csv())?;
    let mut s = format!(
        "{}: masked accuracy {:.2}%, unmasked {:.2}%\n",
        cfg.net,
        100.0 * masked,
        100.0 * unmasked
    );
    if let Some(b) = baseline {
        let _ = writeln!(s, "baseline {:.2}%, accuracy drop {:.2} points", 100.0 * b, 100.0 * (b - masked));
    }
    let _ = writeln!(
        s,
        "pruned activations: fc {:.1}%, conv channels {:.1}%, all maskable {:.1}%\nMAC reduction {:.1}%",
        100.0 * pruning.fc_pruned,
        100.0 * pruning.conv_channels_pruned,
        100.0 * pruning.activations_pruned,
        cost.mac_reduction_percent
    );
    write_report(
        cfg,
        "eval",
        "eval_report.json",
        EvalSummary {
            unmasked_accuracy: unmasked,
            masked_accuracy: masked,
            winner_rates: rates,
            pruning,
            cost,
            baseline_accuracy: baseline,
        },
    )?;
    Ok(s)
}

#[derive(Debug, Serialize)]
struct BenchRow {
    layer: String,
    input_rate: f64,
    record: BenchRecord,
}

/// Benchmarks every layer that consumes a masked input. Rates come from the
/// DASNet checkpoint when one exists, otherwise `bench_rate` is used.
pub fn cmd_bench(cfg: &RunConfig) -> Result<String> {
    prepare_out(cfg)?;
    let path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.dasnet_path());
    let net = if path.exists() {
        checkpoint::load_network(&path)?
    } else {
        let mut n = build_network(cfg.net, cfg.seed);
        let rates: Vec<Option<f64>> = (0..n.num_layers())
            .map(|i| (!n.is_output_layer(i)).then_some(cfg.bench_rate))
            .collect();
        n.set_winner_rates(&rates)?;
        n
    };
    let rates = net.winner_rates();
    let mut rows = Vec::new();
    let mut csv = String::from("layer,kind,input_rate,dense_s,ranking_s,condensed_s,normalized_time,ranking_share,speedup\n");
    let mut s = format!("{:<6} {:>6} {:>10} {:>10} {:>8} {:>8}\n", "layer", "p", "dense", "cond+rank", "speedup", "rank%");
    for i in 1..net.num_layers() {
        let Some(p) = rates[i - 1] else { continue };
        let geometry = LayerGeometry::of_layer(&net, i);
        let record = bench_layer(geometry, p, cfg.repetitions, cfg.seed)?;
        let name = &net.layer(i).name;
        let kind = if net.layer(i).kind.is_conv() { "conv" } else { "fc" };
        let _ = writeln!(
            csv,
            "{name},{kind},{p},{},{},{},{},{},{}",
            record.dense,
            record.ranking,
            record.condensed,
            (record.ranking + record.condensed) / record.dense,
            record.ranking_share,
            record.speedup
        );
        let _ = writeln!(
            s,
            "{:<6} {:>6.3} {:>9.1}us {:>9.1}us {:>7.2}x {:>7.2}%",
            name,
            p,
            1e6 * record.dense,
            1e6 * (record.ranking + record.condensed),
            record.speedup,
            100.0 * record.ranking_share
        );
        rows.push(BenchRow {
            layer: name.clone(),
            input_rate: p,
            record,
        });
    }
    if rows.is_empty() {
        return Err(CliError::Config("no layer consumes a masked input; nothing to benchmark".into()));
    }
    write_text(&cfg.out.join("bench.csv"), &csv)?;
    write_report(cfg, "bench", "bench_report.json", &rows)?;
    Ok(s)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    theta: f64,
    pruned_percent: f64,
    accuracy: f64,
    accuracy_drop: f64,
    fc_pruned_percent: f64,
    conv_channels_pruned_percent: f64,
    winner_rates: Vec<Option<f64>>,
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<String> {
    prepare_out(cfg)?;
    let baseline = load_baseline(cfg)?;
    let data = load_dataset(cfg)?;
    if cfg.thetas.is_empty() {
        return Err(CliError::Config("--thetas is empty".into()));
    }
    let target = cfg.sweep_target.unwrap_or(if cfg.net == NetName::Mlp3 {
        SweepTarget::Fc
    } else {
        SweepTarget::Both
    });
    let stats = CalibrationStats::collect(&baseline, &data, cfg.calibration_samples, cfg.seed)?;
    let mut rows = Vec::new();
    let mut csv = String::from("theta,pruned_percent,accuracy,accuracy_drop,fc_pruned_percent,conv_channels_pruned_percent\n");
    for &theta in &cfg.thetas {
        let (tc, tf) = match target {
            SweepTarget::Fc => (1.0, theta),
            SweepTarget::Conv => (theta, 1.0),
            SweepTarget::Both => (theta, theta),
        };
        let rates = stats.report(&baseline, tc, tf)?.winner_rates(&baseline)?;
        let (_, summary) = finetune_with(cfg, &baseline, &data, &rates)?;
        let p = summary.pruning;
        let pruned = match target {
            SweepTarget::Fc => p.fc_pruned,
            SweepTarget::Conv => p.conv_channels_pruned,
            SweepTarget::Both => p.activations_pruned,
        };
        let row = SweepRow {
            theta,
            pruned_percent: 100.0 * pruned,
            accuracy: summary.dasnet_test_accuracy,
            accuracy_drop: summary.accuracy_drop,
            fc_pruned_percent: 100.0 * p.fc_pruned,
            conv_channels_pruned_percent: 100.0 * p.conv_channels_pruned,
            winner_rates: rates,
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            row.theta, row.pruned_percent, row.accuracy, row.accuracy_drop, row.fc_pruned_percent, row.conv_channels_pruned_percent
        );
        if cfg.verbose {
            eprintln!("theta {theta}: pruned {:.1}%, accuracy {:.4}", row.pruned_percent, row.accuracy);
        }
        rows.push(row);
    }
    let path = cfg.out.join("sweep.csv");
    write_text(&path, &csv)?;
    write_report(cfg, "sweep", "sweep_report.json", &rows)?;
    Ok(csv)
}

#[derive(Debug, Serialize)]
struct CompressSummary {
    mode: CompressMode,
    dasnet_accuracy: f64,
    compressed_accuracy: f64,
    additional_drop: f64,
    fc_weight_density: f64,
    checkpoint: PathBuf,
}

pub fn cmd_compress(cfg: &RunConfig) -> Result<String> {
    prepare_out(cfg)?;
    let net = load_dasnet(cfg)?;
    let data = load_dataset(cfg)?;
    let before = evaluate(&net, &data, Split::Test, true)?;
    let (compressed, path) = match cfg.compress_mode {
        CompressMode::Quantize => {
            let (q, layers) = quantize_weights_linear8(&net)?;
            let codes: Vec<Int8Weights> = layers.into_iter().map(Into::into).collect();
            let path = cfg.out.join(format!("{}_dasnet_int8.dasn", cfg.net));
            checkpoint::save_int8(&q, &codes, &path)?;
            (q, path)
        }
        CompressMode::Prune => {
            let mut pruned = net.clone();
            magnitude_prune_fc(&mut pruned, cfg.density)?;
            let rates = pruned.winner_rates();
            finetune_dasnet(&mut pruned, &data, &rates, &cfg.finetune_config())?;
            let path = cfg.out.join(format!("{}_dasnet_pruned.dasn", cfg.net));
            checkpoint::save(&pruned, &path)?;
            (pruned, path)
        }
    };
    let after = evaluate(&compressed, &data, Split::Test, true)?;
    let summary = CompressSummary {
        mode: cfg.compress_mode,
        dasnet_accuracy: before,
        compressed_accuracy: after,
        additional_drop: before - after,
        fc_weight_density: fc_weight_density(&compressed),
        checkpoint: path.clone(),
    };
    let s = format!(
        "{:?}: DASNet {:.2}% -> {:.2}% (fc weight density {:.3})\ncheckpoint: {}\n",
        cfg.compress_mode,
        100.0 * before,
        100.0 * after,
        summary.fc_weight_density,
        path.display()
    );
    write_report(cfg, "compress", "compress_report.json", summary)?;
    Ok(s)
}

/// Runs a parsed command line and returns its human-readable summary.
pub fn run(cli: &Cli) -> Result<String> {
    let (flags, f): (&Flags, fn(&RunConfig) -> Result<String>) = match &cli.command {
        Command::Train(a) => (a, cmd_train),
        Command::Calibrate(a) => (a, cmd_calibrate),
        Command::Finetune(a) => (a, cmd_finetune),
        Command::Eval(a) => (a, cmd_eval),
        Command::Bench(a) => (a, cmd_bench),
        Command::Sweep(a) => (a, cmd_sweep),
        Command::Compress(a) => (a, cmd_compress),
    };
    f(&RunConfig::resolve(flags)?)
}
