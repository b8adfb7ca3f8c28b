use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;

use rgbd_sod::autograd::{resize_bilinear, Tensor};
use rgbd_sod::config::Config;
use rgbd_sod::data::{self, Sample};
use rgbd_sod::depth::{decompose_depth, DecompositionConfig, MaskMode};
use rgbd_sod::genotype::Genotype;
use rgbd_sod::metrics::{score_image, EvalReport};
use rgbd_sod::model::{Architecture, SaliencyNet};
use rgbd_sod::search::run_search;
use rgbd_sod::train::{evaluate, TrainCheckpoint, Trainer};
use rgbd_sod::Error;

#[derive(Parser)]
#[command(name = "rgbd-sod", version, about = "RGB-D salient object detection")]
struct Cli {
    /// TOML file with backbone, dsam, cells, search, train and data sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search the fusion cells and write the discrete genotype.
    Search {
        /// Dataset directory, or `synthetic`.
        #[arg(long)]
        data: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
        /// Checkpoint written after every epoch; resumed from if it exists.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Train a network with a fixed genotype.
    Train {
        #[arg(long)]
        genotype: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint at `--out` if present.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint, or precomputed maps, against ground truth.
    Eval {
        #[arg(long, required_unless_present = "pred_dir", conflicts_with = "pred_dir")]
        ckpt: Option<PathBuf>,
        /// Directory of `<stem>.png` saliency maps to score instead of a checkpoint.
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Predict one saliency map.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the region masks of one depth image.
    DecomposeViz {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        regions: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        mask_mode: Option<String>,
    },
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num_samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_validation));
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Search { data, epochs, seed, out, history, ckpt } => {
            if let Some(e) = epochs {
                config.search.epochs = e;
            }
            if let Some(s) = seed {
                config.search.seed = s;
                config.search.split_seed = s;
            }
            config.validate()?;
            echo(&config);
            let samples = dataset(&data, &config)?;
            let (g, hist) = match ckpt.as_deref().filter(|p| p.exists()) {
                Some(p) => {
                    let mut s = rgbd_sod::search::Searcher::load(p)?;
                    info!("resuming search at epoch {}", s.epoch);
                    s.config.epochs = config.search.epochs;
                    let g = rgbd_sod::search::continue_search(&mut s, &samples, Some(p))?;
                    (g, s.history)
                }
                None => run_search(&config.model(), &config.search, &samples, ckpt.as_deref())?,
            };
            std::fs::write(&out, g.to_text()).with_context(|| format!("writing {}", out.display()))?;
            if let Some(h) = history {
                std::fs::write(&h, hist.to_csv())?;
            }
            write_sidecar(&out, &config)?;
            info!("genotype written to {}", out.display());
        }
        Command::Train { genotype, data, epochs, seed, out, resume } => {
            if let Some(e) = epochs {
                config.train.epochs = e;
            }
            if let Some(s) = seed {
                config.train.seed = s;
            }
            config.validate()?;
            echo(&config);
            let text = std::fs::read_to_string(&genotype).with_context(|| format!("reading {}", genotype.display()))?;
            let g = Genotype::parse(&text)?;
            let samples = dataset(&data, &config)?;
            let mut trainer = if resume && out.exists() {
                let mut ckpt = TrainCheckpoint::load(&out)?;
                ckpt.train.epochs = config.train.epochs;
                Trainer::resume(ckpt)?
            } else {
                let net = SaliencyNet::new(config.model(), Architecture::Genotype(g), config.train.seed)?;
                Trainer::new(net, config.train.clone())?
            };
            trainer.run(&samples, Some(&out))?;
            let report = evaluate(&trainer.net, &samples)?;
            info!(
                "trained {} epochs: F {} MAE {:.4}",
                trainer.epoch,
                report.mean_f().map_or("-".into(), |f| format!("{f:.4}")),
                report.mean_mae()
            );
        }
        Command::Eval { ckpt, pred_dir, data, report } => {
            let mut rep = EvalReport::default();
            if let Some(ckpt) = ckpt {
                let c = TrainCheckpoint::load(&ckpt)?;
                let net = c.network()?;
                info!("checkpoint at epoch {}, config hash {}", c.epoch, c.config_hash());
                config.backbone = c.model.backbone.clone();
                config.dsam = c.model.dsam.clone();
                config.cells = c.model.cells.clone();
                config.train = c.train.clone();
                let samples = data::load_dataset_resized(&data, net.config.backbone.input_size)?;
                rep = evaluate(&net, &samples)?;
            } else if let Some(dir) = pred_dir {
                for s in data::load_dataset(&data)? {
                    let path = dir.join(format!("{}.png", s.id));
                    let pred = data::load_gray(&path).map_err(|e| missing(&path, e))?;
                    let pred = if pred.shape() == s.gt.shape() { pred } else { resize_bilinear(&pred, s.height(), s.width()) };
                    rep.push(score_image(&s.id, &pred, &s.gt)?);
                }
            }
            std::fs::write(&report, rep.to_csv()).with_context(|| format!("writing {}", report.display()))?;
            write_sidecar(&report, &config)?;
            println!(
                "F {} MAE {:.4} S {:.4} E {:.4} over {} images",
                rep.mean_f().map_or("-".into(), |f| format!("{f:.4}")),
                rep.mean_mae(),
                rep.mean_s(),
                rep.mean_e(),
                rep.rows.len()
            );
        }
        Command::Predict { ckpt, rgb, depth, out } => {
            let net = TrainCheckpoint::load(&ckpt)?.network()?;
            let rgb = data::load_rgb(&rgb)?;
            let depth = data::load_depth(&depth)?;
            let (h, w) = (depth.height(), depth.width());
            let gt = Tensor::zeros(&[1, h, w]);
            let sample = Sample::new("input", rgb, depth, gt)?;
            let (nh, nw) = net.config.backbone.input_size;
            let map = net.predict(&net.prepare(&sample.resized(nh, nw))?)?;
            let map = if (nh, nw) == (h, w) { map } else { resize_bilinear(&map, h, w) };
            data::save_gray(&out, &map)?;
            info!("saliency map written to {}", out.display());
        }
        Command::DecomposeViz { depth, out_dir, regions, bins, mask_mode } => {
            let mut d: DecompositionConfig = config.dsam.decomposition();
            if let Some(r) = regions {
                d.regions = r;
            }
            if let Some(b) = bins {
                d.bins = b;
            }
            if let Some(m) = mask_mode {
                d.mask_mode = match m.as_str() {
                    "soft" => MaskMode::Soft,
                    "binary" => MaskMode::Binary,
                    other => return Err(Error::Config(format!("unknown mask mode `{other}`")).into()),
                };
            }
            let map = data::load_depth(&depth)?;
            let masks = decompose_depth(&map, &d)?;
            std::fs::create_dir_all(&out_dir)?;
            for m in &masks {
                let p = out_dir.join(format!("region_{}.png", m.region_index));
                data::save_mask(&p, m)?;
                println!("{}", p.display());
            }
        }
        Command::Synth { out, num_samples, seed } => {
            if let Some(n) = num_samples {
                config.data.num_samples = n;
            }
            if let Some(s) = seed {
                config.data.seed = s;
            }
            if config.data.num_samples == 0 || config.data.height == 0 || config.data.width == 0 {
                return Err(Error::Config("synthetic data needs positive sample count and size".into()).into());
            }
            data::save_dataset(&out, &data::synth_dataset(&config.data)?)?;
            info!("{} samples written to {}", config.data.num_samples, out.display());
        }
    }
    Ok(())
}

fn dataset(spec: &str, config: &Config) -> anyhow::Result<Vec<Sample>> {
    let (h, w) = config.backbone.input_size;
    if spec == "synthetic" {
        let mut s = config.data.clone();
        s.height = h;
        s.width = w;
        return Ok(data::synth_dataset(&s)?);
    }
    Ok(data::load_dataset_resized(Path::new(spec), (h, w))?)
}

fn missing(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(_) | Error::Image(_) => Error::Dataset(format!("{}: {e}", path.display())),
        other => other,
    }
}

fn echo(config: &Config) {
    info!("resolved configuration:\n{}", config.to_toml());
}

/// The resolved configuration next to an output file, as `<file>.config.toml`.
fn write_sidecar(out: &Path, config: &Config) -> anyhow::Result<()> {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".config.toml");
    std::fs::write(out.with_file_name(name), config.to_toml())?;
    Ok(())
}
