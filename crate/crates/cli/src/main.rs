//! `mentor`: generate data, train, evaluate and run seeded experiment matrices.
//!
//! Exit codes: 0 success, 1 run failure, 2 configuration or usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mentor_core::config::ExperimentConfig;
use mentor_core::data::pgm::{self, GrayImage};
use mentor_core::data::{generate_synthetic_task, load_manifest, write_dataset, Resize, SampleSet, ANOMALOUS};
use mentor_core::nn::{self, load_checkpoint, Model};
use mentor_core::tensor::Tensor;
use mentor_core::train::{self, run_experiment, AggregateReport, Strategy};

#[derive(Parser)]
#[command(name = "mentor", version, about = "Saliency-guided two-phase training experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate the synthetic task and write it as a manifest plus PGM files.
    GenData(Common),
    /// Train one strategy with the configured `train.seed`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "mentor")]
        strategy: StrategyArg,
    },
    /// Score a checkpoint on the configured data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the strategy × seed matrix.
    Experiment(Common),
    /// Write predicted saliency maps (autoencoders) or CAMs (classifiers) as PGM.
    ExportSaliency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// A PGM file or a directory of them.
        #[arg(long)]
        images: PathBuf,
    },
    /// Print the architecture and tensors of a checkpoint.
    InspectCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Concurrent experiment cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum StrategyArg {
    Xent,
    Mentor,
    JointCam,
    JointGaze,
    MentorJointCam,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Xent => Strategy::Xent,
            StrategyArg::Mentor => Strategy::Mentor,
            StrategyArg::JointCam => Strategy::JointCam,
            StrategyArg::JointGaze => Strategy::JointGaze,
            StrategyArg::MentorJointCam => Strategy::MentorJointCam,
        }
    }
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<mentor_core::Error> for Failure {
    fn from(e: mentor_core::Error) -> Self {
        if e.is_config() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Run(e.to_string())
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(verb: Verb) -> Outcome {
    match verb {
        Verb::GenData(c) => gen_data(&c),
        Verb::Train { common, strategy } => {
            let cfg = load_config(&common)?;
            let mut cfg = cfg;
            cfg.experiment.strategies = vec![strategy.into()];
            cfg.experiment.seeds = vec![cfg.train.seed];
            matrix(&common, cfg, "train")
        }
        Verb::Evaluate { common, checkpoint } => evaluate(&common, &checkpoint),
        Verb::Experiment(c) => {
            let cfg = load_config(&c)?;
            matrix(&c, cfg, "experiment")
        }
        Verb::ExportSaliency {
            common,
            checkpoint,
            images,
        } => export_saliency(&common, &checkpoint, &images),
        Verb::InspectCheckpoint { checkpoint } => inspect(&checkpoint),
    }
}

fn load_config(c: &Common) -> Outcome<ExperimentConfig> {
    let base = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let cfg = base.with_overrides(&c.overrides)?;
    cfg.validate()?;
    if c.jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    Ok(cfg)
}

fn load_data(cfg: &ExperimentConfig) -> Outcome<SampleSet> {
    match &cfg.data.manifest {
        Some(path) => Ok(load_manifest(path, Some(cfg.model.input_extent))?),
        None => {
            if cfg.data.synthetic.extent != cfg.model.input_extent {
                return Err(Failure::Usage(format!(
                    "data.synthetic.extent {} differs from model.input_extent {}",
                    cfg.data.synthetic.extent, cfg.model.input_extent
                )));
            }
            Ok(generate_synthetic_task(&cfg.data.synthetic)?)
        }
    }
}

/// Runs `body` against a scratch directory next to `out` and renames it into
/// place only if `body` succeeds.
fn staged<T>(out: &Path, body: impl FnOnce(&Path) -> Outcome<T>) -> Outcome<T> {
    let occupied = out.exists()
        && fs::read_dir(out).map(|mut d| d.next().is_some()).unwrap_or(true);
    if occupied {
        return Err(Failure::Usage(format!("output directory {} already exists and is not empty", out.display())));
    }
    let name = out
        .file_name()
        .ok_or_else(|| Failure::Usage(format!("invalid output directory {}", out.display())))?
        .to_string_lossy();
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Failure::Run(format!("{}: {e}", parent.display())))?;
    let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
    let _ = fs::remove_dir_all(&tmp);
    fs::create_dir_all(&tmp).map_err(|e| Failure::Run(format!("{}: {e}", tmp.display())))?;
    match body(&tmp) {
        Ok(v) => {
            if out.exists() {
                fs::remove_dir(out).map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?;
            }
            fs::rename(&tmp, out).map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?;
            Ok(v)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'a str,
    version: &'a str,
    verb: &'a str,
    seeds: &'a [u64],
}

fn write_provenance(dir: &Path, cfg: &ExperimentConfig, verb: &str, seeds: &[u64]) -> Outcome {
    let text = cfg.to_json_pretty()?;
    write(&dir.join("effective_config.json"), text.as_bytes())?;
    let prov = Provenance {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        verb,
        seeds,
    };
    let text = serde_json::to_string_pretty(&prov).map_err(|e| Failure::Run(e.to_string()))? + "\n";
    write(&dir.join("provenance.json"), text.as_bytes())
}

fn write(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

fn gen_data(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let set = generate_synthetic_task(&cfg.data.synthetic)?;
    staged(&c.out, |dir| {
        write_dataset(&set, dir)?;
        write_provenance(dir, &cfg, "gen-data", &[cfg.data.synthetic.seed])
    })?;
    println!("{:<6} {:>6} {:>7} {:>10}", "split", "total", "normal", "anomalous");
    for s in set.summary() {
        println!("{:<6} {:>6} {:>7} {:>10}", s.split.as_str(), s.total, s.normal, s.anomalous);
    }
    println!("wrote {}", c.out.join("manifest.jsonl").display());
    Ok(())
}

fn matrix(c: &Common, cfg: ExperimentConfig, verb: &str) -> Outcome {
    let data = load_data(&cfg)?;
    let spec = cfg.experiment_spec();
    eprintln!(
        "running {} strategies x {} seeds on {} samples",
        spec.strategies.len(),
        spec.seeds.len(),
        data.len()
    );
    let report: AggregateReport = staged(&c.out, |dir| {
        write_provenance(dir, &cfg, verb, &cfg.experiment.seeds)?;
        Ok(run_experiment(&spec, &data, Some(dir), c.jobs)?)
    })?;
    println!("{:<18} {:>8} {:>8} {:>10}", "strategy", "auroc", "std", "s_entropy");
    for s in &report.strategies {
        let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<18} {:>8} {:>8} {:>10}",
            s.strategy.as_str(),
            f(s.auroc_mean),
            f(s.auroc_std),
            f(s.s_entropy_mean)
        );
    }
    for f in &report.failures {
        eprintln!("failed: {} seed {}: {}", f.strategy.as_str(), f.seed, f.error);
    }
    println!("{}", report.table_line());
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(format!("{} run(s) failed", report.failures.len())))
    }
}

fn evaluate(c: &Common, checkpoint: &Path) -> Outcome {
    let cfg = load_config(c)?;
    let model = load_checkpoint(checkpoint)?;
    let mut cfg = cfg;
    cfg.model = model.spec.clone();
    let data = load_data(&cfg)?;
    let metrics = train::evaluate_model(&model, &data)?;
    let text = serde_json::to_string_pretty(&metrics).map_err(|e| Failure::Run(e.to_string()))? + "\n";
    staged(&c.out, |dir| {
        write_provenance(dir, &cfg, "evaluate", &[])?;
        write(&dir.join("evaluation.json"), text.as_bytes())
    })?;
    print!("{text}");
    Ok(())
}

fn collect_images(images: &Path) -> Outcome<Vec<PathBuf>> {
    if images.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(images)
            .map_err(|e| Failure::Usage(format!("{}: {e}", images.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Failure::Usage(format!("no .pgm files in {}", images.display())));
        }
        Ok(paths)
    } else if images.is_file() {
        Ok(vec![images.to_path_buf()])
    } else {
        Err(Failure::Usage(format!("{} does not exist", images.display())))
    }
}

fn export_saliency(c: &Common, checkpoint: &Path, images: &Path) -> Outcome {
    let model: Model = load_checkpoint(checkpoint)?;
    let paths = collect_images(images)?;
    let extent = model.spec.input_extent;
    let mut items = Vec::with_capacity(paths.len());
    for p in &paths {
        let g = pgm::read(p)?;
        let mut t = Tensor::new([1, g.height, g.width], g.to_unit()).map_err(Failure::from)?;
        if g.width != extent || g.height != extent {
            t = t.resize_canonical(extent)?;
        }
        items.push(t);
    }
    let batch = Tensor::stack(&items.iter().collect::<Vec<_>>())?;
    let maps = match (&model.head, &model.decoder) {
        (Some(_), _) => nn::class_activation_maps(&model, &batch, &vec![ANOMALOUS as usize; items.len()])?,
        (None, Some(dec)) => train::generate_saliency_for_unlabeled(&model.encoder, dec, &batch)?,
        (None, None) => return Err(Failure::Run("checkpoint has neither decoder nor head".into())),
    };
    staged(&c.out, |dir| {
        for (p, m) in paths.iter().zip(&maps) {
            let name = p.file_name().expect("file path");
            pgm::write(&dir.join(name), &GrayImage::from_unit(m.width(), m.height(), m.values()))?;
        }
        Ok(())
    })?;
    println!("exported {} maps to {}", maps.len(), c.out.display());
    Ok(())
}

fn inspect(checkpoint: &Path) -> Outcome {
    let model = load_checkpoint(checkpoint)?;
    let spec = serde_json::to_string_pretty(&model.spec).map_err(|e| Failure::Run(e.to_string()))?;
    println!("{spec}");
    println!(
        "parts: encoder{}{}",
        if model.decoder.is_some() { " decoder" } else { "" },
        if model.head.is_some() { " head" } else { "" }
    );
    for (name, t) in model.named_tensors() {
        println!("{name:<28} {:?}", t.shape());
    }
    println!("parameters: {}", model.param_count());
    Ok(())
}
