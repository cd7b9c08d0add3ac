use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robustpose_core::bench::{
    build_corrupted_dataset, evaluate_bench, load_dataset, read_png, write_dataset, write_png,
};
use robustpose_core::checkpoint::{write_atomic, Checkpoint};
use robustpose_core::corruption::{psnr, CorruptionEngine, CorruptionKind, CorruptionSpec, SeverityTable};
use robustpose_core::eval::{mpc, rpc, EvalConfig, Metric, RobustnessGrid};
use robustpose_core::report::{report_csv, report_svg};
use robustpose_core::rng::{derive_stream, domain};
use robustpose_core::synth::{generate_synthetic_dataset, SyntheticFigureSpec};
use robustpose_core::train::{train, AdvMixConfig, MixStrategy, HISTORY_HEADER};
use robustpose_core::{Error, Result};

/// Relative paths are resolved against this directory when it is set.
const DATA_ROOT_VAR: &str = "ROBUSTPOSE_DATA_ROOT";

#[derive(Parser)]
#[command(name = "robustpose", version, about = "Corruption benchmarks and adversarial mixing for keypoint models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic stick-figure dataset into <out>/train and <out>/val.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        val: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML figure spec overriding the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Corrupt one image and print its PSNR against the input.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        kind: String,
        #[arg(long, allow_negative_numbers = true)]
        severity: i64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        severity_table: Option<PathBuf>,
    },
    /// Build all 75 corrupted slices of a clean dataset, plus a copy of
    /// the clean slice at <out>/clean.
    BuildBench {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        severity_table: Option<PathBuf>,
    },
    /// Train a pose network with AdvMix or a baseline strategy.
    Train {
        /// TOML training config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "data")]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Start from this pose checkpoint instead of a random init.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        generator_out: Option<PathBuf>,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<MixStrategy>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_kd: bool,
    },
    /// Score a checkpoint on a benchmark directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        /// Clean slice; defaults to <bench>/clean.
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long)]
        metric: Option<Metric>,
        /// TOML evaluation config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the CSV table (and optionally an SVG chart) for a grid JSON.
    Report {
        grid: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_VAR) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn engine(table: Option<&PathBuf>) -> Result<CorruptionEngine> {
    match table {
        Some(p) => CorruptionEngine::new(SeverityTable::from_toml_str(&read_text(&resolve(p))?)?),
        None => Ok(CorruptionEngine::default()),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { out, train, val, seed, config } => {
            let spec = match config {
                Some(p) => parse_toml(&resolve(&p))?,
                None => SyntheticFigureSpec::default(),
            };
            let out = resolve(&out);
            let (tr, va) = generate_synthetic_dataset(train, val, &spec, seed)?;
            write_dataset(&tr, &out.join("train"), None)?;
            write_dataset(&va, &out.join("val"), None)?;
            println!("wrote {} train and {} val images to {}", tr.len(), va.len(), out.display());
        }
        Command::Corrupt { input, kind, severity, seed, out, severity_table } => {
            let kind: CorruptionKind = kind.parse()?;
            let severity = u8::try_from(severity)
                .map_err(|_| Error::Validation(format!("severity {severity} outside 1..=5")))?;
            let spec = CorruptionSpec::new(kind, severity)?;
            let engine = engine(severity_table.as_ref())?;
            let image = read_png(&resolve(&input))?;
            let mut rng = derive_stream(seed, domain::CORRUPTION_CLI, spec.kind.stream_tag(severity));
            let corrupted = engine.apply(&image, spec, &mut rng)?.quantize_u8();
            if let Some(out) = out {
                write_png(&resolve(&out), &corrupted)?;
            }
            println!("PSNR {:.4} dB", psnr(&image, &corrupted)?);
        }
        Command::BuildBench { clean, out, seed, severity_table } => {
            let engine = engine(severity_table.as_ref())?;
            let (clean_path, out) = (resolve(&clean), resolve(&out));
            let (data, _) = load_dataset(&clean_path)?;
            write_dataset(&data, &out.join("clean"), None)?;
            let slices = build_corrupted_dataset(&clean_path, &out, seed, &engine)?;
            println!(
                "built {} slices, {} images, in {}",
                slices.len(),
                slices.len() * data.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            data,
            val,
            out,
            teacher,
            init,
            generator_out,
            log,
            strategy,
            epochs,
            seed,
            no_kd,
        } => {
            let mut cfg = match config {
                Some(p) => AdvMixConfig::from_toml_str(&read_text(&resolve(&p))?)?,
                None => AdvMixConfig::default(),
            };
            if let Some(s) = strategy {
                cfg.mix_strategy = s;
            }
            if let Some(e) = epochs {
                cfg.total_epochs = e;
                cfg.decay_epochs = robustpose_core::train::scaled_decay_epochs(e);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if no_kd {
                cfg.kd_enabled = false;
            }
            cfg.validate()?;
            let (train_set, _) = load_dataset(&resolve(&data))?;
            let val_set = val.map(|v| load_dataset(&resolve(&v))).transpose()?.map(|(d, _)| d);
            let teacher = teacher.map(|p| Checkpoint::load(&resolve(&p))?.into_pose()).transpose()?;
            let student = init.map(|p| Checkpoint::load(&resolve(&p))?.into_pose()).transpose()?;
            let mut log_file = match log {
                Some(p) => {
                    let p = resolve(&p);
                    if let Some(dir) = p.parent() {
                        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    }
                    let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
                    writeln!(f, "{HISTORY_HEADER}").map_err(|e| Error::io(&p, e))?;
                    Some((f, p))
                }
                None => None,
            };
            let outcome = train(&train_set, val_set.as_ref(), &cfg, student, teacher, &mut |r| {
                eprintln!(
                    "epoch {:>3}  L_D {:.6}  L_D* {:.6}  L_Dkd {:.6}  L_G {:.6}  clean {:.2}",
                    r.epoch, r.l_d, r.l_d_star, r.l_dkd, r.l_g, r.clean_metric
                );
                if let Some((f, p)) = log_file.as_mut() {
                    writeln!(f, "{}", r.csv_line()).map_err(|e| Error::io(&*p, e))?;
                }
                Ok(())
            })?;
            Checkpoint::from(&outcome.student).save(&resolve(&out))?;
            if let (Some(path), Some(g)) = (generator_out, &outcome.generator) {
                Checkpoint::from(g).save(&resolve(&path))?;
            }
            println!("saved {} ({} epochs, {})", out.display(), cfg.total_epochs, cfg.mix_strategy);
        }
        Command::Eval { checkpoint, bench, clean, metric, config, out } => {
            let mut cfg: EvalConfig = match config {
                Some(p) => parse_toml(&resolve(&p))?,
                None => EvalConfig::default(),
            };
            if let Some(m) = metric {
                cfg.metric = m;
            }
            let net = Checkpoint::load(&resolve(&checkpoint))?.into_pose()?;
            let bench = resolve(&bench);
            let clean = clean.map_or_else(|| bench.join("clean"), |c| resolve(&c));
            let grid = evaluate_bench(&net, &clean, &bench, &cfg)?;
            let m = mpc(&grid);
            println!("clean {:.2}", grid.clean_score);
            println!("mPC {m:.2}");
            match rpc(m, grid.clean_score) {
                Ok(r) => println!("rPC {r:.2}"),
                Err(_) => println!("rPC undefined (clean score {})", grid.clean_score),
            }
            if let Some(out) = out {
                write_atomic(&resolve(&out), grid.to_json().as_bytes())?;
            }
        }
        Command::Report { grid, csv, svg } => {
            let grid = RobustnessGrid::from_json(&read_text(&resolve(&grid))?)?;
            let table = report_csv(&grid)?;
            match csv {
                Some(p) => write_atomic(&resolve(&p), table.as_bytes())?,
                None => print!("{table}"),
            }
            if let Some(p) = svg {
                write_atomic(&resolve(&p), report_svg(&grid)?.as_bytes())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
