//! `mpq` command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage errors (bad flags or out-of-range
//! settings), 1 for data errors (unreadable or invalid files).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::importance::{ImportanceConfig, ImportanceError, ImportanceScores, DEFAULT_BETA};
use crate::metrics::{
    bops_model, build_report, model_size_bits, mse_report, render_report, to_mbit, ReportFormat,
};
use crate::pwq::{dequantize_model, quantize_model, QuantError, DEFAULT_GRID_SIZE};
use crate::store::{self, ModelBundle, QuantSettings, BUNDLE_MAGIC, QUANTIZED_MAGIC};
use crate::synth::{gen_model, ArchDescriptor, GenOptions, WeightDist};

pub const SWEEP_CSV_HEADER: &str = "alpha,size_mbit,total_mse,total_bops";
pub const SWEEP_CSV_NOTE: &str =
    "# total_mse is the weight round-trip MSE, reported in place of task accuracy";

#[derive(Debug, Parser)]
#[command(name = "mpq", version, about = "Post-training mixed-precision weight quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DistArg {
    Gaussian,
    Laplace,
    Uniform,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Summarize a .ptqb bundle or .ptqq quantized model.
    Inspect { file: PathBuf },
    /// Partition, quantize and report.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
        #[arg(long = "bits-important")]
        bits_important: u8,
        #[arg(long = "bits-other")]
        bits_other: u8,
        #[arg(long = "act-bits", default_value_t = 8)]
        act_bits: u8,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
        grid: usize,
        #[arg(long = "normalize-fl")]
        normalize_fl: bool,
    },
    /// Decode a quantized model back to a float bundle.
    Dequantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print size, error and BOPs metrics for a quantized model.
    Report {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        quantized: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
        #[arg(long = "act-bits")]
        act_bits: Option<u8>,
    },
    /// Size/error/BOPs trade-off across a list of alpha values.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30,40")]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
        #[arg(long = "bits-important")]
        bits_important: u8,
        #[arg(long = "bits-other")]
        bits_other: u8,
        #[arg(long = "act-bits", default_value_t = 8)]
        act_bits: u8,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
        grid: usize,
        #[arg(long = "normalize-fl")]
        normalize_fl: bool,
    },
    /// Generate a synthetic bundle.
    Gen {
        /// Built-in name (resnet50-like, mobilenetv2-like) or descriptor path.
        #[arg(long)]
        arch: String,
        #[arg(long, value_enum, default_value = "gaussian")]
        dist: DistArg,
        /// Standard deviation (gaussian), scale (laplace) or bound (uniform).
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "layer-spread", default_value_t = 0.5)]
        layer_spread: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Importance(ImportanceError::InvalidConfig(m)) => Failure::Usage(m),
            Error::Quant(QuantError::InvalidGrid(g)) => {
                Failure::Usage(format!("grid size {g} must be at least 2"))
            }
            other => Failure::Data(other),
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            2
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> std::result::Result<(), Failure> {
    out.write_all(text.as_bytes()).map_err(|source| {
        Failure::Data(Error::Io {
            path: "<stdout>".into(),
            source,
        })
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn format_for(path: &Path) -> ReportFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
        _ => ReportFormat::Json,
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Inspect { file } => {
            let text = inspect(&file)?;
            write_out(out, &text)
        }
        Command::Quantize {
            model,
            alpha,
            beta,
            bits_important,
            bits_other,
            act_bits,
            out: out_path,
            report,
            grid,
            normalize_fl,
        } => {
            let settings = QuantSettings {
                alpha,
                beta,
                bits_important,
                bits_other,
                act_bits,
                grid,
                normalize_layer_score: normalize_fl,
            };
            let cfg = importance_config(&settings);
            cfg.validate().map_err(Error::from)?;
            check_grid(grid)?;
            let bundle = store::load_bundle(&model).map_err(Error::from)?;
            let part = crate::importance::partition(&bundle, &cfg).map_err(Error::from)?;
            let mut qm = quantize_model(&bundle, &part, grid).map_err(Error::from)?;
            qm.settings = Some(settings);
            store::save_quantized(&qm, &out_path).map_err(Error::from)?;
            let rep = build_report(&bundle, &qm, act_bits)?;
            write_file(&report, &render_report(&rep, format_for(&report))?)?;
            write_out(
                out,
                &format!(
                    "{}: {:.4} Mbit -> {:.4} Mbit ({:.2}% smaller), mse {:.6e}, {:.6e} BOPs\n",
                    rep.model_name,
                    rep.baseline_mbit,
                    rep.quantized_mbit,
                    rep.size_reduction_pct,
                    rep.total_mse,
                    rep.total_bops
                ),
            )
        }
        Command::Dequantize { model, out: out_path } => {
            let qm = store::load_quantized(&model).map_err(Error::from)?;
            let bundle = dequantize_model(&qm).map_err(Error::from)?;
            store::save_bundle(&bundle, &out_path).map_err(Error::from)?;
            Ok(())
        }
        Command::Report {
            original,
            quantized,
            format,
            act_bits,
        } => {
            let bundle = store::load_bundle(&original).map_err(Error::from)?;
            let qm = store::load_quantized(&quantized).map_err(Error::from)?;
            let act_bits = act_bits
                .or(qm.settings.map(|s| s.act_bits))
                .unwrap_or(8);
            let rep = build_report(&bundle, &qm, act_bits)?;
            write_out(out, &render_report(&rep, format.into())?)
        }
        Command::Sweep {
            model,
            alphas,
            beta,
            bits_important,
            bits_other,
            act_bits,
            out: out_path,
            grid,
            normalize_fl,
        } => {
            check_grid(grid)?;
            let base = ImportanceConfig {
                alpha: 0.0,
                beta,
                bits_important,
                bits_other,
                normalize_layer_score: normalize_fl,
            };
            for &alpha in &alphas {
                ImportanceConfig { alpha, ..base }.validate().map_err(Error::from)?;
            }
            let bundle = store::load_bundle(&model).map_err(Error::from)?;
            let csv = sweep(&bundle, &alphas, &base, act_bits, grid)?;
            write_file(&out_path, &csv)?;
            Ok(())
        }
        Command::Gen {
            arch,
            dist,
            sigma,
            seed,
            layer_spread,
            out: out_path,
        } => {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(Failure::Usage(format!("--sigma must be positive, got {sigma}")));
            }
            if !(0.0..1.0).contains(&layer_spread) {
                return Err(Failure::Usage(format!(
                    "--layer-spread must lie in [0, 1), got {layer_spread}"
                )));
            }
            let arch = ArchDescriptor::resolve(&arch)?;
            let dist = match dist {
                DistArg::Gaussian => WeightDist::Gaussian { sigma },
                DistArg::Laplace => WeightDist::Laplace { scale: sigma },
                DistArg::Uniform => WeightDist::Uniform { bound: sigma },
            };
            let bundle = gen_model(
                &arch,
                &GenOptions {
                    dist,
                    seed,
                    layer_spread,
                },
            );
            store::save_bundle(&bundle, &out_path).map_err(Error::from)?;
            write_out(
                out,
                &format!(
                    "{}: {} layers, {} params\n",
                    bundle.model_name,
                    bundle.layers.len(),
                    bundle.weight_count()
                ),
            )
        }
    }
}

fn importance_config(s: &QuantSettings) -> ImportanceConfig {
    ImportanceConfig {
        alpha: s.alpha,
        beta: s.beta,
        bits_important: s.bits_important,
        bits_other: s.bits_other,
        normalize_layer_score: s.normalize_layer_score,
    }
}

fn check_grid(grid: usize) -> std::result::Result<(), Failure> {
    if grid < 2 {
        return Err(Failure::Usage(format!("--grid must be at least 2, got {grid}")));
    }
    Ok(())
}

/// One CSV row per alpha: model size, total round-trip MSE and total BOPs.
pub fn sweep(
    bundle: &ModelBundle,
    alphas: &[f64],
    base: &ImportanceConfig,
    act_bits: u8,
    grid: usize,
) -> Result<String> {
    let scores = ImportanceScores::compute(bundle, base.normalize_layer_score)?;
    let mut csv = format!("{SWEEP_CSV_NOTE}\n{SWEEP_CSV_HEADER}\n");
    for &alpha in alphas {
        let part = scores.partition(&ImportanceConfig { alpha, ..*base })?;
        let qm = quantize_model(bundle, &part, grid)?;
        let size = model_size_bits(&bundle.layers, &part.channel_bits);
        let mse = mse_report(bundle, &qm)?;
        let (bops, _) = bops_model(&bundle.layers, &part.channel_bits, u32::from(act_bits));
        writeln!(csv, "{alpha},{},{},{}", to_mbit(size), mse.total, bops).unwrap();
    }
    Ok(csv)
}

fn inspect(path: &Path) -> Result<String> {
    let magic = store::sniff_magic(path)?;
    let mut s = String::new();
    if magic == BUNDLE_MAGIC {
        let b = store::load_bundle(path)?;
        let scores = if b.layers.is_empty() {
            None
        } else {
            Some(ImportanceScores::compute(&b, false)?)
        };
        writeln!(s, "bundle {}", b.model_name).unwrap();
        writeln!(s, "layers {}", b.layers.len()).unwrap();
        writeln!(s, "params {}", b.weight_count()).unwrap();
        writeln!(s, "index\tkind\tm\tn\tk\tparams\tF_l").unwrap();
        for (i, l) in b.layers.iter().enumerate() {
            let fl = scores.as_ref().map_or(0.0, |sc| sc.layer_scores[i]);
            writeln!(
                s,
                "{}\t{:?}\t{}\t{}\t{}\t{}\t{:.6}",
                l.layer_index,
                l.kind,
                l.m,
                l.n,
                l.k,
                l.weight_count(),
                fl
            )
            .unwrap();
        }
    } else if magic == QUANTIZED_MAGIC {
        let q = store::load_quantized(path)?;
        writeln!(s, "quantized {}", q.source_model_name).unwrap();
        writeln!(s, "layers {}", q.layers.len()).unwrap();
        writeln!(s, "params {}", q.weight_count()).unwrap();
        let size = model_size_bits(&q.layer_descriptors(), &q.channel_bits());
        writeln!(s, "size_mbit {}", to_mbit(size)).unwrap();
        writeln!(s, "index\tparams\tbits\tp\tl").unwrap();
        for ql in &q.layers {
            let hist = crate::metrics::bits_histogram(&ql.channel_bits, ql.layer.weights_per_channel());
            let hist: Vec<String> = hist.iter().map(|(b, n)| format!("{b}:{n}")).collect();
            writeln!(
                s,
                "{}\t{}\t{}\t{:.6e}\t{:.6e}",
                ql.layer.layer_index,
                ql.weight_count(),
                hist.join(";"),
                ql.p,
                ql.l
            )
            .unwrap();
        }
    } else {
        return Err(store::StoreError::BadMagic {
            expected: "PTQB or PTQQ".into(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        }
        .into());
    }
    Ok(s)
}
