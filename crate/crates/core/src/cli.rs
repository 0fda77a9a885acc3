//! `spdn` command-line entry point.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use spdn_tensor::Tensor;

use crate::attn_decoder::{peakedness, PeakednessReport, StepPeakedness};
use crate::bench::{self, BenchReport, Dims};
use crate::config::RunConfig;
use crate::error::{Result, SpdnError};
use crate::image::GrayImage;
use crate::model::{Model, Variant};
use crate::sp_decoder::export_trajectory;
use crate::synth::{make_corpus, Dataset, Distortion, Renderer};
use crate::training::{self, evaluate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const SUBCOMMANDS: [&str; 6] = ["gen-data", "train", "eval", "bench", "analyze-attn", "visualize"];

pub const CONFIG_FILE: &str = "config.cfg";

#[derive(Debug, Parser)]
#[command(name = "spdn", version, about = "Single-point decoding network for text recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic corpus into --out.
    GenData(Common),
    /// Train a model on `data`, writing checkpoints and metrics into --out.
    Train(Common),
    /// Greedy sequence accuracy of `checkpoint` on `split`.
    Eval(Common),
    /// Analytic FLOPs and measured decode time per variant.
    Bench(Common),
    /// Attention peakedness statistics of an attention checkpoint.
    AnalyzeAttn(Common),
    /// Sample-point overlays for the images listed in `ids`.
    Visualize(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable and applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.set {
            cfg.apply_override(kv)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// Runs one invocation; `argv[0]` is the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Printing help or a usage message can only fail on a closed pipe.
            let _ = e.print();
            if !e.use_stderr() {
                return EXIT_OK;
            }
            eprintln!("valid subcommands: {}", SUBCOMMANDS.join(", "));
            return EXIT_USAGE;
        }
    };
    let (name, common) = match &cli.command {
        Command::GenData(c) => ("gen-data", c),
        Command::Train(c) => ("train", c),
        Command::Eval(c) => ("eval", c),
        Command::Bench(c) => ("bench", c),
        Command::AnalyzeAttn(c) => ("analyze-attn", c),
        Command::Visualize(c) => ("visualize", c),
    };
    let cfg = match common.resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("spdn {name}: {e}");
            return EXIT_USAGE;
        }
    };
    let out = common.out.as_path();
    let result = prepare_out(out, &cfg).and_then(|()| match &cli.command {
        Command::GenData(_) => gen_data(&cfg, out),
        Command::Train(_) => train(&cfg, out),
        Command::Eval(_) => eval(&cfg, out),
        Command::Bench(_) => bench(&cfg, out),
        Command::AnalyzeAttn(_) => analyze_attn(&cfg, out),
        Command::Visualize(_) => visualize(&cfg, out),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("spdn {name}: {e}");
            if matches!(e, SpdnError::Usage(_)) {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(SpdnError::io(out))?;
    write(&out.join(CONFIG_FILE), &cfg.render())
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(SpdnError::io(path))
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let renderer = Renderer::new(cfg.vocabulary()?, cfg.render_config())?;
    let rows = make_corpus(&renderer, &cfg.corpus_spec(), cfg.t_max, out)?;
    println!("wrote {} samples to {}", rows.len(), out.display());
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    Dataset::load(Path::new(&cfg.data))
}

fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg)?;
    let mut model = Model::new(cfg.model_config(&data.vocab)?, data.vocab.clone(), cfg.seed)?;
    let report = training::train(&mut model, &data, &cfg.train_config()?, Some(out))?;
    println!("best epoch {} with validation accuracy {:.4}", report.best_epoch, report.best_val_acc);
    Ok(())
}

fn eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = Model::load(Path::new(&cfg.checkpoint))?;
    let data = load_data(cfg)?;
    training::check_compatible(&model, &data)?;
    let examples = data.split(cfg.split);
    let m = evaluate(&model, &examples)?;
    let by_length: serde_json::Map<String, serde_json::Value> =
        m.by_length.iter().map(|(len, (c, n))| (len.to_string(), json!({ "correct": c, "n": n }))).collect();
    let report = json!({
        "variant": model.cfg.variant.name(),
        "split": cfg.split.name(),
        "n": m.n,
        "correct": m.correct,
        "seq_acc": m.seq_acc,
        "mean_steps": m.mean_steps,
        "by_length": by_length,
    });
    write(&out.join("eval.json"), &format!("{}\n", serde_json::to_string_pretty(&report).expect("json")))?;
    let mut tsv = String::from("id\tlabel\tprediction\n");
    for ((id, pred), ex) in m.predictions.iter().zip(&examples) {
        tsv.push_str(&format!("{id}\t{}\t{pred}\n", ex.text));
    }
    write(&out.join("predictions.tsv"), &tsv)?;
    println!("{} accuracy {:.4} over {} samples", cfg.split.name(), m.seq_acc, m.n);
    Ok(())
}

/// Dataset images when `data` holds a corpus, otherwise freshly rendered ones kept in memory.
fn bench_images(cfg: &RunConfig) -> Result<Vec<Tensor>> {
    let n = cfg.bench_images.max(1);
    if Path::new(&cfg.data).join("manifest.tsv").exists() {
        let data = load_data(cfg)?;
        let images: Vec<Tensor> = data.examples.iter().take(n).map(|e| e.image.clone()).collect();
        if !images.is_empty() {
            return Ok(images);
        }
    }
    let renderer = Renderer::new(cfg.vocabulary()?, cfg.render_config())?;
    let symbols = renderer.vocab().symbols().to_vec();
    (0..n)
        .map(|i| {
            let text: String = (0..cfg.min_len.max(1)).map(|j| symbols[(i + j) % symbols.len()]).collect();
            Ok(renderer.render(&text, Distortion::None, cfg.seed.wrapping_add(i as u64))?.image.to_tensor())
        })
        .collect()
}

fn bench(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.bench_variants.is_empty() || cfg.bench_steps.is_empty() {
        return Err(SpdnError::Usage("bench needs at least one variant and one step count".into()));
    }
    let vocab = cfg.vocabulary()?;
    let images = bench_images(cfg)?;
    let mut report = BenchReport {
        analytic: Default::default(),
        measured: Default::default(),
        encoder_flops: 0,
        end_to_end: Default::default(),
        dims: Dims::from_config(&cfg.model_config(&vocab)?),
        flop_convention: bench::FLOP_CONVENTION,
    };
    for &variant in &cfg.bench_variants {
        let mut mc = cfg.model_config(&vocab)?;
        mc.variant = variant;
        let model = Model::new(mc, vocab.clone(), cfg.seed)?;
        let dims = Dims::from_config(&model.cfg);
        report.dims = dims;
        report.encoder_flops = model.encoder.flops(model.cfg.height, model.cfg.width);
        let analytic = bench::flops_model(variant, &dims, &cfg.bench_steps);
        let e2e = analytic.per_seq.iter().map(|(&t, &f)| (t, f + report.encoder_flops)).collect();
        let feats = bench::encode_all(&model, &images)?;
        let measured = cfg
            .bench_steps
            .iter()
            .map(|&t| bench::measure(&model, &feats, t.min(model.cfg.decoder.t_max), cfg.bench_warmup, cfg.bench_reps))
            .collect::<Result<Vec<_>>>()?;
        for m in &measured {
            println!("{:<9} T={:<3} median {:.4} ms", variant.name(), m.steps, m.median_ms);
        }
        report.analytic.insert(variant.name().to_string(), analytic);
        report.end_to_end.insert(variant.name().to_string(), e2e);
        report.measured.insert(variant.name().to_string(), measured);
    }
    write(&out.join("bench.json"), &format!("{}\n", report.to_json()))
}

/// Peakedness of every greedy attention step over the configured split.
pub fn peakedness_report(model: &Model, images: &[&Tensor]) -> Result<PeakednessReport> {
    if model.cfg.variant != Variant::Attention {
        return Err(SpdnError::Usage("analyze-attn needs an attention checkpoint".into()));
    }
    let mut steps: Vec<StepPeakedness> = Vec::new();
    for image in images {
        let r = model.recognize(image)?;
        steps.extend(r.attention.iter().enumerate().map(|(t, w)| peakedness(t, w)));
    }
    PeakednessReport::from_steps(steps)
}

fn analyze_attn(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = Model::load(Path::new(&cfg.checkpoint))?;
    let data = load_data(cfg)?;
    training::check_compatible(&model, &data)?;
    let images: Vec<&Tensor> = data.split(cfg.split).iter().map(|e| &e.image).collect();
    let report = peakedness_report(&model, &images)?;
    write(&out.join("peakedness.json"), &format!("{}\n", report.to_json()))?;
    let a = report.aggregate;
    println!(
        "{} steps: median max weight {:.4}, mean entropy {:.4}, median support {}",
        a.steps, a.median_max_w, a.mean_entropy, a.median_support
    );
    Ok(())
}

fn visualize(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = Model::load(Path::new(&cfg.checkpoint))?;
    if model.cfg.variant == Variant::Attention {
        return Err(SpdnError::Usage("visualize needs a single-point checkpoint".into()));
    }
    let data = load_data(cfg)?;
    training::check_compatible(&model, &data)?;
    for &id in &cfg.ids {
        let ex = data
            .examples
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| SpdnError::Usage(format!("no sample with id {id}")))?;
        let stem = format!("{id:06}");
        let input = GrayImage::from_tensor(&ex.image)?;
        input.write_pgm(&out.join(format!("{stem}_input.pgm")))?;
        let canvas = match &model.rectifier {
            Some(_) => {
                let mut s = spdn_tensor::Session::inference(&model.store);
                let img = s.constant(ex.image.clone());
                let r = model.rectified(&mut s, img)?;
                let rect = GrayImage::from_tensor(s.value(r))?;
                rect.write_pgm(&out.join(format!("{stem}_rectified.pgm")))?;
                rect
            }
            None => input,
        };
        let rec = model.recognize(&ex.image)?;
        let traj = rec.trajectory.expect("single-point decoders emit trajectories");
        export_trajectory(&traj, &canvas, out, &stem)?;
        println!("{stem}: label {:?}, predicted {:?}", ex.text, rec.text);
    }
    Ok(())
}
