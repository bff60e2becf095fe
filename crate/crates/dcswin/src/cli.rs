//! Operator surface: `train`, `eval`, `predict`, `bench-attention`,
//! `verify`, and `defaults` subcommands over flat text config files.
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 training divergence.
//! The `verify` command instead exits with the number of failing check
//! groups (capped at 255). All commands are deterministic for a fixed seed
//! when `DCSWIN_THREADS` is 1 (the default).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::synth::{synth_split, PALETTE};
use crate::data::tile::{tile_positions, TileSpec, Stitcher};
use crate::data::{load_dataset, rgb_to_image, NormStats, Sample};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::DcSwin;
use crate::nn::Phase;
use crate::tensor::ops::narrow;
use crate::tensor::{no_grad, Tensor};
use crate::train::{log_to_tsv, train};
use crate::{bench, verify};

#[derive(Parser)]
#[command(
    name = "dcswin",
    version,
    about = "Windowed-attention segmentation with a densely connected aggregation decoder"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write `model.ckpt` + `train.tsv` to the output dir
    Train {
        /// Run configuration file (see `defaults` for every key)
        #[arg(long)]
        config: PathBuf,
        /// Override train.seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Override output_dir from the config
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the configured dataset (tiled + stitched)
    Eval {
        /// Run configuration file
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to load
        #[arg(long)]
        ckpt: PathBuf,
        /// Override output_dir from the config
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment one PPM image into a color map and a raw label map
    Predict {
        /// Checkpoint to load (its embedded config defines the model)
        #[arg(long)]
        ckpt: PathBuf,
        /// Input image, binary PPM (P6)
        #[arg(long)]
        image: PathBuf,
        /// Output base path: classes colored into `<out>.ppm`, raw ids into
        /// `<out>.pgm`
        #[arg(long)]
        out: PathBuf,
    },
    /// Time factorized vs quadratic attention and fit log-log slopes
    BenchAttention {
        /// Comma-separated token counts
        #[arg(long, value_delimiter = ',', default_value = "1024,4096,16384,65536")]
        sizes: Vec<usize>,
        /// Also write the table as TSV to this path
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the quadratic reference even above 4096 tokens
        #[arg(long)]
        force: bool,
        /// Seed for the benchmark inputs
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the self-check suite; exit code = number of failing groups
    Verify {
        /// Deliberately offset one analytic gradient to prove the suite
        /// notices wrong gradients
        #[arg(long)]
        inject_fault: bool,
    },
    /// Print every configuration key with its default value
    Defaults,
}

/// Parse arguments from the environment and execute. Returns the process
/// exit code: 0 on success, 2 for configuration errors, 3 when training
/// diverges.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train { config, seed, out } => cmd_train(&config, seed, out),
        Cmd::Eval { config, ckpt, out } => cmd_eval(&config, &ckpt, out),
        Cmd::Predict { ckpt, image, out } => cmd_predict(&ckpt, &image, &out),
        Cmd::BenchAttention { sizes, out, force, seed } => {
            cmd_bench_attention(&sizes, out, force, seed)
        }
        Cmd::Verify { inject_fault } => return cmd_verify(inject_fault),
        Cmd::Defaults => {
            print!("{}", RunConfig::default().to_text());
            Ok(())
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged(_) => 3,
                _ => 2,
            }
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
    RunConfig::parse(&text)
}

/// Materialize the configured dataset: either the manifest under
/// `data.root`, or synthesized scenes.
fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    let d = &cfg.data;
    let samples = match &d.root {
        Some(root) => load_dataset(root)?,
        None => synth_split(d.synth_seed, d.synth_count, d.synth_size, d.synth_classes),
    };
    for s in &samples {
        s.validate(cfg.model.num_classes, d.ignore_label)?;
    }
    Ok(samples)
}

/// Cut oversized samples into training-ready tiles; samples at or below the
/// tile size pass through whole. Mixed extents within one run are fine for
/// evaluation but training batches require equal extents, which tiling
/// guarantees for manifest datasets.
fn tile_for_training(samples: Vec<Sample>, spec: TileSpec) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for s in samples {
        if s.height() <= spec.tile && s.width() <= spec.tile {
            out.push(s);
        } else {
            out.extend(crate::data::tile::tile_sample(&s, spec)?);
        }
    }
    Ok(out)
}

fn cmd_train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    cfg.validate()?;

    let spec = TileSpec::new(cfg.data.tile, cfg.data.stride)?;
    let samples = tile_for_training(load_samples(&cfg)?, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let model: DcSwin<f32> = DcSwin::new(&cfg.model, &mut rng)?;
    let result = train(
        &model,
        &samples,
        &cfg.train,
        cfg.data.augment,
        cfg.data.ignore_label,
    )?;

    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("train.tsv"), log_to_tsv(&result.log))?;
    Checkpoint::from_module(&model, &cfg.to_text(), &result.stats)
        .save(&cfg.output_dir.join("model.ckpt"))?;
    print!("{}", result.final_eval.report()?);
    Ok(())
}

/// Forward one sample through the model tile by tile and stitch the logits
/// back to full resolution.
fn predict_logits(
    model: &DcSwin<f32>,
    stats: &NormStats,
    image: &Tensor<f32>,
    spec: TileSpec,
) -> Result<Tensor<f32>> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let k = model.cfg.num_classes;
    let mut stitcher = Stitcher::new(k, h, w);
    let tile = spec.tile.min(h).min(w);
    let spec = TileSpec::new(tile, spec.stride.min(tile))?;
    no_grad(|| -> Result<()> {
        for (y0, x0) in tile_positions(h, w, spec)? {
            let cropped = narrow(&narrow(image, 1, y0, tile), 2, x0, tile);
            let input = crate::tensor::ops::reshape(
                &stats.normalize(&cropped),
                vec![1, 3, tile, tile],
            );
            let logits = model.forward(&input, Phase::Eval);
            stitcher.add(y0, x0, &logits);
        }
        Ok(())
    })?;
    let stitched = stitcher.logits()?;
    Ok(crate::tensor::ops::reshape(&stitched, vec![1, k, h, w]))
}

fn cmd_eval(config: &Path, ckpt: &Path, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    cfg.validate()?;

    let ck = Checkpoint::load(ckpt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model: DcSwin<f32> = DcSwin::new(&cfg.model, &mut rng)?;
    ck.apply_to(&model)?;

    let samples = load_samples(&cfg)?;
    let spec = TileSpec::new(cfg.data.tile, cfg.data.stride)?;
    let mut cm = ConfusionMatrix::new(cfg.model.num_classes, cfg.data.ignore_label);
    for s in &samples {
        let logits = predict_logits(&model, &ck.stats, &s.image, spec)?;
        let pred = crate::metrics::argmax_classes(&logits);
        cm.accumulate(&s.label, &pred)?;
    }

    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("eval.tsv"), cm.report_tsv()?)?;
    print!("{}", cm.report()?);
    Ok(())
}

/// Fixed class palette for emitted color maps: class k gets PALETTE[k]
/// (8 entries; classes beyond 8 are never configurable).
fn palette_u8(class: u32) -> [u8; 3] {
    let c = PALETTE[class as usize % PALETTE.len()];
    [
        (c[0] * 255.0).round() as u8,
        (c[1] * 255.0).round() as u8,
        (c[2] * 255.0).round() as u8,
    ]
}

fn cmd_predict(ckpt: &Path, image: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let cfg = RunConfig::parse(&ck.config_text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model: DcSwin<f32> = DcSwin::new(&cfg.model, &mut rng)?;
    ck.apply_to(&model)?;

    let (w, h, rgb) = crate::data::pnm::read_ppm(image)?;
    let tensor = rgb_to_image(w, h, &rgb);
    let spec = TileSpec::new(cfg.data.tile, cfg.data.stride)?;
    let logits = predict_logits(&model, &ck.stats, &tensor, spec)?;
    let classes = crate::metrics::argmax_classes(&logits);

    let mut color = Vec::with_capacity(3 * classes.len());
    let mut raw = Vec::with_capacity(classes.len());
    for &c in &classes {
        color.extend_from_slice(&palette_u8(c));
        raw.push(c as u8);
    }
    let ppm = out.with_extension("ppm");
    let pgm = out.with_extension("pgm");
    crate::data::pnm::write_ppm(&ppm, w, h, &color)?;
    crate::data::pnm::write_pgm(&pgm, w, h, &raw)?;
    println!("{} -> {} + {}", image.display(), ppm.display(), pgm.display());
    Ok(())
}

fn cmd_bench_attention(
    sizes: &[usize],
    out: Option<PathBuf>,
    force: bool,
    seed: u64,
) -> Result<()> {
    let report = bench::run(sizes, force, seed)?;
    print!("{}", report.to_tsv());
    if let Some(path) = out {
        fs::write(path, report.to_tsv())?;
    }
    Ok(())
}

fn cmd_verify(inject_fault: bool) -> i32 {
    let results = verify::run(inject_fault);
    print!("{}", verify::render(&results));
    verify::failed_groups(&results).min(255) as i32
}
