//! The five subcommands. Each resolves its inputs, calls into the library,
//! writes artifacts plus a manifest, and prints a short summary.

use crate::manifest::RunManifest;
use crate::svg::{line_chart, Series, PALETTE};
use clap::Args;
use jtanet::checkpoint::{checkpoint_fingerprint, load_checkpoint, save_checkpoint, Checkpoint};
use jtanet::data::{
    ingest_rcc, load_patches, resize_bilinear, save_patches, synth_dataset, PatchRecord,
    RCC_PUBLISHED_COUNTS,
};
use jtanet::error::{Error, Result};
use jtanet::loss::LossWeights;
use jtanet::model::ModelConfig;
use jtanet::optim::AdamConfig;
use jtanet::retrieval::{
    build_index, load_database, precision_sweep, query as db_query, save_database, sweep_deltas,
    FeatureDatabase,
};
use jtanet::train::{extract_features, train as train_model, TrainConfig};
use std::path::{Path, PathBuf};
use std::time::Instant;

const PATCHES_FILE: &str = "patches.bin";
const CHECKPOINT_FILE: &str = "model.ckpt";
const DATABASE_FILE: &str = "features.db";
const TRAIN_LOG_FILE: &str = "training_log.csv";

/// `--data` accepts either the container file itself or the directory an
/// ingest run wrote it into.
fn resolve_patches(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(PATCHES_FILE)
    } else {
        path.to_path_buf()
    }
}

fn require_file(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{} not found: {hint}", path.display())))
    }
}

// --------------------------------------------------------------------- ingest

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["rcc", "synth"]))]
pub struct IngestArgs {
    /// Directory of source images (PNG/BMP) with CSV sidecar annotations
    /// (`x,y,label` per nucleus).
    #[arg(long)]
    rcc: Option<PathBuf>,
    /// Synthetic dataset size as PER_CLASSxCLASSES, e.g. 125x4.
    #[arg(long)]
    synth: Option<String>,
    /// Gaussian pixel-noise sigma for the synthetic generator.
    #[arg(long, default_value_t = 0.35)]
    noise: f64,
    /// Split / generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

fn parse_synth_spec(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::invalid(format!("synth spec must be PER_CLASSxCLASSES, got {s:?}"));
    let (n, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((n.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    let started = Instant::now();
    let split = match (&args.rcc, &args.synth) {
        (Some(root), None) => {
            let (split, report) = ingest_rcc(root, args.seed)?;
            println!(
                "ingested {} patches from {} images",
                report.total, report.n_images
            );
            for (name, count) in split.class_names.iter().zip(&report.class_counts) {
                println!("  {name}: {count}");
            }
            if !report.matches_published {
                eprintln!(
                    "warning: class census {:?} differs from the published counts {:?}",
                    report.class_counts, RCC_PUBLISHED_COUNTS
                );
            }
            split
        }
        (None, Some(spec)) => {
            let (n_per_class, n_classes) = parse_synth_spec(spec)?;
            synth_dataset(n_per_class, n_classes, args.noise, args.seed)?
        }
        _ => unreachable!("clap enforces exactly one source"),
    };

    std::fs::create_dir_all(&args.out)?;
    let patches = args.out.join(PATCHES_FILE);
    save_patches(&split, &patches)?;
    println!(
        "wrote {} ({} train / {} test patches, {} classes)",
        patches.display(),
        split.train.len(),
        split.test.len(),
        split.class_names.len()
    );

    let mut m = RunManifest::new(
        "ingest",
        serde_json::json!({
            "rcc": args.rcc.as_ref().map(|p| p.display().to_string()),
            "synth": args.synth,
            "noise": args.noise,
        }),
    );
    m.seed = Some(args.seed);
    m.add_output(&patches);
    m.wall_seconds = started.elapsed().as_secs_f64();
    m.write(&args.out)
}

// ---------------------------------------------------------------------- train

#[derive(Args)]
pub struct TrainArgs {
    /// Patch container (or the directory an ingest run wrote).
    #[arg(long)]
    data: PathBuf,
    /// Run directory for the checkpoint, log, and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Embedding length.
    #[arg(long, default_value_t = 512)]
    el: usize,
    /// Channel width multiplier; 1.0 is the published full width.
    #[arg(long, default_value_t = 1.0)]
    channel_scale: f64,
    /// Batch size.
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Negative mining strategy: hard, semi_hard, or random_hard.
    #[arg(long, default_value = "semi_hard")]
    strategy: String,
    /// Triplet margin.
    #[arg(long, default_value_t = 0.5)]
    margin: f64,
    /// Loss weighting AE:SM:FR, e.g. 1:5:1.
    #[arg(long, default_value = "1:1:1")]
    loss_weights: String,
    /// Triplet hinge mode: per_triplet or batch.
    #[arg(long, default_value = "per_triplet")]
    hinge: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn to_config(&self) -> Result<TrainConfig> {
        let mut weights = LossWeights::from_ratio(&self.loss_weights)?;
        weights.margin = self.margin;
        let mut c = TrainConfig::new(ModelConfig::with_scale(self.el, self.channel_scale));
        c.batch_size = self.batch;
        c.epochs = self.epochs;
        c.adam = AdamConfig::with_lr(self.lr);
        c.strategy = self.strategy.parse()?;
        c.weights = weights;
        c.hinge = self.hinge.parse()?;
        c.seed = self.seed;
        c.validate()?;
        Ok(c)
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let config = args.to_config()?;
    let patches = resolve_patches(&args.data);
    require_file(&patches, "ingest a dataset first")?;
    let split = load_patches(&patches)?;

    let outcome = train_model(&split, &config)?;

    std::fs::create_dir_all(&args.out)?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &outcome.params, Some(&outcome.adam), config.seed, outcome.iterations)?;
    let log_path = args.out.join(TRAIN_LOG_FILE);
    let mut log_file = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    outcome.log.write_csv(&mut log_file)?;
    drop(log_file);

    let last = outcome.log.rows.last().expect("training produced iterations");
    println!(
        "trained {} iterations; final losses ae {:.6} sm {:.6} fr {:.6} total {:.6}",
        outcome.iterations, last.report.ae, last.report.sm, last.report.fr, last.report.total
    );
    println!("wrote {} and {}", ckpt.display(), log_path.display());

    let mut m = RunManifest::new("train", serde_json::to_value(config)?);
    m.seed = Some(config.seed);
    m.add_input(&patches)?;
    m.checkpoint = Some(ckpt.display().to_string());
    m.add_output(&ckpt);
    m.add_output(&log_path);
    m.wall_seconds = outcome.log.wall_seconds;
    m.write(&args.out)
}

// ----------------------------------------------------------------------- eval

#[derive(Args)]
pub struct EvalArgs {
    /// Patch container (or the directory an ingest run wrote).
    #[arg(long)]
    data: PathBuf,
    /// Run directory holding model.ckpt (from `jtanet train`).
    #[arg(long)]
    run: PathBuf,
    /// Single retrieval depth to evaluate (default 5).
    #[arg(long, conflicts_with = "delta_sweep")]
    delta: Option<usize>,
    /// Evaluate the full depth grid 5, 10, ..., 100 instead.
    #[arg(long)]
    delta_sweep: bool,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let started = Instant::now();
    let patches = resolve_patches(&args.data);
    require_file(&patches, "ingest a dataset first")?;
    let ckpt_path = args.run.join(CHECKPOINT_FILE);
    require_file(&ckpt_path, "train a model first")?;

    let split = load_patches(&patches)?;
    let Checkpoint { params, .. } = load_checkpoint(&ckpt_path)?;
    if split.test.is_empty() {
        return Err(Error::invalid("dataset has no test patches to query with".to_string()));
    }

    let db = build_index(&params, &split.train, &split.class_names)?;
    let db_path = args.run.join(DATABASE_FILE);
    save_database(&db_path, &db)?;

    let deltas = if args.delta_sweep {
        let full = sweep_deltas();
        let usable: Vec<usize> = full.iter().copied().filter(|&d| d <= db.len()).collect();
        if usable.len() < full.len() {
            eprintln!(
                "warning: database holds {} patches; sweeping depths up to that only",
                db.len()
            );
        }
        if usable.is_empty() {
            vec![db.len()]
        } else {
            usable
        }
    } else {
        vec![args.delta.unwrap_or(5)]
    };
    let reports = precision_sweep(&db, &params, &split.test, &deltas)?;
    for r in &reports {
        println!("precision@{}: {:.2}%", r.delta, r.mean);
    }

    let csv_path = args.run.join("precision.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    jtanet::retrieval::write_precision_csv(&mut csv, &split.class_names, &reports)?;
    drop(csv);

    let mut series = vec![Series {
        name: "mean".to_string(),
        color: PALETTE[0],
        points: reports.iter().map(|r| (r.delta as f64, r.mean)).collect(),
    }];
    for (c, name) in split.class_names.iter().enumerate() {
        let points: Vec<(f64, f64)> = reports
            .iter()
            .filter_map(|r| r.per_class[c].map(|v| (r.delta as f64, v)))
            .collect();
        if !points.is_empty() {
            series.push(Series {
                name: name.clone(),
                color: PALETTE[1 + c % (PALETTE.len() - 1)],
                points,
            });
        }
    }
    let svg_path = args.run.join("precision.svg");
    std::fs::write(
        &svg_path,
        line_chart("retrieval precision", "retrieved images (delta)", "precision (%)", &series),
    )?;
    println!("wrote {}, {} and {}", csv_path.display(), svg_path.display(), db_path.display());

    let mut m = RunManifest::new("eval", serde_json::json!({ "deltas": deltas }));
    m.add_input(&patches)?;
    m.add_input(&ckpt_path)?;
    m.checkpoint = Some(ckpt_path.display().to_string());
    m.add_output(&db_path);
    m.add_output(&csv_path);
    m.add_output(&svg_path);
    m.wall_seconds = started.elapsed().as_secs_f64();
    m.write(&args.run)
}

// ---------------------------------------------------------------------- query

#[derive(Args)]
pub struct QueryArgs {
    /// Run directory holding model.ckpt and features.db (from `jtanet eval`).
    #[arg(long)]
    run: PathBuf,
    /// Query image (PNG or BMP); resized to 64x64 if needed.
    #[arg(long)]
    image: PathBuf,
    /// Number of patches to retrieve.
    #[arg(long, default_value_t = 5)]
    delta: usize,
}

/// Loads an image into the patch format: channel-major, [-1, 1], 64x64.
fn load_query_patch(path: &Path, side: usize) -> Result<PatchRecord> {
    let rgb = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => {
                Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display())))
            }
            other => Error::format(path, format!("cannot decode image: {other}")),
        })?
        .to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut pixels = Vec::with_capacity(3 * side * side);
    for c in 0..3 {
        let plane: Vec<f64> = rgb
            .pixels()
            .map(|p| p.0[c] as f64 / 255.0 * 2.0 - 1.0)
            .collect();
        let resized = resize_bilinear(&plane, h, w, side, side)?;
        pixels.extend(resized.iter().map(|&v| v as f32));
    }
    Ok(PatchRecord { pixels, label: 0, source_image: 0, center: (0, 0) })
}

pub fn query(args: QueryArgs) -> Result<()> {
    let started = Instant::now();
    let ckpt_path = args.run.join(CHECKPOINT_FILE);
    let db_path = args.run.join(DATABASE_FILE);
    require_file(&ckpt_path, "train a model first")?;
    require_file(&db_path, "run `jtanet eval` first to build the feature database")?;

    let Checkpoint { params, .. } = load_checkpoint(&ckpt_path)?;
    let db: FeatureDatabase = load_database(&db_path)?;
    let fp = checkpoint_fingerprint(&params);
    if db.fingerprint != fp {
        return Err(Error::format(
            &db_path,
            "feature database was built by a different checkpoint; rerun `jtanet eval`"
                .to_string(),
        ));
    }

    let record = load_query_patch(&args.image, params.config().input_side)?;
    let features = extract_features(&params, std::slice::from_ref(&record))?;
    let result = db_query(&db, features.feature_row(0), args.delta)?;

    println!("rank  id      class         distance");
    for (rank, &(i, dist)) in result.ranked.iter().enumerate() {
        println!(
            "{:>4}  {:<6}  {:<12}  {:.6}",
            rank + 1,
            db.ids[i],
            db.class_names[db.labels[i] as usize],
            dist
        );
    }

    let mut m = RunManifest::new(
        "query",
        serde_json::json!({
            "image": args.image.display().to_string(),
            "delta": args.delta,
        }),
    );
    m.add_input(&args.image)?;
    m.add_input(&ckpt_path)?;
    m.add_input(&db_path)?;
    m.checkpoint = Some(ckpt_path.display().to_string());
    m.wall_seconds = started.elapsed().as_secs_f64();
    m.write(&args.run)
}

// ----------------------------------------------------------------------- plot

#[derive(Args)]
pub struct PlotArgs {
    /// Run directory holding training_log.csv (from `jtanet train`).
    #[arg(long)]
    run: PathBuf,
}

fn parse_train_log(path: &Path) -> Result<Vec<(u64, [f64; 4])>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("iteration,ae,sm,fr,total,n_triplets") => {}
        other => {
            return Err(Error::format(
                path,
                format!("unexpected training-log header {other:?}"),
            ))
        }
    }
    let mut rows = Vec::new();
    for (no, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::format(path, format!("line {}: expected 6 fields", no + 2)));
        }
        let bad = |what: &str| Error::format(path, format!("line {}: bad {what}", no + 2));
        let iter: u64 = fields[0].parse().map_err(|_| bad("iteration"))?;
        let mut vals = [0.0; 4];
        for (v, f) in vals.iter_mut().zip(&fields[1..5]) {
            *v = f.parse().map_err(|_| bad("loss value"))?;
        }
        rows.push((iter, vals));
    }
    Ok(rows)
}

pub fn plot(args: PlotArgs) -> Result<()> {
    let started = Instant::now();
    let log_path = args.run.join(TRAIN_LOG_FILE);
    require_file(&log_path, "train a model first")?;
    let rows = parse_train_log(&log_path)?;
    if rows.is_empty() {
        return Err(Error::invalid(format!(
            "training log {} has no iterations to plot",
            log_path.display()
        )));
    }

    let names = ["ae", "sm", "fr", "total"];
    let series: Vec<Series> = names
        .iter()
        .enumerate()
        .map(|(k, name)| Series {
            name: name.to_string(),
            color: PALETTE[k],
            points: rows.iter().map(|&(it, vals)| (it as f64, vals[k])).collect(),
        })
        .collect();
    let svg_path = args.run.join("loss_curves.svg");
    std::fs::write(
        &svg_path,
        line_chart("training losses", "iteration", "loss", &series),
    )?;
    println!("wrote {}", svg_path.display());

    let mut m = RunManifest::new("plot", serde_json::json!({}));
    m.add_input(&log_path)?;
    m.add_output(&svg_path);
    m.wall_seconds = started.elapsed().as_secs_f64();
    m.write(&args.run)
}
