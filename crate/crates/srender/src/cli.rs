//! Command-line surface. Every command writes a `RunManifest` capturing its
//! config and input hashes before doing real work, so any output directory
//! explains itself. Exit codes: 0 success, 1 runtime failure, 2 usage.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::load_config;
use crate::evaluation::{
    fid, identity_match_acc, infer, run_ablation, sample_patches, scoot, FeatureEmbedder,
    MetricsReport, PatchSampleConfig,
};
use crate::imaging::{read_png, write_png, DomainTag, Image};
use crate::linedraw::{
    build_pseudo_pairs, load_pairs, read_pair_manifest, write_pair_manifest, LineDrawError,
    LineDrawingOperator, PairRecord,
};
use crate::manifest::{hash_file, RunManifest, MANIFEST_NAME};
use crate::networks::{latest_checkpoint, load_bundle, load_psi, save_psi, ModelBundle,
    StrokeClassifier};
use crate::training::{
    train, train_stroke_classifier, Profile, StrokePatchDataset, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "srender",
    version,
    about = "Unpaired face sketch synthesis through a line-drawing bridge"
)]
struct Cli {
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's profile (paper_512 or toy_64).
    #[arg(long, global = true)]
    profile: Option<Profile>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render line drawings for a directory of sketches and write the pair
    /// manifest.
    BuildPairs {
        /// Directory of sketch PNGs; file stems become source ids.
        #[arg(long)]
        sketch_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Line-drawing operator; only "dog" is built in.
        #[arg(long, default_value = "dog")]
        operator: String,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.6)]
        k: f64,
        #[arg(long, default_value_t = 0.005)]
        threshold: f64,
    },
    /// Pretrain the stroke classifier on labeled patches.
    TrainStrokeNet {
        /// Directory with one subdirectory of patch PNGs per stroke label
        /// (skin, hair, boundary, eye_brow, eye, clips, ear).
        #[arg(long)]
        patches: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the generator on a pair manifest.
    Train {
        /// Pair manifest written by build-pairs.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the newest checkpoint in --out.
        #[arg(long)]
        resume: bool,
        /// Pretrained stroke classifier checkpoint; without it the stroke
        /// loss reads the bundle's fixed random-weight classifier.
        #[arg(long)]
        psi: Option<PathBuf>,
    },
    /// Run a photo through the line-drawing operator and the generator.
    Infer {
        #[arg(long)]
        photo: PathBuf,
        /// Checkpoint directory holding epoch_*.ckpt files.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_line: PathBuf,
        #[arg(long)]
        out_sketch: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.6)]
        k: f64,
        #[arg(long, default_value_t = 0.005)]
        threshold: f64,
    },
    /// Score generated sketches against real ones.
    Eval {
        /// Directory of real sketch PNGs.
        #[arg(long)]
        real: PathBuf,
        /// Directory of generated sketch PNGs; stems pair with --real for
        /// scoot and identification.
        #[arg(long)]
        fake: PathBuf,
        /// Comma-separated subset of fid, scoot, acc.
        #[arg(long, default_value = "fid,scoot,acc")]
        metrics: String,
        #[arg(long, default_value_t = 10_000)]
        patches: usize,
        #[arg(long, default_value_t = 256)]
        patch_size: usize,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the full objective and the no-stroke variant, score both.
    Ablate {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        psi: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        patches: usize,
        #[arg(long, default_value_t = 32)]
        patch_size: usize,
    },
}

/// Parses and runs one invocation. The first element of `argv` is the
/// program name, as in `std::env::args`.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive as "errors" but exit 0.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let overrides = (cli.seed, cli.profile);
    match cli.command {
        Command::BuildPairs {
            sketch_dir,
            out_dir,
            operator,
            sigma,
            k,
            threshold,
        } => cmd_build_pairs(&sketch_dir, &out_dir, &operator, sigma, k, threshold, overrides),
        Command::TrainStrokeNet { patches, out, config } => {
            cmd_train_stroke_net(&patches, &out, config.as_deref(), overrides)
        }
        Command::Train {
            pairs,
            config,
            out,
            resume,
            psi,
        } => cmd_train(&pairs, config.as_deref(), &out, resume, psi.as_deref(), overrides),
        Command::Infer {
            photo,
            checkpoint,
            out_line,
            out_sketch,
            sigma,
            k,
            threshold,
        } => cmd_infer(
            &photo, &checkpoint, &out_line, &out_sketch, sigma, k, threshold, overrides,
        ),
        Command::Eval {
            real,
            fake,
            metrics,
            patches,
            patch_size,
            out,
        } => cmd_eval(&real, &fake, &metrics, patches, patch_size, &out, overrides),
        Command::Ablate {
            pairs,
            config,
            out,
            psi,
            patches,
            patch_size,
        } => cmd_ablate(
            &pairs,
            config.as_deref(),
            &out,
            psi.as_deref(),
            patches,
            patch_size,
            overrides,
        ),
    }
}

/// Config precedence: file (or defaults), then the global flags.
fn effective_config(
    config_path: Option<&Path>,
    overrides: (Option<u64>, Option<Profile>),
) -> anyhow::Result<TrainConfig> {
    let mut cfg = match config_path {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = overrides.0 {
        cfg.seed = seed;
    }
    if let Some(profile) = overrides.1 {
        cfg.profile = profile;
    }
    Ok(cfg)
}

/// PNG files of a directory, sorted by file stem for a stable order.
fn png_files(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in
        std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?
    {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.push((stem, path));
        }
    }
    out.sort();
    if out.is_empty() {
        bail!("no .png files in {}", dir.display());
    }
    Ok(out)
}

fn hashes_for(files: &[(String, PathBuf)]) -> anyhow::Result<BTreeMap<String, String>> {
    let mut hashes = BTreeMap::new();
    for (stem, path) in files {
        hashes.insert(stem.clone(), hash_file(path)?);
    }
    Ok(hashes)
}

fn dog_operator(name: &str, sigma: f64, k: f64, threshold: f64) -> anyhow::Result<LineDrawingOperator> {
    if name != "dog" {
        return Err(LineDrawError::UnknownOperator(name.to_string()).into());
    }
    Ok(LineDrawingOperator::dog(sigma, k, threshold)?)
}

fn cmd_build_pairs(
    sketch_dir: &Path,
    out_dir: &Path,
    operator: &str,
    sigma: f64,
    k: f64,
    threshold: f64,
    overrides: (Option<u64>, Option<Profile>),
) -> anyhow::Result<()> {
    let op = dog_operator(operator, sigma, k, threshold)?;
    let files = png_files(sketch_dir)?;
    let lines_dir = out_dir.join("lines");
    std::fs::create_dir_all(&lines_dir)?;

    let cfg = effective_config(None, overrides)?;
    RunManifest::new("build-pairs", cfg, hashes_for(&files)?, &op.fingerprint())
        .write(&out_dir.join(MANIFEST_NAME))?;

    let mut sketches = Vec::with_capacity(files.len());
    for (stem, path) in &files {
        sketches.push((stem.clone(), read_png(path, DomainTag::Sketch)?));
    }
    let pairs = build_pseudo_pairs(&op, &sketches)?;

    let mut records = Vec::with_capacity(pairs.len());
    for (pair, (_, sketch_path)) in pairs.iter().zip(files.iter()) {
        let line_path = lines_dir.join(format!("{}.png", pair.source_id));
        write_png(&pair.z, &line_path)?;
        records.push(PairRecord {
            source_id: pair.source_id.clone(),
            sketch_path: sketch_path.clone(),
            line_path,
            operator_fingerprint: pair.operator_fingerprint.clone(),
        });
    }
    let manifest_path = out_dir.join("pairs.jsonl");
    write_pair_manifest(&records, &manifest_path)?;
    println!(
        "built {} pairs; manifest at {}",
        records.len(),
        manifest_path.display()
    );
    Ok(())
}

fn cmd_train_stroke_net(
    patches_dir: &Path,
    out: &Path,
    config: Option<&Path>,
    overrides: (Option<u64>, Option<Profile>),
) -> anyhow::Result<()> {
    let cfg = effective_config(config, overrides)?;
    let mut labeled = Vec::new();
    let mut files = Vec::new();
    for label in crate::networks::StrokeLabel::ALL {
        let class_dir = patches_dir.join(label.name());
        if !class_dir.is_dir() {
            continue;
        }
        for (stem, path) in png_files(&class_dir)? {
            files.push((format!("{}/{stem}", label.name()), path.clone()));
            labeled.push((read_png(&path, DomainTag::Sketch)?, label));
        }
    }
    if labeled.is_empty() {
        bail!(
            "no labeled patches under {}; expected per-label subdirectories",
            patches_dir.display()
        );
    }

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let manifest_path = manifest_path_beside(out);
    RunManifest::new("train-stroke-net", cfg.clone(), hashes_for(&files)?, "none")
        .write(&manifest_path)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ds = StrokePatchDataset::stratified(labeled, &mut rng);
    let (psi, acc) = train_stroke_classifier(&ds, &cfg)?;
    save_psi(out, &psi)?;
    println!(
        "stroke classifier saved to {}; held-out accuracy {acc:.3}",
        out.display()
    );
    Ok(())
}

fn cmd_train(
    pairs_path: &Path,
    config: Option<&Path>,
    out: &Path,
    resume: bool,
    psi_path: Option<&Path>,
    overrides: (Option<u64>, Option<Profile>),
) -> anyhow::Result<()> {
    let cfg = effective_config(config, overrides)?;
    let records = read_pair_manifest(pairs_path)?;
    let fp = match records.first() {
        Some(r) => r.operator_fingerprint.clone(),
        None => bail!("pair manifest {} is empty", pairs_path.display()),
    };

    let mut hashes = BTreeMap::new();
    hashes.insert("pairs_manifest".to_string(), hash_file(pairs_path)?);
    for r in &records {
        hashes.insert(format!("sketch/{}", r.source_id), hash_file(&r.sketch_path)?);
        hashes.insert(format!("line/{}", r.source_id), hash_file(&r.line_path)?);
    }
    if let Some(p) = psi_path {
        hashes.insert("psi".to_string(), hash_file(p)?);
    }
    std::fs::create_dir_all(out)?;
    RunManifest::new("train", cfg.clone(), hashes, &fp).write(&out.join(MANIFEST_NAME))?;

    let psi = match psi_path {
        Some(p) => Some(load_psi_checkpoint(p, &cfg)?),
        None => None,
    };
    let pairs = load_pairs(&records, &fp)?;
    let bundle = train(&pairs, &cfg, out, psi, resume)?;
    println!(
        "trained through epoch {}; checkpoints in {}",
        bundle.epoch,
        out.display()
    );
    Ok(())
}

fn load_psi_checkpoint(path: &Path, cfg: &TrainConfig) -> anyhow::Result<StrokeClassifier> {
    let mut psi = StrokeClassifier::new(
        cfg.profile.stroke_spec(),
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    load_psi(path, &mut psi).with_context(|| format!("loading {}", path.display()))?;
    Ok(psi)
}

fn cmd_infer(
    photo: &Path,
    checkpoint_dir: &Path,
    out_line: &Path,
    out_sketch: &Path,
    sigma: f64,
    k: f64,
    threshold: f64,
    overrides: (Option<u64>, Option<Profile>),
) -> anyhow::Result<()> {
    let cfg = effective_config(None, overrides)?;
    let op = dog_operator("dog", sigma, k, threshold)?;
    let (ckpt_path, _) = latest_checkpoint(checkpoint_dir)
        .with_context(|| format!("no checkpoints under {}", checkpoint_dir.display()))?;

    let mut hashes = BTreeMap::new();
    hashes.insert("photo".to_string(), hash_file(photo)?);
    hashes.insert("checkpoint".to_string(), hash_file(&ckpt_path)?);
    RunManifest::new("infer", cfg.clone(), hashes, &op.fingerprint())
        .write(&manifest_path_beside(out_sketch))?;

    let mut bundle = ModelBundle::new(cfg.profile.bundle_spec(), cfg.beta1, cfg.beta2, cfg.seed);
    load_bundle(&ckpt_path, &mut bundle)
        .with_context(|| format!("loading {}", ckpt_path.display()))?;

    let x = read_png(photo, DomainTag::Photo)?;
    let (line, sketch) = infer(&bundle, &op, &x)?;
    write_png(&line, out_line)?;
    write_png(&sketch, out_sketch)?;
    println!(
        "line drawing at {}, sketch at {}",
        out_line.display(),
        out_sketch.display()
    );
    Ok(())
}

fn cmd_eval(
    real_dir: &Path,
    fake_dir: &Path,
    metrics: &str,
    n_patches: usize,
    patch_size: usize,
    out: &Path,
    overrides: (Option<u64>, Option<Profile>),
) -> anyhow::Result<()> {
    let mut want_fid = false;
    let mut want_scoot = false;
    let mut want_acc = false;
    for m in metrics.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        match m {
            "fid" => want_fid = true,
            "scoot" => want_scoot = true,
            "acc" => want_acc = true,
            other => bail!("unknown metric {other:?}; expected fid, scoot, acc"),
        }
    }
    // The report schema always carries a FID.
    let _ = want_fid;

    let cfg = effective_config(None, overrides)?;
    let real_files = png_files(real_dir)?;
    let fake_files = png_files(fake_dir)?;

    let mut hashes = BTreeMap::new();
    for (stem, h) in hashes_for(&real_files)? {
        hashes.insert(format!("real/{stem}"), h);
    }
    for (stem, h) in hashes_for(&fake_files)? {
        hashes.insert(format!("fake/{stem}"), h);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    RunManifest::new("eval", cfg.clone(), hashes, "none").write(&manifest_path_beside(out))?;

    let load_all = |files: &[(String, PathBuf)]| -> anyhow::Result<Vec<(String, Image)>> {
        files
            .iter()
            .map(|(stem, path)| Ok((stem.clone(), read_png(path, DomainTag::Sketch)?.to_luma())))
            .collect()
    };
    let reals = load_all(&real_files)?;
    let fakes = load_all(&fake_files)?;

    let sample = PatchSampleConfig {
        n_patches,
        patch_size,
        seed: cfg.seed,
    };
    let embedder = FeatureEmbedder::bundled_fixed(1);
    let real_imgs: Vec<Image> = reals.iter().map(|(_, i)| i.clone()).collect();
    let fake_imgs: Vec<Image> = fakes.iter().map(|(_, i)| i.clone()).collect();
    let fid_val = fid(
        &embedder.embed_all(&sample_patches(&real_imgs, &sample)?)?,
        &embedder.embed_all(&sample_patches(&fake_imgs, &sample)?)?,
    )?;

    let scoot_val = if want_scoot {
        let fake_by_stem: BTreeMap<&str, &Image> =
            fakes.iter().map(|(s, i)| (s.as_str(), i)).collect();
        let mut total = 0.0;
        for (stem, real) in &reals {
            let fake = fake_by_stem.get(stem.as_str()).with_context(|| {
                format!("scoot needs matching stems; {stem} missing under {}", fake_dir.display())
            })?;
            total += scoot(real, fake)?;
        }
        Some(total / reals.len() as f64)
    } else {
        None
    };

    let acc_val = if want_acc {
        let real_labeled: Vec<(Image, String)> =
            reals.iter().map(|(s, i)| (i.clone(), s.clone())).collect();
        let fake_labeled: Vec<(Image, String)> =
            fakes.iter().map(|(s, i)| (i.clone(), s.clone())).collect();
        identity_match_acc(&real_labeled, &fake_labeled)?
    } else {
        None
    };

    let report = MetricsReport {
        fid: fid_val,
        scoot: scoot_val,
        acc: acc_val,
        sample_config: sample,
        embedder_fingerprint: embedder.fingerprint().to_string(),
    };
    std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    println!("report at {}", out.display());
    Ok(())
}

fn cmd_ablate(
    pairs_path: &Path,
    config: Option<&Path>,
    out: &Path,
    psi_path: Option<&Path>,
    n_patches: usize,
    patch_size: usize,
    overrides: (Option<u64>, Option<Profile>),
) -> anyhow::Result<()> {
    let cfg = effective_config(config, overrides)?;
    let records = read_pair_manifest(pairs_path)?;
    let fp = match records.first() {
        Some(r) => r.operator_fingerprint.clone(),
        None => bail!("pair manifest {} is empty", pairs_path.display()),
    };
    let mut hashes = BTreeMap::new();
    hashes.insert("pairs_manifest".to_string(), hash_file(pairs_path)?);
    std::fs::create_dir_all(out)?;
    RunManifest::new("ablate", cfg.clone(), hashes, &fp).write(&out.join(MANIFEST_NAME))?;

    let psi = match psi_path {
        Some(p) => Some(load_psi_checkpoint(p, &cfg)?),
        None => None,
    };
    let pairs = load_pairs(&records, &fp)?;
    let sample = PatchSampleConfig {
        n_patches,
        patch_size,
        seed: cfg.seed,
    };
    let rows = run_ablation(&pairs, &cfg, &sample, out, psi.as_ref())?;
    let table_path = out.join("ablation.json");
    std::fs::write(&table_path, serde_json::to_string_pretty(&rows)? + "\n")?;
    for row in &rows {
        println!(
            "{:<10} fid {:.4}  scoot {}  acc {}",
            row.variant,
            row.report.fid,
            row.report
                .scoot
                .map_or("-".to_string(), |v| format!("{v:.4}")),
            row.report
                .acc
                .map_or("-".to_string(), |v| format!("{v:.4}")),
        );
    }
    println!("table at {}", table_path.display());
    Ok(())
}

/// `<file>.manifest.json` next to an output file.
fn manifest_path_beside(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    out.with_file_name(format!("{name}.manifest.json"))
}
