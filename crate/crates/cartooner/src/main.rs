use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use cartooner::checkpoint::{load_extractor, ModelCheckpoint};
use cartooner::config::TrainFile;
use cartooner::dataset::load_images;
use cartooner::io::{hex_color, load_image, load_mask, parse_hex_color, save_image};
use cartooner::server::{serve, AppState, Registry};
use cartooner::training;
use cartooner_core::colorcue::{default_segment_count, extract_palette_masked, superpixel_colormap, DEFAULT_PALETTE_SIZE};
use cartooner_core::inference::{cartoonize, ColorEdit, ColorMode, ControlRequest, EditKind, InferenceOptions, Model};
use cartooner_core::metrics::{accumulate, frechet_distance};
use cartooner_core::nn::TextureLevels;
use cartooner_core::train::Stage;
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "cartooner", version, about = "Controllable photo cartoonization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Superpixel color map of a photo.
    Colormap {
        #[arg(long)]
        photo: PathBuf,
        /// Number of superpixels; derived from the image size when omitted.
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// K-means palette of an image, printed as JSON.
    Palette {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PALETTE_SIZE)]
        k: usize,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one training stage.
    Train {
        /// Overrides the `stage` key of the config file.
        #[arg(long)]
        stage: Option<Stage>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Cartoonize a photo.
    Stylize {
        #[arg(long)]
        photo: PathBuf,
        /// A checkpoint file, or a style directory holding `preserve.ckpt` / `target.ckpt`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "alpha-s", default_value_t = 1.0)]
        alpha_s: f64,
        #[arg(long = "alpha-a", default_value_t = 1.0)]
        alpha_a: f64,
        #[arg(long, default_value = "preserve")]
        mode: String,
        /// Color edit as `mask.png#RRGGBB`; repeatable, applied in order.
        #[arg(long = "edit")]
        edits: Vec<String>,
        #[arg(long)]
        allow_extrapolation: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fréchet distance between the feature statistics of two image folders.
    Fid {
        #[arg(long = "set-a")]
        set_a: PathBuf,
        #[arg(long = "set-b")]
        set_b: PathBuf,
        #[arg(long)]
        extractor: PathBuf,
    },
    /// HTTP API.
    Serve {
        #[arg(long, env = "CARTOONER_HOST", default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "CARTOONER_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long = "model-dir", env = "CARTOONER_MODEL_DIR")]
        model_dir: PathBuf,
        #[arg(long = "allow-extrapolation", env = "CARTOONER_ALLOW_EXTRAPOLATION")]
        allow_extrapolation: bool,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Colormap { photo, segments, out } => {
            let img = load_image(&photo)?;
            let n = segments.unwrap_or_else(|| default_segment_count(img.width(), img.height()));
            save_image(&superpixel_colormap(&img, n)?, &out)?;
        }
        Command::Palette { image, k, mask, seed } => {
            let img = load_image(&image)?;
            let mask = mask.as_deref().map(load_mask).transpose()?;
            let p = extract_palette_masked(&img, mask.as_ref(), k, seed)?;
            let colors: Vec<String> = p.colors.iter().map(|c| hex_color(*c)).collect();
            println!("{}", json!({ "colors": colors, "weights": p.weights }));
        }
        Command::Train { stage, config, resume } => {
            let mut file = TrainFile::load(&config)?;
            if let Some(s) = stage {
                file.train.stage = s;
            }
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            let path = training::run(&file, resume.as_deref(), &mut out)?;
            out.flush()?;
            log::info!("wrote {}", path.display());
        }
        Command::Stylize { photo, model, alpha_s, alpha_a, mode, edits, allow_extrapolation, out } => {
            let mode = ColorMode::parse(&mode)?;
            let ckpt = ModelCheckpoint::load(&model_path(&model, mode)?)?;
            let model = Model { config: ckpt.config, params: ckpt.params };
            let mut req = ControlRequest::new(load_image(&photo)?, TextureLevels::new(alpha_s, alpha_a));
            req.mode = mode;
            for e in &edits {
                req.color_edits.push(parse_edit(e)?);
            }
            let result = cartoonize(&model, &req, InferenceOptions { allow_extrapolation })?;
            save_image(&result.rgb, &out)?;
        }
        Command::Fid { set_a, set_b, extractor } => {
            let ex = load_extractor(&extractor)?;
            let a = accumulate(&load_images(&set_a, None)?, &ex)?;
            let b = accumulate(&load_images(&set_b, None)?, &ex)?;
            println!("{}", frechet_distance(&a, &b)?);
        }
        Command::Serve { host, port, model_dir, allow_extrapolation } => {
            let registry = Registry::load(&model_dir).with_context(|| format!("loading models from {}", model_dir.display()))?;
            if registry.styles.is_empty() {
                log::warn!("no styles found under {}", model_dir.display());
            }
            let state = AppState { registry: Arc::new(registry), allow_extrapolation };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(&host, port, state))?;
        }
    }
    Ok(())
}

fn model_path(model: &Path, mode: ColorMode) -> Result<PathBuf> {
    if !model.is_dir() {
        return Ok(model.to_path_buf());
    }
    let p = model.join(format!("{}.ckpt", mode.name()));
    if !p.is_file() {
        bail!("{} has no {} checkpoint", model.display(), mode.name());
    }
    Ok(p)
}

fn parse_edit(spec: &str) -> Result<ColorEdit> {
    let (path, hex) = spec.rsplit_once('#').ok_or_else(|| anyhow!("edit `{}` is not of the form mask.png#RRGGBB", spec))?;
    let rgb = parse_hex_color(&format!("#{}", hex)).ok_or_else(|| anyhow!("bad color `#{}`", hex))?;
    Ok(ColorEdit { mask: load_mask(Path::new(path))?, kind: EditKind::Rgb(rgb) })
}
