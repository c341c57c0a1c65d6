//! The `goi` command line. Every subcommand is a thin wrapper over library
//! calls; [`run`] returns the process exit code.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::binio;
use crate::error::{Error, Result};
use crate::eval::{evaluate, load_testset, save_report};
use crate::kmeans::DEFAULT_KMEANS_ITERATIONS;
use crate::image::{gray_to_pgm, load_mask, rgb_to_ppm, save_feature_map, save_mask};
use crate::osh::{load_hyperplane, save_hyperplane, OshConfig};
use crate::ply::import_ply;
use crate::query::{
    load_goi, manipulate, open_vocab_query, overlay, query_with_hyperplane, save_goi, Action, MaskSource,
    QueryOptions, OVERLAY_COLOR,
};
use crate::raster::render;
use crate::scene::{load_camera, load_scene, save_scene, DEFAULT_FEATURE_DIM};
use crate::synth::{load_embeddings, Benchmark, BenchmarkSpec};
use crate::tfcc::{load_codebook, save_codebook, Decoder, DEFAULT_ENTRIES};
use crate::trainer::{init_codebook, load_dataset, load_model, save_model, train_semantic_field, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "GOI_THREADS";

#[derive(Parser, Debug)]
#[command(name = "goi", version, about = "Open-vocabulary queries on 3D Gaussian scenes")]
struct Cli {
    /// Worker threads for rendering (falls back to GOI_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed; overrides the training config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a 3DGS PLY file into a scene file with zeroed features.
    ImportPly(ImportPlyArgs),
    /// Build the initial codebook by spherical k-means over ground-truth maps.
    InitCodebook(InitCodebookArgs),
    /// Fit Gaussian features, codebook and decoder to a dataset.
    Train(TrainArgs),
    /// Render color, low-dimensional features and opacity from a model.
    Render(RenderArgs),
    /// Segment a text query in one view and select the matching Gaussians.
    Query(QueryArgs),
    /// Edit the Gaussians listed in a selection file.
    Manipulate(ManipulateArgs),
    /// Score queries against ground-truth masks.
    Eval(EvalArgs),
    /// Write a synthetic benchmark directory.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Serialize)]
struct ImportPlyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FEATURE_DIM)]
    feature_dim: usize,
}

#[derive(Args, Debug, Serialize)]
struct InitCodebookArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ENTRIES)]
    entries: usize,
    #[arg(long, default_value_t = DEFAULT_KMEANS_ITERATIONS)]
    iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    /// JSON training config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr_feature: Option<f64>,
    #[arg(long)]
    lr_codebook: Option<f64>,
    #[arg(long)]
    lr_decoder: Option<f64>,
    #[arg(long)]
    pixels_per_iter: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct RenderArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    /// Binary PPM.
    #[arg(long)]
    out_rgb: Option<PathBuf>,
    /// GOIF feature map.
    #[arg(long)]
    out_feat: Option<PathBuf>,
    /// Binary PGM.
    #[arg(long)]
    out_alpha: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct QueryArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    text: String,
    /// Embedding table JSON.
    #[arg(long)]
    embeddings: PathBuf,
    /// Binary PGM pseudo-mask; required unless --no-osh or --hyperplane.
    #[arg(long)]
    pseudo_mask: Option<PathBuf>,
    /// Camera the pseudo-mask was made from (defaults to --camera).
    #[arg(long, requires = "pseudo_mask")]
    pseudo_camera: Option<PathBuf>,
    /// Use the fixed cosine threshold without refinement.
    #[arg(long)]
    no_osh: bool,
    /// Cosine threshold of the initial hyperplane.
    #[arg(long, default_value_t = OshConfig::default().init_threshold)]
    threshold: f64,
    /// Reuse a saved hyperplane instead of fitting one.
    #[arg(long, conflicts_with_all = ["pseudo_mask", "no_osh"])]
    hyperplane: Option<PathBuf>,
    #[arg(long)]
    out_mask: PathBuf,
    #[arg(long)]
    out_overlay: Option<PathBuf>,
    #[arg(long)]
    out_goi: Option<PathBuf>,
    #[arg(long)]
    out_hyperplane: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum ActionKind {
    Delete,
    Extract,
    Translate,
    Highlight,
}

#[derive(Args, Debug, Serialize)]
struct ManipulateArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Selection JSON written by `query --out-goi`.
    #[arg(long)]
    goi: PathBuf,
    #[arg(long, value_enum)]
    action: ActionKind,
    /// Offset for translate, as x,y,z.
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    delta: Option<[f32; 3]>,
    /// Color for highlight, as r,g,b in [0, 1].
    #[arg(long, value_parser = parse_triple)]
    color: Option<[f32; 3]>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    testset: PathBuf,
    /// Embedding table overriding the one named in the test set.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    no_osh: bool,
    #[arg(long, default_value_t = OshConfig::default().init_threshold)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(BenchmarkSpec::preset_names()))]
    preset: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_triple(s: &str) -> std::result::Result<[f32; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got {s:?}"));
    }
    let mut out = [0.0f32; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("not a number: {p:?}"))?;
        if !o.is_finite() {
            return Err(format!("not finite: {p:?}"));
        }
    }
    Ok(out)
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

fn print_config<T: Serialize>(command: &str, seed: Option<u64>, args: &T) {
    let mut value = serde_json::to_value(args).unwrap_or_default();
    if let serde_json::Value::Object(map) = &mut value {
        map.insert("command".into(), command.into());
        if let Some(s) = seed {
            map.insert("seed".into(), s.into());
        }
    }
    println!("config {value}");
}

fn thread_count(flag: Option<usize>) -> std::result::Result<Option<usize>, String> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("{THREADS_ENV} must be a thread count, got {v:?}")),
        Err(_) => Ok(None),
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let result = match threads {
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Failure::Usage(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            }
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::ImportPly(a) => import_ply_cmd(a),
        Command::InitCodebook(a) => init_codebook_cmd(a, cli.seed.unwrap_or(0)),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Render(a) => render_cmd(a),
        Command::Query(a) => query_cmd(a),
        Command::Manipulate(a) => manipulate_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Synth(a) => synth_cmd(a, cli.seed.unwrap_or(0)),
    }
}

fn import_ply_cmd(a: &ImportPlyArgs) -> CliResult {
    print_config("import-ply", None, a);
    let scene = import_ply(&a.input, a.feature_dim)?;
    save_scene(&scene, &a.out)?;
    println!("imported {} Gaussians", scene.len());
    Ok(())
}

fn init_codebook_cmd(a: &InitCodebookArgs, seed: u64) -> CliResult {
    print_config("init-codebook", Some(seed), a);
    let ds = load_dataset(&a.manifest)?;
    let cb = init_codebook(&ds, a.entries, a.iters, seed)?;
    save_codebook(&cb, &a.out)?;
    println!("codebook: {} entries of dim {}", cb.len(), cb.dim());
    Ok(())
}

/// Config file values with command-line overrides applied.
fn resolve_train_config(a: &TrainArgs, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => binio::read_json::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.lr_feature {
        cfg.lr_feature = v;
    }
    if let Some(v) = a.lr_codebook {
        cfg.lr_codebook = v;
    }
    if let Some(v) = a.lr_decoder {
        cfg.lr_decoder = v;
    }
    if let Some(v) = a.pixels_per_iter {
        cfg.pixels_per_iter = v;
    }
    if let Some(v) = seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: &TrainArgs, seed: Option<u64>) -> CliResult {
    let cfg = resolve_train_config(a, seed)?;
    print_config("train", None, &serde_json::json!({ "args": a, "train_config": cfg }));
    let scene = load_scene(&a.scene)?;
    let ds = load_dataset(&a.manifest)?;
    let cb = load_codebook(&a.codebook)?;
    let dec = Decoder::random(cb.len(), scene.feature_dim(), cfg.seed);
    let model = train_semantic_field(&scene, &ds, &cb, &dec, &cfg)?;
    save_model(&model, &a.out)?;
    if let Some(last) = model.meta.loss_trace.last() {
        println!(
            "final loss {:.6} (ent {:.4} max {:.4} joint {:.4} e2e {:.4})",
            last.1, last.2, last.3, last.4, last.5
        );
    }
    Ok(())
}

fn render_cmd(a: &RenderArgs) -> CliResult {
    print_config("render", None, a);
    if a.out_rgb.is_none() && a.out_feat.is_none() && a.out_alpha.is_none() {
        return Err(Failure::Usage(
            "nothing to write: pass --out-rgb, --out-feat or --out-alpha".into(),
        ));
    }
    let model = load_model(&a.model)?;
    let cam = load_camera(&a.camera)?;
    let out = render(&model.scene, &cam)?;
    if let Some(p) = &a.out_rgb {
        binio::write_file(p, &rgb_to_ppm(out.width, out.height, &out.rgb))?;
    }
    if let Some(p) = &a.out_feat {
        save_feature_map(&out.ld_features, p)?;
    }
    if let Some(p) = &a.out_alpha {
        binio::write_file(p, &gray_to_pgm(out.width, out.height, &out.alpha))?;
    }
    Ok(())
}

fn query_cmd(a: &QueryArgs) -> CliResult {
    print_config("query", None, a);
    if !a.no_osh && a.pseudo_mask.is_none() && a.hyperplane.is_none() {
        return Err(Failure::Usage(
            "--pseudo-mask is required unless --no-osh or --hyperplane is given".into(),
        ));
    }
    let model = load_model(&a.model)?;
    let cam = load_camera(&a.camera)?;
    let result = match &a.hyperplane {
        Some(p) => query_with_hyperplane(&model, &cam, &load_hyperplane(p)?)?,
        None => {
            let embedding = load_embeddings(&a.embeddings)?.lookup(&a.text)?;
            let source = match &a.pseudo_mask {
                Some(p) => Some(MaskSource {
                    mask: load_mask(p)?,
                    camera: a.pseudo_camera.as_deref().map(load_camera).transpose()?,
                }),
                None => None,
            };
            let opts = if a.no_osh {
                QueryOptions::fixed_threshold(a.threshold)
            } else {
                QueryOptions {
                    use_osh: true,
                    osh: OshConfig {
                        init_threshold: a.threshold,
                        ..OshConfig::default()
                    },
                }
            };
            open_vocab_query(&model, &cam, &embedding, source.as_ref(), &opts)?
        }
    };
    save_mask(&result.mask, &a.out_mask)?;
    if let Some(p) = &a.out_overlay {
        let rgb = render(&model.scene, &cam)?;
        let blended = overlay(&rgb.rgb, &result.mask, OVERLAY_COLOR)?;
        binio::write_file(p, &rgb_to_ppm(rgb.width, rgb.height, &blended))?;
    }
    if let Some(p) = &a.out_goi {
        save_goi(&result.goi_indices, p)?;
    }
    if let Some(p) = &a.out_hyperplane {
        save_hyperplane(&result.hyperplane, p)?;
    }
    println!(
        "{} positive pixels, {} Gaussians selected",
        result.stats.positive_pixels, result.stats.selected_gaussians
    );
    if let Some(l) = result.osh_loss {
        info!("refinement loss {l:.6}");
    }
    Ok(())
}

fn manipulate_cmd(a: &ManipulateArgs) -> CliResult {
    print_config("manipulate", None, a);
    let action = match a.action {
        ActionKind::Delete => Action::Delete,
        ActionKind::Extract => Action::Extract,
        ActionKind::Translate => Action::Translate(
            a.delta
                .ok_or_else(|| Failure::Usage("--action translate needs --delta x,y,z".into()))?,
        ),
        ActionKind::Highlight => Action::Highlight(a.color.unwrap_or(OVERLAY_COLOR)),
    };
    let scene = load_scene(&a.scene)?;
    let indices = load_goi(&a.goi)?;
    let edited = manipulate(&scene, &indices, action)?;
    save_scene(&edited, &a.out)?;
    println!("{} of {} Gaussians selected, {} written", indices.len(), scene.len(), edited.len());
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> CliResult {
    print_config("eval", None, a);
    let model = load_model(&a.model)?;
    let cases = load_testset(&a.testset, a.embeddings.as_deref())?;
    let opts = if a.no_osh {
        QueryOptions::fixed_threshold(a.threshold)
    } else {
        QueryOptions {
            use_osh: true,
            osh: OshConfig {
                init_threshold: a.threshold,
                ..OshConfig::default()
            },
        }
    };
    let metrics = evaluate(&model, &cases, &opts)?;
    save_report(&metrics, &a.out)?;
    println!(
        "{} cases: mIoU {:.4} mPA {:.4} mP {:.4}",
        metrics.cases.len(),
        metrics.miou,
        metrics.mpa,
        metrics.mp
    );
    Ok(())
}

fn synth_cmd(a: &SynthArgs, seed: u64) -> CliResult {
    print_config("synth", Some(seed), a);
    let spec = BenchmarkSpec::preset(&a.preset)?;
    let bench = Benchmark::generate(&spec, seed)?;
    let files = bench.write(&a.out)?;
    println!("wrote {}", display(&files.root));
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triples() {
        assert_eq!(parse_triple("1,-2.5, 3").unwrap(), [1.0, -2.5, 3.0]);
        assert!(parse_triple("1,2").is_err());
        assert!(parse_triple("1,x,2").is_err());
        assert!(parse_triple("1,inf,2").is_err());
    }

    #[test]
    fn help_and_usage_codes() {
        assert_eq!(run(["goi", "--help"]), EXIT_OK);
        assert_eq!(run(["goi", "query", "--help"]), EXIT_OK);
        assert_eq!(run(["goi", "query", "--model", "m"]), EXIT_USAGE);
        assert_eq!(run(["goi", "train", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["goi", "synth", "--preset", "nope", "--out", "x"]), EXIT_USAGE);
    }

    #[test]
    fn missing_input_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.gois");
        let missing = dir.path().join("missing.ply");
        let code = run([
            "goi".as_ref(),
            "import-ply".as_ref(),
            "--in".as_ref(),
            missing.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ]);
        assert_eq!(code, EXIT_DATA);
    }
}
