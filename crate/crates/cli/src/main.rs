//! `uvz`: generate synthetic point-target datasets, encode depth maps, run
//! oracle selftests, and score prediction files.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use uvz_core::datagen::{table1_air_mix, uniform_air_mix, QueryFamily};
use uvz_core::depth::{
    encode_depth_3ch, encode_geometry_map, DepthMap, DepthSidecar, GeometryVolume,
};
use uvz_core::evalbench::{evaluate_dataset, render_report, EvalReport};
use uvz_core::harness::{OracleKind, SyntheticSceneSpec};
use uvz_core::pipeline::{generate_run, selftest, write_report, GenConfig};
use uvz_core::relations::RelationParams;
use uvz_core::CameraIntrinsics;

/// Exit code when `--strict` finds malformed or missing predictions.
const EXIT_STRICT: i32 = 3;

#[derive(Parser)]
#[command(
    name = "uvz",
    version,
    about = "Depth-aware point-target dataset and benchmark tool"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes and a query dataset.
    Gen(GenArgs),
    /// Encode a 16-bit depth PNG into a 3-channel uint8 image.
    EncodeDepth(EncodeDepthArgs),
    /// Score a predictions file against a dataset.
    Eval(EvalArgs),
    /// Run the generate -> oracle -> evaluate loop end to end.
    Selftest(SelftestArgs),
    /// Render the tables of an existing report file.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Run directory for scenes, dataset, and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Full run configuration (JSON); explicit flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of air queries to target.
    #[arg(long)]
    total: Option<usize>,
    /// Touchable queries per scene.
    #[arg(long)]
    touchable: Option<usize>,
    /// Scene count; defaults to roughly 500 air queries per scene.
    #[arg(long)]
    scenes: Option<usize>,
    /// Family mix: `table1`, `uniform`, or a JSON file of family fractions.
    #[arg(long)]
    mix: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Synthetic scene spec (JSON), overriding the defaults.
    #[arg(long)]
    scene_config: Option<PathBuf>,
    /// Relation parameters (TOML or JSON).
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeDepthArgs {
    /// Input 16-bit grayscale depth PNG (millimeters).
    #[arg(long)]
    depth: PathBuf,
    /// Output 3-channel PNG path.
    #[arg(long)]
    out: PathBuf,
    /// Emit the XYZ geometry-map encoding instead of split depth bytes.
    #[arg(long, default_value_t = false)]
    geometry: bool,
    /// Intrinsics sidecar, required with --geometry.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Quantization volume `x0,y0,z0,x1,y1,z1` in millimeters.
    #[arg(
        long,
        default_value = "-3000,-3000,0,3000,3000,6000",
        allow_hyphen_values = true
    )]
    volume: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Report JSON output path (defaults next to the predictions file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit nonzero if any prediction is malformed or missing.
    #[arg(long, default_value_t = false)]
    strict: bool,
    /// Skip the occupancy rejection filter.
    #[arg(long, default_value_t = false)]
    no_occupancy: bool,
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long)]
    out: PathBuf,
    /// Oracle: perfect | noisy:<sigma> | relation-blind | random.
    #[arg(long, default_value = "perfect")]
    oracle: String,
    /// Full run configuration (JSON); explicit flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    total: Option<usize>,
    #[arg(long)]
    touchable: Option<usize>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    mix: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = false)]
    no_occupancy: bool,
    #[arg(long)]
    scene_config: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
}

fn load_params(path: &Option<PathBuf>) -> Result<RelationParams> {
    match path {
        Some(p) => Ok(RelationParams::load(p)?),
        None => Ok(RelationParams::default()),
    }
}

fn load_mix(spec: &str) -> Result<BTreeMap<QueryFamily, f64>> {
    match spec {
        "table1" => Ok(table1_air_mix()),
        "uniform" => Ok(uniform_air_mix()),
        path => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading mix file {path}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing mix file {path}"))
        }
    }
}

fn load_scene_template(path: &Option<PathBuf>) -> Result<SyntheticSceneSpec> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading scene config {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing scene config {}", p.display()))
        }
        None => Ok(SyntheticSceneSpec::default()),
    }
}

struct ConfigOverrides<'a> {
    config: &'a Option<PathBuf>,
    seed: Option<u64>,
    total: Option<usize>,
    touchable: Option<usize>,
    scenes: Option<usize>,
    mix: &'a Option<String>,
    scene_config: &'a Option<PathBuf>,
    params: &'a Option<PathBuf>,
}

fn build_config(o: ConfigOverrides<'_>) -> Result<GenConfig> {
    let mut config = match o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => GenConfig::desk_default(o.total.unwrap_or(1000), o.seed.unwrap_or(0)),
    };
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if let Some(total) = o.total {
        config.total_air = total;
        if o.config.is_none() && o.scenes.is_none() {
            config.scene_count = (total / 500).max(1);
        }
    }
    if let Some(touchable) = o.touchable {
        config.touchable_per_scene = touchable;
    }
    if let Some(scenes) = o.scenes {
        config.scene_count = scenes.max(1);
    }
    if let Some(mix) = o.mix {
        config.mix = load_mix(mix)?;
    }
    if let Some(template) = o.scene_config {
        config.scene_template = load_scene_template(&Some(template.clone()))?;
    }
    if let Some(params) = o.params {
        config.params = load_params(&Some(params.clone()))?;
    }
    config.params.validate()?;
    Ok(config)
}

fn parse_volume(spec: &str) -> Result<GeometryVolume> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("bad volume component {s:?}"))
        })
        .collect::<Result<_>>()?;
    if parts.len() != 6 {
        bail!("volume needs 6 comma-separated values, got {}", parts.len());
    }
    let vol = GeometryVolume {
        min: [parts[0], parts[1], parts[2]],
        max: [parts[3], parts[4], parts[5]],
    };
    vol.validate()?;
    Ok(vol)
}

fn cmd_gen(args: &GenArgs) -> Result<i32> {
    let config = build_config(ConfigOverrides {
        config: &args.config,
        seed: args.seed,
        total: args.total,
        touchable: args.touchable,
        scenes: args.scenes,
        mix: &args.mix,
        scene_config: &args.scene_config,
        params: &args.params,
    })?;
    eprintln!(
        "gen: seed={} config_hash={}",
        config.seed,
        config.config_hash()
    );
    let summary = generate_run(&args.out, &config)?;
    let skipped: usize = summary.manifest.skipped.values().sum();
    println!(
        "wrote {} queries ({} skipped) to {}",
        summary.manifest.total,
        skipped,
        summary.dataset_path.display()
    );
    for (family, count) in &summary.manifest.per_family {
        println!("  {:<16} {}", family.name(), count);
    }
    Ok(0)
}

fn cmd_encode_depth(args: &EncodeDepthArgs) -> Result<i32> {
    let depth = DepthMap::load_png16(&args.depth)?;
    if args.geometry {
        let Some(intrinsics_path) = &args.intrinsics else {
            bail!("--geometry requires --intrinsics");
        };
        let cam = CameraIntrinsics::load_json(intrinsics_path)?;
        let volume = parse_volume(&args.volume)?;
        let encoded = encode_geometry_map(&depth, &cam, &volume)?;
        encoded.save_png(&args.out, &DepthSidecar::geometry(volume))?;
    } else {
        let encoded = encode_depth_3ch(&depth)?;
        encoded.save_png(&args.out, &DepthSidecar::depth_3ch())?;
    }
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn finish_eval(report: &EvalReport, out: &Path, strict: bool) -> Result<i32> {
    write_report(out, report)?;
    print!("{}", render_report(report));
    println!("report: {}", out.display());
    let bad = report.counts.parse_failures + report.counts.missing_predictions;
    if strict && bad > 0 {
        eprintln!("strict: {bad} malformed or missing predictions");
        return Ok(EXIT_STRICT);
    }
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let params = load_params(&args.params)?;
    params.validate()?;
    let (report, _records) = evaluate_dataset(
        &args.dataset,
        &args.predictions,
        &params,
        !args.no_occupancy,
    )?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.predictions.with_file_name("report.json"));
    finish_eval(&report, &out, args.strict)
}

fn cmd_selftest(args: &SelftestArgs) -> Result<i32> {
    let oracle: OracleKind = args.oracle.parse().map_err(anyhow::Error::msg)?;
    let config = build_config(ConfigOverrides {
        config: &args.config,
        seed: args.seed,
        total: args.total,
        touchable: args.touchable,
        scenes: args.scenes,
        mix: &args.mix,
        scene_config: &args.scene_config,
        params: &args.params,
    })?;
    eprintln!(
        "selftest: seed={} config_hash={}",
        config.seed,
        config.config_hash()
    );
    let outcome = selftest(&args.out, &config, oracle, !args.no_occupancy)?;
    print!("{}", render_report(&outcome.report));
    println!("report: {}", outcome.report_path.display());
    Ok(0)
}

fn cmd_report(args: &ReportArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.report)
        .with_context(|| format!("reading {}", args.report.display()))?;
    let report: EvalReport = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.report.display()))?;
    print!("{}", render_report(&report));
    Ok(0)
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::EncodeDepth(args) => cmd_encode_depth(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Selftest(args) => cmd_selftest(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
