//! Command-line surface: argument definitions and the command runners.
//!
//! Exit codes: 0 success, 2 input or contract error, 3 numerical
//! divergence, 4 failed assertion.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{check_loss, LossName};
use crate::engine::{ScalarField, VectorField3};
use crate::fit::{fit_pair, FitConfig, FitError, FitResult};
use crate::frame::Frame;
use crate::geometry::{Intrinsics, RigidMotion};
use crate::io;
use crate::metrics::{score, Estimate, Evaluation, DEFAULT_CUTOFF};
use crate::synth::{photometric_residual, render_pair, SceneSpec, SELF_CHECK_TOLERANCE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_ASSERT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CmdError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Assertion(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Input(_) => EXIT_INPUT,
            CmdError::Diverged(_) => EXIT_DIVERGED,
            CmdError::Assertion(_) => EXIT_ASSERT,
        }
    }
}

impl From<io::IoError> for CmdError {
    fn from(e: io::IoError) -> Self {
        CmdError::Input(e.to_string())
    }
}

impl From<FitError> for CmdError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Divergence { .. } | FitError::Engine(_) => CmdError::Diverged(e.to_string()),
            _ => CmdError::Input(e.to_string()),
        }
    }
}

fn input(e: impl std::fmt::Display) -> CmdError {
    CmdError::Input(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "dmk", version, about = "Differentiable two-frame structure from motion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic frame pair with ground truth.
    Synth(SynthArgs),
    /// Fit depth and motion to a frame pair.
    Fit(FitArgs),
    /// Compare a fit against ground truth.
    Eval(EvalArgs),
    /// Finite-difference check of one loss term.
    Gradcheck(GradcheckArgs),
    /// Color-mapped disparity and motion images of a fit.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene spec JSON, or one of `builtin:ego`, `builtin:dynamic`, `builtin:static`.
    #[arg(long)]
    pub spec: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Scene directory with frame_a.ppm, frame_b.ppm and intrinsics.json.
    #[arg(long)]
    pub scene: PathBuf,
    /// Fit config JSON; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides the config seed. Several comma-separated seeds run
    /// independent fits into `out/seed_<n>`.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub learn_intrinsics: bool,
    /// Concurrent fits when several seeds are given.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    /// Threshold such as `abs_rel<0.15` or `delta1>0.9`; repeatable.
    #[arg(long = "assert")]
    pub asserts: Vec<String>,
    /// Skip median scaling of the predicted depth.
    #[arg(long)]
    pub no_scale: bool,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    pub cutoff: f64,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub loss: String,
    /// `HxW`, for example `8x8`.
    #[arg(long, default_value = "8x8")]
    pub size: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments already split off the program name and runs them.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Render(a) => cmd_render(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub artifacts: Vec<String>,
    pub wall_clock_s: f64,
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
}

pub fn config_hash(config: &impl Serialize) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CmdError> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    fs::write(path, text + "\n").map_err(|e| input(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CmdError> {
    let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn make_dir(dir: &Path) -> Result<(), CmdError> {
    fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))
}

fn write_manifest(
    dir: &Path,
    command: &str,
    seed: u64,
    config: &impl Serialize,
    started: Instant,
    notes: BTreeMap<String, serde_json::Value>,
) -> Result<(), CmdError> {
    let mut artifacts: Vec<String> = fs::read_dir(dir)
        .map_err(|e| input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    artifacts.sort();
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config_hash: config_hash(config),
        artifacts,
        wall_clock_s: started.elapsed().as_secs_f64(),
        notes,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Forward and backward ego-motion, as stored in `ego.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoPair {
    pub ab: RigidMotion,
    pub ba: RigidMotion,
}

pub fn load_spec(spec: &str) -> Result<SceneSpec, CmdError> {
    let parsed = match spec {
        "builtin:ego" => SceneSpec::ego_demo(),
        "builtin:dynamic" => SceneSpec::dynamic_demo(),
        "builtin:static" => SceneSpec::static_scene(),
        path => {
            let text = fs::read_to_string(path).map_err(|e| input(format!("{path}: {e}")))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de)
                .map_err(|e| input(format!("{path}: invalid spec at {}: {}", e.path(), e.inner())))?
        }
    };
    parsed.validate().map_err(input)?;
    Ok(parsed)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), CmdError> {
    let started = Instant::now();
    let spec = load_spec(&a.spec)?;
    let sample = render_pair(&spec, a.seed).map_err(input)?;
    let clean = if spec.noise_sigma > 0.0 {
        let quiet = SceneSpec {
            noise_sigma: 0.0,
            ..spec.clone()
        };
        render_pair(&quiet, a.seed).map_err(input)?
    } else {
        sample.clone()
    };
    let residual = photometric_residual(&clean);
    if residual > SELF_CHECK_TOLERANCE {
        return Err(input(format!("generator self check failed: residual {residual}")));
    }
    info!("self check residual {residual:.5}");

    let out = &a.out;
    make_dir(out)?;
    let (h, w) = sample.dims();
    write_json(&out.join("spec.json"), &spec)?;
    write_json(&out.join("intrinsics.json"), &spec.intrinsics)?;
    write_json(
        &out.join("ego.json"),
        &EgoPair {
            ab: sample.ego_ab,
            ba: sample.ego_ba,
        },
    )?;
    io::write_ppm(&out.join("frame_a.ppm"), &sample.frame_a)?;
    io::write_ppm(&out.join("frame_b.ppm"), &sample.frame_b)?;
    io::write_pfm(&out.join("depth_a.pfm"), &sample.depth_a)?;
    io::write_pfm(&out.join("depth_b.pfm"), &sample.depth_b)?;
    io::write_pfm3(&out.join("t_obj_ab.pfm"), &sample.t_obj_ab)?;
    io::write_pfm3(&out.join("t_obj_ba.pfm"), &sample.t_obj_ba)?;
    io::write_pgm(&out.join("objects_a.pgm"), w, h, &sample.objects_a)?;
    io::write_pgm(&out.join("objects_b.pgm"), w, h, &sample.objects_b)?;
    io::write_mask(&out.join("valid_a.pgm"), &sample.valid_a)?;
    io::write_mask(&out.join("valid_b.pgm"), &sample.valid_b)?;
    let notes = BTreeMap::from([("self_check_residual".to_string(), serde_json::json!(residual))]);
    write_manifest(out, "synth", a.seed, &spec, started, notes)
}

fn load_fit_config(a: &FitArgs) -> Result<FitConfig, CmdError> {
    let mut config: FitConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => FitConfig::default(),
    };
    if let Some(steps) = a.steps {
        config.steps = steps;
    }
    if a.learn_intrinsics {
        config.learn_intrinsics = true;
    }
    config.validate()?;
    Ok(config)
}

fn write_fit(out: &Path, r: &FitResult) -> Result<(), CmdError> {
    make_dir(out)?;
    io::write_pfm(&out.join("depth_a.pfm"), &r.depth_a)?;
    io::write_pfm(&out.join("depth_b.pfm"), &r.depth_b)?;
    io::write_pfm3(&out.join("t_obj_ab.pfm"), &r.t_obj_ab)?;
    io::write_pfm3(&out.join("t_obj_ba.pfm"), &r.t_obj_ba)?;
    write_json(
        &out.join("ego.json"),
        &EgoPair {
            ab: r.ego_ab,
            ba: r.ego_ba,
        },
    )?;
    write_json(&out.join("intrinsics.json"), &r.intrinsics)?;
    write_json(&out.join("trace.json"), &r.trace)?;
    write_json(
        &out.join("fit.json"),
        &serde_json::json!({
            "converged": r.converged,
            "no_parallax": r.no_parallax,
            "learned_intrinsics": r.learned_intrinsics,
            "final_total": r.totals.last(),
            "steps": r.totals.len(),
        }),
    )
}

fn fit_one(frames: &(Frame, Frame), k: Option<Intrinsics>, config: &FitConfig, out: &Path) -> Result<(), CmdError> {
    let started = Instant::now();
    info!("fitting seed {} for {} steps", config.seed, config.steps);
    let r = fit_pair(&frames.0, &frames.1, k, config)?;
    if r.no_parallax {
        warn!("no parallax: depth is not observable from this pair");
    }
    write_fit(out, &r)?;
    let notes = BTreeMap::from([
        ("converged".to_string(), serde_json::json!(r.converged)),
        ("no_parallax".to_string(), serde_json::json!(r.no_parallax)),
    ]);
    write_manifest(out, "fit", config.seed, config, started, notes)
}

pub fn cmd_fit(a: &FitArgs) -> Result<(), CmdError> {
    let base = load_fit_config(a)?;
    let frames = (
        io::read_ppm(&a.scene.join("frame_a.ppm"))?,
        io::read_ppm(&a.scene.join("frame_b.ppm"))?,
    );
    if frames.0.dims() != frames.1.dims() {
        return Err(input("frames differ in resolution"));
    }
    let (h, w) = frames.0.dims();
    let k = if base.learn_intrinsics {
        None
    } else {
        let k: Intrinsics = read_json(&a.scene.join("intrinsics.json"))?;
        k.validate(w, h).map_err(input)?;
        Some(k)
    };

    let seeds = if a.seed.is_empty() { vec![base.seed] } else { a.seed.clone() };
    if seeds.len() == 1 {
        let config = FitConfig {
            seed: seeds[0],
            ..base
        };
        return fit_one(&frames, k, &config, &a.out);
    }
    let jobs = a.jobs.max(1);
    let mut results: Vec<Result<(), CmdError>> = Vec::new();
    for chunk in seeds.chunks(jobs) {
        let chunk_results: Vec<Result<(), CmdError>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    let config = FitConfig { seed, ..base.clone() };
                    let out = a.out.join(format!("seed_{seed}"));
                    let frames = &frames;
                    s.spawn(move || fit_one(frames, k, &config, &out))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(input("fit thread panicked"))))
                .collect()
        });
        results.extend(chunk_results);
    }
    results.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Comparison {
    Less,
    Greater,
}

/// Parses `key<value` or `key>value`.
pub fn parse_assert(s: &str) -> Result<(String, Comparison, f64), CmdError> {
    let (pos, cmp) = match (s.find('<'), s.find('>')) {
        (Some(i), None) => (i, Comparison::Less),
        (None, Some(i)) => (i, Comparison::Greater),
        _ => return Err(input(format!("assertion {s:?} must look like key<value or key>value"))),
    };
    let key = s[..pos].trim().to_string();
    let value: f64 = s[pos + 1..]
        .trim()
        .parse()
        .map_err(|_| input(format!("assertion {s:?} has a non-numeric threshold")))?;
    Ok((key, cmp, value))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Evaluation, CmdError> {
    let checks = a.asserts.iter().map(|s| parse_assert(s)).collect::<Result<Vec<_>, _>>()?;
    let gt_depth = io::read_pfm(&a.scene.join("depth_a.pfm"))?;
    let gt_t = io::read_pfm3(&a.scene.join("t_obj_ab.pfm"))?;
    let gt_ego: EgoPair = read_json(&a.scene.join("ego.json"))?;
    let valid = io::read_mask(&a.scene.join("valid_a.pgm"))?;
    let (w, h, ids) = io::read_pgm(&a.scene.join("objects_a.pgm"))?;
    let objects = ScalarField::new(h, w, ids.iter().map(|&i| (i > 0) as u8 as f64).collect()).map_err(input)?;

    let depth = io::read_pfm(&a.fit.join("depth_a.pfm"))?;
    let t: VectorField3 = io::read_pfm3(&a.fit.join("t_obj_ab.pfm"))?;
    let ego: EgoPair = read_json(&a.fit.join("ego.json"))?;
    if depth.dims() != gt_depth.dims() || t.dims() != gt_t.dims() {
        return Err(input("fit and scene resolutions differ"));
    }
    let pred = Estimate {
        depth: &depth,
        t_obj: &t,
        ego_translation: ego.ab.translation,
    };
    let gt = Estimate {
        depth: &gt_depth,
        t_obj: &gt_t,
        ego_translation: gt_ego.ab.translation,
    };
    let report = score(&pred, &gt, &valid, &objects, a.cutoff, !a.no_scale).map_err(input)?;
    let text = serde_json::to_string_pretty(&report).expect("json");
    println!("{text}");
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    for (key, cmp, threshold) in checks {
        let v = report
            .get(&key)
            .ok_or_else(|| input(format!("unknown metric {key:?} in assertion")))?;
        let ok = match cmp {
            Comparison::Less => v < threshold,
            Comparison::Greater => v > threshold,
        };
        if !ok {
            return Err(CmdError::Assertion(format!("assertion failed: {key} = {v}")));
        }
    }
    Ok(report)
}

pub fn parse_size(s: &str) -> Result<(usize, usize), CmdError> {
    let bad = || input(format!("size {s:?} must look like 8x8"));
    let (h, w) = s.split_once(['x', 'X', '×']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h < 2 || w < 2 {
        return Err(bad());
    }
    Ok((h, w))
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), CmdError> {
    let loss: LossName = a.loss.parse().map_err(input)?;
    let (h, w) = parse_size(&a.size)?;
    let check = check_loss(loss, h, w, a.seed).map_err(|e| CmdError::Diverged(e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&check).expect("json"));
    eprintln!("{loss}: worst relative error {:.3e}", check.report.max_rel_error);
    if check.passed {
        Ok(())
    } else {
        Err(CmdError::Assertion(format!(
            "{loss}: relative error {:.3e} exceeds {:.0e}",
            check.report.max_rel_error, check.tolerance
        )))
    }
}

/// Disparity color ramp: `t` in `[0, 1]` runs linearly through dark blue,
/// teal and pale yellow.
pub fn disparity_color(t: f64) -> [f64; 3] {
    const STOPS: [[f64; 3]; 3] = [[0.05, 0.05, 0.30], [0.10, 0.65, 0.60], [1.00, 0.95, 0.40]];
    let t = t.clamp(0.0, 1.0) * 2.0;
    let i = (t.floor() as usize).min(1);
    let f = t - i as f64;
    [0, 1, 2].map(|k| STOPS[i][k] * (1.0 - f) + STOPS[i + 1][k] * f)
}

/// Disparity normalized to its own range; a constant map gives one color.
pub fn render_disparity(depth: &ScalarField) -> Frame {
    let disp = depth.map(|d| 1.0 / d.max(1e-9));
    let (lo, hi) = (disp.min(), disp.max());
    let span = hi - lo;
    let (h, w) = disp.dims();
    Frame::from_fn(h, w, |r, c| {
        let t = if span > 0.0 { (disp.get(r, c) - lo) / span } else { 0.0 };
        disparity_color(t)
    })
}

/// Gray level proportional to `|T|` over its maximum; zero is black.
pub fn render_motion(t: &VectorField3) -> Frame {
    let n = t.norm();
    let hi = n.max();
    let (h, w) = n.dims();
    Frame::from_fn(h, w, |r, c| {
        let g = if hi > 0.0 { n.get(r, c) / hi } else { 0.0 };
        [g; 3]
    })
}

pub fn cmd_render(a: &RenderArgs) -> Result<(), CmdError> {
    let started = Instant::now();
    make_dir(&a.out)?;
    for side in ["a", "b"] {
        let depth = io::read_pfm(&a.fit.join(format!("depth_{side}.pfm")))?;
        io::write_ppm(&a.out.join(format!("disparity_{side}.ppm")), &render_disparity(&depth))?;
    }
    for (dir, side) in [("ab", "a"), ("ba", "b")] {
        let t = io::read_pfm3(&a.fit.join(format!("t_obj_{dir}.pfm")))?;
        io::write_ppm(&a.out.join(format!("motion_{side}.ppm")), &render_motion(&t))?;
    }
    let source = serde_json::json!({ "fit": a.fit.display().to_string() });
    write_manifest(&a.out, "render", 0, &source, started, BTreeMap::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assertion_syntax() {
        assert_eq!(parse_assert("abs_rel<0.05").unwrap(), ("abs_rel".into(), Comparison::Less, 0.05));
        assert_eq!(parse_assert("delta1>0.9").unwrap(), ("delta1".into(), Comparison::Greater, 0.9));
        assert!(parse_assert("abs_rel=0.1").is_err());
        assert!(parse_assert("abs_rel<x").is_err());
    }

    #[test]
    fn size_syntax() {
        assert_eq!(parse_size("8x8").unwrap(), (8, 8));
        assert_eq!(parse_size("6×10").unwrap(), (6, 10));
        assert!(parse_size("8").is_err());
        assert!(parse_size("1x8").is_err());
    }

    #[test]
    fn renders_of_degenerate_maps() {
        let black = render_motion(&VectorField3::zeros(3, 4));
        assert!(black.channels.iter().all(|c| c.max() == 0.0));
        let flat = render_disparity(&ScalarField::filled(3, 4, 2.0));
        for ch in &flat.channels {
            assert_eq!(ch.min(), ch.max());
        }
        assert_eq!(disparity_color(0.0), [0.05, 0.05, 0.30]);
        assert_eq!(disparity_color(1.0), [1.00, 0.95, 0.40]);
    }

    #[test]
    fn config_hash_is_stable() {
        let a = config_hash(&FitConfig::default());
        assert_eq!(a, config_hash(&FitConfig::default()));
        assert_eq!(a.len(), 64);
        let other = FitConfig {
            steps: 3,
            ..FitConfig::default()
        };
        assert_ne!(a, config_hash(&other));
    }
}
