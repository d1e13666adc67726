use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use emm_core::analysis::{
    attention_sweep, cdf_export, monotonicity_violations, quantization_sweep, write_attention_csv, write_sweep_csv,
    ErrorSummary, QuantSweepConfig,
};
use emm_core::attention::{emm_features, emm_forward_with_attention, EmmConfig, EmmOutput, TokenMatrix};
use emm_core::compact::{
    compact_moment, expand_compact, identity_residual, moment_of_correspondences, random_matching, PatchGrid,
    BLOCK_MAP,
};
use emm_core::eight_point::{estimate_pose, kronecker_row, CorrespondenceSet};
use emm_core::mlp::{
    chance_baseline, evaluate, load_model_file, save_model_file, train, MlpConfig, Task, TrainingLog, TrainingSet,
};
use emm_core::seed::{derive_seed, item_seed, rng_from};
use emm_core::synth::{generate_dataset, generate_instances, read_dataset, PoseDistribution, PoseKind, SceneConfig, SyntheticInstance};

use crate::{AttentionArgs, ChanceArgs, Cli, Command, EightPointArgs, EmmDemoArgs, EvalArgs, QuantizeArgs, SynthGenArgs, TrainArgs, VerifyArgs};

pub enum Outcome {
    Success,
    VerificationFailed,
}

#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into() }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::new("io", format!("{}: {e}", path.display()))
    }

    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

macro_rules! from_error {
    ($($t:ty => $kind:literal),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new($kind, e.to_string())
            }
        })*
    };
}

from_error! {
    emm_core::synth::SynthError => "data",
    emm_core::mlp::MlpError => "model",
    emm_core::analysis::AnalysisError => "analysis",
    emm_core::attention::AttentionError => "attention",
    emm_core::compact::CompactError => "compact",
    emm_core::eight_point::EightPointError => "eight-point",
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<Outcome> {
    if cli.threads == 0 {
        return Err(CliError::new("usage", "--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::new("threads", e.to_string()))?;
    let seed = cli.seed;
    match cli.command {
        Command::SynthGen(a) => synth_gen(a, seed.unwrap_or(0)),
        Command::Train(a) => train_cmd(a, seed),
        Command::Eval(a) => eval_cmd(a),
        Command::Chance(a) => chance(a, seed.unwrap_or(0)),
        Command::EightPoint(a) => eight_point(a),
        Command::VerifyIdentity(a) => verify_identity(a, seed.unwrap_or(0)),
        Command::QuantizeSweep(a) => quantize_sweep(a, seed.unwrap_or(0)),
        Command::AttentionSweep(a) => attention(a),
        Command::EmmDemo(a) => emm_demo(a, seed.unwrap_or(0)),
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON to `path`, or stdout when there is none.
fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    match path {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| CliError::io(p, e))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| CliError::new("io", format!("stdout: {e}")))
        }
    }
}

fn synth_gen(a: SynthGenArgs, seed: u64) -> Result<Outcome> {
    let cfg: SceneConfig = match &a.scene {
        Some(p) => read_config(p)?,
        None => SceneConfig::default(),
    };
    cfg.validate()?;
    let stats = generate_dataset(&PoseDistribution::new(a.dist), &cfg, a.count, seed, &a.out)?;
    emit_json(&stats, None)?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct TrainSummary {
    task: Task,
    seed: u64,
    train_instances: usize,
    shuffled_labels: bool,
    param_count: usize,
    #[serde(flatten)]
    log: TrainingLog,
}

fn train_cmd(a: TrainArgs, seed: Option<u64>) -> Result<Outcome> {
    let mut cfg: MlpConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => MlpConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(w) = a.width {
        cfg.hidden_width = w;
    }
    cfg.validate()?;
    let records = match (&a.data, a.dist, a.count) {
        (Some(path), _, _) => read_dataset(path)?,
        (None, Some(kind), Some(count)) => {
            let d = PoseDistribution::new(kind);
            let (insts, _) = generate_instances(&d, &SceneConfig::default(), count, derive_seed(cfg.seed, "train-data"));
            insts.iter().map(SyntheticInstance::record).collect()
        }
        _ => return Err(CliError::new("usage", "train needs --data FILE or --dist D --count N")),
    };
    let mut data = TrainingSet::from_records(&records, a.task)?;
    if a.shuffle_labels {
        data = data.with_shuffled_targets(derive_seed(cfg.seed, "shuffle-labels"));
    }
    let (model, log) = train(&cfg, &data)?;
    save_model_file(&model, &a.out)?;
    let summary = TrainSummary {
        task: a.task,
        seed: cfg.seed,
        train_instances: data.len(),
        shuffled_labels: a.shuffle_labels,
        param_count: model.param_count(),
        log,
    };
    emit_json(&summary, a.log.as_deref())?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    task: Task,
    model_seed: u64,
    test_instances: usize,
    summary: &'a ErrorSummary,
    errors_deg: &'a [f64],
}

fn eval_cmd(a: EvalArgs) -> Result<Outcome> {
    let model = load_model_file(&a.model).map_err(|e| CliError::new("model", format!("{}: {e}", a.model.display())))?;
    let records = read_dataset(&a.test)?;
    let data = TrainingSet::from_records(&records, model.task)?;
    let report = evaluate(&model, &data, a.threshold)?;
    if let Some(p) = &a.cdf {
        cdf_export(&report.errors_deg, create(p)?)?;
    }
    let out = EvalOutput {
        task: report.task,
        model_seed: model.config.seed,
        test_instances: data.len(),
        summary: &report.summary,
        errors_deg: &report.errors_deg,
    };
    emit_json(&out, a.out.as_deref())?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct ChanceOutput {
    dist: PoseKind,
    task: Task,
    draws: usize,
    seed: u64,
    summary: ErrorSummary,
}

fn chance(a: ChanceArgs, seed: u64) -> Result<Outcome> {
    let report = chance_baseline(a.dist, a.task, a.draws, seed, a.threshold)?;
    let out = ChanceOutput { dist: a.dist, task: a.task, draws: a.draws, seed, summary: report.summary };
    emit_json(&out, a.out.as_deref())?;
    Ok(Outcome::Success)
}

#[derive(Deserialize)]
struct CorrespondenceRow {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|r| [0, 1, 2].map(|c| m[(r, c)]))
}

#[derive(Serialize)]
struct EightPointOutput {
    points: usize,
    essential: [[f64; 3]; 3],
    rotation: [[f64; 3]; 3],
    quaternion: [f64; 4],
    translation: [f64; 3],
    cheirality_votes: [usize; 4],
    max_epipolar_residual: f64,
}

fn eight_point(a: EightPointArgs) -> Result<Outcome> {
    let file = File::open(&a.input).map_err(|e| CliError::io(&a.input, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut coords = Vec::new();
    for (i, row) in reader.deserialize::<CorrespondenceRow>().enumerate() {
        let r = row.map_err(|e| CliError::new("input", format!("{} row {}: {e}", a.input.display(), i + 1)))?;
        coords.push([r.x1, r.y1, r.x2, r.y2]);
    }
    let c = CorrespondenceSet::from_coords(coords);
    let (e, dec) = estimate_pose(&c)?;
    let pose = dec.pose();
    let residual = c.pairs().iter().map(|(x, x2)| e.residual(x, x2).abs()).fold(0.0, f64::max);
    let out = EightPointOutput {
        points: c.len(),
        essential: rows(e.matrix()),
        rotation: rows(pose.rotation.matrix()),
        quaternion: pose.rotation.to_quaternion().to_array(),
        translation: [pose.translation.x, pose.translation.y, pose.translation.z],
        cheirality_votes: dec.votes,
        max_epipolar_residual: residual,
    };
    emit_json(&out, a.out.as_deref())?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct GridCheck {
    grid: usize,
    patches: usize,
    trials: usize,
    max_relative_error: f64,
    passed: bool,
}

#[derive(Serialize)]
struct VerifyOutput {
    seed: u64,
    tolerance: f64,
    grids: Vec<GridCheck>,
    /// Single correspondences: expansion against `(x⊗x′)(x⊗x′)ᵀ`.
    kronecker_points: usize,
    kronecker_max_abs_error: f64,
    block_map: [[usize; 3]; 3],
    block_map_verified: bool,
    passed: bool,
}

/// Every entry of `xxᵀ` must equal the `φ(x)` entry the block map names.
fn block_map_holds(rng: &mut impl Rng) -> bool {
    (0..100).all(|_| {
        let x = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0);
        let phi = emm_core::compact::basis_of(x.x, x.y);
        let outer = x * x.transpose();
        (0..3).all(|i| (0..3).all(|j| outer[(i, j)] == phi[BLOCK_MAP[i][j] - 1]))
    })
}

fn verify_identity(a: VerifyArgs, seed: u64) -> Result<Outcome> {
    let mut grids = Vec::new();
    for &g in &a.grids {
        let grid = PatchGrid::unit_square(g)?;
        let base = derive_seed(seed, &format!("verify-grid-{g}"));
        let errors: Vec<f64> = (0..a.trials as u64)
            .into_par_iter()
            .map(|i| identity_residual(&grid, &random_matching(grid.patch_count(), &mut rng_from(item_seed(base, i)))))
            .collect::<std::result::Result<_, _>>()?;
        let worst = errors.iter().copied().fold(0.0, f64::max);
        grids.push(GridCheck {
            grid: g,
            patches: grid.patch_count(),
            trials: a.trials,
            max_relative_error: worst,
            passed: worst <= a.tolerance,
        });
    }
    let mut rng = rng_from(derive_seed(seed, "verify-kronecker"));
    let kronecker_points = 1000;
    let mut kron_err: f64 = 0.0;
    for _ in 0..kronecker_points {
        let x = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0);
        let x2 = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0);
        let r = kronecker_row(&x, &x2);
        let full = expand_compact(&moment_of_correspondences(&CorrespondenceSet::new(vec![(x, x2)])?));
        kron_err = kron_err.max((full - r * r.transpose()).abs().max());
    }
    let block_ok = block_map_holds(&mut rng);
    let passed = grids.iter().all(|g| g.passed) && kron_err <= 1e-12 && block_ok;
    let out = VerifyOutput {
        seed,
        tolerance: a.tolerance,
        grids,
        kronecker_points,
        kronecker_max_abs_error: kron_err,
        block_map: BLOCK_MAP,
        block_map_verified: block_ok,
        passed,
    };
    emit_json(&out, a.out.as_deref())?;
    Ok(if passed { Outcome::Success } else { Outcome::VerificationFailed })
}

#[derive(Serialize)]
struct SweepMeta<'a> {
    seed: u64,
    config: &'a QuantSweepConfig,
    camera_note: &'a str,
    evaluated: Vec<(usize, usize)>,
    skipped: Vec<(usize, usize)>,
    monotonicity_violations: Vec<(usize, usize)>,
}

fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn quantize_sweep(a: QuantizeArgs, seed: u64) -> Result<Outcome> {
    let defaults = QuantSweepConfig::default();
    let cfg = QuantSweepConfig {
        levels: a.levels,
        instances: a.count,
        points: a.points.unwrap_or(defaults.points),
        min_visible: a.min_visible.unwrap_or(defaults.min_visible),
        seed,
        shared_instances: a.shared,
        ..defaults
    };
    let sweep = quantization_sweep(&cfg)?;
    write_sweep_csv(&sweep.rows, create(&a.out)?)?;
    let meta = SweepMeta {
        seed,
        config: &sweep.config,
        camera_note: &sweep.camera_note,
        evaluated: sweep.rows.iter().map(|r| (r.q, r.evaluated)).collect(),
        skipped: sweep.rows.iter().map(|r| (r.q, r.skipped)).collect(),
        monotonicity_violations: monotonicity_violations(&sweep.rows),
    };
    emit_json(&meta, Some(&meta_path(&a.out)))?;
    Ok(Outcome::Success)
}

fn attention(a: AttentionArgs) -> Result<Outcome> {
    let mut rows = Vec::new();
    for &p in &a.patches {
        if p < 2 {
            return Err(CliError::new("usage", format!("patch count {p} leaves no partial match counts")));
        }
        let counts: Vec<usize> = (1..p).collect();
        rows.extend(attention_sweep(p, &counts, a.matched_logit, a.unmatched_logit)?);
    }
    write_attention_csv(&rows, create(&a.out)?)?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct EmmDemoOutput {
    seed: u64,
    heads: usize,
    head_width: usize,
    patches: usize,
    block_shape: (usize, usize),
    blocks: usize,
    feature_len: usize,
    /// Feature count for 3 heads of width 64, the reference configuration.
    reference_feature_len: usize,
    /// Largest gap between the bottom-right 6×6 block under a binary
    /// indicator and `ΦᵀAΦ`.
    indicator_block_max_abs_error: f64,
}

fn emm_demo(a: EmmDemoArgs, seed: u64) -> Result<Outcome> {
    if a.heads == 0 || a.head_width == 0 {
        return Err(CliError::new("usage", "heads and head width must be at least 1"));
    }
    let grid = PatchGrid::unit_square(a.grid)?;
    let p = grid.patch_count();
    let width = a.heads * a.head_width;
    let mut rng = rng_from(derive_seed(seed, "emm-demo"));
    let mut tokens = |image: u8| TokenMatrix::new(DMatrix::from_fn(p, width, |_, _| rng.gen_range(-1.0..1.0)), image);
    let (q1, k1, v1) = (tokens(1), tokens(1), tokens(1));
    let (q2, k2, v2) = (tokens(2), tokens(2), tokens(2));
    let cfg = EmmConfig { heads: a.heads, ..EmmConfig::default() };
    let out = emm_features(&q1, &k1, &v1, &q2, &k2, &v2, &grid, &cfg)?;
    let indicator = random_matching(p, &mut rng);
    let compact = compact_moment(&grid, &indicator)?;
    let pooled = emm_forward_with_attention(&v2, &grid, &indicator, a.heads)?;
    let d = a.head_width;
    let err = pooled
        .iter()
        .map(|b| (b.view((d, d), (6, 6)) - compact.0).abs().max())
        .fold(0.0, f64::max);
    let report = EmmDemoOutput {
        seed,
        heads: a.heads,
        head_width: d,
        patches: p,
        block_shape: out.blocks[0].shape(),
        blocks: out.blocks.len(),
        feature_len: out.flat().len(),
        reference_feature_len: EmmOutput::feature_len(3, 64),
        indicator_block_max_abs_error: err,
    };
    emit_json(&report, a.out.as_deref())?;
    Ok(Outcome::Success)
}
