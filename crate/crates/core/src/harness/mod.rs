//! Experiment commands: map generation, training, the same / rotated /
//! different evaluation protocol, the search audit and plotting.
//!
//! All commands read an [`ExperimentConfig`] and write under one output
//! directory:
//!
//! ```text
//! maps/manifest.txt   maps/{train,rotated,eval}_NNN.txt
//! <Variant>/checkpoint.txt   <Variant>/metrics.csv   <Variant>/config.toml
//! eval.csv   eval_episodes.csv   audit_<Variant>.txt   plots/*.svg
//! ```

pub mod audit;
pub mod config;
pub mod plot;

use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use eqmz_nd::{Checkpoint, NdError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{make_splits, observe, EnvError, EnvState, MazeMap, MiniPacman, RotatedMap, SeededMap, Splits};
use crate::group::GroupElement;
use crate::mcts::{rng_transport, run_search, sample_action, MctsConfig, RngStream};
use crate::training::{train, write_metrics_csv, TrainError, TrainOutcome};
use crate::worldmodel::{AgentVariant, ModelError, WorldModel};

pub use audit::{AuditReport, CaseResult, Divergence};
pub use config::{AuditConfig, EvalConfig, ExperimentConfig, SplitConfig};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    Csv { path: PathBuf, line: u64, msg: String },
    #[error("{path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: NdError },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("missing split: {0}")]
    MissingSplit(String),
    #[error("audit failed: {failed} of {total} cases diverged")]
    AuditFailed { failed: usize, total: usize },
    #[error("training diverged at step {step}; last good parameters (step {last_good_step}) written to {path}")]
    Diverged {
        step: usize,
        last_good_step: usize,
        path: PathBuf,
    },
}

impl HarnessError {
    /// Process exit status: 1 runtime or I/O failure, 2 bad configuration,
    /// 3 audit failure, 4 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::MissingSplit(_) | Self::Env(EnvError::SplitExhausted { .. }) => 2,
            Self::AuditFailed { .. } => 3,
            Self::Diverged { .. } => 4,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// File locations under an output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn maps(&self) -> PathBuf {
        self.root.join("maps")
    }

    pub fn manifest(&self) -> PathBuf {
        self.maps().join("manifest.txt")
    }

    pub fn checkpoint(&self, v: AgentVariant) -> PathBuf {
        self.root.join(v.name()).join("checkpoint.txt")
    }

    pub fn metrics(&self, v: AgentVariant) -> PathBuf {
        self.root.join(v.name()).join("metrics.csv")
    }

    pub fn eval_report(&self) -> PathBuf {
        self.root.join("eval.csv")
    }

    pub fn eval_episodes(&self) -> PathBuf {
        self.root.join("eval_episodes.csv")
    }

    pub fn audit(&self, v: AgentVariant) -> PathBuf {
        self.root.join(format!("audit_{}.txt", v.name()))
    }
}

const MANIFEST_MAGIC: &str = "eqmz-maps 1";

/// Generates `X`, `RX` and `Y`, writes one ASCII file per map and a
/// manifest listing seeds and rotations.
pub fn cmd_gen_maps(cfg: &ExperimentConfig, out: &Path) -> Result<Splits, HarnessError> {
    let layout = Layout::new(out);
    let splits = make_splits(cfg.split.seed, cfg.env.side, cfg.split.n_train, cfg.split.n_eval)?;
    let train_forms: Vec<String> = splits.train.iter().map(|m| m.map.canonical_form()).collect();
    assert!(
        splits.eval.iter().all(|m| !train_forms.contains(&m.map.canonical_form())),
        "evaluation maps must avoid every training canonical form"
    );
    let mut manifest = format!("{MANIFEST_MAGIC}\nside {}\n", splits.side);
    for (i, m) in splits.train.iter().enumerate() {
        let file = format!("train_{i:03}.txt");
        write_file(&layout.maps().join(&file), m.map.to_ascii().as_bytes())?;
        manifest.push_str(&format!("train {i} seed {} {file}\n", m.seed));
    }
    for (i, m) in splits.rotated.iter().enumerate() {
        let file = format!("rotated_{i:03}.txt");
        write_file(&layout.maps().join(&file), m.map.to_ascii().as_bytes())?;
        manifest.push_str(&format!("rotated {i} source {} rotation {} {file}\n", m.source, m.rotation.k()));
    }
    for (i, m) in splits.eval.iter().enumerate() {
        let file = format!("eval_{i:03}.txt");
        write_file(&layout.maps().join(&file), m.map.to_ascii().as_bytes())?;
        manifest.push_str(&format!("eval {i} seed {} {file}\n", m.seed));
    }
    write_file(&layout.manifest(), manifest.as_bytes())?;
    Ok(splits)
}

/// Reads the splits written by [`cmd_gen_maps`].
pub fn load_splits(out: &Path) -> Result<Splits, HarnessError> {
    let layout = Layout::new(out);
    let path = layout.manifest();
    if !path.exists() {
        return Err(HarnessError::MissingSplit(format!("no manifest at {}; run gen-maps first", path.display())));
    }
    let text = read_file(&path)?;
    let bad = |line: usize, msg: String| HarnessError::Manifest {
        path: path.clone(),
        msg: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, MANIFEST_MAGIC)) => {}
        _ => return Err(bad(1, format!("expected {MANIFEST_MAGIC:?}"))),
    }
    let side = match lines.next().and_then(|(_, l)| l.strip_prefix("side ")) {
        Some(s) => s.parse().map_err(|_| bad(2, format!("bad side {s:?}")))?,
        None => return Err(bad(2, "expected side".into())),
    };
    let mut splits = Splits {
        side,
        train: Vec::new(),
        rotated: Vec::new(),
        eval: Vec::new(),
    };
    for (n, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| -> Result<u64, HarnessError> {
            f.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(n, format!("field {} of {line:?} is not a number", i + 1)))
        };
        let file = f.last().ok_or_else(|| bad(n, "empty line".into()))?;
        let map_path = layout.maps().join(file);
        let map = MazeMap::parse_ascii(&read_file(&map_path)?).map_err(|e| HarnessError::Manifest {
            path: map_path.clone(),
            msg: e.to_string(),
        })?;
        match (f[0], f.len()) {
            ("train", 5) => splits.train.push(SeededMap { seed: num(3)?, map }),
            ("eval", 5) => splits.eval.push(SeededMap { seed: num(3)?, map }),
            ("rotated", 7) => splits.rotated.push(RotatedMap {
                source: num(3)? as usize,
                rotation: GroupElement::new(num(5)? as i64),
                map,
            }),
            _ => return Err(bad(n, format!("unrecognized entry {line:?}"))),
        }
    }
    Ok(splits)
}

pub fn load_model(path: &Path) -> Result<WorldModel, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let ckpt = Checkpoint::read_from(BufReader::new(file)).map_err(|source| HarnessError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(WorldModel::from_checkpoint(&ckpt)?)
}

fn save_model(model: &WorldModel, path: &Path, steps: usize) -> Result<(), HarnessError> {
    let ckpt = model.to_checkpoint().with_meta("train_steps", steps);
    write_file(path, &ckpt.to_bytes())
}

fn environment(cfg: &ExperimentConfig) -> Result<MiniPacman, HarnessError> {
    MiniPacman::new(cfg.env.clone()).map_err(|e| HarnessError::Config(e.to_string()))
}

/// Trains `cfg.variant` on the training maps and writes its checkpoint,
/// metrics log and the resolved config.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutcome, HarnessError> {
    let layout = Layout::new(out);
    let splits = load_splits(out)?;
    if splits.train.is_empty() {
        return Err(HarnessError::MissingSplit("train".into()));
    }
    if splits.side != cfg.env.side {
        return Err(HarnessError::Config(format!(
            "maps have side {} but env.side is {}",
            splits.side, cfg.env.side
        )));
    }
    let env = environment(cfg)?;
    let maps: Vec<MazeMap> = splits.train.into_iter().map(|m| m.map).collect();
    let model = WorldModel::new(cfg.model.clone(), cfg.variant)?;
    let ckpt_path = layout.checkpoint(cfg.variant);
    write_file(&ckpt_path.with_file_name("config.toml"), cfg.to_toml().as_bytes())?;
    let outcome = match train(model, &env, &maps, &cfg.mcts, &cfg.train) {
        Ok(o) => o,
        Err(TrainError::Diverged {
            step,
            last_good_step,
            last_good,
        }) => {
            save_model(&last_good, &ckpt_path, last_good_step)?;
            return Err(HarnessError::Diverged {
                step,
                last_good_step,
                path: ckpt_path,
            });
        }
        Err(TrainError::Config(m)) => return Err(HarnessError::Config(m)),
        Err(TrainError::Model(e)) => return Err(e.into()),
        Err(TrainError::Env(e)) => return Err(e.into()),
    };
    save_model(&outcome.model, &ckpt_path, cfg.train.total_steps)?;
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &outcome.metrics).map_err(io_err(&layout.metrics(cfg.variant)))?;
    write_file(&layout.metrics(cfg.variant), &csv)?;
    Ok(outcome)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Setting {
    /// Training maps `X`.
    Same,
    /// Rotations `RX`, paired step for step with `Same`.
    Rotated,
    /// Held-out maps `Y`.
    Different,
}

impl Setting {
    pub const ALL: [Self; 3] = [Self::Same, Self::Rotated, Self::Different];

    pub fn name(self) -> &'static str {
        match self {
            Self::Same => "same",
            Self::Rotated => "rotated",
            Self::Different => "different",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub variant: AgentVariant,
    pub setting: Setting,
    pub returns: Vec<f64>,
}

impl EvalRow {
    pub fn mean(&self) -> f64 {
        eqmz_nd::kernels::sorted_sum(&self.returns) / self.returns.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let sq: Vec<f64> = self.returns.iter().map(|r| (r - m) * (r - m)).collect();
        (eqmz_nd::kernels::sorted_sum(&sq) / self.returns.len() as f64).sqrt()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, v: AgentVariant, s: Setting) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.variant == v && r.setting == s)
    }

    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(plot::EVAL_HEADER.split(',')).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.variant.name().to_string(),
                r.setting.name().to_string(),
                r.returns.len().to_string(),
                format!("{:?}", r.mean()),
                format!("{:?}", r.std()),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn episodes_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["variant", "setting", "episode", "return"]).expect("in-memory write");
        for r in &self.rows {
            for (i, ret) in r.returns.iter().enumerate() {
                w.write_record([
                    r.variant.name().to_string(),
                    r.setting.name().to_string(),
                    i.to_string(),
                    format!("{ret:?}"),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Plays one greedy episode (noise off, temperature 0) and returns the
/// undiscounted return.
pub fn greedy_episode(
    model: &WorldModel,
    env: &MiniPacman,
    mut state: EnvState,
    search: &MctsConfig,
    rng: &mut RngStream,
) -> Result<f64, HarnessError> {
    let mut cfg = search.clone();
    cfg.noise.enabled = false;
    let mut total = 0.0;
    while !state.done {
        let res = run_search(model, &observe(&state), &cfg, rng)?;
        let a = sample_action(&res.policy, 0.0, rng);
        let out = env.step(&state, a);
        total += out.reward;
        state = out.state;
    }
    Ok(total)
}

/// Evaluates one model on all three settings.
///
/// Episode `i` uses map `i mod |X|` and the `i`-th pair of (reset, search)
/// seeds. Its rotated partner plays the same map turned by
/// `g = 1 + ⌊i/|X|⌋ mod 3` quarter turns, with the reset drawn in frame `g`
/// and the search stream transported by `g`, so for an equivariant agent the
/// two episodes mirror each other step for step.
pub fn evaluate(
    model: &WorldModel,
    cfg: &ExperimentConfig,
    splits: &Splits,
) -> Result<Vec<EvalRow>, HarnessError> {
    if splits.train.is_empty() {
        return Err(HarnessError::MissingSplit("train".into()));
    }
    if splits.eval.is_empty() {
        return Err(HarnessError::MissingSplit("eval".into()));
    }
    let env = environment(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let seeds: Vec<(u64, u64)> = (0..cfg.eval.episodes).map(|_| (rng.gen(), rng.gen())).collect();
    let (nx, ny) = (splits.train.len(), splits.eval.len());
    let mut rows = Vec::with_capacity(3);
    for setting in Setting::ALL {
        let mut returns = Vec::with_capacity(seeds.len());
        for (i, &(reset_seed, search_seed)) in seeds.iter().enumerate() {
            let (state, mut stream) = match setting {
                Setting::Same => (
                    env.reset(&splits.train[i % nx].map, reset_seed)?,
                    RngStream::new(search_seed),
                ),
                Setting::Rotated => {
                    let g = GroupElement::new(1 + ((i / nx) % 3) as i64);
                    let map = splits.train[i % nx].map.rotate(g);
                    (
                        env.reset_in_frame(&map, reset_seed, g)?,
                        rng_transport(g, RngStream::new(search_seed)),
                    )
                }
                Setting::Different => (
                    env.reset(&splits.eval[i % ny].map, reset_seed)?,
                    RngStream::new(search_seed),
                ),
            };
            returns.push(greedy_episode(model, &env, state, &cfg.mcts, &mut stream)?);
        }
        rows.push(EvalRow {
            variant: model.variant(),
            setting,
            returns,
        });
    }
    Ok(rows)
}

/// Evaluates each checkpoint (default: the trained checkpoint of every
/// variant listed in the config) and writes `eval.csv` and
/// `eval_episodes.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, checkpoints: &[PathBuf]) -> Result<EvalReport, HarnessError> {
    let layout = Layout::new(out);
    let splits = load_splits(out)?;
    let paths: Vec<PathBuf> = if checkpoints.is_empty() {
        cfg.eval.variants.iter().map(|&v| layout.checkpoint(v)).collect()
    } else {
        checkpoints.to_vec()
    };
    let mut report = EvalReport::default();
    for p in &paths {
        let model = load_model(p)?;
        report.rows.extend(evaluate(&model, cfg, &splits)?);
    }
    write_file(&layout.eval_report(), report.summary_csv().as_bytes())?;
    write_file(&layout.eval_episodes(), report.episodes_csv().as_bytes())?;
    Ok(report)
}

/// Audits `cfg.variant`, from a checkpoint or from freshly initialized
/// weights. Failures of the fully equivariant agent are an error; failures
/// of other variants are only reported.
pub fn cmd_audit(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>) -> Result<AuditReport, HarnessError> {
    let model = match checkpoint {
        Some(p) => load_model(p)?,
        None => WorldModel::new(cfg.model.clone(), cfg.variant)?,
    };
    let report = audit::run_audit(&model, &cfg.env, &cfg.mcts, &cfg.audit)?;
    write_file(&Layout::new(out).audit(model.variant()), report.to_string().as_bytes())?;
    if model.variant().is_fully_equivariant() && report.failed() > 0 {
        return Err(HarnessError::AuditFailed {
            failed: report.failed(),
            total: report.cases.len(),
        });
    }
    Ok(report)
}

/// Renders each CSV to `out_dir/<stem>.svg`.
pub fn cmd_plot(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::with_capacity(inputs.len());
    for input in inputs {
        let svg = plot::render_csv(input, &read_file(input)?)?;
        let stem = input.file_stem().map_or_else(|| "plot".into(), |s| s.to_string_lossy().into_owned());
        let path = out_dir.join(format!("{stem}.svg"));
        write_file(&path, svg.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
