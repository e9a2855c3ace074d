//! Stage orchestration. Each command ensures its upstream artifacts exist
//! (computing them on a miss) and never rewrites a fresh artifact.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use diffmia::attack::{
    attack_single, load_bundle, save_bundle, train_quantile, AttackerBag, BagTrainer, MarginalBaseline,
    QuantileRegressor, RegressorConfig, RegressorRecord, VerdictCube,
};
use diffmia::datagen::{flatten_batch, generate, split_with, DatasetKind, Example, ScoreCache};
use diffmia::diffusion::{score_dataset, train, Checkpoint, DiffusionModel};
use diffmia::eval::{
    bagging_sweep, binomial_interval, mann_whitney, mean_std, roc_from_cubes, roc_from_scores, roc_from_verdicts,
    score_histograms, variance_cdf, write_histograms_csv, BagRun, LinePlot, MannWhitney, RocCurve, Series, SweepRow,
};
use diffmia::ndcore::{SgdConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::workspace::{
    config_hash, csv_writer, inspect, require_fresh, write_atomic, write_provenance, ArtifactState, Provenance,
    Workspace, SCHEMA_VERSION,
};

/// Config hash of every stage; each one folds in its parent's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hashes {
    pub data: String,
    pub model: String,
    pub scores: String,
    pub attack: String,
    pub report: String,
}

impl Hashes {
    pub fn of(cfg: &RunConfig) -> CliResult<Self> {
        let data = config_hash("data", None, &cfg.dataset)?;
        let model = config_hash("model", Some(&data), &cfg.diffusion)?;
        let scores = config_hash("scores", Some(&model), &cfg.score_t())?;
        let mut attack_settings = cfg.attack.clone();
        // Scoring settings are covered by the parent hash; batch size never changes a score.
        attack_settings.score_t = None;
        attack_settings.score_batch = 0;
        let attack = config_hash("attack", Some(&scores), &(attack_settings, cfg.heads()?))?;
        let report = config_hash("report", Some(&attack), &cfg.eval)?;
        Ok(Self {
            data,
            model,
            scores,
            attack,
            report,
        })
    }
}

/// Which split subset to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Members,
    Public,
    Holdout,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Members, Subset::Public, Subset::Holdout];

    pub fn name(self) -> &'static str {
        match self {
            Subset::Members => "members",
            Subset::Public => "public",
            Subset::Holdout => "holdout",
        }
    }

    fn label(self) -> Option<bool> {
        Some(self == Subset::Members)
    }
}

/// What a command did for one artifact.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub stage: String,
    pub dir: PathBuf,
    pub cache_hit: bool,
}

impl std::fmt::Display for StageOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = if self.cache_hit { "cache hit" } else { "computed" };
        write!(f, "{}: {what} ({})", self.stage, self.dir.display())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub kind: DatasetKind,
    pub n: usize,
    pub dims: [usize; 3],
    pub seed: u64,
    pub members: Vec<u64>,
    pub public: Vec<u64>,
    pub holdout: Vec<u64>,
}

/// The three split subsets, each sorted by example id.
#[derive(Clone, Debug)]
pub struct Split {
    pub members: Vec<Example>,
    pub public: Vec<Example>,
    pub holdout: Vec<Example>,
}

impl Split {
    pub fn get(&self, s: Subset) -> &[Example] {
        match s {
            Subset::Members => &self.members,
            Subset::Public => &self.public,
            Subset::Holdout => &self.holdout,
        }
    }
}

/// Examples, flattened features, and scores of one subset, aligned by id.
#[derive(Clone, Debug)]
pub struct Scored {
    pub ids: Vec<u64>,
    pub features: Tensor,
    pub scores: Vec<f64>,
}

fn align(examples: &[Example], cache: &ScoreCache) -> CliResult<Scored> {
    let cache = cache.sorted();
    let ids: Vec<u64> = examples.iter().map(|e| e.id).collect();
    if cache.len() != ids.len() || cache.records().iter().zip(&ids).any(|(r, &id)| r.id != id) {
        return Err(CliError::validation("score cache does not cover the split subset it belongs to"));
    }
    Ok(Scored {
        features: flatten_batch(&examples.iter().collect::<Vec<_>>())?,
        scores: cache.scores(),
        ids,
    })
}

/// One row of the TPR@FPR table, aggregated over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TprRow {
    pub attack: String,
    pub fpr: f64,
    pub mean_tpr: f64,
    pub std_tpr: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub attack: String,
    pub alpha: f64,
    pub run: usize,
    pub holdout_fpr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub score_t: usize,
    pub members: usize,
    pub public: usize,
    pub holdout: usize,
    pub heads: usize,
    pub trunk_width: usize,
    pub trunk_params: usize,
    pub m: usize,
    /// Members tested against holdout; members are expected to score lower.
    pub rank_test: MannWhitney,
    pub separated: bool,
    pub raw_score_auc: f64,
    pub tpr_at_fpr: Vec<TprRow>,
    pub calibration: Vec<CalibrationRow>,
}

impl EvalReport {
    pub fn tpr(&self, attack: &str, fpr: f64) -> Option<&TprRow> {
        self.tpr_at_fpr.iter().find(|r| r.attack == attack && r.fpr == fpr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub population: String,
    pub m: usize,
    pub mean_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub sweep: Vec<SweepRow>,
    pub variance_alpha: f64,
    pub variance: Vec<VarianceRow>,
}

impl AblationReport {
    pub fn sweep_row(&self, m: usize, trunk_width: usize, fpr: f64) -> Option<&SweepRow> {
        self.sweep
            .iter()
            .find(|r| r.m == m && r.trunk_width == trunk_width && r.fpr == fpr)
    }

    pub fn variance(&self, population: &str, m: usize) -> Option<f64> {
        self.variance
            .iter()
            .find(|r| r.population == population && r.m == m)
            .map(|r| r.mean_variance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub scoring_seconds: f64,
    pub scored_examples: usize,
    pub learning_seconds: f64,
    pub bag_members: usize,
    pub diffusion_training_seconds: f64,
    /// Learning time as a fraction of diffusion training time.
    pub learning_fraction: f64,
}

/// Everything the attack stages share once upstream artifacts are loaded.
struct AttackInputs {
    members: Scored,
    public: Scored,
    holdout: Scored,
    heads: Vec<f64>,
    widths: Vec<usize>,
}

pub struct Pipeline {
    cfg: RunConfig,
    ws: Workspace,
    force: bool,
    hashes: Hashes,
}

impl Pipeline {
    /// Validates the config, creates the workspace, and takes its lock.
    pub fn open(cfg: RunConfig, workspace: Option<&Path>, force: bool) -> CliResult<Self> {
        cfg.validate()?;
        let hashes = Hashes::of(&cfg)?;
        let root = workspace.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.workspace.clone());
        let ws = Workspace::open(&root)?;
        Ok(Self { cfg, ws, force, hashes })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn hashes(&self) -> &Hashes {
        &self.hashes
    }

    pub fn data_dir(&self) -> PathBuf {
        self.ws.stage_dir("data", &self.hashes.data)
    }

    pub fn model_dir(&self) -> PathBuf {
        self.ws.stage_dir("models", &self.hashes.model)
    }

    pub fn scores_dir(&self) -> PathBuf {
        self.ws.stage_dir("scores", &self.hashes.scores)
    }

    pub fn attack_dir(&self) -> PathBuf {
        self.ws.stage_dir("attackers", &self.hashes.attack)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.ws.stage_dir("reports", &self.hashes.report)
    }

    /// Runs `body` unless `dir` already holds a fresh artifact for `hash`.
    fn stage(
        &self,
        name: &str,
        dir: PathBuf,
        hash: &str,
        parent: Option<&str>,
        body: impl FnOnce(&Path) -> CliResult<Option<f64>>,
    ) -> CliResult<StageOutcome> {
        match inspect(&dir, hash)? {
            ArtifactState::Fresh(_) => {
                return Ok(StageOutcome {
                    stage: name.into(),
                    dir,
                    cache_hit: true,
                })
            }
            ArtifactState::Stale(why) if !self.force => {
                return Err(CliError::validation(format!(
                    "{name}: stale artifact at {} ({why}); rerun with --force to rebuild",
                    dir.display()
                )))
            }
            _ => {}
        }
        fs::create_dir_all(&dir)?;
        let seconds = body(&dir)?;
        write_provenance(
            &dir,
            &Provenance {
                schema_version: SCHEMA_VERSION,
                stage: name.into(),
                config_hash: hash.into(),
                parent_hash: parent.map(String::from),
                seconds,
            },
        )?;
        log::info!("{name}: wrote {}", dir.display());
        Ok(StageOutcome {
            stage: name.into(),
            dir,
            cache_hit: false,
        })
    }

    pub fn gen_data(&self) -> CliResult<StageOutcome> {
        let d = &self.cfg.dataset;
        let hash = self.hashes.data.clone();
        self.stage("gen-data", self.data_dir(), &hash, None, |dir| {
            let data = generate(d.kind, d.n, d.dims(), d.seed)?;
            let split = split_with(data, d.members, d.public_fraction, d.split_seed)?;
            let ids = |v: &[Example]| {
                let mut ids: Vec<u64> = v.iter().map(|e| e.id).collect();
                ids.sort_unstable();
                ids
            };
            let manifest = DataManifest {
                schema_version: SCHEMA_VERSION,
                config_hash: hash.clone(),
                kind: d.kind,
                n: d.n,
                dims: d.dims,
                seed: d.seed,
                members: ids(&split.members),
                public: ids(&split.public),
                holdout: ids(&split.holdout),
            };
            write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
            Ok(None)
        })
    }

    /// Regenerates the examples and partitions them as the manifest says.
    pub fn load_split(&self) -> CliResult<Split> {
        self.gen_data()?;
        let dir = self.data_dir();
        require_fresh(&dir, &self.hashes.data, self.force)?;
        let m: DataManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let d = &self.cfg.dataset;
        if m.kind != d.kind || m.n != d.n || m.dims != d.dims || m.seed != d.seed {
            return Err(CliError::validation(format!("data manifest in {} disagrees with config", dir.display())));
        }
        let mut data = generate(m.kind, m.n, d.dims(), m.seed)?;
        data.sort_by_key(|e| e.id);
        let pick = |ids: &[u64]| -> CliResult<Vec<Example>> {
            let set: HashSet<u64> = ids.iter().copied().collect();
            let out: Vec<Example> = data.iter().filter(|e| set.contains(&e.id)).cloned().collect();
            if out.len() != ids.len() {
                return Err(CliError::validation("data manifest names unknown example ids"));
            }
            Ok(out)
        };
        Ok(Split {
            members: pick(&m.members)?,
            public: pick(&m.public)?,
            holdout: pick(&m.holdout)?,
        })
    }

    /// Single-shot training; there is no resume.
    pub fn train_dm(&self) -> CliResult<StageOutcome> {
        let split = self.load_split()?;
        let f = &self.cfg.diffusion;
        let hash = self.hashes.model.clone();
        let parent = self.hashes.data.clone();
        self.stage("train-dm", self.model_dir(), &hash, Some(&parent), |dir| {
            let dim = self.cfg.dataset.dims().numel();
            let mut model = DiffusionModel::new(&f.model(), dim, f.init_seed)?;
            let start = Instant::now();
            let curve = train(&mut model, &split.members, &f.train, f.log_every)?;
            let seconds = start.elapsed().as_secs_f64();
            if let (Some(a), Some(b)) = (curve.initial(), curve.last()) {
                log::info!("train-dm: loss {a:.4} -> {b:.4} in {seconds:.1}s");
            }
            let mut w = csv_writer(&dir.join("loss.csv"))?;
            w.write_record(["step", "loss"])?;
            for p in &curve.points {
                w.write_record([p.step.to_string(), p.loss.to_string()])?;
            }
            w.flush()?;
            let ck = model.to_checkpoint(f.train.seed, f.train.steps);
            write_atomic(&dir.join("checkpoint.json"), &serde_json::to_vec(&ck)?)?;
            Ok(Some(seconds))
        })
    }

    pub fn load_model(&self) -> CliResult<(DiffusionModel, Provenance)> {
        self.train_dm()?;
        let dir = self.model_dir();
        let prov = require_fresh(&dir, &self.hashes.model, self.force)?
            .ok_or_else(|| CliError::validation(format!("no usable checkpoint in {}", dir.display())))?;
        let ck: Checkpoint = serde_json::from_slice(&fs::read(dir.join("checkpoint.json"))?)?;
        Ok((DiffusionModel::from_checkpoint(&ck)?, prov))
    }

    fn score_file(&self, s: Subset) -> PathBuf {
        self.scores_dir().join(format!("{}.csv", s.name()))
    }

    pub fn score(&self, subsets: &[Subset]) -> CliResult<Vec<StageOutcome>> {
        let dir = self.scores_dir();
        let hash = &self.hashes.scores;
        let stale = match inspect(&dir, hash)? {
            ArtifactState::Stale(why) if !self.force => {
                return Err(CliError::validation(format!(
                    "score: stale artifact at {} ({why}); rerun with --force to rebuild",
                    dir.display()
                )))
            }
            ArtifactState::Stale(_) => true,
            _ => false,
        };
        let todo: Vec<Subset> = subsets
            .iter()
            .copied()
            .filter(|&s| stale || !self.score_file(s).exists())
            .collect();
        let mut out = Vec::new();
        if !todo.is_empty() {
            let split = self.load_split()?;
            let (model, _) = self.load_model()?;
            fs::create_dir_all(&dir)?;
            write_provenance(
                &dir,
                &Provenance {
                    schema_version: SCHEMA_VERSION,
                    stage: "score".into(),
                    config_hash: hash.clone(),
                    parent_hash: Some(self.hashes.model.clone()),
                    seconds: None,
                },
            )?;
            for &s in &todo {
                let cache = score_dataset(
                    &model,
                    split.get(s),
                    self.cfg.score_t(),
                    self.cfg.attack.score_batch,
                    s.label(),
                )?;
                let path = self.score_file(s);
                let tmp = path.with_extension("tmp");
                cache.save(&tmp)?;
                fs::rename(&tmp, &path)?;
            }
        }
        for &s in subsets {
            out.push(StageOutcome {
                stage: format!("score {}", s.name()),
                dir: self.score_file(s),
                cache_hit: !todo.contains(&s),
            });
        }
        Ok(out)
    }

    pub fn load_scores(&self, s: Subset) -> CliResult<ScoreCache> {
        self.score(&[s])?;
        require_fresh(&self.scores_dir(), &self.hashes.scores, self.force)?;
        Ok(ScoreCache::load(&self.score_file(s))?)
    }

    fn attack_inputs(&self) -> CliResult<AttackInputs> {
        let split = self.load_split()?;
        self.score(&Subset::ALL)?;
        let scored = |s: Subset| -> CliResult<Scored> { align(split.get(s), &self.load_scores(s)?) };
        let heads = self.cfg.heads()?;
        let input = self.cfg.dataset.dims().numel();
        let widths = self
            .cfg
            .attack
            .trunk_params
            .iter()
            .map(|&p| RegressorConfig::width_for_params(p, input, heads.len(), self.cfg.attack.blocks))
            .collect();
        Ok(AttackInputs {
            members: scored(Subset::Members)?,
            public: scored(Subset::Public)?,
            holdout: scored(Subset::Holdout)?,
            heads,
            widths,
        })
    }

    fn net(&self, width: usize) -> RegressorConfig {
        RegressorConfig {
            width,
            blocks: self.cfg.attack.blocks,
            transform: self.cfg.attack.transform,
        }
    }

    fn bag_dir(&self, width: usize, master_seed: u64) -> PathBuf {
        self.attack_dir().join(format!("bag_w{width}_s{master_seed}"))
    }

    fn train_bag(&self, inp: &AttackInputs, width: usize, master_seed: u64) -> CliResult<AttackerBag> {
        let net = self.net(width);
        let trainer = BagTrainer {
            features: &inp.public.features,
            scores: &inp.public.scores,
            alphas: &inp.heads,
            net: &net,
            sgd: &self.cfg.attack.train,
        };
        Ok(trainer.train(self.cfg.attack.m, master_seed)?)
    }

    /// Loads the bag bundle for `(width, seed)` or trains and saves it.
    fn ensure_bag(&self, inp: &AttackInputs, width: usize, master_seed: u64) -> CliResult<AttackerBag> {
        let dir = self.bag_dir(width, master_seed);
        if dir.join("manifest.json").exists() {
            let (manifest, bag) = load_bundle(&dir)?;
            let current = manifest.config_hash == self.hashes.attack
                && manifest.m == self.cfg.attack.m
                && manifest.trunk_width == width
                && manifest.alphas == inp.heads;
            if current {
                return Ok(bag);
            }
            if !self.force {
                return Err(CliError::validation(format!(
                    "stale bag bundle at {}; rerun with --force to rebuild",
                    dir.display()
                )));
            }
        }
        let start = Instant::now();
        let bag = self.train_bag(inp, width, master_seed)?;
        log::info!(
            "trained bag w{width} s{master_seed} ({} members) in {:.2}s",
            bag.len(),
            start.elapsed().as_secs_f64()
        );
        save_bundle(&dir, &bag, &self.net(width), &self.cfg.attack.train, &self.hashes.attack)?;
        Ok(bag)
    }

    /// Single attacker trained on the whole public set with one head per
    /// decision level, used for FPR calibration.
    fn ensure_calibration_attacker(&self, inp: &AttackInputs, master_seed: u64) -> CliResult<QuantileRegressor> {
        let path = self.attack_dir().join(format!("single_s{master_seed}.json"));
        if path.exists() {
            let rec: RegressorRecord = serde_json::from_slice(&fs::read(&path)?)?;
            return Ok(QuantileRegressor::from_record(&rec)?);
        }
        let mut alphas = self.cfg.attack.alphas.clone();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        let input = self.cfg.dataset.dims().numel();
        let width = RegressorConfig::width_for_params(self.cfg.attack.trunk_params[0], input, alphas.len(), self.cfg.attack.blocks);
        let sgd = SgdConfig {
            seed: master_seed,
            ..self.cfg.attack.train.clone()
        };
        let reg = train_quantile(&inp.public.features, &inp.public.scores, &alphas, &self.net(width), &sgd)?;
        fs::create_dir_all(self.attack_dir())?;
        write_atomic(&path, &serde_json::to_vec(&reg.to_record(master_seed, sgd.steps))?)?;
        Ok(reg)
    }

    /// Trains the primary bag and writes per-example decisions over members
    /// and holdout.
    pub fn attack(&self) -> CliResult<StageOutcome> {
        let inp = self.attack_inputs()?;
        let hash = self.hashes.attack.clone();
        let parent = self.hashes.scores.clone();
        let a = &self.cfg.attack;
        self.stage("attack", self.attack_dir(), &hash, Some(&parent), |dir| {
            let start = Instant::now();
            let bag = self.ensure_bag(&inp, inp.widths[0], a.master_seed)?;
            let seconds = start.elapsed().as_secs_f64();
            let mut w = csv_writer(&dir.join("decisions.csv"))?;
            let mut header = vec!["id".to_string(), "set".into(), "score".into()];
            for &alpha in &a.alphas {
                header.push(format!("votes@{alpha}"));
                header.push(format!("in@{alpha}"));
            }
            w.write_record(&header)?;
            for (set, s) in [("members", &inp.members), ("holdout", &inp.holdout)] {
                for (i, &id) in s.ids.iter().enumerate() {
                    let mut row = vec![id.to_string(), set.to_string(), s.scores[i].to_string()];
                    for &alpha in &a.alphas {
                        let d = bag.decide(s.scores[i], s.features.row(i), alpha)?;
                        row.push(d.votes.to_string());
                        row.push(u8::from(d.verdict.is_in()).to_string());
                    }
                    w.write_record(&row)?;
                }
            }
            w.flush()?;
            Ok(Some(seconds))
        })
    }

    fn seeds(&self) -> Vec<u64> {
        (0..self.cfg.eval.seeds as u64)
            .map(|i| self.cfg.attack.master_seed.wrapping_add(i))
            .collect()
    }

    fn runs_for(&self, inp: &AttackInputs, width: usize) -> CliResult<Vec<BagRun>> {
        self.seeds()
            .into_iter()
            .map(|s| {
                let bag = self.ensure_bag(inp, width, s)?;
                Ok(BagRun {
                    members: bag.verdicts(&inp.members.features, &inp.members.scores)?,
                    holdout: bag.verdicts(&inp.holdout.features, &inp.holdout.scores)?,
                })
            })
            .collect()
    }

    /// TPR@FPR tables, ROC curves, calibration, histograms, and a JSON summary.
    pub fn evaluate(&self) -> CliResult<EvalReport> {
        self.attack()?;
        let inp = self.attack_inputs()?;
        let dir = self.report_dir().join("evaluate");
        let hash = self.hashes.report.clone();
        let parent = self.hashes.attack.clone();
        self.stage("evaluate", dir.clone(), &hash, Some(&parent), |dir| {
            let report = self.compute_evaluation(&inp, dir)?;
            write_atomic(&dir.join("summary.json"), &serde_json::to_vec_pretty(&report)?)?;
            Ok(None)
        })?;
        Ok(serde_json::from_slice(&fs::read(dir.join("summary.json"))?)?)
    }

    fn compute_evaluation(&self, inp: &AttackInputs, dir: &Path) -> CliResult<EvalReport> {
        let e = &self.cfg.eval;
        let m = self.cfg.attack.m;
        let (ms, hs) = (&inp.members.scores, &inp.holdout.scores);
        let rank_test = mann_whitney(ms, hs)?;
        let raw = roc_from_scores(ms, hs)?;

        let marginal = MarginalBaseline::fit(&inp.public.scores, &inp.heads)?;
        let sweep = |s: &[f64]| -> Vec<Vec<bool>> {
            (0..inp.heads.len())
                .map(|k| s.iter().map(|&v| marginal.is_in(v, k)).collect())
                .collect()
        };
        let marginal_roc = roc_from_verdicts(&sweep(ms), &sweep(hs))?;

        let runs = self.runs_for(inp, inp.widths[0])?;
        let curves = |mm: usize| -> CliResult<Vec<RocCurve>> {
            runs.iter().map(|r| Ok(roc_from_cubes(&r.members, &r.holdout, mm)?)).collect()
        };
        let single = curves(1)?;
        let bag = curves(m)?;

        let mut table = Vec::new();
        for &fpr in &e.fpr_targets {
            table.push(TprRow {
                attack: "marginal".into(),
                fpr,
                mean_tpr: marginal_roc.tpr_at_fpr(fpr),
                std_tpr: 0.0,
                runs: 1,
            });
            for (name, cs) in [("single", &single), ("bag", &bag)] {
                let v: Vec<f64> = cs.iter().map(|c| c.tpr_at_fpr(fpr)).collect();
                let (mean_tpr, std_tpr) = mean_std(&v);
                table.push(TprRow {
                    attack: name.into(),
                    fpr,
                    mean_tpr,
                    std_tpr,
                    runs: v.len(),
                });
            }
        }
        let mut w = csv_writer(&dir.join("tpr_at_fpr.csv"))?;
        for r in &table {
            w.serialize(r)?;
        }
        w.flush()?;

        let mut w = csv_writer(&dir.join("roc.csv"))?;
        w.write_record(["attack", "run", "fpr", "tpr"])?;
        let mut named: Vec<(&str, usize, &RocCurve)> = vec![("raw_score", 0, &raw), ("marginal", 0, &marginal_roc)];
        named.extend(single.iter().enumerate().map(|(i, c)| ("single", i, c)));
        named.extend(bag.iter().enumerate().map(|(i, c)| ("bag", i, c)));
        for (name, run, c) in &named {
            for (x, y) in &c.points {
                w.write_record([name.to_string(), run.to_string(), x.to_string(), y.to_string()])?;
            }
        }
        w.flush()?;

        let calibration = self.calibration(inp, &runs)?;
        let mut w = csv_writer(&dir.join("calibration.csv"))?;
        for r in &calibration {
            w.serialize(r)?;
        }
        w.flush()?;

        let (hm, hh) = score_histograms(ms, hs, e.hist_bins)?;
        write_histograms_csv(fs::File::create(dir.join("histogram.csv"))?, &hm, &hh)?;

        let mut plot = LinePlot::new("ROC", "false positive rate", "true positive rate");
        plot.log_x = true;
        for (name, c) in [("marginal", &marginal_roc), ("single", &single[0]), ("bag", &bag[0])] {
            plot.series.push(Series {
                name: name.into(),
                points: c.points.iter().copied().filter(|p| p.0 > 0.0).collect(),
                step: true,
            });
        }
        fs::write(dir.join("roc.svg"), plot.to_svg())?;
        let mut plot = LinePlot::new("-ln t-error", "-ln score", "count");
        for (name, h) in [("members", &hm), ("holdout", &hh)] {
            plot.series.push(Series {
                name: name.into(),
                points: h.counts.iter().enumerate().map(|(k, &c)| (h.edges[k], c as f64)).collect(),
                step: true,
            });
        }
        fs::write(dir.join("histogram.svg"), plot.to_svg())?;

        Ok(EvalReport {
            schema_version: SCHEMA_VERSION,
            config_hash: self.hashes.report.clone(),
            score_t: self.cfg.score_t(),
            members: ms.len(),
            public: inp.public.scores.len(),
            holdout: hs.len(),
            heads: inp.heads.len(),
            trunk_width: inp.widths[0],
            trunk_params: self.net(inp.widths[0]).param_count(inp.members.features.shape()[1], inp.heads.len()),
            m,
            separated: rank_test.smaller_at(e.significance),
            rank_test,
            raw_score_auc: raw.auc(),
            tpr_at_fpr: table,
            calibration,
        })
    }

    fn calibration(&self, inp: &AttackInputs, runs: &[BagRun]) -> CliResult<Vec<CalibrationRow>> {
        let e = &self.cfg.eval;
        let n = inp.holdout.scores.len();
        let mut rows = Vec::new();
        for (run, seed) in self.seeds().into_iter().enumerate() {
            let reg = self.ensure_calibration_attacker(inp, seed)?;
            for &alpha in &self.cfg.attack.alphas {
                let (ci_lo, ci_hi) = binomial_interval(n, alpha, e.interval_level)?;
                let mut hits = 0;
                for i in 0..n {
                    let d = attack_single(&reg, inp.holdout.scores[i], inp.holdout.features.row(i), alpha)?;
                    hits += usize::from(d.verdict.is_in());
                }
                let bag_fpr = {
                    let k = level_index(&runs[run].holdout, alpha)?;
                    runs[run].holdout.in_rate(self.cfg.attack.m, k)
                };
                for (attack, holdout_fpr) in [("single", hits as f64 / n as f64), ("bag", bag_fpr)] {
                    rows.push(CalibrationRow {
                        attack: attack.into(),
                        alpha,
                        run,
                        holdout_fpr,
                        ci_lo,
                        ci_hi,
                        within: holdout_fpr >= ci_lo && holdout_fpr <= ci_hi,
                    });
                }
            }
        }
        Ok(rows)
    }

    /// Bag-size and trunk-size sweeps plus per-example verdict variance.
    pub fn ablate(&self) -> CliResult<AblationReport> {
        self.attack()?;
        let inp = self.attack_inputs()?;
        let dir = self.report_dir().join("ablate");
        let hash = self.hashes.report.clone();
        let parent = self.hashes.attack.clone();
        self.stage("ablate", dir.clone(), &hash, Some(&parent), |dir| {
            let report = self.compute_ablation(&inp, dir)?;
            write_atomic(&dir.join("summary.json"), &serde_json::to_vec_pretty(&report)?)?;
            Ok(None)
        })?;
        Ok(serde_json::from_slice(&fs::read(dir.join("summary.json"))?)?)
    }

    fn compute_ablation(&self, inp: &AttackInputs, dir: &Path) -> CliResult<AblationReport> {
        let e = &self.cfg.eval;
        let mut by_trunk = Vec::new();
        for &w in &inp.widths {
            by_trunk.push((w, self.runs_for(inp, w)?));
        }
        let sweep = bagging_sweep(&by_trunk, &e.ablation_m, &e.fpr_targets)?;
        let input = inp.members.features.shape()[1];
        let mut w = csv_writer(&dir.join("ablation.csv"))?;
        w.write_record(["m", "trunk_width", "trunk_params", "fpr", "mean_tpr", "std_tpr", "runs"])?;
        for r in &sweep {
            let params = self.net(r.trunk_width).param_count(input, inp.heads.len());
            w.write_record([
                r.m.to_string(),
                r.trunk_width.to_string(),
                params.to_string(),
                r.fpr.to_string(),
                r.mean_tpr.to_string(),
                r.std_tpr.to_string(),
                r.runs.to_string(),
            ])?;
        }
        w.flush()?;

        let runs = &by_trunk[0].1[..e.repetitions];
        let k = level_index(&runs[0].holdout, e.variance_alpha)?;
        let mut variance = Vec::new();
        let mut cdf_out = csv_writer(&dir.join("variance_cdf.csv"))?;
        cdf_out.write_record(["population", "m", "variance", "cdf"])?;
        let mut cdf_plot = LinePlot::new("per-example verdict variance", "variance", "CDF");
        for &mm in &e.ablation_m {
            let verdicts = |c: &VerdictCube| -> Vec<bool> { (0..c.examples).map(|i| c.verdict(mm, i, k).is_in()).collect() };
            let pops: [(&str, Vec<Vec<bool>>); 3] = [
                ("members", runs.iter().map(|r| verdicts(&r.members)).collect()),
                ("holdout", runs.iter().map(|r| verdicts(&r.holdout)).collect()),
                (
                    "all",
                    runs.iter()
                        .map(|r| {
                            let mut v = verdicts(&r.members);
                            v.extend(verdicts(&r.holdout));
                            v
                        })
                        .collect(),
                ),
            ];
            for (name, pop) in &pops {
                let cdf = variance_cdf(pop, 101)?;
                for (x, y) in cdf.grid.iter().zip(&cdf.cdf) {
                    cdf_out.write_record([name.to_string(), mm.to_string(), x.to_string(), y.to_string()])?;
                }
                if *name == "all" {
                    cdf_plot.series.push(Series {
                        name: format!("m = {mm}"),
                        points: cdf.grid.iter().copied().zip(cdf.cdf.iter().copied()).collect(),
                        step: true,
                    });
                }
                variance.push(VarianceRow {
                    population: name.to_string(),
                    m: mm,
                    mean_variance: cdf.mean(),
                });
            }
        }
        cdf_out.flush()?;
        let mut w = csv_writer(&dir.join("variance.csv"))?;
        for r in &variance {
            w.serialize(r)?;
        }
        w.flush()?;
        fs::write(dir.join("variance.svg"), cdf_plot.to_svg())?;

        let mut plot = LinePlot::new("bag size", "m", "mean TPR");
        for &(width, _) in &by_trunk {
            for &fpr in &e.fpr_targets {
                plot.series.push(Series {
                    name: format!("w{width} @ FPR {fpr}"),
                    points: sweep
                        .iter()
                        .filter(|r| r.trunk_width == width && r.fpr == fpr)
                        .map(|r| (r.m as f64, r.mean_tpr))
                        .collect(),
                    step: false,
                });
            }
        }
        fs::write(dir.join("ablation.svg"), plot.to_svg())?;

        Ok(AblationReport {
            schema_version: SCHEMA_VERSION,
            config_hash: self.hashes.report.clone(),
            sweep,
            variance_alpha: e.variance_alpha,
            variance,
        })
    }

    /// Times score computation for the public set and training of one full
    /// bag, next to the recorded diffusion training time. Always re-measured.
    pub fn bench_prep(&self) -> CliResult<BenchReport> {
        let split = self.load_split()?;
        let (model, prov) = self.load_model()?;
        let inp = self.attack_inputs()?;
        let start = Instant::now();
        let public = score_dataset(&model, &split.public, self.cfg.score_t(), self.cfg.attack.score_batch, None)?;
        let scoring_seconds = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let bag = self.train_bag(&inp, inp.widths[0], self.cfg.attack.master_seed)?;
        let learning_seconds = start.elapsed().as_secs_f64();
        let diffusion_training_seconds = prov.seconds.unwrap_or(f64::NAN);
        let report = BenchReport {
            schema_version: SCHEMA_VERSION,
            config_hash: self.hashes.report.clone(),
            scoring_seconds,
            scored_examples: public.len(),
            learning_seconds,
            bag_members: bag.len(),
            diffusion_training_seconds,
            learning_fraction: learning_seconds / diffusion_training_seconds,
        };
        let dir = self.report_dir().join("bench");
        fs::create_dir_all(&dir)?;
        let mut w = csv_writer(&dir.join("bench.csv"))?;
        w.write_record(["step", "seconds", "items"])?;
        w.write_record(["scoring".to_string(), scoring_seconds.to_string(), public.len().to_string()])?;
        w.write_record(["learning".to_string(), learning_seconds.to_string(), bag.len().to_string()])?;
        w.flush()?;
        write_atomic(&dir.join("bench.json"), &serde_json::to_vec_pretty(&report)?)?;
        Ok(report)
    }
}

fn level_index(cube: &VerdictCube, alpha: f64) -> CliResult<usize> {
    cube.alphas
        .iter()
        .position(|&a| a == alpha)
        .ok_or_else(|| CliError::validation(format!("level {alpha} is not among the attacker heads")))
}
