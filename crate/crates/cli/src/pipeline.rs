//! The staged experiment runner. Every stage reads its inputs from the
//! output directory, verifies them against the artifact manifest, writes its
//! own files, and records their hashes, so the whole pipeline can be stopped,
//! resumed, and audited file by file.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ansat_core::ansat::feature_table;
use ansat_core::ansat::{read_feature_table, write_feature_table};
use ansat_core::attribution::{attribute_corpus, read_cache, write_cache};
use ansat_core::classifier::{
    read_ledger, train, write_ledger, ClassifierParams, Hyperparams, LedgerRow, TransferInit,
    LEDGER_HEADER,
};
use ansat_core::evaluation::{
    budget_search, rmse_curve, write_budget_curves, write_report, write_rmse_curve, BudgetCurve,
    RmseCurveRow, SUMMARY_TOLERANCES,
};
use ansat_core::regressor::{
    collapse_best_per_pair, cross_validate, fit, write_predictions, FeatureMode, PairSample,
    PredictionRow,
};
use ansat_core::tasks::{
    generate_synthetic, load_corpus, load_split, save_corpus, save_split, split_corpus, Corpus,
    Split,
};
use ansat_core::{seed, Error, Result};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::manifest::{sha256_file, Manifest};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SPLIT_FILE: &str = "split.csv";
pub const SINGLES_LEDGER: &str = "singles_ledger.csv";
pub const SINGLES_BEST: &str = "singles_best.csv";
pub const PAIRS_LEDGER: &str = "pairs_ledger.csv";
pub const FEATURES_FILE: &str = "ansat_features.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const RMSE_FILE: &str = "rmse_curve.csv";
pub const BUDGET_FILE: &str = "budget_curve.csv";
pub const REPORT_DIR: &str = "report";

const SINGLES_PARTIAL: &str = "singles_ledger.partial.csv";
const PAIRS_PARTIAL: &str = "pairs_ledger.partial.csv";

pub fn checkpoint_rel(task: &str) -> String {
    format!("checkpoints/single_{task}.json")
}

pub fn cache_rel(task: &str) -> String {
    format!("attr_{task}.jsonl")
}

pub fn model_rel(mode: FeatureMode) -> String {
    let slug = match mode {
        FeatureMode::F1Only => "f1",
        FeatureMode::F1Ansat => "f1_ansat",
    };
    format!("models/gbt_{slug}.json")
}

/// What a stage did when invoked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub ran: bool,
    pub summary: String,
}

impl StageOutcome {
    fn ran(summary: String) -> Self {
        StageOutcome { ran: true, summary }
    }

    fn current() -> Self {
        StageOutcome {
            ran: false,
            summary: "up to date".into(),
        }
    }
}

/// The best single-task model of one task, as recorded in `singles_best.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct BestRow {
    pub task: String,
    pub run_id: String,
    pub hyperparams: Hyperparams,
    pub positive_f1: f64,
    pub accuracy: f64,
    pub checkpoint_path: String,
}

const BEST_HEADER: &str = "task,run_id,lr,epochs,batch,seed,positive_f1,accuracy,checkpoint_path";

pub struct Pipeline {
    cfg: PipelineConfig,
    out: PathBuf,
    pool: Option<rayon::ThreadPool>,
}

pub type Stage = fn(&Pipeline) -> Result<StageOutcome>;

pub const STAGES: [(&str, Stage); 8] = [
    ("synth", Pipeline::synth),
    ("train-singles", Pipeline::train_singles),
    ("train-pairs", Pipeline::train_pairs),
    ("attribute", Pipeline::attribute),
    ("ansat", Pipeline::ansat),
    ("fit", Pipeline::fit_models),
    ("evaluate", Pipeline::evaluate),
    ("report", Pipeline::report),
];

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.out_dir.clone();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let pool = if cfg.jobs > 0 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.jobs)
                .build()
                .map_err(|e| Error::validation(format!("cannot build worker pool: {e}")))?;
            Some(pool)
        } else {
            None
        };
        Ok(Pipeline { cfg, out, pool })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    fn load_pipeline_corpus(&self) -> Result<Corpus> {
        let mut corpus = load_corpus(&self.out.join(CORPUS_FILE))?;
        load_split(&mut corpus, &self.out.join(SPLIT_FILE))?;
        Ok(corpus)
    }

    fn sorted_tasks(corpus: &Corpus) -> Vec<String> {
        let mut tasks: Vec<String> = corpus.task_ids().into_iter().map(str::to_string).collect();
        tasks.sort_unstable();
        tasks
    }

    pub fn synth(&self) -> Result<StageOutcome> {
        let mut manifest = Manifest::load(&self.out)?;
        let mut slice = serde_json::to_string(&(
            &self.cfg.corpus,
            self.cfg.test_fraction,
            self.cfg.seed,
        ))
        .expect("config serializes");
        // An external corpus is identified by content, not by path.
        if let Some(path) = &self.cfg.corpus.path {
            slice.push_str(&sha256_file(path)?);
        }
        if let Some(path) = &self.cfg.corpus.split {
            slice.push_str(&sha256_file(path)?);
        }
        let fp = manifest.fingerprint(&slice, &[])?;
        if manifest.is_current(&self.out, "synth", &fp) {
            return Ok(StageOutcome::current());
        }

        let corpus = match &self.cfg.corpus.path {
            Some(path) => {
                let mut corpus = load_corpus(path)?;
                match &self.cfg.corpus.split {
                    Some(split_path) => {
                        load_split(&mut corpus, split_path)?;
                        corpus
                    }
                    None => split_corpus(
                        &corpus,
                        self.cfg.test_fraction,
                        seed::derive(self.cfg.seed, "split"),
                    )?,
                }
            }
            None => {
                let synth_cfg = self.cfg.corpus.synthetic.to_synthetic_config(self.cfg.seed)?;
                let corpus = generate_synthetic(&synth_cfg)?;
                split_corpus(
                    &corpus,
                    self.cfg.test_fraction,
                    seed::derive(self.cfg.seed, "split"),
                )?
            }
        };
        save_corpus(&corpus, &self.out.join(CORPUS_FILE))?;
        save_split(&corpus, &self.out.join(SPLIT_FILE))?;
        manifest.record(
            &self.out,
            "synth",
            fp,
            &[CORPUS_FILE.to_string(), SPLIT_FILE.to_string()],
        )?;
        manifest.save(&self.out)?;
        Ok(StageOutcome::ran(format!(
            "{} tasks, {} documents",
            corpus.tasks.len(),
            corpus.documents.len()
        )))
    }

    /// Rows already persisted by a finished or interrupted earlier run.
    fn completed_runs(&self, final_name: &str, partial_name: &str) -> Result<BTreeMap<String, LedgerRow>> {
        let mut rows = BTreeMap::new();
        for name in [final_name, partial_name] {
            let path = self.out.join(name);
            if path.exists() {
                for row in read_ledger(&path)? {
                    rows.insert(row.run_id.clone(), row);
                }
            }
        }
        Ok(rows)
    }

    fn open_partial(&self, name: &str) -> Result<Mutex<fs::File>> {
        let path = self.out.join(name);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        if len == 0 {
            writeln!(file, "{LEDGER_HEADER}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(Mutex::new(file))
    }

    fn append_partial(partial: &Mutex<fs::File>, row: &LedgerRow) -> Result<()> {
        let mut file = partial.lock().expect("partial ledger lock");
        writeln!(file, "{}", row.to_csv_line())
            .and_then(|()| file.flush())
            .map_err(|e| Error::io("ledger", e))
    }

    pub fn train_singles(&self) -> Result<StageOutcome> {
        let mut manifest = Manifest::load(&self.out)?;
        manifest.check_upstream(&self.out, &["synth"])?;
        let slice = serde_json::to_string(&(&self.cfg.grid, &self.cfg.model, self.cfg.seed))
            .expect("config serializes");
        let fp = manifest.fingerprint(&slice, &["synth"])?;
        if manifest.is_current(&self.out, "train-singles", &fp) {
            return Ok(StageOutcome::current());
        }

        let corpus = self.load_pipeline_corpus()?;
        let tasks = Self::sorted_tasks(&corpus);
        let dims = self.cfg.model_dims();

        struct Unit {
            run_id: String,
            task: String,
            hp: Hyperparams,
        }
        let mut units = Vec::new();
        for task in &tasks {
            for (idx, hp) in self.cfg.grid_points(&format!("single-{task}")).into_iter().enumerate()
            {
                units.push(Unit {
                    run_id: format!("single-{task}-{idx:02}"),
                    task: task.clone(),
                    hp,
                });
            }
        }

        let done = self.completed_runs(SINGLES_LEDGER, SINGLES_PARTIAL)?;
        let pending: Vec<&Unit> = units.iter().filter(|u| !done.contains_key(&u.run_id)).collect();
        let partial = self.open_partial(SINGLES_PARTIAL)?;

        let fresh: BTreeMap<String, (LedgerRow, ClassifierParams)> = self.install(|| {
            pending
                .par_iter()
                .map(|unit| {
                    let model = train(&corpus, &unit.task, unit.hp, dims, None)?;
                    let row = LedgerRow::from_run(unit.run_id.clone(), &model.run);
                    Self::append_partial(&partial, &row)?;
                    Ok((unit.run_id.clone(), (row, model.params)))
                })
                .collect::<Result<_>>()
        })?;

        // Canonical ledger order and best-per-task selection. Rows reused
        // from an interrupted run carry no weights; the winner is retrained
        // (deterministically) if its checkpoint has to be materialized.
        let mut rows: Vec<LedgerRow> = units
            .iter()
            .map(|u| {
                fresh
                    .get(&u.run_id)
                    .map(|(row, _)| row.clone())
                    .or_else(|| done.get(&u.run_id).cloned())
                    .expect("every unit is trained or reused")
            })
            .collect();

        fs::create_dir_all(self.out.join("checkpoints"))
            .map_err(|e| Error::io(self.out.join("checkpoints"), e))?;
        let mut best_rows = Vec::new();
        let mut outputs = vec![SINGLES_LEDGER.to_string(), SINGLES_BEST.to_string()];
        for task in &tasks {
            let (best_idx, _) = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.target == *task && r.source.is_none())
                .max_by(|(ai, a), (bi, b)| {
                    a.positive_f1
                        .partial_cmp(&b.positive_f1)
                        .expect("finite F1")
                        .then(bi.cmp(ai))
                })
                .expect("every task has runs");
            let unit = &units[best_idx];
            let params = match fresh.get(&unit.run_id) {
                Some((_, params)) => params.clone(),
                None => train(&corpus, &unit.task, unit.hp, dims, None)?.params,
            };
            let rel = checkpoint_rel(task);
            params.save(&self.out.join(&rel))?;
            rows[best_idx].checkpoint_path = Some(rel.clone());
            best_rows.push(BestRow {
                task: task.clone(),
                run_id: unit.run_id.clone(),
                hyperparams: unit.hp,
                positive_f1: rows[best_idx].positive_f1,
                accuracy: rows[best_idx].accuracy,
                checkpoint_path: rel.clone(),
            });
            outputs.push(rel);
        }

        write_ledger(&rows, &self.out.join(SINGLES_LEDGER))?;
        self.write_best(&best_rows)?;
        let _ = fs::remove_file(self.out.join(SINGLES_PARTIAL));

        manifest.record(&self.out, "train-singles", fp, &outputs)?;
        manifest.save(&self.out)?;
        Ok(StageOutcome::ran(format!(
            "{} runs ({} new), best of {} tasks selected",
            units.len(),
            pending.len(),
            tasks.len()
        )))
    }

    fn write_best(&self, rows: &[BestRow]) -> Result<()> {
        let path = self.out.join(SINGLES_BEST);
        let mut text = String::from(BEST_HEADER);
        text.push('\n');
        for r in rows {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.task,
                r.run_id,
                r.hyperparams.learning_rate,
                r.hyperparams.epochs,
                r.hyperparams.batch_size,
                r.hyperparams.seed,
                r.positive_f1,
                r.accuracy,
                r.checkpoint_path
            ));
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read_best(&self) -> Result<Vec<BestRow>> {
        let path = self.out.join(SINGLES_BEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut rows = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if idx == 0 {
                if line.trim() != BEST_HEADER {
                    return Err(Error::Parse {
                        path,
                        line: 1,
                        message: "unexpected header".into(),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 9 {
                return Err(Error::Parse {
                    path,
                    line: idx + 1,
                    message: format!("expected 9 fields, got {}", fields.len()),
                });
            }
            let parse_err = |what: &str| Error::Parse {
                path: path.clone(),
                line: idx + 1,
                message: format!("bad {what}"),
            };
            rows.push(BestRow {
                task: fields[0].to_string(),
                run_id: fields[1].to_string(),
                hyperparams: Hyperparams {
                    learning_rate: fields[2].parse().map_err(|_| parse_err("lr"))?,
                    epochs: fields[3].parse().map_err(|_| parse_err("epochs"))?,
                    batch_size: fields[4].parse().map_err(|_| parse_err("batch"))?,
                    seed: fields[5].parse().map_err(|_| parse_err("seed"))?,
                },
                positive_f1: fields[6].parse().map_err(|_| parse_err("positive_f1"))?,
                accuracy: fields[7].parse().map_err(|_| parse_err("accuracy"))?,
                checkpoint_path: fields[8].to_string(),
            });
        }
        Ok(rows)
    }

    fn load_checkpoints(&self, best: &[BestRow]) -> Result<BTreeMap<String, ClassifierParams>> {
        best.iter()
            .map(|b| {
                let params = ClassifierParams::load(&self.out.join(&b.checkpoint_path))?;
                Ok((b.task.clone(), params))
            })
            .collect()
    }

    pub fn train_pairs(&self) -> Result<StageOutcome> {
        let mut manifest = Manifest::load(&self.out)?;
        manifest.check_upstream(&self.out, &["synth", "train-singles"])?;
        let slice = serde_json::to_string(&(&self.cfg.grid, &self.cfg.model, self.cfg.seed))
            .expect("config serializes");
        let fp = manifest.fingerprint(&slice, &["synth", "train-singles"])?;
        if manifest.is_current(&self.out, "train-pairs", &fp) {
            return Ok(StageOutcome::current());
        }

        let corpus = self.load_pipeline_corpus()?;
        let tasks = Self::sorted_tasks(&corpus);
        let dims = self.cfg.model_dims();
        let best: BTreeMap<String, BestRow> = self
            .read_best()?
            .into_iter()
            .map(|b| (b.task.clone(), b))
            .collect();
        let checkpoints = self.load_checkpoints(&best.values().cloned().collect::<Vec<_>>())?;

        struct Unit {
            run_id: String,
            source: String,
            target: String,
            hp: Hyperparams,
        }
        let mut units = Vec::new();
        for source in &tasks {
            for target in &tasks {
                if source == target {
                    continue;
                }
                let points = self.cfg.grid_points(&format!("pair-{source}-{target}"));
                for (idx, hp) in points.into_iter().enumerate() {
                    units.push(Unit {
                        run_id: format!("pair-{source}-{target}-{idx:02}"),
                        source: source.clone(),
                        target: target.clone(),
                        hp,
                    });
                }
            }
        }

        let done = self.completed_runs(PAIRS_LEDGER, PAIRS_PARTIAL)?;
        let pending: Vec<&Unit> = units.iter().filter(|u| !done.contains_key(&u.run_id)).collect();
        let partial = self.open_partial(PAIRS_PARTIAL)?;

        let fresh: BTreeMap<String, LedgerRow> = self.install(|| {
            pending
                .par_iter()
                .map(|unit| {
                    let source_best = &best[&unit.source];
                    let transfer = TransferInit {
                        source_task: &unit.source,
                        params: &checkpoints[&unit.source],
                        source_hyperparams: source_best.hyperparams,
                    };
                    let model = train(&corpus, &unit.target, unit.hp, dims, Some(transfer))?;
                    let row = LedgerRow::from_run(unit.run_id.clone(), &model.run);
                    Self::append_partial(&partial, &row)?;
                    Ok((unit.run_id.clone(), row))
                })
                .collect::<Result<_>>()
        })?;

        let rows: Vec<LedgerRow> = units
            .iter()
            .map(|u| {
                fresh
                    .get(&u.run_id)
                    .cloned()
                    .or_else(|| done.get(&u.run_id).cloned())
                    .expect("every unit is trained or reused")
            })
            .collect();
        write_ledger(&rows, &self.out.join(PAIRS_LEDGER))?;
        let _ = fs::remove_file(self.out.join(PAIRS_PARTIAL));

        manifest.record(&self.out, "train-pairs", fp, &[PAIRS_LEDGER.to_string()])?;
        manifest.save(&self.out)?;
        let n_pairs = tasks.len() * (tasks.len() - 1);
        Ok(StageOutcome::ran(format!(
            "{} ordered pairs, {} runs ({} new)",
            n_pairs,
            units.len(),
            pending.len()
        )))
    }

    pub fn attribute(&self) -> Result<StageOutcome> {
        let mut manifest = Manifest::load(&self.out)?;
        manifest.check_upstream(&self.out, &["synth", "train-singles"])?;
        let slice = serde_json::to_string(&(&self.cfg.attribution, self.cfg.seed))
            .expect("config serializes");
        let fp = manifest.fingerprint(&slice, &["synth", "train-singles"])?;
        if manifest.is_current(&self.out, "attribute", &fp) {
            return Ok(StageOutcome::current());
        }

        let corpus = self.load_pipeline_corpus()?;
        let tasks = Self::sorted_tasks(&corpus);
        // Every test document that is positive for at least one task; the
        // feature table later needs scores from every model on all of them.
        let mut docs: Vec<&_> = corpus
            .documents
            .iter()
            .filter(|d| {
                corpus.doc_split(&d.id) == Split::Test
                    && tasks.iter().any(|t| d.is_positive_for(t))
            })
            .collect();
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        let best = self.read_best()?;
        let ig = self.cfg.ig_config();

        let gap_sums: Vec<(f64, usize)> = self.install(|| {
            best.par_iter()
                .map(|b| {
                    let params = ClassifierParams::load(&self.out.join(&b.checkpoint_path))?;
                    let records =
                        attribute_corpus(&params, &corpus, &docs, &b.task, &b.run_id, ig)?;
                    let gap_total: f64 = records.iter().map(|r| r.completeness_gap).sum();
                    let count = records.len();
                    write_cache(&records, &self.out.join(cache_rel(&b.task)))?;
                    Ok((gap_total, count))
                })
                .collect::<Result<_>>()
        })?;

        let total: f64 = gap_sums.iter().map(|(g, _)| g).sum();
        let count: usize = gap_sums.iter().map(|(_, n)| n).sum();
        let mean_gap = total / count.max(1) as f64;

        let outputs: Vec<String> = tasks.iter().map(|t| cache_rel(t)).collect();
        manifest.record(&self.out, "attribute", fp, &outputs)?;
        manifest.save(&self.out)?;
        Ok(StageOutcome::ran(format!(
            "{} models x {} documents, mean completeness gap {mean_gap:.2e}",
            best.len(),
            docs.len()
        )))
    }

    pub fn ansat(&self) -> Result<StageOutcome> {
        let mut manifest = Manifest::load(&self.out)?;
        manifest.check_upstream(&self.out, &["synth", "attribute"])?;
        let slice =
            serde_json::to_string(&self.cfg.ansat.tat_thresholds).expect("config serializes");
        let fp = manifest.fingerprint(&slice, &["synth", "attribute"])?;
        if manifest.is_current(&self.out, "ansat", &fp) {
            return Ok(StageOutcome::current());
        }

        let corpus = self.load_pipeline_corpus()?;
        let tasks = Self::sorted_tasks(&corpus);
        let mut cache = Vec::new();
        for task in &tasks {
            cache.extend(read_cache(&self.out.join(cache_rel(task)))?);
        }
        let grid = self.cfg.tat_grid();
        let features = feature_table(&corpus, &cache, &grid)?;
        write_feature_table(&features, &grid, &self.out.join(FEATURES_FILE))?;

        manifest.record(&self.out, "ansat", fp, &[FEATURES_FILE.to_string()])?;
        manifest.save(&self.out)?;
        Ok(StageOutcome::ran(format!(
            "{} pairs x {} thresholds x 3 docsets",
            features.len(),
            grid.len()
        )))
    }

    /// Regression samples built from the pair ledger, the best-singles table,
    /// and the ANSAT features, in ledger order.
    pub fn assemble_samples(&self) -> Result<Vec<PairSample>> {
        let ledger = read_ledger(&self.out.join(PAIRS_LEDGER))?;
        let best = self.read_best()?;
        let f1: BTreeMap<&str, f64> = best.iter().map(|b| (b.task.as_str(), b.positive_f1)).collect();
        let features = read_feature_table(&self.out.join(FEATURES_FILE), &self.cfg.tat_grid())?;
        let flat: BTreeMap<(String, String), Vec<f64>> = features
            .into_iter()
            .map(|f| ((f.task_a.clone(), f.task_b.clone()), f.flat_values()))
            .collect();

        let mut samples = Vec::with_capacity(ledger.len());
        for row in ledger {
            let source = row.source.clone().ok_or_else(|| {
                Error::validation(format!("pair run {} has no source task", row.run_id))
            })?;
            let f1_source = *f1.get(source.as_str()).ok_or_else(|| {
                Error::Incomplete(format!("no best single model for task {source}"))
            })?;
            let f1_target = *f1.get(row.target.as_str()).ok_or_else(|| {
                Error::Incomplete(format!("no best single model for task {}", row.target))
            })?;
            let ansat_features = flat
                .get(&(source.clone(), row.target.clone()))
                .ok_or_else(|| {
                    Error::Incomplete(format!(
                        "no ANSAT features for pair ({source}, {})",
                        row.target
                    ))
                })?
                .clone();
            samples.push(PairSample {
                source,
                target: row.target,
                f1_source,
                f1_target,
                ansat_features,
                label_f1: row.positive_f1,
                runtime_seconds: row.runtime_seconds,
            });
        }
        if self.cfg.collapse_samples() {
            samples = collapse_best_per_pair(&samples);
        }
        Ok(samples)
    }

    pub fn fit_models(&self) -> Result<StageOutcome> {
        let mut manifest = Manifest::load(&self.out)?;
        manifest.check_upstream(&self.out, &["train-singles", "train-pairs", "ansat"])?;
        let slice = serde_json::to_string(&(
            &self.cfg.regressor,
            &self.cfg.feature_modes,
            &self.cfg.sample_mode,
            self.cfg.seed,
        ))
        .expect("config serializes");
        let fp = manifest.fingerprint(&slice, &["train-singles", "train-pairs", "ansat"])?;
        if manifest.is_current(&self.out, "fit", &fp) {
            return Ok(StageOutcome::current());
        }

        let samples = self.assemble_samples()?;
        let modes = self.cfg.parsed_feature_modes()?;
        let gbt = self.cfg.gbt_config();

        fs::create_dir_all(self.out.join("models"))
            .map_err(|e| Error::io(self.out.join("models"), e))?;
        let mut outputs = vec![PREDICTIONS_FILE.to_string()];
        let mut rows: Vec<PredictionRow> = Vec::new();
        for &mode in &modes {
            rows.extend(cross_validate(&samples, mode, &gbt)?);
            let model = fit(&samples, mode, &gbt)?;
            let rel = model_rel(mode);
            model.save(&self.out.join(&rel))?;
            outputs.push(rel);
        }
        write_predictions(&rows, &self.out.join(PREDICTIONS_FILE))?;

        manifest.record(&self.out, "fit", fp, &outputs)?;
        manifest.save(&self.out)?;
        Ok(StageOutcome::ran(format!(
            "{} samples, {} feature modes cross-validated",
            samples.len(),
            modes.len()
        )))
    }

    /// The evaluation tables, recomputed from the persisted predictions and
    /// pair ledger.
    fn analysis_tables(&self) -> Result<(Vec<RmseCurveRow>, Vec<BudgetCurve>)> {
        let predictions =
            ansat_core::regressor::read_predictions(&self.out.join(PREDICTIONS_FILE))?;
        let ledger = read_ledger(&self.out.join(PAIRS_LEDGER))?;
        let modes = self.cfg.parsed_feature_modes()?;
        let budget_mode = self.cfg.parsed_budget_mode()?;

        let pools: Vec<(FeatureMode, Vec<PredictionRow>)> = modes
            .iter()
            .map(|&mode| {
                let rows: Vec<PredictionRow> = predictions
                    .iter()
                    .filter(|r| r.feature_mode == mode)
                    .cloned()
                    .collect();
                (mode, rows)
            })
            .collect();
        let rmse_rows = rmse_curve(&pools, &self.cfg.ks)?;
        let curves = pools
            .iter()
            .map(|(_, rows)| budget_search(rows, &ledger, &self.cfg.ks, budget_mode))
            .collect::<Result<Vec<_>>>()?;
        Ok((rmse_rows, curves))
    }

    pub fn evaluate(&self) -> Result<StageOutcome> {
        let mut manifest = Manifest::load(&self.out)?;
        manifest.check_upstream(&self.out, &["fit", "train-pairs"])?;
        let slice = serde_json::to_string(&(&self.cfg.ks, &self.cfg.budget_mode))
            .expect("config serializes");
        let fp = manifest.fingerprint(&slice, &["fit", "train-pairs"])?;
        if manifest.is_current(&self.out, "evaluate", &fp) {
            return Ok(StageOutcome::current());
        }

        let (rmse_rows, curves) = self.analysis_tables()?;
        write_rmse_curve(&rmse_rows, &self.out.join(RMSE_FILE))?;
        write_budget_curves(&curves, &self.out.join(BUDGET_FILE))?;

        manifest.record(
            &self.out,
            "evaluate",
            fp,
            &[RMSE_FILE.to_string(), BUDGET_FILE.to_string()],
        )?;
        manifest.save(&self.out)?;
        Ok(StageOutcome::ran(format!(
            "{} feature modes x {} depths",
            curves.len(),
            self.cfg.ks.len()
        )))
    }

    pub fn report(&self) -> Result<StageOutcome> {
        let mut manifest = Manifest::load(&self.out)?;
        manifest.check_upstream(&self.out, &["train-pairs", "fit", "evaluate"])?;
        let slice = serde_json::to_string(&self.cfg.seed).expect("config serializes");
        let fp = manifest.fingerprint(&slice, &["train-pairs", "fit", "evaluate"])?;
        if manifest.is_current(&self.out, "report", &fp) {
            return Ok(StageOutcome::current());
        }

        let (rmse_rows, curves) = self.analysis_tables()?;

        // The experiment record: seed, the full configuration with the
        // execution-only knobs blanked, then every artifact hash.
        let mut experiment = self.cfg.clone();
        experiment.out_dir = PathBuf::new();
        experiment.jobs = 0;
        let mut lines = vec![
            format!("seed: {}", self.cfg.seed),
            format!(
                "config: {}",
                serde_json::to_string(&experiment).expect("config serializes")
            ),
            String::new(),
        ];
        for (stage, record) in &manifest.stages {
            for (rel, digest) in &record.outputs {
                lines.push(format!("sha256 {digest}  {rel} ({stage})"));
            }
        }

        let report_dir = self.out.join(REPORT_DIR);
        write_report(&report_dir, &rmse_rows, &curves, &SUMMARY_TOLERANCES, &lines)?;

        let outputs: Vec<String> = ["rmse_curve.csv", "budget_curve.csv", "summary.json", "manifest.txt"]
            .iter()
            .map(|f| format!("{REPORT_DIR}/{f}"))
            .collect();
        manifest.record(&self.out, "report", fp, &outputs)?;
        manifest.save(&self.out)?;
        Ok(StageOutcome::ran(format!("bundle written to {}", report_dir.display())))
    }
}
