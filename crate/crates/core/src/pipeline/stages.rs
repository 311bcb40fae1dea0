//! Stage runners. Each stage reads upstream artifacts from the workspace,
//! writes its own directory and a `manifest.json` listing format version
//! and content hashes of its outputs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::labels::read_labels;
use super::split::{family_split, Assignment};
use super::store::{self, Store};
use super::{write_atomic, PipelineError, Stage};
use crate::bytecode::{keccak256, CodeHash, HASH_ALGORITHM};
use crate::enrichment::{lift_table, tail_label_shares, Labels, LiftTable, PatternKind};
use crate::features::StructuralFeatures;
use crate::incident::{align, alignment_csv, alignment_report, parse_incidents, IncidentError};
use crate::metrics::{error_percentiles, length_binned_errors, tail_errors, BinnedErrorReport, ErrorPercentiles, EvalReport, Prediction};
use crate::model::train::{predict, EpochRecord};
use crate::model::{score_corpus, train_loop, Checkpoint, Example, FeatureStats, ScoreInput, Target};
use crate::records::{ScoreRecord, ScoreSource, ScoredChain};
use crate::reuse::{overlap_matrix, reuse_clusters, PairOverlap};
use crate::triage::{build_queues, quantile, secondary_rank, transfer_report, EntryFlag, QueueSpec, SecondaryContext, TriageQueue};

pub const FORMAT_VERSION: u32 = 1;
pub const FAMILY_THRESHOLD: &str = "exact-skeleton";

/// Fixed artifact layout under the `--out` directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.root.join(match stage {
            Stage::Ingest => "store",
            Stage::Extract => "features",
            Stage::Train => "model",
            Stage::Score => "scores",
            Stage::Queues => "queues",
            Stage::Transfer => "transfer",
            Stage::Enrich => "enrich",
            Stage::Reuse => "reuse",
            Stage::Align => "align",
            Stage::Report => "report",
        })
    }

    pub fn artifact(&self, stage: Stage, name: &str) -> PathBuf {
        self.dir(stage).join(name)
    }

    fn require(&self, stage: Stage, name: &str) -> Result<PathBuf, PipelineError> {
        let p = self.artifact(stage, name);
        if p.exists() {
            Ok(p)
        } else {
            Err(PipelineError::StageDependency {
                stage,
                artifact: format!("{}/{}", self.dir(stage).file_name().unwrap().to_string_lossy(), name),
            })
        }
    }
}

/// Per-invocation inputs that are not part of the config.
#[derive(Debug, Clone, Default)]
pub struct StageArgs {
    /// Corpus file for `ingest`.
    pub input: Option<PathBuf>,
    /// Label file for `train`.
    pub labels: Option<PathBuf>,
    /// Incident file for `align`.
    pub incidents: Option<PathBuf>,
    /// Restrict `ingest` and `score` to one chain.
    pub chain: Option<String>,
    /// Source chain for `transfer`; overrides the config.
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub outputs: Vec<String>,
    pub message: String,
}

#[derive(Debug, Serialize)]
struct StageManifest<'a> {
    stage: &'a str,
    format_version: u32,
    hash_algorithm: &'a str,
    outputs: BTreeMap<String, String>,
}

fn hash_hex(data: &[u8]) -> String {
    format!("0x{}", hex::encode(keccak256(data)))
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|e| PipelineError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    write_atomic(path, &w.into_inner().expect("flush"))
}

fn finish(ws: &Workspace, stage: Stage, files: &[&str], message: String) -> Result<StageSummary, PipelineError> {
    let mut outputs = BTreeMap::new();
    for f in files {
        outputs.insert(f.to_string(), hash_hex(&read(&ws.artifact(stage, f))?));
    }
    let m = StageManifest { stage: stage.as_str(), format_version: FORMAT_VERSION, hash_algorithm: HASH_ALGORITHM, outputs };
    write_json(&ws.artifact(stage, "manifest.json"), &m)?;
    log::info!("{stage}: {message}");
    Ok(StageSummary {
        stage: stage.as_str().into(),
        outputs: files.iter().map(|f| ws.artifact(stage, f).display().to_string()).collect(),
        message,
    })
}

pub fn run(stage: Stage, ws: &Workspace, cfg: &PipelineConfig, args: &StageArgs) -> Result<StageSummary, PipelineError> {
    match stage {
        Stage::Ingest => run_ingest(ws, cfg, args),
        Stage::Extract => run_extract(ws, cfg),
        Stage::Train => run_train(ws, cfg, args),
        Stage::Score => run_score(ws, cfg, args),
        Stage::Queues => run_queues(ws, cfg),
        Stage::Transfer => run_transfer(ws, cfg, args),
        Stage::Enrich => run_enrich(ws, cfg),
        Stage::Reuse => run_reuse(ws, cfg),
        Stage::Align => run_align(ws, cfg, args),
        Stage::Report => run_report(ws, cfg),
    }
}

fn load_store(ws: &Workspace) -> Result<Store, PipelineError> {
    ws.require(Stage::Ingest, store::CONTRACTS_FILE)?;
    Store::load(&ws.dir(Stage::Ingest))
}

fn run_ingest(ws: &Workspace, cfg: &PipelineConfig, args: &StageArgs) -> Result<StageSummary, PipelineError> {
    let input = args
        .input
        .as_ref()
        .ok_or_else(|| PipelineError::Validation("ingest needs an input corpus file".into()))?;
    let (st, log) = store::ingest(input, &ws.dir(Stage::Ingest), args.chain.as_deref(), cfg.ingest.abort_fraction)?;
    write_json(&ws.root.join("logs").join("ingest.json"), &log)?;
    finish(
        ws,
        Stage::Ingest,
        &[store::CONTRACTS_FILE, store::INDEX_FILE],
        format!(
            "{} rows, {} malformed, {} new contracts, {} stored",
            log.rows,
            log.malformed.len(),
            log.new_contracts,
            st.len()
        ),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureLine {
    chain: String,
    canonical_hash: CodeHash,
    features: StructuralFeatures,
}

type FeatureMap = BTreeMap<(String, CodeHash), StructuralFeatures>;

fn run_extract(ws: &Workspace, cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let st = load_store(ws)?;
    let mut out = String::new();
    for c in st.iter() {
        let f = StructuralFeatures::extract(&c.code()?, &cfg.features);
        let line = FeatureLine { chain: c.chain.clone(), canonical_hash: c.canonical_hash, features: f };
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    }
    write_atomic(&ws.artifact(Stage::Extract, "features.jsonl"), out.as_bytes())?;
    finish(ws, Stage::Extract, &["features.jsonl"], format!("{} contracts", st.len()))
}

fn load_features(ws: &Workspace) -> Result<FeatureMap, PipelineError> {
    let path = ws.require(Stage::Extract, "features.jsonl")?;
    let text = read_text(&path)?;
    let mut m = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let f: FeatureLine = serde_json::from_str(line)
            .map_err(|e| PipelineError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        m.insert((f.chain, f.canonical_hash), f.features);
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub evaluated_on: Option<Assignment>,
    pub split_families: [usize; 3],
    pub split_contracts: [usize; 3],
    pub unmatched_labels: usize,
    pub best_epoch: usize,
    pub report: Option<EvalReport>,
    pub length_bins: Option<BinnedErrorReport>,
    pub error_percentiles: Option<ErrorPercentiles>,
    pub tail_cutoff: Option<f64>,
    pub tail: Option<EvalReport>,
}

fn run_train(ws: &Workspace, cfg: &PipelineConfig, args: &StageArgs) -> Result<StageSummary, PipelineError> {
    let st = load_store(ws)?;
    let labels_path = args
        .labels
        .as_ref()
        .ok_or_else(|| PipelineError::Validation("train needs a label file".into()))?;
    let mcfg = cfg.model_config()?;
    let labels = read_labels(labels_path, cfg.ingest.abort_fraction)?;
    if labels.k != mcfg.k_features {
        return Err(PipelineError::Validation(format!(
            "label file has {} features, model expects {}",
            labels.k, mcfg.k_features
        )));
    }

    let index = st.address_index();
    let mut labeled: BTreeMap<CodeHash, (&super::StoredContract, Target)> = BTreeMap::new();
    let mut unmatched = 0;
    for row in &labels.rows {
        match index.get(&row.address).and_then(|keys| keys.first()) {
            Some(key) => {
                let c = &st.contracts[key];
                labeled
                    .entry(c.canonical_hash)
                    .or_insert_with(|| (c, Target { s: row.s_tool, f: row.features.clone() }));
            }
            None => unmatched += 1,
        }
    }
    if labeled.is_empty() {
        return Err(PipelineError::Validation("no label row matches a stored contract".into()));
    }

    let items: Vec<(CodeHash, CodeHash)> = labeled.iter().map(|(h, (c, _))| (*h, c.skeleton_hash)).collect();
    let split = family_split(&items, cfg.split.ratios, cfg.seed);
    let mut parts: [Vec<Example>; 3] = [vec![], vec![], vec![]];
    for (h, (c, target)) in &labeled {
        let code = c.code()?;
        let a = split.assignment(h).expect("every labeled hash is split");
        parts[a as usize].push(Example {
            tokens: code.segment(mcfg.seg_len, mcfg.n_segments),
            target: target.clone(),
            byte_len: code.bytes.len(),
        });
    }
    let [train, val, test] = parts;
    if train.is_empty() {
        return Err(PipelineError::Validation("training split is empty".into()));
    }
    let stats = FeatureStats::from_rows(train.iter().map(|e| e.target.f.as_slice()), mcfg.k_features)?;
    let outcome = train_loop(&train, &val, &stats, &mcfg)?;

    let (eval_on, eval_set) = if !test.is_empty() {
        (Some(Assignment::Test), &test)
    } else if !val.is_empty() {
        (Some(Assignment::Val), &val)
    } else {
        (None, &test)
    };
    let mut summary = EvalSummary {
        evaluated_on: eval_on,
        split_families: split.family_counts(),
        split_contracts: [train.len(), val.len(), test.len()],
        unmatched_labels: unmatched,
        best_epoch: outcome.best_epoch,
        report: None,
        length_bins: None,
        error_percentiles: None,
        tail_cutoff: None,
        tail: None,
    };
    if !eval_set.is_empty() {
        let outs = predict(&outcome.params, &stats, &mcfg, eval_set)?;
        let y: Vec<f64> = eval_set.iter().map(|e| e.target.s).collect();
        let yh: Vec<f64> = outs.iter().map(|o| o.s_hat).collect();
        let preds: Vec<Prediction> = eval_set
            .iter()
            .zip(&yh)
            .map(|(e, &p)| Prediction { byte_len: e.byte_len, y: e.target.s, y_hat: p })
            .collect();
        summary.report = EvalReport::compute(&y, &yh).ok();
        summary.length_bins = length_binned_errors(&preds).ok();
        summary.error_percentiles = error_percentiles(&y, &yh).ok();
        if y.len() >= 2 {
            let cutoff = quantile(&y, cfg.queues.main_p).ok();
            summary.tail_cutoff = cutoff;
            summary.tail = cutoff.and_then(|c| tail_errors(&preds, c).ok());
        }
    }

    let dir = Stage::Train;
    fs::create_dir_all(ws.dir(dir)).map_err(|e| PipelineError::io(&ws.dir(dir), e))?;
    Checkpoint::new(&mcfg, &stats, &outcome.params).save(&ws.artifact(dir, "checkpoint.json"))?;
    write_json(&ws.artifact(dir, "split.json"), &split)?;
    write_json::<Vec<EpochRecord>>(&ws.artifact(dir, "history.json"), &outcome.history)?;
    write_json(&ws.artifact(dir, "eval.json"), &summary)?;
    finish(
        ws,
        dir,
        &["checkpoint.json", "split.json", "history.json", "eval.json"],
        format!(
            "{} train / {} val / {} test contracts, best epoch {}",
            train.len(),
            val.len(),
            test.len(),
            outcome.best_epoch
        ),
    )
}

const SCORE_HEADER: [&str; 5] = ["chain", "address", "canonical_hash", "score", "source"];

fn run_score(ws: &Workspace, cfg: &PipelineConfig, args: &StageArgs) -> Result<StageSummary, PipelineError> {
    let ck_path = ws.require(Stage::Train, "checkpoint.json")?;
    let st = load_store(ws)?;
    let ck = Checkpoint::load(&ck_path)?;
    let params = ck.parameters()?;
    let want = args.chain.as_deref().map(str::to_ascii_lowercase);
    let contracts: Vec<&super::StoredContract> = st
        .iter()
        .filter(|c| want.as_deref().map_or(true, |w| w == c.chain))
        .collect();
    let codes = contracts.iter().map(|c| c.code()).collect::<Result<Vec<_>, _>>()?;
    let inputs: Vec<ScoreInput> = contracts
        .iter()
        .zip(&codes)
        .map(|(c, code)| ScoreInput { chain: &c.chain, address: c.first_address(), code })
        .collect();
    let (records, tp) = score_corpus(&inputs, &params, &ck.stats, &ck.config, cfg.score.batch)?;
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![r.chain.clone(), r.address.clone(), r.canonical_hash.to_string(), r.score.to_string(), "model".into()]
        })
        .collect();
    write_csv(&ws.artifact(Stage::Score, "scores.csv"), &SCORE_HEADER, &rows)?;
    // wall-clock figures stay outside the manifest and the report bundle
    write_json(&ws.root.join("logs").join("throughput.json"), &tp)?;
    finish(
        ws,
        Stage::Score,
        &["scores.csv"],
        format!("{} contracts, {:.3} ms/contract", records.len(), tp.ms_per_contract),
    )
}

/// Scored chains with every stored deployment address registered.
fn load_scored(ws: &Workspace, st: &Store) -> Result<BTreeMap<String, ScoredChain>, PipelineError> {
    let path = ws.require(Stage::Score, "scores.csv")?;
    let mut rdr = store::csv_reader(&path)?;
    let mut by_chain: BTreeMap<String, Vec<ScoreRecord>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        let bad = |m: &str| PipelineError::Validation(format!("{}: {m}", path.display()));
        if rec.len() != SCORE_HEADER.len() {
            return Err(bad("wrong field count"));
        }
        let r = ScoreRecord {
            chain: rec[0].to_string(),
            address: rec[1].to_string(),
            canonical_hash: rec[2].parse().map_err(|_| bad("bad hash"))?,
            score: rec[3].parse().map_err(|_| bad("bad score"))?,
            source: if &rec[4] == "tool" { ScoreSource::Tool } else { ScoreSource::Model },
        };
        by_chain.entry(r.chain.clone()).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (chain, recs) in by_chain {
        let mut sc = ScoredChain::new(chain.clone(), recs);
        for c in st.iter().filter(|c| c.chain == chain) {
            for a in &c.addresses {
                sc.add_alias(a, &c.canonical_hash);
            }
        }
        out.insert(chain, sc);
    }
    if out.is_empty() {
        return Err(PipelineError::Validation("scores.csv holds no records".into()));
    }
    Ok(out)
}

fn chain_features<'a>(feats: &'a FeatureMap, chain: &str) -> Vec<(CodeHash, &'a StructuralFeatures)> {
    feats
        .range((chain.to_string(), CodeHash([0; 32]))..=(chain.to_string(), CodeHash([0xff; 32])))
        .map(|((_, h), f)| (*h, f))
        .collect()
}

/// Selector and opcode lift of the chain's main tail against the chain.
fn chain_lifts(
    sc: &ScoredChain,
    spec: &QueueSpec,
    feats: &[(CodeHash, &StructuralFeatures)],
    cfg: &PipelineConfig,
) -> (Option<LiftTable>, Option<LiftTable>) {
    let tail: HashSet<CodeHash> = sc
        .records
        .iter()
        .filter(|r| r.score >= spec.main_cutoff)
        .map(|r| r.canonical_hash)
        .collect();
    let all: Vec<&StructuralFeatures> = feats.iter().map(|(_, f)| *f).collect();
    let tail_f: Vec<&StructuralFeatures> = feats.iter().filter(|(h, _)| tail.contains(h)).map(|(_, f)| *f).collect();
    (
        lift_table(&tail_f, &all, PatternKind::Selector, &cfg.enrichment).ok(),
        lift_table(&tail_f, &all, PatternKind::Opcode, &cfg.enrichment).ok(),
    )
}

const QUEUE_HEADER: [&str; 8] = [
    "chain",
    "address",
    "canonical_hash",
    "score",
    "within_chain_percentile",
    "tier",
    "priority",
    "flags",
];

fn flag_str(f: &EntryFlag) -> &'static str {
    match f {
        EntryFlag::MissingFeature => "missing_feature",
        EntryFlag::DegenerateDistribution => "degenerate_distribution",
    }
}

fn run_queues(ws: &Workspace, cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let st = load_store(ws)?;
    let scored = load_scored(ws, &st)?;
    let feats = load_features(ws)?;
    let reuse: HashSet<CodeHash> = st.cross_chain_hashes().into_iter().collect();
    let mut rows = Vec::new();
    let mut specs = Vec::new();
    for (chain, sc) in &scored {
        let q = build_queues(sc, &cfg.queues).map_err(|e| PipelineError::Validation(e.to_string()))?;
        let cf = chain_features(&feats, chain);
        let (sel_lift, _) = chain_lifts(sc, &q.spec, &cf, cfg);
        let lift: HashMap<_, _> = sel_lift.map(|t| t.selector_lifts()).unwrap_or_default();
        let ctx = SecondaryContext::new(cf.iter().copied(), lift, reuse.clone());
        let emergency = secondary_rank(&q.emergency, &ctx, &cfg.secondary);
        let main = secondary_rank(&q.main, &ctx, &cfg.secondary);
        let watch = secondary_rank(&q.watch, &ctx, &cfg.secondary);
        let in_emergency = emergency.hashes();
        let mut push = |queue: &TriageQueue, skip: &HashSet<CodeHash>| {
            for e in queue.entries.iter().filter(|e| !skip.contains(&e.record.canonical_hash)) {
                rows.push(vec![
                    chain.clone(),
                    e.record.address.clone(),
                    e.record.canonical_hash.to_string(),
                    e.record.score.to_string(),
                    format!("{:.4}", e.percentile),
                    queue.tier.as_str().to_string(),
                    e.priority.map_or(String::new(), |p| format!("{p:.6}")),
                    e.flags.iter().map(flag_str).collect::<Vec<_>>().join(";"),
                ]);
            }
        };
        push(&emergency, &HashSet::new());
        push(&main, &in_emergency);
        push(&watch, &HashSet::new());
        debug_assert!(in_emergency.is_subset(&main.hashes()));
        specs.push(q.spec);
    }
    write_csv(&ws.artifact(Stage::Queues, "queues.csv"), &QUEUE_HEADER, &rows)?;
    write_json(&ws.artifact(Stage::Queues, "queue_specs.json"), &specs)?;
    finish(
        ws,
        Stage::Queues,
        &["queues.csv", "queue_specs.json"],
        format!("{} chains, {} queued contracts", specs.len(), rows.len()),
    )
}

fn run_transfer(ws: &Workspace, cfg: &PipelineConfig, args: &StageArgs) -> Result<StageSummary, PipelineError> {
    let st = load_store(ws)?;
    let scored = load_scored(ws, &st)?;
    let source = args
        .source
        .clone()
        .or_else(|| cfg.transfer.source.clone())
        .unwrap_or_else(|| scored.keys().next().expect("nonempty").clone())
        .to_ascii_lowercase();
    if !scored.contains_key(&source) {
        return Err(PipelineError::Validation(format!("transfer source chain '{source}' has no scores")));
    }
    let rep = transfer_report(&source, &scored, &cfg.queues).map_err(|e| PipelineError::Validation(e.to_string()))?;
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                rep.source_chain.clone(),
                rep.cutoff.to_string(),
                r.target_chain.clone(),
                r.n.to_string(),
                r.tail_count.to_string(),
                format!("{:.4}", r.tail_share),
                r.own_count.to_string(),
                r.delta_n.to_string(),
                format!("{:.2}", r.delta_days),
            ]
        })
        .collect();
    write_csv(
        &ws.artifact(Stage::Transfer, "transfer.csv"),
        &["source_chain", "cutoff", "target_chain", "n", "tail_count", "tail_share_pct", "own_count", "delta_n", "delta_days"],
        &rows,
    )?;
    finish(ws, Stage::Transfer, &["transfer.csv"], format!("source {source}, {} targets", rows.len()))
}

const LIFT_HEADER: [&str; 8] = ["chain", "kind", "pattern", "tail_count", "all_count", "tail_freq", "all_freq", "lift"];

fn lift_rows(chain: &str, t: &LiftTable) -> Vec<Vec<String>> {
    t.rows
        .iter()
        .map(|r| {
            vec![
                chain.to_string(),
                t.kind.as_str().to_string(),
                r.pattern.to_string(),
                r.tail_count.to_string(),
                r.all_count.to_string(),
                format!("{:.6}", r.tail_freq),
                format!("{:.6}", r.all_freq),
                format!("{:.4}", r.lift),
            ]
        })
        .collect()
}

fn run_enrich(ws: &Workspace, cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let st = load_store(ws)?;
    let scored = load_scored(ws, &st)?;
    let feats = load_features(ws)?;
    let mut sel_rows = Vec::new();
    let mut op_rows = Vec::new();
    let mut shares = BTreeMap::new();
    for (chain, sc) in &scored {
        let spec = QueueSpec::from_scores(chain, &sc.scores(), &cfg.queues).map_err(|e| PipelineError::Validation(e.to_string()))?;
        let cf = chain_features(&feats, chain);
        let (sel, ops) = chain_lifts(sc, &spec, &cf, cfg);
        if let Some(t) = sel {
            sel_rows.extend(lift_rows(chain, &t));
        }
        if let Some(t) = ops {
            op_rows.extend(lift_rows(chain, &t));
        }
        let tail: HashSet<CodeHash> = sc
            .records
            .iter()
            .filter(|r| r.score >= spec.main_cutoff)
            .map(|r| r.canonical_hash)
            .collect();
        let all: Vec<Labels> = cf.iter().map(|(_, f)| Labels::from(*f)).collect();
        let tail_l: Vec<Labels> = cf.iter().filter(|(h, _)| tail.contains(h)).map(|(_, f)| Labels::from(*f)).collect();
        shares.insert(chain.clone(), tail_label_shares(&tail_l, &all));
    }
    write_csv(&ws.artifact(Stage::Enrich, "lift_selectors.csv"), &LIFT_HEADER, &sel_rows)?;
    write_csv(&ws.artifact(Stage::Enrich, "lift_opcodes.csv"), &LIFT_HEADER, &op_rows)?;
    write_json(&ws.artifact(Stage::Enrich, "label_shares.json"), &shares)?;
    finish(
        ws,
        Stage::Enrich,
        &["lift_selectors.csv", "lift_opcodes.csv", "label_shares.json"],
        format!("{} selector rows, {} opcode rows", sel_rows.len(), op_rows.len()),
    )
}

#[derive(Debug, Serialize)]
struct ReuseOverlap {
    tail_p: f64,
    chain_sizes: BTreeMap<String, usize>,
    pairs: Vec<PairOverlap>,
}

fn run_reuse(ws: &Workspace, cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let st = load_store(ws)?;
    let scored = load_scored(ws, &st)?;
    let pairs = overlap_matrix(&scored, cfg.queues.main_p).map_err(|e| PipelineError::Validation(e.to_string()))?;
    let overlap = ReuseOverlap {
        tail_p: cfg.queues.main_p,
        chain_sizes: scored.iter().map(|(c, s)| (c.clone(), s.len())).collect(),
        pairs,
    };
    let clusters = reuse_clusters(&scored);
    write_json(&ws.artifact(Stage::Reuse, "reuse_overlap.json"), &overlap)?;
    write_json(&ws.artifact(Stage::Reuse, "clusters.json"), &clusters)?;
    finish(
        ws,
        Stage::Reuse,
        &["reuse_overlap.json", "clusters.json"],
        format!("{} chain pairs, {} clusters", overlap.pairs.len(), clusters.clusters.len()),
    )
}

fn run_align(ws: &Workspace, cfg: &PipelineConfig, args: &StageArgs) -> Result<StageSummary, PipelineError> {
    let st = load_store(ws)?;
    let scored = load_scored(ws, &st)?;
    let path = args
        .incidents
        .as_ref()
        .ok_or_else(|| PipelineError::Validation("align needs an incident file".into()))?;
    let incidents = parse_incidents(&read_text(path)?).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    let res = align(&incidents, &scored, &cfg.queues).map_err(|e| match e {
        IncidentError::Triage(t) => PipelineError::Validation(t.to_string()),
        other => PipelineError::Validation(other.to_string()),
    })?;
    let rows = alignment_report(&res.results);
    write_atomic(&ws.artifact(Stage::Align, "alignment.csv"), alignment_csv(&rows).as_bytes())?;
    write_json(&ws.artifact(Stage::Align, "unmatched.json"), &res.unmatched)?;
    finish(
        ws,
        Stage::Align,
        &["alignment.csv", "unmatched.json"],
        format!("{} rows, {} unmatched addresses", rows.len(), res.unmatched.len()),
    )
}

/// Bundle contents in copy order: `(stage, file)`.
pub const BUNDLE: [(Stage, &str); 9] = [
    (Stage::Queues, "queues.csv"),
    (Stage::Transfer, "transfer.csv"),
    (Stage::Enrich, "lift_selectors.csv"),
    (Stage::Enrich, "lift_opcodes.csv"),
    (Stage::Enrich, "label_shares.json"),
    (Stage::Reuse, "reuse_overlap.json"),
    (Stage::Reuse, "clusters.json"),
    (Stage::Align, "alignment.csv"),
    (Stage::Train, "eval.json"),
];

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    format_version: u32,
    tool_version: &'a str,
    hash_algorithm: &'a str,
    family_threshold: &'a str,
    seed: u64,
    preset: String,
    config: &'a PipelineConfig,
    model: crate::model::ModelConfig,
    chains: BTreeSet<String>,
    files: BTreeMap<String, String>,
}

fn run_report(ws: &Workspace, cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let st = load_store(ws)?;
    let mut files = BTreeMap::new();
    let mut contents = Vec::new();
    for (stage, name) in BUNDLE {
        let data = read(&ws.require(stage, name)?)?;
        files.insert(name.to_string(), hash_hex(&data));
        contents.push((name, data));
    }
    for (name, data) in contents {
        write_atomic(&ws.artifact(Stage::Report, name), &data)?;
    }
    let manifest = RunManifest {
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        hash_algorithm: HASH_ALGORITHM,
        family_threshold: FAMILY_THRESHOLD,
        seed: cfg.seed,
        preset: cfg.preset.to_string(),
        config: cfg,
        model: cfg.model_config()?,
        chains: st.chains(),
        files,
    };
    write_json(&ws.artifact(Stage::Report, "run_manifest.json"), &manifest)?;
    let mut names: Vec<&str> = BUNDLE.iter().map(|(_, n)| *n).collect();
    names.push("run_manifest.json");
    finish(ws, Stage::Report, &names, format!("{} files bundled", names.len()))
}
