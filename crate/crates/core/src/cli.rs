//! Command-line front end. Every command loads models and the probe, reuses
//! cached attribution sets where possible, and writes its results under
//! `--out` with the run configuration embedded.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::attribution::{heatmap, attribute_probe, AttributionMethod, AttributionMode, AttributionSet, DEFAULT_EPSILON, DEFAULT_EXACT_CAP};
use crate::clustering::{agglomerate, dissimilarity_matrix, to_newick, Dissimilarity, Linkage};
use crate::error::Error;
use crate::evaluation::{
    build_relevance, cpc, load_oracle_rankings, pearson, retrieval_report, spearman, write_oracle_rankings, CpcDivisor, DEFAULT_K_REL,
};
use crate::model_io::{load_model, preprocess, ModelSpec};
use crate::model_space::{affinity_matrix, rank_sources, AffinityMatrix, LabeledMatrix, PairFlag, RankingTable};
use crate::probe::{load_probe, sample_probe, write_netpbm, ImageShape, ProbeSet};
use crate::svcca::{correlation_matrix_for_models, DEFAULT_VARIANCE_THRESHOLD};
use crate::synthetic::{generate_family, generate_probe, group_oracle, write_family, write_probe, ArchTemplate, FamilySpec};
use crate::tensor_core::{check_gradient, Tensor, DEFAULT_FD_STEP};

pub const CACHE_DIR: &str = "cache";

#[derive(Debug, Parser)]
#[command(name = "tmspace", version, about = "Rank pre-trained models by attribution-map similarity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Saliency,
    Gradxinput,
    Elrp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "single_pass", alias = "single-pass")]
    SinglePass,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LinkageArg {
    Average,
    Single,
    Complete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DissimilarityArg {
    Inverse,
    OneMinus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CpcDivisorArg {
    Models,
    Bucket,
}

/// Options shared by every pipeline command.
#[derive(Clone, Debug, Args, Serialize)]
pub struct RunArgs {
    /// Probe manifest (JSON).
    #[arg(long)]
    pub probe: PathBuf,
    /// Model bundle directories.
    #[arg(long = "models", num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "elrp")]
    #[serde(skip)]
    pub method: MethodArg,
    /// Stabilizer for elrp.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value = "single_pass")]
    #[serde(skip)]
    pub mode: ModeArg,
    /// Use a seeded random subset of the probe (presets: 100, 400, 800, 1200, 1600, 2000).
    #[arg(long)]
    pub probe_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Oracle ranking file (JSON: target id -> ordered source ids).
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Largest representation dimension allowed in exact mode.
    #[arg(long, default_value_t = DEFAULT_EXACT_CAP)]
    pub exact_cap: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute (or reuse cached) attribution sets for every model.
    Attribute(RunArgs),
    /// Pairwise similarity and distance matrices.
    Affinity(RunArgs),
    /// Rank all other models as sources for one target.
    Rank {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        target: String,
    },
    /// Add one model to an existing affinity matrix.
    Insert {
        #[command(flatten)]
        run: RunArgs,
        /// Bundle of the model to add.
        #[arg(long)]
        new: PathBuf,
    },
    /// P@K / R@K against an oracle, plus agreement with SVCCA.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = DEFAULT_K_REL)]
        k_rel: usize,
        #[arg(long, default_value_t = DEFAULT_VARIANCE_THRESHOLD)]
        variance_threshold: f64,
    },
    /// Pairwise SVCCA correlations of model representations.
    Svcca {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = DEFAULT_VARIANCE_THRESHOLD)]
        variance_threshold: f64,
    },
    /// Agglomerative clustering tree in Newick form.
    Tree {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "average")]
        linkage: LinkageArg,
        #[arg(long, value_enum, default_value = "inverse")]
        dissimilarity: DissimilarityArg,
    },
    /// Correlation-priority curve from SVCCA correlations and an oracle.
    Cpc {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = DEFAULT_VARIANCE_THRESHOLD)]
        variance_threshold: f64,
        #[arg(long, value_enum, default_value = "models")]
        divisor: CpcDivisorArg,
    },
    /// Compare backward passes of each model against finite differences.
    Gradcheck {
        #[command(flatten)]
        run: RunArgs,
        /// Probe images checked per model.
        #[arg(long, default_value_t = 2)]
        images: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write one attribution map as a PGM heatmap.
    ExportMap {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model_id: String,
        #[arg(long, default_value_t = 0)]
        image_index: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a synthetic model family, probe set and group oracle.
    Synth(SynthArgs),
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub groups: usize,
    #[arg(long, default_value_t = 3)]
    pub per_group: usize,
    #[arg(long, default_value_t = 1)]
    pub shared_depth: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub probe_images: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Give every group the same input size.
    #[arg(long)]
    pub homogeneous: bool,
}

/// Command failure with a stable kind, reported as JSON on stderr.
#[derive(Debug)]
pub struct Failure {
    pub kind: String,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

impl Failure {
    pub fn to_json(&self) -> Value {
        json!({ "error": { "kind": self.kind, "message": self.message } })
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

impl RunArgs {
    pub fn method(&self) -> crate::Result<AttributionMethod> {
        match self.method {
            MethodArg::Saliency => Ok(AttributionMethod::Saliency),
            MethodArg::Gradxinput => Ok(AttributionMethod::GradientTimesInput),
            MethodArg::Elrp => AttributionMethod::epsilon_lrp(self.epsilon),
        }
    }

    pub fn mode(&self) -> AttributionMode {
        match self.mode {
            ModeArg::SinglePass => AttributionMode::SinglePass,
            ModeArg::Exact => AttributionMode::Exact,
        }
    }

    fn validate(&self) -> crate::Result<()> {
        self.method()?;
        if self.threads == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        if self.probe_size == Some(0) {
            return Err(Error::InvalidArgument("--probe-size must be positive".into()));
        }
        Ok(())
    }
}

/// Loaded inputs plus the serialized configuration of one run.
struct Run {
    args: RunArgs,
    command: &'static str,
    params: Value,
    models: Vec<ModelSpec>,
    probe: ProbeSet,
    method: AttributionMethod,
    mode: AttributionMode,
}

impl Run {
    fn load(args: &RunArgs, command: &'static str, params: Value) -> crate::Result<Run> {
        args.validate()?;
        let models = args.models.iter().map(|p| load_model(p)).collect::<crate::Result<Vec<_>>>()?;
        let mut probe = load_probe(&args.probe)?;
        if let Some(n) = args.probe_size {
            probe = sample_probe(&probe, n, args.seed)?;
        }
        Ok(Run {
            method: args.method()?,
            mode: args.mode(),
            args: args.clone(),
            command,
            params,
            models,
            probe,
        })
    }

    /// Verbatim run configuration.
    fn config(&self) -> Value {
        let mut v = serde_json::to_value(&self.args).expect("config serializes");
        v["command"] = json!(self.command);
        v["method"] = json!(self.method.short_name());
        v["mode"] = json!(self.mode.to_string());
        v["params"] = self.params.clone();
        v
    }

    /// Hash of everything that determines numeric results: model contents,
    /// probe contents, method, mode, sampling and command parameters. Paths,
    /// thread count and output location are excluded.
    fn config_hash(&self) -> String {
        let content = json!({
            "models": self.models.iter().map(|m| &m.fingerprint).collect::<Vec<_>>(),
            "probe_checksum": self.probe.checksum_hex(),
            "method": self.method,
            "mode": self.mode.to_string(),
            "probe_size": self.args.probe_size,
            "seed": self.args.seed,
            "params": self.params,
        });
        hex::encode(Sha256::digest(content.to_string().as_bytes()))
    }

    fn csv_meta(&self) -> Vec<(&'static str, String)> {
        vec![
            ("config_hash", self.config_hash()),
            ("probe_checksum", self.probe.checksum_hex()),
            ("n_probe", self.probe.len().to_string()),
        ]
    }

    fn header(&self) -> Value {
        json!({
            "config": self.config(),
            "config_hash": self.config_hash(),
            "probe_checksum": self.probe.checksum_hex(),
        })
    }

    fn cache_path(&self, model: &ModelSpec) -> PathBuf {
        let key = format!(
            "{}|{}|{}|{:016x}|{}",
            model.fingerprint,
            self.probe.checksum_hex(),
            self.method.short_name(),
            self.method.epsilon().unwrap_or(0.0).to_bits(),
            self.mode
        );
        let digest = hex::encode(Sha256::digest(key.as_bytes()));
        self.args.out.join(CACHE_DIR).join(format!("{}-{}.tmsattr", model.id, &digest[..16]))
    }

    fn cached_set(&self, model: &ModelSpec) -> Option<AttributionSet> {
        let set = AttributionSet::read_cache(&self.cache_path(model)).ok()?;
        let matches = set.model_id == model.id
            && set.model_fingerprint == model.fingerprint
            && set.probe_checksum == self.probe.checksum()
            && set.method == self.method
            && set.mode == self.mode;
        matches.then_some(set)
    }

    /// Attribution sets in model order, always as stored in the cache so that
    /// every downstream number is computed from identical values. Returns the
    /// sets and the number of propagations performed in this call.
    fn attribution_sets(&self, models: &[ModelSpec]) -> crate::Result<(Vec<AttributionSet>, u64)> {
        fs::create_dir_all(self.args.out.join(CACHE_DIR)).map_err(|e| Error::io(self.args.out.join(CACHE_DIR), e))?;
        let computed = models
            .par_iter()
            .map(|m| {
                if self.cached_set(m).is_some() {
                    return Ok(0);
                }
                let set = attribute_probe(m, &self.probe, self.method, self.mode, self.args.exact_cap)?;
                set.write_cache(&self.cache_path(m))?;
                Ok(set.passes)
            })
            .collect::<crate::Result<Vec<u64>>>()?;
        let sets = models
            .iter()
            .map(|m| AttributionSet::read_cache(&self.cache_path(m)))
            .collect::<crate::Result<Vec<_>>>()?;
        Ok((sets, computed.iter().sum()))
    }
}

fn passes_json(sets: &[AttributionSet]) -> Value {
    let per_model: serde_json::Map<String, Value> = sets.iter().map(|s| (s.model_id.clone(), json!(s.passes))).collect();
    json!({ "per_model": per_model, "total": sets.iter().map(|s| s.passes).sum::<u64>() })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &Value) -> crate::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("json serializes");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure {
            kind: "ThreadPool".into(),
            message: e.to_string(),
        })?;
    pool.install(f)
}

/// Execute one parsed command; lines for stdout are returned.
pub fn run(cli: Cli) -> CliResult<Vec<String>> {
    match cli.command {
        Command::Synth(args) => cmd_synth(&args).map_err(Failure::from),
        Command::Attribute(run) => with_pool(run.threads, || cmd_attribute(&run)),
        Command::Affinity(run) => with_pool(run.threads, || cmd_affinity(&run)),
        Command::Rank { run, target } => with_pool(run.threads, || cmd_rank(&run, &target)),
        Command::Insert { run, new } => with_pool(run.threads, || cmd_insert(&run, &new)),
        Command::Eval {
            run,
            k_rel,
            variance_threshold,
        } => with_pool(run.threads, || cmd_eval(&run, k_rel, variance_threshold)),
        Command::Svcca { run, variance_threshold } => with_pool(run.threads, || cmd_svcca(&run, variance_threshold)),
        Command::Tree {
            run,
            linkage,
            dissimilarity,
        } => with_pool(run.threads, || cmd_tree(&run, linkage, dissimilarity)),
        Command::Cpc {
            run,
            variance_threshold,
            divisor,
        } => with_pool(run.threads, || cmd_cpc(&run, variance_threshold, divisor)),
        Command::Gradcheck { run, images, tolerance } => with_pool(run.threads, || cmd_gradcheck(&run, images, tolerance)),
        Command::ExportMap {
            run,
            model_id,
            image_index,
            output,
        } => with_pool(run.threads, || cmd_export_map(&run, &model_id, image_index, &output)),
    }
}

pub fn cmd_attribute(args: &RunArgs) -> CliResult<Vec<String>> {
    let run = Run::load(args, "attribute", json!({}))?;
    let (sets, computed) = run.attribution_sets(&run.models)?;
    let mut report = run.header();
    report["passes"] = passes_json(&sets);
    report["cache"] = json!(run.models.iter().map(|m| run.cache_path(m)).collect::<Vec<_>>());
    write_json(&args.out.join("attribution.json"), &report)?;
    let mut lines: Vec<String> = sets.iter().map(|s| format!("{}\t{} maps\t{} passes", s.model_id, s.len(), s.passes)).collect();
    lines.push(format!("propagations this run: {computed}"));
    Ok(lines)
}

fn write_affinity(run: &Run, aff: &AffinityMatrix, sets: &[AttributionSet]) -> crate::Result<()> {
    let meta = run.csv_meta();
    let sim = aff.similarities();
    let dist = aff.distances();
    write_bytes(&run.args.out.join("affinity_similarity.csv"), sim.to_csv(&meta).as_bytes())?;
    write_bytes(&run.args.out.join("affinity_distance.csv"), dist.to_csv(&meta).as_bytes())?;
    let mut doc = run.header();
    doc["affinity"] = aff.metadata();
    doc["passes"] = passes_json(sets);
    doc["similarity"] = sim.to_json(json!({}));
    doc["distance"] = dist.to_json(json!({}));
    write_json(&run.args.out.join("affinity.json"), &doc)
}

fn load_affinity(run: &Run) -> crate::Result<(AffinityMatrix, Vec<AttributionSet>)> {
    let (sets, _) = run.attribution_sets(&run.models)?;
    Ok((affinity_matrix(&sets)?, sets))
}

pub fn cmd_affinity(args: &RunArgs) -> CliResult<Vec<String>> {
    let run = Run::load(args, "affinity", json!({}))?;
    let (aff, sets) = load_affinity(&run)?;
    write_affinity(&run, &aff, &sets)?;
    Ok(vec![format!(
        "{} models, {} probe images, config {}",
        aff.len(),
        aff.n_probe,
        &run.config_hash()[..12]
    )])
}

pub fn cmd_rank(args: &RunArgs, target: &str) -> CliResult<Vec<String>> {
    let run = Run::load(args, "rank", json!({ "target": target }))?;
    let (aff, _) = load_affinity(&run)?;
    let ranked = rank_sources(&aff.distances(), target)?;
    let mut csv = format!("# target={target} config_hash={}\nrank,id,distance\n", run.config_hash());
    let mut lines = Vec::new();
    for r in &ranked {
        let d = r.distance.map(|d| d.to_string()).unwrap_or_else(|| "inf".into());
        csv.push_str(&format!("{},{},{}\n", r.rank, r.id, d));
        lines.push(format!("{}\t{}\t{}", r.rank, r.id, d));
    }
    write_bytes(&args.out.join(format!("rank_{target}.csv")), csv.as_bytes())?;
    Ok(lines)
}

pub fn cmd_insert(args: &RunArgs, new: &Path) -> CliResult<Vec<String>> {
    let existing = Run::load(args, "insert", json!({}))?;
    let doc_path = args.out.join("affinity.json");
    let bytes = fs::read(&doc_path).map_err(|e| Error::io(&doc_path, e))?;
    let doc: Value = serde_json::from_slice(&bytes).map_err(|e| Error::parse(doc_path.display().to_string(), e))?;
    if doc["probe_checksum"] != json!(existing.probe.checksum_hex()) {
        return Err(Error::ProbeMismatch("existing matrix was computed on another probe".into()).into());
    }
    let sim = LabeledMatrix::from_json(&doc["similarity"])?;
    let ids: Vec<String> = existing.models.iter().map(|m| m.id.clone()).collect();
    if sim.ids != ids {
        return Err(Error::IdMismatch(format!("matrix holds {:?}, --models gives {:?}", sim.ids, ids)).into());
    }
    let flags: Vec<PairFlag> = serde_json::from_value(doc["affinity"]["flags"].clone()).map_err(|e| Error::parse("affinity flags", e))?;
    let mut aff = AffinityMatrix::from_similarities(&sim, existing.method, existing.mode, existing.probe.checksum(), existing.probe.len(), flags)?;
    let (old_sets, _) = existing.attribution_sets(&existing.models)?;
    for s in &old_sets {
        if s.method != aff.method || s.mode != aff.mode {
            return Err(Error::MethodMismatch(s.method.to_string(), aff.method.to_string()).into());
        }
    }

    // The updated matrix is written under the configuration of the batch run
    // it replaces: the old models followed by the new one.
    let mut batch_args = args.clone();
    batch_args.models.push(new.to_path_buf());
    let mut run = Run::load(&batch_args, "affinity", json!({}))?;
    run.command = "insert";
    let new_model = run.models.last().expect("just pushed").clone();
    let (new_set, _) = run.attribution_sets(std::slice::from_ref(&new_model))?;
    aff.insert(&old_sets, &new_set[0])?;
    let mut all_sets = old_sets;
    all_sets.extend(new_set);
    write_affinity(&run, &aff, &all_sets)?;
    Ok(vec![format!("inserted {}: {} new distances", new_model.id, aff.len() - 1)])
}

pub fn cmd_svcca(args: &RunArgs, variance_threshold: f64) -> CliResult<Vec<String>> {
    let run = Run::load(args, "svcca", json!({ "variance_threshold": variance_threshold }))?;
    let corr = correlation_matrix_for_models(&run.models, &run.probe, variance_threshold)?;
    let meta = run.csv_meta();
    write_bytes(&args.out.join("svcca.csv"), corr.matrix.to_csv(&meta).as_bytes())?;
    let mut doc = run.header();
    doc["svcca"] = corr.matrix.to_json(json!({ "variance_threshold": variance_threshold }));
    write_json(&args.out.join("svcca.json"), &doc)?;
    Ok(vec![format!("{} models, threshold {variance_threshold}", corr.matrix.len())])
}

fn require_oracle(args: &RunArgs) -> crate::Result<RankingTable> {
    let path = args
        .oracle
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("this command needs --oracle".into()))?;
    load_oracle_rankings(path)
}

pub fn cmd_eval(args: &RunArgs, k_rel: usize, variance_threshold: f64) -> CliResult<Vec<String>> {
    let run = Run::load(args, "eval", json!({ "k_rel": k_rel, "variance_threshold": variance_threshold }))?;
    let oracle = require_oracle(args)?;
    let relevance = build_relevance(&oracle, k_rel)?;
    let (aff, _) = load_affinity(&run)?;
    let estimate = RankingTable::from_matrix(&aff.distances())?;
    let report = retrieval_report(&estimate, &relevance)?;
    let agreement = correlation_matrix_for_models(&run.models, &run.probe, variance_threshold).and_then(|corr| {
        let sim = aff.similarities();
        Ok(json!({ "pearson": pearson(&sim, &corr.matrix)?, "spearman": spearman(&sim, &corr.matrix)? }))
    });
    let agreement = agreement.unwrap_or_else(|e| json!({ "error": e.to_string() }));
    write_bytes(&args.out.join("eval_precision.csv"), report.precision_curve().to_csv().as_bytes())?;
    write_bytes(&args.out.join("eval_recall.csv"), report.recall_curve().to_csv().as_bytes())?;
    let n = aff.len();
    let mut doc = run.header();
    doc["k_rel"] = json!(k_rel);
    doc["relevance_clamped"] = json!(relevance.clamped);
    doc["random_baseline_precision"] = json!(relevance.relevant.values().map(|s| s.len()).max().unwrap_or(0) as f64 / (n - 1) as f64);
    doc["retrieval"] = serde_json::to_value(&report).expect("report serializes");
    doc["svcca_agreement"] = agreement.clone();
    write_json(&args.out.join("eval_report.json"), &doc)?;
    let mut lines: Vec<String> = report
        .ks
        .iter()
        .map(|&k| format!("K={k}\tP={:.4}\tR={:.4}", report.precision_at(k), report.recall_at(k)))
        .collect();
    lines.push(format!("svcca agreement: {agreement}"));
    Ok(lines)
}

pub fn cmd_tree(args: &RunArgs, linkage: LinkageArg, dissimilarity: DissimilarityArg) -> CliResult<Vec<String>> {
    let linkage = match linkage {
        LinkageArg::Average => Linkage::Average,
        LinkageArg::Single => Linkage::Single,
        LinkageArg::Complete => Linkage::Complete,
    };
    let dissimilarity = match dissimilarity {
        DissimilarityArg::Inverse => Dissimilarity::Inverse,
        DissimilarityArg::OneMinus => Dissimilarity::OneMinus,
    };
    let params = json!({ "linkage": format!("{linkage:?}").to_lowercase(), "dissimilarity": format!("{dissimilarity:?}").to_lowercase() });
    let run = Run::load(args, "tree", params)?;
    let (aff, _) = load_affinity(&run)?;
    let tree = agglomerate(&dissimilarity_matrix(&aff, dissimilarity)?, linkage)?;
    let newick = to_newick(&tree);
    write_bytes(&args.out.join("tree.nwk"), format!("{newick}\n").as_bytes())?;
    let text = tree.render_text();
    write_bytes(&args.out.join("tree.txt"), text.as_bytes())?;
    let mut lines = vec![newick];
    if tree.replaced_infinite {
        lines.push("note: infinite distances replaced by 10x the largest finite distance".into());
    }
    lines.extend(text.lines().map(str::to_string));
    Ok(lines)
}

pub fn cmd_cpc(args: &RunArgs, variance_threshold: f64, divisor: CpcDivisorArg) -> CliResult<Vec<String>> {
    let divisor = match divisor {
        CpcDivisorArg::Models => CpcDivisor::ModelCount,
        CpcDivisorArg::Bucket => CpcDivisor::BucketCount,
    };
    let params = json!({ "variance_threshold": variance_threshold, "divisor": format!("{divisor:?}") });
    let run = Run::load(args, "cpc", params)?;
    let oracle = require_oracle(args)?;
    let corr = correlation_matrix_for_models(&run.models, &run.probe, variance_threshold)?;
    let curve = cpc(&corr.matrix, &oracle, divisor)?;
    let csv = format!("# config_hash={}\n{}", run.config_hash(), curve.to_csv());
    write_bytes(&args.out.join("cpc.csv"), csv.as_bytes())?;
    Ok(curve.points.iter().map(|(x, y)| format!("{x}\t{y}")).collect())
}

pub fn cmd_gradcheck(args: &RunArgs, images: usize, tolerance: f64) -> CliResult<Vec<String>> {
    let run = Run::load(args, "gradcheck", json!({ "images": images, "tolerance": tolerance }))?;
    let count = images.min(run.probe.len());
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut results = Vec::new();
    let mut lines = Vec::new();
    let mut worst: f64 = 0.0;
    for m in &run.models {
        let dim = m.representation_dim();
        let mut errs = Vec::new();
        for img in &run.probe.images()[..count] {
            let x = preprocess(&m.preproc, img)?;
            let seed: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let seed = Tensor::new(m.graph.output_shape().to_vec(), seed)?;
            errs.push(check_gradient(&m.graph, &x, &seed, DEFAULT_FD_STEP)?.relative_error);
        }
        let max = errs.iter().copied().fold(0.0, f64::max);
        worst = worst.max(max);
        lines.push(format!("{}\tmax relative error {max:.3e}", m.id));
        results.push(json!({ "model": m.id, "relative_errors": errs, "max": max, "passed": max <= tolerance }));
    }
    let mut doc = run.header();
    doc["step"] = json!(DEFAULT_FD_STEP);
    doc["models"] = json!(results);
    doc["passed"] = json!(worst <= tolerance);
    write_json(&args.out.join("gradcheck.json"), &doc)?;
    if worst > tolerance {
        return Err(Failure {
            kind: "GradientCheckFailed".into(),
            message: format!("max relative error {worst:.3e} above {tolerance:e}"),
        });
    }
    Ok(lines)
}

pub fn cmd_export_map(args: &RunArgs, model_id: &str, image_index: usize, output: &Path) -> CliResult<Vec<String>> {
    let run = Run::load(args, "export-map", json!({}))?;
    let model = run
        .models
        .iter()
        .find(|m| m.id == model_id)
        .ok_or_else(|| Error::UnknownModel(model_id.to_string()))?;
    let (sets, _) = run.attribution_sets(std::slice::from_ref(model))?;
    if image_index >= sets[0].len() {
        return Err(Error::InvalidArgument(format!("image index {image_index} outside probe of {}", sets[0].len())).into());
    }
    write_netpbm(output, &heatmap(&sets[0].maps[image_index]))?;
    Ok(vec![format!("wrote {}", output.display())])
}

pub fn cmd_synth(args: &SynthArgs) -> crate::Result<Vec<String>> {
    let spec = FamilySpec {
        groups: args.groups,
        per_group: args.per_group,
        shared_depth: args.shared_depth,
        sigma: args.sigma,
        template: ArchTemplate {
            input: ImageShape::new(args.width, args.height, args.channels),
            heterogeneous_inputs: !args.homogeneous,
            ..ArchTemplate::default()
        },
        seed: args.seed,
    };
    let models = generate_family(&spec)?;
    let paths = write_family(&models, &args.out.join("models"))?;
    let probe = generate_probe(args.probe_images, ImageShape::new(args.width, args.height, args.channels), args.seed)?;
    let manifest = write_probe(&probe, &args.out.join("probe"))?;
    write_oracle_rankings(&args.out.join("oracle.json"), &group_oracle(&spec)?)?;
    write_json(&args.out.join("family.json"), &serde_json::to_value(&spec).expect("spec serializes"))?;
    let mut lines = vec![format!("probe: {}", manifest.display())];
    lines.extend(paths.iter().map(|p| format!("model: {}", p.display())));
    Ok(lines)
}
