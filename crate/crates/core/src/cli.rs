//! Command-line front end.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::blackbox::protocol::serve;
use crate::blackbox::{open_external, train_forest, ConstantModel, ExternalModelSpec, ForestConfig, ForestModel, ProbabilityModel};
use crate::data::{ingest_csv, TabularDataset};
use crate::error::{ClimaxError, Result};
use crate::evaluation::{roc_auc, stability_experiment, IndexSample, PipelineExplainer, StabilitySpec, TopKExplainer};
use crate::explainers::{explain, Balancer, ExplainConfig, Method};
use crate::influence::InfluenceConfig;
use crate::plot::{explanation_bar_chart, line_chart, Series};
use crate::surrogate::KernelConfig;

#[derive(Debug, Parser)]
#[command(name = "climax", version, about = "Contrastive local explanations for black-box classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the reference forest and save it with the feature scale.
    Train(TrainArgs),
    /// Explain one row of a dataset.
    Explain(ExplainArgs),
    /// Run the repeated-explanation stability benchmark.
    Stability(StabilityArgs),
    /// Serve a model over the stdio protocol.
    Host(HostArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Label column name (or zero-based position).
    #[arg(long)]
    pub label: String,
    /// Fraction of rows held out as the test split.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
}

impl ForestArgs {
    fn config(&self) -> ForestConfig {
        ForestConfig { n_trees: self.trees, max_depth: self.depth, ..Default::default() }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Saved model from `train`; the forest is trained from --data otherwise.
    #[arg(long, conflicts_with = "blackbox_cmd")]
    pub model: Option<PathBuf>,
    /// Shell command of an external model host.
    #[arg(long)]
    pub blackbox_cmd: Option<String>,
    /// Per-request timeout for the external host.
    #[arg(long, default_value_t = 60_000)]
    pub timeout_ms: u64,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Row of the dataset to explain.
    #[arg(long)]
    pub index: usize,
    #[arg(long, default_value = "ce-climax")]
    pub method: Method,
    #[arg(long = "balance", default_value = "none")]
    pub balance: Balancer,
    /// Subsample the surrogate set by influence before fitting.
    #[arg(long)]
    pub influence: bool,
    #[arg(long, default_value_t = 0.7)]
    pub keep_fraction: f64,
    /// Surrogate count (first value used).
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    pub n_prime: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub kernel_width: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for explanation.json and explanation.svg; stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Methods such as lime, l-climax, ce-climax-gmm, ce-climax-ros-if.
    #[arg(long, value_delimiter = ',', default_value = "lime,ce-climax-gmm")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,1500,2000,2500")]
    pub n_prime: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 10)]
    pub index_count: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub kernel_width: Option<f64>,
    #[arg(long, default_value_t = 0.7)]
    pub keep_fraction: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HostArgs {
    /// Saved model from `train`.
    #[arg(long, conflicts_with_all = ["constant", "data"])]
    pub model: Option<PathBuf>,
    /// Answer every instance with these probabilities.
    #[arg(long, value_delimiter = ',', conflicts_with = "data")]
    pub constant: Option<Vec<f64>>,
    /// Train the forest from this CSV (same split and seed as `explain`).
    #[arg(long, requires = "label")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// A trained forest with the metadata needed to explain with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub forest: ForestModel,
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
}

fn seed_or_random(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn load_data(args: &DataArgs, seed: u64) -> Result<TabularDataset> {
    ingest_csv(&args.data, &args.label, args.test_fraction, seed)
}

fn fit_reference(ds: &TabularDataset, cfg: &ForestConfig, seed: u64) -> Result<ForestModel> {
    train_forest(&ds.train_matrix(), &ds.labels_of(&ds.train), cfg, seed)
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ClimaxError::Schema(format!("{}: {e}", path.display())))
}

fn black_box(args: &ModelArgs, ds: &TabularDataset, seed: u64) -> Result<Box<dyn ProbabilityModel>> {
    if let Some(cmd) = &args.blackbox_cmd {
        let spec = ExternalModelSpec { command: cmd.clone(), classes: ds.n_classes(), timeout_ms: args.timeout_ms };
        return Ok(Box::new(open_external(spec)?));
    }
    if let Some(path) = &args.model {
        let bundle = load_bundle(path)?;
        if bundle.forest.n_features != ds.n_features() {
            return Err(ClimaxError::Dimension { expected: bundle.forest.n_features, actual: ds.n_features() });
        }
        return Ok(Box::new(bundle.forest));
    }
    Ok(Box::new(fit_reference(ds, &args.forest.config(), seed)?))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let seed = seed_or_random(args.seed);
    let ds = load_data(&args.data, seed)?;
    let forest = fit_reference(&ds, &args.forest.config(), seed)?;
    if ds.n_classes() == 2 && !ds.test.is_empty() {
        let probs = forest.predict_proba(&ds.test_matrix())?;
        let scores: Vec<f64> = probs.column(1).iter().copied().collect();
        let positive: Vec<bool> = ds.labels_of(&ds.test).iter().map(|&l| l == 1).collect();
        if let Ok(auc) = roc_auc(&scores, &positive) {
            println!("held-out AUC: {auc:.4}");
        }
    }
    fs::create_dir_all(&args.out)?;
    let bundle = ModelBundle { forest, feature_names: ds.feature_names.clone(), label_names: ds.label_names.clone() };
    let text = serde_json::to_string(&bundle).map_err(|e| ClimaxError::Config(e.to_string()))?;
    write_file(&args.out.join("model.json"), &text)
}

fn base_config(
    method: Method,
    balancer: Balancer,
    influence: Option<f64>,
    k: usize,
    lambda: Option<f64>,
    kernel_width: Option<f64>,
    seed: u64,
) -> ExplainConfig {
    ExplainConfig {
        method,
        balancer,
        influence: influence.map(|q| InfluenceConfig { keep_fraction: q, ..Default::default() }),
        k,
        lambda,
        kernel: kernel_width.map(KernelConfig::euclidean),
        seed,
        ..Default::default()
    }
}

fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let seed = seed_or_random(args.seed);
    let ds = load_data(&args.data, seed)?;
    if args.index >= ds.n_rows() {
        return Err(ClimaxError::Config(format!("index {} out of range (dataset has {} rows)", args.index, ds.n_rows())));
    }
    let model = black_box(&args.model, &ds, seed)?;
    let mut cfg = base_config(
        args.method,
        args.balance,
        args.influence.then_some(args.keep_fraction),
        args.k,
        args.lambda,
        args.kernel_width,
        seed,
    );
    cfg.n_prime = *args.n_prime.first().ok_or_else(|| ClimaxError::Config("--n-prime is empty".into()))?;
    let e = explain(&ds.row(args.index), model.as_ref(), &ds.stats(), &cfg)?.with_feature_names(&ds.feature_names);
    let doc = e.to_document();
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_file(&dir.join("explanation.json"), &doc)?;
            write_file(&dir.join("explanation.svg"), &explanation_bar_chart(&e))?;
        }
        None => {
            let mut out = io::stdout().lock();
            out.write_all(doc.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

/// Parses a method label: a method name followed by optional `-ros`/`-gmm`
/// and `-if` suffixes (`+` also accepted as the separator).
pub fn parse_method_spec(spec: &str) -> Result<(Method, Balancer, bool)> {
    let mut rest = spec.trim().replace('+', "-");
    let mut influence = false;
    let mut balancer = Balancer::None;
    if let Some(s) = rest.strip_suffix("-if") {
        influence = true;
        rest = s.to_string();
    }
    for (suffix, b) in [("-gmm", Balancer::Gmm), ("-ros", Balancer::Ros)] {
        if let Some(s) = rest.strip_suffix(suffix) {
            balancer = b;
            rest = s.to_string();
            break;
        }
    }
    let method: Method = rest.parse().map_err(|_| ClimaxError::Config(format!("unknown method spec {spec:?}")))?;
    Ok((method, balancer, influence))
}

fn cmd_stability(args: &StabilityArgs) -> Result<()> {
    let seed = seed_or_random(args.seed);
    let ds = load_data(&args.data, seed)?;
    let model = black_box(&args.model, &ds, seed)?;
    let stats = ds.stats();
    let mut explainers = Vec::new();
    for m in &args.methods {
        let (method, balancer, influence) = parse_method_spec(m)?;
        let config = base_config(
            method,
            balancer,
            influence.then_some(args.keep_fraction),
            args.k,
            args.lambda,
            args.kernel_width,
            seed,
        );
        config.validate(ds.n_features())?;
        explainers.push(PipelineExplainer { model: model.as_ref(), stats: &stats, config });
    }
    let subjects: Vec<&dyn TopKExplainer> = explainers.iter().map(|e| e as &dyn TopKExplainer).collect();
    let pool: Vec<IndexSample> = ds.test.iter().map(|&i| IndexSample { id: i, x: ds.row(i) }).collect();
    let spec = StabilitySpec {
        dataset: ds.name.clone(),
        n_prime_grid: args.n_prime.clone(),
        repeats: args.repeats,
        index_count: args.index_count,
        master_seed: seed,
        jobs: args.jobs,
    };
    let report = stability_experiment(&spec, &pool, &subjects)?;
    fs::create_dir_all(&args.out)?;
    write_file(&args.out.join("stability.csv"), &report.to_csv())?;
    write_file(&args.out.join("stability.json"), &report.to_json())?;
    let series: Vec<Series> = report
        .methods()
        .into_iter()
        .map(|m| Series {
            points: args.n_prime.iter().map(|&n| (n as f64, report.grand_mean(&m, n))).collect(),
            label: m,
        })
        .collect();
    let svg = line_chart(&format!("{}: explanation stability", ds.name), "surrogate samples n'", "mean top-k Jaccard", &series);
    write_file(&args.out.join(format!("stability_{}.svg", ds.name)), &svg)?;
    for s in &report.summary {
        let v = s.grand_mean_jaccard.map_or_else(|| "NaN".to_string(), |v| format!("{v:.4}"));
        println!("{} n'={} mean Jaccard {v}", s.method, s.n_prime);
    }
    Ok(())
}

fn cmd_host(args: &HostArgs) -> Result<()> {
    let model: Box<dyn ProbabilityModel> = if let Some(path) = &args.model {
        Box::new(load_bundle(path)?.forest)
    } else if let Some(p) = &args.constant {
        let sum: f64 = p.iter().sum();
        if p.len() < 2 || p.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-9 {
            return Err(ClimaxError::Config("--constant must be a probability vector of length >= 2".into()));
        }
        Box::new(ConstantModel { probabilities: p.clone() })
    } else if let (Some(data), Some(label)) = (&args.data, &args.label) {
        let seed = seed_or_random(args.seed);
        let ds = ingest_csv(data, label, args.test_fraction, seed)?;
        Box::new(fit_reference(&ds, &args.forest.config(), seed)?)
    } else {
        return Err(ClimaxError::Config("host needs --model, --constant or --data".into()));
    };
    let stdin = io::stdin();
    serve(model.as_ref(), BufReader::new(stdin.lock()), io::stdout().lock())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Host(a) => cmd_host(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_specs() {
        assert_eq!(parse_method_spec("lime").unwrap(), (Method::Lime, Balancer::None, false));
        assert_eq!(parse_method_spec("ce-climax-gmm").unwrap(), (Method::CeClimax, Balancer::Gmm, false));
        assert_eq!(parse_method_spec("l-climax+ros+if").unwrap(), (Method::LClimax, Balancer::Ros, true));
        assert!(parse_method_spec("climax").is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "climax", "explain", "--data", "d.csv", "--label", "y", "--index", "7", "--method", "lime", "--balance",
            "gmm", "--n-prime", "500,1000", "--seed", "42",
        ])
        .unwrap();
        let Command::Explain(a) = cli.command else { panic!() };
        assert_eq!(a.method, Method::Lime);
        assert_eq!(a.balance, Balancer::Gmm);
        assert_eq!(a.n_prime, vec![500, 1000]);
    }
}
