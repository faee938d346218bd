//! Command-line front end. Every command resolves a [`RunConfig`] from
//! defaults, an optional config document and `--set` overrides, and stamps
//! the config hash into everything it writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::codes::BinaryCodes;
use crate::config::{self, key, Key, RunConfig};
use crate::data_io::DatasetMatrix;
use crate::error::{Error, Result};
use crate::eval::{self, Report};
use crate::hamming;
use crate::hashnet::{Mode, NetConfig};
use crate::itq;
use crate::lbfgs::LbfgsConfig;
use crate::model_io::{self, Model, SavedModel};
use crate::objective::{Lambdas, Trace};
use crate::pipeline::{self, DataSource, MnistOptions};
use crate::sh_bdnn::{self, ShHyperParams};
use crate::uh_bdnn::{self, UhHyperParams};

pub const TRAIN_KEYS: &[Key] = &[
    key("mode", Some("uh"), "uh (unsupervised) or sh (supervised)"),
    key("data", None, "training data: BFM1 path or idx:IMAGES,LABELS"),
    key("unit_scale", Some("true"), "divide idx pixel values by 255"),
    key("bits", Some("16"), "code length L"),
    key("layers", None, "comma-separated layer sizes from input to output [default: standard sizes for bits]"),
    key("lambda1", None, "weight decay [default: 1e-5 uh, 1e-3 sh]"),
    key("lambda2", None, "binary constraint penalty [default: 5e-2 uh, 5 sh]"),
    key("lambda3", None, "independence [default: 1e-2 uh, 1 sh]"),
    key("lambda4", None, "balance [default: 1e-6 uh, 1e-4 sh]"),
    key("iterations", None, "outer alternations T [default: 10 uh, 5 sh]"),
    key("itq_iterations", Some("50"), "ITQ iterations for the initial codes"),
    key("per_class_sample", Some("300"), "sh only: training samples per class, or all"),
    key("lbfgs_memory", Some("10"), "L-BFGS correction pairs"),
    key("lbfgs_max_iters", Some("100"), "L-BFGS iterations per weight step"),
    key("lbfgs_grad_tol", Some("1e-6"), "L-BFGS gradient infinity-norm tolerance"),
    key("seed", Some("1"), "random seed"),
    key("out", None, "output directory"),
];

pub const ITQ_KEYS: &[Key] = &[
    key("data", None, "training data: BFM1 path or idx:IMAGES,LABELS"),
    key("unit_scale", Some("true"), "divide idx pixel values by 255"),
    key("bits", Some("16"), "code length L"),
    key("itq_iterations", Some("50"), "rotation iterations"),
    key("seed", Some("1"), "random seed"),
    key("out", None, "output directory"),
];

pub const ENCODE_KEYS: &[Key] = &[
    key("model", None, "model file"),
    key("data", None, "data to encode: BFM1 path or idx:IMAGES,LABELS"),
    key("unit_scale", Some("true"), "divide idx pixel values by 255"),
    key("out", None, "codes file to write"),
];

pub const INDEX_KEYS: &[Key] = &[
    key("db", None, "database codes file"),
    key("queries", None, "query codes file"),
    key("top_k", Some("10"), "neighbours per query"),
    key("radius", None, "if set, return every code within this Hamming radius instead"),
    key("out", None, "result file [default: stdout]"),
];

pub const EVAL_KEYS: &[Key] = &[
    key("model", None, "model used to encode db_data and query_data"),
    key("db_codes", None, "database codes file (instead of model)"),
    key("query_codes", None, "query codes file (instead of model)"),
    key("db_data", None, "database data: BFM1 path or idx:IMAGES,LABELS"),
    key("query_data", None, "query data: BFM1 path or idx:IMAGES,LABELS"),
    key("unit_scale", Some("true"), "divide idx pixel values by 255"),
    key("ground_truth", Some("euclid"), "euclid (k nearest neighbours) or label"),
    key("neighbours", Some("50"), "k for euclid ground truth"),
    key("top_n", None, "truncate rankings for mAP [default: whole database]"),
    key("dataset", Some("custom"), "dataset name for the report"),
    key("method", None, "method name for the report [default: model tag or codes]"),
    key("seed", Some("0"), "seed recorded in the report"),
    key("report", None, "append the report line to this file"),
];

pub const REPRO_KEYS: &[Key] = &[
    key("images", Some("data/mnist-subset/images-idx3-ubyte.gz"), "idx image file"),
    key("labels", Some("data/mnist-subset/labels-idx1-ubyte.gz"), "idx label file"),
    key("unit_scale", Some("true"), "divide pixel values by 255"),
    key("queries_per_class", Some("100"), "queries drawn from each class"),
    key("neighbours", Some("50"), "Euclidean neighbours forming the ground truth"),
    key("bits", Some("16,24"), "code lengths to compare"),
    key("iterations", Some("10"), "outer alternations T"),
    key("itq_iterations", Some("50"), "ITQ iterations"),
    key("lbfgs_max_iters", Some("100"), "L-BFGS iterations per weight step"),
    key("seed", Some("1"), "random seed"),
    key("report", None, "append report lines to this file"),
];

#[derive(Debug, Parser)]
#[command(name = "bdnn", version, about = "Binary deep neural network hashing")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Configuration document of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one key; may be repeated.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a UH-BDNN or SH-BDNN hash network.
    #[command(after_long_help = config::describe(TRAIN_KEYS))]
    Train(ConfigArgs),
    /// Encode data into a codes file with a trained model.
    #[command(after_long_help = config::describe(ENCODE_KEYS))]
    Encode(ConfigArgs),
    /// Search database codes by Hamming distance.
    #[command(after_long_help = config::describe(INDEX_KEYS))]
    Index(ConfigArgs),
    /// Compute mAP and precision@2 for a model or a pair of codes files.
    #[command(after_long_help = config::describe(EVAL_KEYS))]
    Eval(ConfigArgs),
    /// Train the ITQ baseline.
    #[command(name = "itq-train", after_long_help = config::describe(ITQ_KEYS))]
    ItqTrain(ConfigArgs),
    /// Reproduction pipelines.
    #[command(subcommand)]
    Repro(Repro),
}

#[derive(Debug, Subcommand)]
pub enum Repro {
    /// Desk-scale MNIST comparison of UH-BDNN against ITQ.
    #[command(name = "mnist-uh", after_long_help = config::describe(REPRO_KEYS))]
    MnistUh(ConfigArgs),
}

fn resolve(command: &str, keys: &[Key], args: &ConfigArgs) -> Result<RunConfig> {
    let overrides = args
        .set
        .iter()
        .map(|s| config::parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    RunConfig::load(command, keys, args.config.as_deref(), &overrides)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(&resolve("train", TRAIN_KEYS, &a)?),
        Command::Encode(a) => encode(&resolve("encode", ENCODE_KEYS, &a)?),
        Command::Index(a) => index(&resolve("index", INDEX_KEYS, &a)?),
        Command::Eval(a) => evaluate(&resolve("eval", EVAL_KEYS, &a)?),
        Command::ItqTrain(a) => itq_train(&resolve("itq-train", ITQ_KEYS, &a)?),
        Command::Repro(Repro::MnistUh(a)) => repro_mnist_uh(&resolve("repro mnist-uh", REPRO_KEYS, &a)?),
    }
}

/// Process exit code for an error: 2 for bad input, 3 for failures while
/// computing.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        e if e.is_validation() => 2,
        Error::Io(e)
            if matches!(
                e.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied | std::io::ErrorKind::InvalidInput
            ) =>
        {
            2
        }
        _ => 3,
    }
}

fn load_data(cfg: &RunConfig, key: &str) -> Result<DatasetMatrix> {
    DataSource::parse(cfg.require(key)?)?.load(cfg.bool("unit_scale")?)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.require("out")?);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn write_trace(path: &Path, hash: &str, trace: &Trace) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "# config hash: {hash}")?;
    trace.write_to(&mut f)?;
    f.flush()?;
    Ok(())
}

fn lbfgs_config(cfg: &RunConfig) -> Result<LbfgsConfig> {
    let c = LbfgsConfig {
        memory: cfg.usize("lbfgs_memory")?,
        max_iters: cfg.usize("lbfgs_max_iters")?,
        grad_tol: cfg.f64("lbfgs_grad_tol")?,
        ..LbfgsConfig::default()
    };
    c.validate().map_err(Error::Validation)?;
    Ok(c)
}

fn lambdas(cfg: &RunConfig) -> Result<Lambdas> {
    let l = Lambdas::new(cfg.f64("lambda1")?, cfg.f64("lambda2")?, cfg.f64("lambda3")?, cfg.f64("lambda4")?);
    l.validate()?;
    Ok(l)
}

/// Resolves mode-dependent defaults into the configuration so they are part
/// of the hash and the snapshot.
pub fn train_config(cfg: &RunConfig) -> Result<RunConfig> {
    let mode = parse_mode(cfg.require("mode")?)?;
    let (l, t) = match mode {
        Mode::Unsupervised => (UhHyperParams::default().lambdas, UhHyperParams::default().iterations),
        Mode::Supervised => (ShHyperParams::default().lambdas, ShHyperParams::default().iterations),
    };
    let mut cfg = cfg.clone();
    for (k, v) in [
        ("lambda1", l.decay),
        ("lambda2", l.binary),
        ("lambda3", l.independence),
        ("lambda4", l.balance),
    ] {
        cfg.fill(k, &format!("{v:e}"));
    }
    cfg.fill("iterations", &t.to_string());
    Ok(cfg)
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s.to_ascii_lowercase().as_str() {
        "uh" => Ok(Mode::Unsupervised),
        "sh" => Ok(Mode::Supervised),
        other => Err(Error::validation(format!("mode must be uh or sh, got {other:?}"))),
    }
}

fn train(cfg: &RunConfig) -> Result<()> {
    let cfg = train_config(cfg)?;
    let mode = parse_mode(cfg.require("mode")?)?;
    let data = load_data(&cfg, "data")?;
    if mode == Mode::Supervised && data.labels().is_none() {
        return Err(Error::validation("sh training needs labelled data"));
    }
    let bits = cfg.usize("bits")?;
    let sizes = pipeline::layer_sizes(mode, data.dim(), bits, cfg.opt_usize_list("layers")?)?;
    let net = NetConfig::new(mode, sizes)?;
    let lbfgs = lbfgs_config(&cfg)?;
    let seed = cfg.u64("seed")?;
    let hash = cfg.hash();
    let dir = out_dir(&cfg)?;
    log::info!("training {} network {:?} on {} samples", mode.tag(), net.layer_sizes(), data.len());

    let (params, codes, trace, sampled) = match mode {
        Mode::Unsupervised => {
            let h = UhHyperParams {
                lambdas: lambdas(&cfg)?,
                iterations: cfg.usize("iterations")?,
                itq_iterations: cfg.usize("itq_iterations")?,
            };
            let r = uh_bdnn::train_uh(data.features(), &net, &h, &lbfgs, seed)?;
            (r.params, r.codes, r.trace, None)
        }
        Mode::Supervised => {
            let per_class = match cfg.require("per_class_sample")? {
                "all" => usize::MAX,
                _ => cfg.usize("per_class_sample")?,
            };
            let h = ShHyperParams {
                lambdas: lambdas(&cfg)?,
                iterations: cfg.usize("iterations")?,
                per_class_sample: per_class,
                itq_iterations: cfg.usize("itq_iterations")?,
            };
            let labels = data.labels().expect("checked above");
            let r = sh_bdnn::train_sh(data.features(), labels, &net, &h, &lbfgs, seed)?;
            (r.params, r.codes, r.trace, Some(r.sampled))
        }
    };

    let saved = SavedModel {
        model: Model::Net { config: net, params },
        config_hash: hash.clone(),
    };
    model_io::save_model(&saved, &dir.join("model.bdnn"))?;
    hamming::save_codes(&hamming::pack(&codes), &dir.join("codes.bhc"))?;
    write_trace(&dir.join("trace.log"), &hash, &trace)?;
    write_text(&dir.join("config.txt"), &cfg.snapshot())?;
    if let Some(idx) = sampled {
        let mut s = format!("# config hash: {hash}\n");
        for j in idx {
            s.push_str(&j.to_string());
            s.push('\n');
        }
        write_text(&dir.join("sampled.txt"), &s)?;
    }
    println!("wrote {} (config {hash})", dir.display());
    Ok(())
}

fn itq_train(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg, "data")?;
    let hash = cfg.hash();
    let dir = out_dir(cfg)?;
    let run = itq::itq_train(data.features(), cfg.usize("bits")?, cfg.usize("itq_iterations")?, cfg.u64("seed")?)?;
    let saved = SavedModel {
        model: Model::Itq(run.model),
        config_hash: hash.clone(),
    };
    model_io::save_model(&saved, &dir.join("model.bdnn"))?;
    hamming::save_codes(&hamming::pack(&run.codes), &dir.join("codes.bhc"))?;
    let mut log = format!("# config hash: {hash}\n");
    for (i, l) in run.losses.iter().enumerate() {
        log.push_str(&format!("iter={}\tloss={l:.17e}\n", i + 1));
    }
    write_text(&dir.join("trace.log"), &log)?;
    write_text(&dir.join("config.txt"), &cfg.snapshot())?;
    println!("wrote {} (config {hash})", dir.display());
    Ok(())
}

fn encode(cfg: &RunConfig) -> Result<()> {
    let saved = model_io::load_model(Path::new(cfg.require("model")?))?;
    let data = load_data(cfg, "data")?;
    let codes = saved.model.encode(data.features())?;
    let out = PathBuf::from(cfg.require("out")?);
    hamming::save_codes(&hamming::pack(&codes), &out)?;
    let mut snapshot = cfg.snapshot();
    snapshot.push_str(&format!("# model config hash: {}\n", saved.config_hash));
    write_text(&sidecar(&out), &snapshot)?;
    println!("wrote {} codes of {} bits to {}", codes.len(), codes.bits(), out.display());
    Ok(())
}

/// `codes.bhc` → `codes.bhc.config`
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config");
    PathBuf::from(s)
}

fn index(cfg: &RunConfig) -> Result<()> {
    let db = hamming::load_codes(Path::new(cfg.require("db")?))?;
    let queries = hamming::load_codes(Path::new(cfg.require("queries")?))?;
    if db.bits() != queries.bits() {
        return Err(Error::validation(format!(
            "database codes have {} bits, queries have {}",
            db.bits(),
            queries.bits()
        )));
    }
    let mut out = String::new();
    match cfg.get("radius") {
        Some(_) => {
            let r = cfg.usize("radius")?;
            out.push_str("query\tindex\n");
            for q in 0..queries.len() {
                for j in hamming::search_radius(&db, queries.code(q), r as u32)? {
                    out.push_str(&format!("{q}\t{j}\n"));
                }
            }
        }
        None => {
            let k = cfg.usize("top_k")?;
            out.push_str("query\trank\tindex\tdistance\n");
            for q in 0..queries.len() {
                for (rank, n) in hamming::search_topk(&db, queries.code(q), k)?.iter().enumerate() {
                    out.push_str(&format!("{q}\t{}\t{}\t{}\n", rank + 1, n.index, n.distance));
                }
            }
        }
    }
    match cfg.get("out") {
        Some(p) => write_text(Path::new(p), &out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn check_count(codes: &BinaryCodes, data: &DatasetMatrix, what: &str) -> Result<()> {
    if codes.len() != data.len() {
        return Err(Error::validation(format!(
            "{what}: {} codes but {} data samples",
            codes.len(),
            data.len()
        )));
    }
    Ok(())
}

fn evaluate(cfg: &RunConfig) -> Result<()> {
    let t0 = Instant::now();
    let db_data = load_data(cfg, "db_data")?;
    let q_data = load_data(cfg, "query_data")?;
    let (db_codes, q_codes, method) = match cfg.get("model") {
        Some(path) => {
            let saved = model_io::load_model(Path::new(path))?;
            (
                saved.model.encode(db_data.features())?,
                saved.model.encode(q_data.features())?,
                saved.model.tag().to_string(),
            )
        }
        None => (
            hamming::unpack(&hamming::load_codes(Path::new(cfg.require("db_codes")?))?),
            hamming::unpack(&hamming::load_codes(Path::new(cfg.require("query_codes")?))?),
            "codes".to_string(),
        ),
    };
    check_count(&db_codes, &db_data, "database")?;
    check_count(&q_codes, &q_data, "queries")?;
    let gt = match cfg.require("ground_truth")? {
        "euclid" => eval::euclid_ground_truth(&db_data, &q_data, cfg.usize("neighbours")?)?,
        "label" => {
            let (Some(dl), Some(ql)) = (db_data.labels(), q_data.labels()) else {
                return Err(Error::validation("label ground truth needs labelled database and queries"));
            };
            eval::label_ground_truth(dl, ql)
        }
        other => return Err(Error::validation(format!("ground_truth must be euclid or label, got {other:?}"))),
    };
    let top_n = cfg.opt_usize("top_n")?;
    let m = pipeline::evaluate(&db_codes, &q_codes, &gt, top_n)?;
    let report = Report {
        dataset: cfg.require("dataset")?.to_string(),
        method: cfg.get("method").map_or(method, str::to_string),
        bits: db_codes.bits(),
        map: m.map.value,
        precision_at_2: m.precision_at_2,
        wall_seconds: t0.elapsed().as_secs_f64(),
        seed: cfg.u64("seed")?,
        config_hash: cfg.hash(),
        top_n,
        empty_relevant: m.map.empty_relevant,
    };
    if report.empty_relevant > 0 {
        log::warn!("{} queries had no relevant items and scored 0", report.empty_relevant);
    }
    emit(cfg, &[report])
}

fn emit(cfg: &RunConfig, reports: &[Report]) -> Result<()> {
    for r in reports {
        println!("{r}");
    }
    if let Some(p) = cfg.get("report") {
        let mut f = fs::OpenOptions::new().create(true).append(true).open(p)?;
        for r in reports {
            writeln!(f, "{r}")?;
        }
    }
    Ok(())
}

fn repro_mnist_uh(cfg: &RunConfig) -> Result<()> {
    let mut opts = MnistOptions::new(Path::new(cfg.require("images")?), Path::new(cfg.require("labels")?));
    opts.unit_scale = cfg.bool("unit_scale")?;
    opts.queries_per_class = cfg.usize("queries_per_class")?;
    opts.neighbours = cfg.usize("neighbours")?;
    opts.bits = cfg.usize_list("bits")?;
    opts.seed = cfg.u64("seed")?;
    opts.hyper.iterations = cfg.usize("iterations")?;
    opts.hyper.itq_iterations = cfg.usize("itq_iterations")?;
    opts.lbfgs.max_iters = cfg.usize("lbfgs_max_iters")?;
    opts.config_hash = cfg.hash();
    let rows = pipeline::mnist_uh(&opts)?;
    let reports: Vec<Report> = rows.iter().flat_map(|r| [r.itq.clone(), r.uh.clone()]).collect();
    emit(cfg, &reports)?;
    for r in &rows {
        println!(
            "bits={}\tuh_over_itq={:.4}",
            r.bits,
            r.uh.map / r.itq.map
        );
    }
    Ok(())
}
