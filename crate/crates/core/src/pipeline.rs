//! End-to-end pieces shared by the command-line front end and the
//! acceptance runs: data sources, default architectures, evaluation and the
//! desk-scale MNIST comparison.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::codes::BinaryCodes;
use crate::data_io::{self, DatasetMatrix, QuerySelection};
use crate::error::{Error, Result};
use crate::eval::{self, GroundTruth, MeanAp, Report};
use crate::hamming;
use crate::hashnet::{self, Mode, NetConfig};
use crate::itq;
use crate::lbfgs::LbfgsConfig;
use crate::uh_bdnn::{self, UhHyperParams};

/// Where a dataset comes from: a BFM1 file, or an idx image/label pair
/// written as `idx:IMAGES,LABELS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Fmat(PathBuf),
    Idx { images: PathBuf, labels: PathBuf },
}

impl DataSource {
    pub fn parse(source: &str) -> Result<Self> {
        match source.strip_prefix("idx:") {
            Some(rest) => {
                let (images, labels) = rest.split_once(',').ok_or_else(|| {
                    Error::validation(format!("idx source {source:?} must be idx:IMAGES,LABELS"))
                })?;
                Ok(DataSource::Idx {
                    images: images.trim().into(),
                    labels: labels.trim().into(),
                })
            }
            None => Ok(DataSource::Fmat(source.into())),
        }
    }

    /// Loads the data; idx pixels are divided by 255 when `unit_scale`.
    pub fn load(&self, unit_scale: bool) -> Result<DatasetMatrix> {
        match self {
            DataSource::Fmat(p) => data_io::load_fmat(p),
            DataSource::Idx { images, labels } => data_io::load_idx(images, labels, unit_scale),
        }
    }
}

/// Hidden layer sizes used for each code length on MNIST-like data.
pub fn standard_hidden_sizes(bits: usize) -> Option<[usize; 2]> {
    match bits {
        8 => Some([90, 20]),
        16 => Some([90, 30]),
        24 => Some([100, 40]),
        32 => Some([120, 50]),
        _ => None,
    }
}

/// Full layer sizes: `explicit` when given (checked against `dim` and
/// `bits`), otherwise the standard hidden sizes for `bits`.
pub fn layer_sizes(mode: Mode, dim: usize, bits: usize, explicit: Option<Vec<usize>>) -> Result<Vec<usize>> {
    let sizes = match explicit {
        Some(s) => s,
        None => {
            let [h1, h2] = standard_hidden_sizes(bits).ok_or_else(|| {
                Error::validation(format!("no standard architecture for {bits} bits; set layers explicitly"))
            })?;
            match mode {
                Mode::Unsupervised => vec![dim, h1, h2, bits, dim],
                Mode::Supervised => vec![dim, h1, h2, bits],
            }
        }
    };
    if sizes.first() != Some(&dim) {
        return Err(Error::validation(format!(
            "first layer size {:?} does not match data dimension {dim}",
            sizes.first()
        )));
    }
    let config = NetConfig::new(mode, sizes.clone())?;
    if config.bits() != bits {
        return Err(Error::validation(format!(
            "layers give a {}-bit code layer but bits = {bits}",
            config.bits()
        )));
    }
    Ok(sizes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub map: MeanAp,
    pub precision_at_2: f64,
}

/// mAP over Hamming rankings (truncated to `top_n`) and precision within
/// Hamming radius 2.
pub fn evaluate(
    db: &BinaryCodes,
    queries: &BinaryCodes,
    gt: &GroundTruth,
    top_n: Option<usize>,
) -> Result<Metrics> {
    let (db, queries) = (hamming::pack(db), hamming::pack(queries));
    let ranked = eval::rank_all(&db, &queries, top_n)?;
    Ok(Metrics {
        map: eval::mean_ap(&ranked, gt, top_n)?,
        precision_at_2: eval::precision_at_radius(&db, &queries, gt, 2)?,
    })
}

#[derive(Debug, Clone)]
pub struct MnistOptions {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub unit_scale: bool,
    pub queries_per_class: usize,
    pub neighbours: usize,
    pub bits: Vec<usize>,
    pub seed: u64,
    pub hyper: UhHyperParams,
    pub lbfgs: LbfgsConfig,
    pub config_hash: String,
}

impl MnistOptions {
    pub fn new(images: &Path, labels: &Path) -> Self {
        MnistOptions {
            images: images.into(),
            labels: labels.into(),
            unit_scale: true,
            queries_per_class: 100,
            neighbours: 50,
            bits: vec![16, 24],
            seed: 1,
            hyper: UhHyperParams::default(),
            lbfgs: LbfgsConfig::default(),
            config_hash: String::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MnistRow {
    pub bits: usize,
    pub itq: Report,
    pub uh: Report,
}

/// Splits the images into database and queries, builds Euclidean
/// ground truth, then trains and evaluates ITQ and UH-BDNN at each code
/// length. Database codes come from encoding the database with the learned
/// hash function, exactly as the queries are encoded.
pub fn mnist_uh(opts: &MnistOptions) -> Result<Vec<MnistRow>> {
    let data = data_io::load_idx(&opts.images, &opts.labels, opts.unit_scale)?;
    let split = data_io::split(&data, QuerySelection::PerClass(opts.queries_per_class), opts.seed)?;
    let (db, queries) = split.apply(&data)?;
    log::info!("database {} samples, {} queries, dimension {}", db.len(), queries.len(), db.dim());
    let gt = eval::euclid_ground_truth(&db, &queries, opts.neighbours)?;

    let report = |method: &str, bits: usize, m: Metrics, wall: f64| Report {
        dataset: "mnist".into(),
        method: method.into(),
        bits,
        map: m.map.value,
        precision_at_2: m.precision_at_2,
        wall_seconds: wall,
        seed: opts.seed,
        config_hash: opts.config_hash.clone(),
        top_n: None,
        empty_relevant: m.map.empty_relevant,
    };

    let mut rows = Vec::new();
    for &bits in &opts.bits {
        let t0 = Instant::now();
        let itq_run = itq::itq_train(db.features(), bits, opts.hyper.itq_iterations, opts.seed)?;
        let itq_db = itq::itq_encode(&itq_run.model, db.features())?;
        let itq_q = itq::itq_encode(&itq_run.model, queries.features())?;
        let itq_metrics = evaluate(&itq_db, &itq_q, &gt, None)?;
        let itq_report = report("ITQ", bits, itq_metrics, t0.elapsed().as_secs_f64());
        log::info!("{itq_report}");

        let t0 = Instant::now();
        let config = NetConfig::unsupervised(layer_sizes(Mode::Unsupervised, db.dim(), bits, None)?)?;
        let run = uh_bdnn::train_uh(db.features(), &config, &opts.hyper, &opts.lbfgs, opts.seed)?;
        let uh_db = hashnet::encode(&run.params, &config, db.features())?;
        let uh_q = hashnet::encode(&run.params, &config, queries.features())?;
        let uh_metrics = evaluate(&uh_db, &uh_q, &gt, None)?;
        let uh_report = report("UH-BDNN", bits, uh_metrics, t0.elapsed().as_secs_f64());
        log::info!("{uh_report}");

        rows.push(MnistRow {
            bits,
            itq: itq_report,
            uh: uh_report,
        });
    }
    Ok(rows)
}
