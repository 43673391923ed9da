//! Deterministic bundled datasets. Each is produced as CSV text (label
//! column `label`) and loaded through the same path as user files.

use rand::Rng;
use rand_distr::StandardNormal;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};

use crate::artifacts::Artifacts;
use crate::data::{read_csv, DataError, Dataset, NormalizationSpec};
use crate::gaussian::GaussianStats;
use crate::model::{LinearModel, ModelArtifact};
use crate::rng::{self, StreamRng};

pub const LABEL_COLUMN: &str = "label";

/// Names accepted by [`csv_text`] and [`load_bundled`].
pub const BUNDLED: [&str; 4] = ["synthetic", "credit", "bank", "segments"];

/// Weights of the synthetic generator: label 1 iff `w·x + 0.2 + noise >= 0`.
pub const SYNTHETIC_WEIGHTS: [f64; 10] = [1.5, -1.2, 1.0, -0.8, 0.6, -0.5, 0.4, -0.3, 0.2, -0.1];

const SEED: u64 = 20_240_501;

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| (*s).to_owned()).collect(),
            rows: Vec::new(),
        }
    }

    fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn n(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logistic noise via the inverse CDF.
fn logistic(rng: &mut StreamRng) -> f64 {
    let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
    (u / (1.0 - u)).ln()
}

fn f(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

/// Level chosen by where `score` falls among `cuts` (ascending).
fn level<'a>(levels: &[&'a str], cuts: &[f64], score: f64) -> &'a str {
    levels[cuts.iter().filter(|&&c| score > c).count()]
}

fn synthetic() -> Table {
    let mut rng = rng::stream(SEED, &[1]);
    let header: Vec<String> = (0..10).map(|i| format!("x{i}")).chain([LABEL_COLUMN.to_owned()]).collect();
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for _ in 0..2000 {
        // AR(1) correlation 0.5 between neighbouring features
        let mut x = [0.0f64; 10];
        x[0] = n(&mut rng);
        for i in 1..10 {
            x[i] = 0.5 * x[i - 1] + 0.75f64.sqrt() * n(&mut rng);
        }
        let s: f64 = SYNTHETIC_WEIGHTS.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + 0.2;
        let y = u8::from(s + 0.3 * n(&mut rng) >= 0.0);
        let mut row: Vec<String> = x.iter().map(|&v| f(v, 4)).collect();
        row.push(y.to_string());
        t.rows.push(row);
    }
    t
}

fn credit() -> Table {
    let mut rng = rng::stream(SEED, &[2]);
    let mut t = Table::new(&[
        "age",
        "income",
        "credit_limit",
        "utilization",
        "late_payments",
        "open_accounts",
        "months_employed",
        "debt_ratio",
        "previous_default",
        "education",
        "marital",
        "housing",
        "purpose",
        LABEL_COLUMN,
    ]);
    for _ in 0..3000 {
        let r = n(&mut rng);
        let age = (45.0 - 8.0 * r + 10.0 * n(&mut rng)).clamp(21.0, 75.0).round();
        let income = (3.6 - 0.3 * r + 0.4 * n(&mut rng)).exp();
        let limit = income * (2.0 + 0.5 * n(&mut rng)).max(0.5);
        let util = sigmoid(0.8 * r + n(&mut rng));
        let late = (1.5 + 1.2 * r + n(&mut rng)).max(0.0).round();
        let accounts = (6.0 - 0.5 * r + 2.0 * n(&mut rng)).clamp(0.0, 20.0).round();
        let employed = (60.0 - 20.0 * r + 30.0 * n(&mut rng)).clamp(0.0, 400.0).round();
        let debt = (0.35 + 0.12 * r + 0.1 * n(&mut rng)).clamp(0.0, 1.5);
        let prev = u8::from(rng.random::<f64>() < sigmoid(-2.0 + r));
        let edu = level(
            &["graduate", "university", "high_school", "other"],
            &[-0.8, 0.3, 1.3],
            0.6 * r + n(&mut rng),
        );
        let marital = level(&["married", "single", "other"], &[0.0, 1.2], 0.3 * r + n(&mut rng));
        let housing = level(&["own", "rent", "free"], &[-0.2, 1.0], 0.5 * r + n(&mut rng));
        let purpose = level(
            &["car", "home", "education", "business"],
            &[-0.7, 0.2, 0.9],
            0.2 * r + n(&mut rng),
        );
        let score = -0.6 + 1.1 * r + 0.35 * (late - 1.5) + 1.2 * (util - 0.5) - 0.25 * (income.ln() - 3.6)
            + 0.8 * f64::from(prev)
            + 0.6 * logistic(&mut rng);
        let y = u8::from(score >= 0.0);
        t.rows.push(vec![
            f(age, 0),
            f(income, 2),
            f(limit, 2),
            f(util, 4),
            f(late, 0),
            f(accounts, 0),
            f(employed, 0),
            f(debt, 4),
            prev.to_string(),
            edu.into(),
            marital.into(),
            housing.into(),
            purpose.into(),
            y.to_string(),
        ]);
    }
    t
}

fn bank() -> Table {
    let mut rng = rng::stream(SEED, &[3]);
    let mut t = Table::new(&[
        "age",
        "balance",
        "duration",
        "campaign",
        "pdays",
        "previous",
        "day",
        "emp_var_rate",
        "cons_price",
        "euribor",
        "job",
        "marital",
        "education",
        "contact",
        "quarter",
        "poutcome",
        LABEL_COLUMN,
    ]);
    for _ in 0..3000 {
        let e = n(&mut rng);
        let macro_ = n(&mut rng);
        let age = (40.0 + 10.0 * n(&mut rng) + 2.0 * e).clamp(18.0, 90.0).round();
        let balance = 1500.0 + 1200.0 * n(&mut rng) + 300.0 * e;
        let duration = (250.0 + 180.0 * e + 80.0 * n(&mut rng)).max(5.0).round();
        let campaign = (2.5 - 0.6 * e + n(&mut rng)).max(1.0).round();
        let previous = (0.4 + 0.5 * e + 0.7 * n(&mut rng)).max(0.0).round();
        let pdays = if previous > 0.0 {
            (200.0 - 60.0 * e + 80.0 * n(&mut rng)).clamp(1.0, 800.0).round()
        } else {
            999.0
        };
        let day = rng.random_range(1..=31) as f64;
        let emp = 0.2 + 1.5 * macro_ + 0.2 * n(&mut rng);
        let cons = 93.5 + 0.5 * macro_ + 0.2 * n(&mut rng);
        let euribor = (3.0 + 1.6 * macro_ + 0.3 * n(&mut rng)).max(0.0);
        let job = level(
            &["admin", "blue_collar", "technician", "services", "management", "retired"],
            &[-1.0, -0.4, 0.1, 0.6, 1.2],
            0.4 * e + n(&mut rng),
        );
        let marital = level(&["married", "single", "divorced"], &[0.1, 1.1], 0.2 * e + n(&mut rng));
        let education = level(
            &["primary", "secondary", "tertiary", "unknown"],
            &[-0.9, 0.4, 1.6],
            0.5 * e + n(&mut rng),
        );
        let contact = level(&["telephone", "cellular"], &[-0.3], 0.6 * e + n(&mut rng));
        let quarter = level(&["q1", "q2", "q3", "q4"], &[-0.6, 0.0, 0.6], n(&mut rng) - 0.3 * macro_);
        let poutcome = if previous > 0.0 {
            level(&["failure", "success"], &[0.8], 0.9 * e + n(&mut rng))
        } else {
            "nonexistent"
        };
        let score = -1.0 + 1.6 * e - 0.9 * macro_
            + 0.0025 * (duration - 250.0)
            + if poutcome == "success" { 1.0 } else { 0.0 }
            + if contact == "cellular" { 0.3 } else { 0.0 }
            + 0.5 * logistic(&mut rng);
        let y = u8::from(score >= 0.0);
        t.rows.push(vec![
            f(age, 0),
            f(balance, 0),
            f(duration, 0),
            f(campaign, 0),
            f(pdays, 0),
            f(previous, 0),
            f(day, 0),
            f(emp, 3),
            f(cons, 3),
            f(euribor, 3),
            job.into(),
            marital.into(),
            education.into(),
            contact.into(),
            quarter.into(),
            poutcome.into(),
            y.to_string(),
        ]);
    }
    t
}

fn segments() -> Table {
    let mut rng = rng::stream(SEED, &[4]);
    let header: Vec<String> = (0..8).map(|i| format!("f{i}")).chain([LABEL_COLUMN.to_owned()]).collect();
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    let centers: Vec<[f64; 8]> = (0..4)
        .map(|_| {
            let mut c = [0.0; 8];
            c.iter_mut().for_each(|v| *v = 1.2 * n(&mut rng));
            c
        })
        .collect();
    for i in 0..1600 {
        let class = i % 4;
        let shared = n(&mut rng);
        let mut row: Vec<String> = centers[class]
            .iter()
            .map(|c| f(c + 0.8 * n(&mut rng) + 0.4 * shared, 4))
            .collect();
        row.push(class.to_string());
        t.rows.push(row);
    }
    t
}

/// CSV text of a bundled dataset.
pub fn csv_text(name: &str) -> Result<String, DataError> {
    let table = match name {
        "synthetic" => synthetic(),
        "credit" => credit(),
        "bank" => bank(),
        "segments" => segments(),
        other => return Err(DataError::UnknownDataset(other.to_owned())),
    };
    Ok(table.to_csv())
}

/// A bundled dataset, raw (unnormalized) with categorical columns one-hot encoded.
pub fn load_bundled(name: &str) -> Result<Dataset, DataError> {
    read_csv(csv_text(name)?.as_bytes(), LABEL_COLUMN)
}

/// The three-feature loan scorer `Job - 0.5 Loc + 0.5 Inc` with standard
/// normal, independent features and identity normalization. `Job` is
/// usually public; with `Job = 1.0` the decision is known up front, with
/// `Job = -0.9` it takes `Loc = 1.0` to settle on label 0.
pub fn loan_example() -> Artifacts {
    let names = ["Job", "Loc", "Inc"];
    let normalizer = NormalizationSpec {
        ranges: names.iter().map(|n| ((*n).to_owned(), (-1.0, 1.0))).collect::<IndexMap<_, _>>(),
    };
    let stats = GaussianStats::new(DVector::zeros(3), DMatrix::identity(3, 3), 0.0).expect("identity covariance");
    let model = LinearModel::binary(vec![1.0, -0.5, 0.5], 0.0);
    let mut artifact = ModelArtifact::new(model);
    artifact.importance = Some(vec![1.0, 0.5, 0.5]);
    Artifacts::new(artifact, stats, normalizer).expect("consistent shapes")
}
