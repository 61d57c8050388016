//! Datasets: synthetic generators and simple file loaders.
//!
//! Samples are stored individually (input tensor, target tensor) so
//! training code can assemble batches from arbitrary index lists and the
//! pre-inference cache can key entries by sample.

use crate::autodiff::Batch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct Sample {
    pub input: Tensor,
    pub target: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// Stacks the samples at `indices` into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let inputs: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].input).collect();
        let targets: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].target).collect();
        Ok(Batch {
            inputs: Tensor::stack(&inputs)?,
            targets: Tensor::stack(&targets)?,
        })
    }

    /// All inputs as one `[n, ...]` tensor (used by cache builds).
    pub fn stacked_inputs(&self, indices: &[usize]) -> Result<Tensor> {
        let inputs: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].input).collect();
        Tensor::stack(&inputs)
    }
}

/// Declarative dataset description used by configuration files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Regression targets produced by a hidden random linear map
    /// (optionally noisy): `y = x W_teacher + noise`.
    TeacherStudent {
        n: usize,
        in_dim: usize,
        out_dim: usize,
        #[serde(default)]
        noise: f64,
        seed: u64,
    },
    /// Gaussian blob classification with integer class targets.
    Classification {
        n: usize,
        dim: usize,
        classes: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
        seed: u64,
    },
    /// Numeric CSV; the last `targets` columns are the regression target.
    Csv { path: String, targets: usize },
    /// JSON lines of the form `{"x": [...], "y": [...]}`.
    Jsonl { path: String },
}

fn default_spread() -> f64 {
    3.0
}

fn default_sigma() -> f64 {
    0.5
}

impl DatasetSpec {
    pub fn build(&self, base_dir: Option<&Path>) -> Result<Dataset> {
        match self {
            DatasetSpec::TeacherStudent { n, in_dim, out_dim, noise, seed } => {
                Ok(teacher_student(*n, *in_dim, *out_dim, *noise, *seed))
            }
            DatasetSpec::Classification { n, dim, classes, spread, sigma, seed } => {
                Ok(classification_blobs(*n, *dim, *classes, *spread, *sigma, *seed))
            }
            DatasetSpec::Csv { path, targets } => from_csv(&resolve(base_dir, path), *targets),
            DatasetSpec::Jsonl { path } => from_jsonl(&resolve(base_dir, path)),
        }
    }
}

fn resolve(base: Option<&Path>, path: &str) -> std::path::PathBuf {
    match base {
        Some(b) if !Path::new(path).is_absolute() => b.join(path),
        _ => Path::new(path).to_path_buf(),
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = loop {
        let v = rng.gen::<f64>();
        if v > 0.0 {
            break v;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws `n` gaussian inputs and targets `y = x W + noise`, where the
/// teacher map `W` is itself drawn from the seed. The optimum of a linear
/// student on this data is known in closed form (least squares).
pub fn teacher_student(n: usize, in_dim: usize, out_dim: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (in_dim as f64).sqrt();
    let teacher: Vec<f64> = (0..in_dim * out_dim).map(|_| normal(&mut rng) * scale).collect();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..in_dim).map(|_| normal(&mut rng)).collect();
        let mut y = vec![0.0; out_dim];
        for (o, yo) in y.iter_mut().enumerate() {
            for (i, xi) in x.iter().enumerate() {
                *yo += xi * teacher[i * out_dim + o];
            }
            if noise > 0.0 {
                *yo += noise * normal(&mut rng);
            }
        }
        samples.push(Sample {
            input: Tensor::new(vec![in_dim], x).expect("input"),
            target: Tensor::new(vec![out_dim], y).expect("target"),
        });
    }
    Dataset::new(samples)
}

/// Gaussian blobs: class centers drawn at `spread * N(0, I)`, samples at
/// `center + sigma * N(0, I)`, classes assigned round-robin.
pub fn classification_blobs(
    n: usize,
    dim: usize,
    classes: usize,
    spread: f64,
    sigma: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| spread * normal(&mut rng)).collect())
        .collect();
    let mut samples = Vec::with_capacity(n);
    for s in 0..n {
        let c = s % classes;
        let x: Vec<f64> = centers[c]
            .iter()
            .map(|&m| m + sigma * normal(&mut rng))
            .collect();
        samples.push(Sample {
            input: Tensor::new(vec![dim], x).expect("input"),
            target: Tensor::new(vec![1], vec![c as f64]).expect("target"),
        });
    }
    Dataset::new(samples)
}

/// Loads a headerless numeric CSV; the trailing `target_cols` columns form
/// the target vector.
pub fn from_csv(path: &Path, target_cols: usize) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut samples = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidConfig(format!(
                        "{}:{}: not a number: {v:?}",
                        path.display(),
                        lineno + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if values.len() <= target_cols {
            return Err(Error::InvalidConfig(format!(
                "{}:{}: row has {} columns but {target_cols} target columns were requested",
                path.display(),
                lineno + 1,
                values.len()
            )));
        }
        let split = values.len() - target_cols;
        samples.push(Sample {
            input: Tensor::new(vec![split], values[..split].to_vec())?,
            target: Tensor::new(vec![target_cols], values[split..].to_vec())?,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("csv dataset {}", path.display())));
    }
    Ok(Dataset::new(samples))
}

/// Loads JSON lines `{"x": [...], "y": [...]}`.
pub fn from_jsonl(path: &Path) -> Result<Dataset> {
    #[derive(Deserialize)]
    struct Row {
        x: Vec<f64>,
        y: Vec<f64>,
    }
    let file = std::fs::File::open(path)?;
    let mut samples = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line)?;
        samples.push(Sample {
            input: Tensor::new(vec![row.x.len()], row.x)?,
            target: Tensor::new(vec![row.y.len()], row.y)?,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("jsonl dataset {}", path.display())));
    }
    Ok(Dataset::new(samples))
}
