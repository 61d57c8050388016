//! Pre-inference activation cache.
//!
//! When a block with a non-empty frozen prefix trains, the prefix output
//! for every sample of the visit's index set is computed once and reused
//! for every step. Because all layer arithmetic is row-independent with a
//! fixed accumulation order, cached training is bitwise identical to
//! uncached training; only the per-step forward cost changes.
//!
//! The cache records a digest of the prefix parameters at build time and
//! verifies it before every cached step: a mutated prefix is a hard error,
//! never a silent rebuild.

use crate::autodiff;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamSet};
use crate::optim::{self, OptimHyper, OptimState};
use crate::partition::FreezeMask;
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

/// Frozen-prefix activations for one block visit.
#[derive(Clone, Debug)]
pub enum ActivationCache {
    /// No frozen prefix (block 0): training proceeds exactly as uncached,
    /// at zero build cost.
    Passthrough,
    Built(BuiltCache),
}

#[derive(Clone, Debug)]
pub struct BuiltCache {
    prefix_end: usize,
    /// Per-sample activations at `prefix_end`, aligned with `indices`.
    entries: Vec<Tensor>,
    /// Dataset indices the entries were computed for.
    indices: Vec<usize>,
    prefix_digest: [u8; 32],
    build_flops: u64,
}

impl ActivationCache {
    pub fn prefix_end(&self) -> usize {
        match self {
            ActivationCache::Passthrough => 0,
            ActivationCache::Built(c) => c.prefix_end,
        }
    }

    /// One-time forward cost charged for building the cache.
    pub fn build_flops(&self) -> u64 {
        match self {
            ActivationCache::Passthrough => 0,
            ActivationCache::Built(c) => c.build_flops,
        }
    }

    /// Floats held by the cached entries.
    pub fn float_units(&self) -> u64 {
        match self {
            ActivationCache::Passthrough => 0,
            ActivationCache::Built(c) => c.entries.iter().map(|t| t.numel() as u64).sum(),
        }
    }

    pub fn entry_count(&self) -> usize {
        match self {
            ActivationCache::Passthrough => 0,
            ActivationCache::Built(c) => c.entries.len(),
        }
    }
}

impl BuiltCache {
    pub fn entry(&self, position: usize) -> &Tensor {
        &self.entries[position]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn verify(&self, model: &ModelSpec, params: &ParamSet) -> Result<()> {
        if prefix_digest(model, params, self.prefix_end) != self.prefix_digest {
            return Err(Error::StaleCache);
        }
        Ok(())
    }

    /// Serializes the entries to a little-endian binary file:
    /// `count: u64, rank: u64, dims: u64 x rank`, then `count * prod(dims)`
    /// f64 values.
    pub fn write_entries(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let shape = self.entries[0].shape();
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        out.write_all(&(shape.len() as u64).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for e in &self.entries {
            for v in e.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Reads entries written by [`BuiltCache::write_entries`].
pub fn read_entries(path: &Path) -> Result<Vec<Tensor>> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut u64_buf = [0u8; 8];
    let mut read_u64 = |input: &mut dyn Read| -> Result<u64> {
        input.read_exact(&mut u64_buf)?;
        Ok(u64::from_le_bytes(u64_buf))
    };
    let count = read_u64(&mut input)? as usize;
    let rank = read_u64(&mut input)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(&mut input)? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut entries = Vec::with_capacity(count);
    let mut f64_buf = [0u8; 8];
    for _ in 0..count {
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            input.read_exact(&mut f64_buf)?;
            data.push(f64::from_le_bytes(f64_buf));
        }
        entries.push(Tensor::new(shape.clone(), data)?);
    }
    Ok(entries)
}

fn prefix_digest(model: &ModelSpec, params: &ParamSet, prefix_end: usize) -> [u8; 32] {
    let _ = model;
    params.digest_layers(0..prefix_end)
}

/// Computes the cache for the given dataset indices. `prefix_end == 0`
/// yields the explicit passthrough cache.
pub fn build_cache(
    model: &ModelSpec,
    params: &ParamSet,
    dataset: &Dataset,
    indices: &[usize],
    prefix_end: usize,
) -> Result<ActivationCache> {
    if prefix_end == 0 {
        return Ok(ActivationCache::Passthrough);
    }
    if indices.is_empty() {
        return Err(Error::EmptyInput("cache build index set".into()));
    }
    let inputs = dataset.stacked_inputs(indices)?;
    let (stacked, build_flops) = autodiff::forward_prefix(model, params, &inputs, prefix_end)?;
    let entries = (0..indices.len()).map(|r| stacked.unstack(r)).collect();
    Ok(ActivationCache::Built(BuiltCache {
        prefix_end,
        entries,
        indices: indices.to_vec(),
        prefix_digest: prefix_digest(model, params, prefix_end),
        build_flops,
    }))
}

/// Result of one training step (cached or not).
#[derive(Clone, Copy, Debug)]
pub struct StepResult {
    pub loss: f64,
    /// Floats held by the step's activation tape.
    pub activation_units: u64,
    /// Forward float-ops spent in this step.
    pub forward_flops: u64,
}

/// One training step through the cache: verifies cache validity, resumes
/// the forward pass from the cached activations, then runs backward and
/// the optimizer step. `positions` index into the cache's (and the
/// visit's) index list.
#[allow(clippy::too_many_arguments)]
pub fn train_step_cached(
    model: &ModelSpec,
    params: &mut ParamSet,
    cache: &ActivationCache,
    dataset: &Dataset,
    positions: &[usize],
    mask: &FreezeMask,
    state: &mut OptimState,
    hyper: &OptimHyper,
) -> Result<StepResult> {
    let (loss, tape) = match cache {
        ActivationCache::Passthrough => {
            let indices: Vec<usize> = positions.to_vec();
            let batch = dataset.batch(&indices)?;
            autodiff::forward(model, params, &batch, mask.backward_start())?
        }
        ActivationCache::Built(c) => {
            if mask.backward_start() < c.prefix_end {
                return Err(Error::TapeMismatch(format!(
                    "cache covers layers [0, {}) but the trainable block starts at layer {}",
                    c.prefix_end,
                    mask.backward_start()
                )));
            }
            c.verify(model, params)?;
            let rows: Vec<&Tensor> = positions.iter().map(|&p| c.entry(p)).collect();
            let activation = Tensor::stack(&rows)?;
            let indices: Vec<usize> = positions.iter().map(|&p| c.indices[p]).collect();
            let targets = dataset.batch(&indices)?.targets;
            autodiff::forward_from(
                model,
                params,
                activation,
                &targets,
                c.prefix_end,
                mask.backward_start(),
            )?
        }
    };
    let grads = autodiff::backward(model, params, &tape, mask)?;
    let result = StepResult {
        loss,
        activation_units: tape.float_units(),
        forward_flops: tape.forward_flops(),
    };
    optim::step(params, &grads, state, hyper)?;
    Ok(result)
}

/// The uncached counterpart of [`train_step_cached`], resolving positions
/// against an explicit index list. Used when pre-inference is disabled and
/// as the reference path in equivalence checks.
#[allow(clippy::too_many_arguments)]
pub fn train_step_uncached(
    model: &ModelSpec,
    params: &mut ParamSet,
    dataset: &Dataset,
    visit_indices: &[usize],
    positions: &[usize],
    mask: &FreezeMask,
    state: &mut OptimState,
    hyper: &OptimHyper,
) -> Result<StepResult> {
    let indices: Vec<usize> = positions.iter().map(|&p| visit_indices[p]).collect();
    let batch = dataset.batch(&indices)?;
    let (loss, tape) = autodiff::forward(model, params, &batch, mask.backward_start())?;
    let grads = autodiff::backward(model, params, &tape, mask)?;
    let result = StepResult {
        loss,
        activation_units: tape.float_units(),
        forward_flops: tape.forward_flops(),
    };
    optim::step(params, &grads, state, hyper)?;
    Ok(result)
}
