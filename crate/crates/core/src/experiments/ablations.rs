use serde::{Deserialize, Serialize};

use super::run::{evaluate, EvalSet, Workbench};
use crate::baselines::Ddn;
use crate::domains::{shuffle_embeddings, EmbeddingTable};
use crate::dynnet::DynamicNetwork;
use crate::error::Result;
use crate::seed;

/// Seed stream for embedding permutations.
const SHUFFLE_STREAM: u64 = 0x5AF1;
pub const DEFAULT_SHUFFLES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleReport {
    /// Validation accuracy with the correct embedding per domain.
    pub normal: f64,
    pub worst: f64,
    pub average: f64,
    pub per_seed: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// Validation accuracy when each domain is conditioned on another domain's
/// embedding, over `shuffles` seeded permutations.
pub fn eval_shuffle(bench: &Workbench, net: &DynamicNetwork, shuffles: usize) -> Result<ShuffleReport> {
    let model = Ddn(net.clone());
    let part = bench.eval_partition(&bench.val, &bench.config.train_keys)?;
    let set = bench.eval_set(&bench.val, &bench.val_bank, &part)?;
    let normal = evaluate(&model, &set)?.accuracy;
    let table = EmbeddingTable::compute(&part, &bench.val_bank)?;
    let seeds: Vec<u64> = (0..shuffles as u64)
        .map(|i| seed::derive(seed::derive(bench.config.seed, SHUFFLE_STREAM), i))
        .collect();
    let mut per_seed = Vec::with_capacity(shuffles);
    for &s in &seeds {
        let (shuffled, _) = shuffle_embeddings(table.embeddings(), s)?;
        let set = EvalSet {
            embeddings: shuffled.into_iter().map(|e| e.vector).collect(),
            ..bench.eval_set(&bench.val, &bench.val_bank, &part)?
        };
        per_seed.push(evaluate(&model, &set)?.accuracy);
    }
    let worst = per_seed.iter().copied().fold(f64::INFINITY, f64::min);
    let average = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
    Ok(ShuffleReport {
        normal,
        worst,
        average,
        per_seed,
        seeds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub eval_keys: Vec<String>,
    /// Grouped by the training keys.
    pub matched: f64,
    /// Grouped by `eval_keys`.
    pub mismatched: f64,
    /// One embedding averaged over the whole validation split.
    pub reference: f64,
    pub reference_embeddings: usize,
}

/// Validation accuracy of a network trained on one key set when domains are
/// re-derived with another.
pub fn eval_mismatch<S: AsRef<str>>(bench: &Workbench, net: &DynamicNetwork, eval_keys: &[S]) -> Result<MismatchReport> {
    let model = Ddn(net.clone());
    let keys: Vec<String> = eval_keys.iter().map(|k| k.as_ref().to_string()).collect();
    let score = |keys: &[String]| -> Result<(f64, usize)> {
        let part = bench.eval_partition(&bench.val, keys)?;
        let e = evaluate(&model, &bench.eval_set(&bench.val, &bench.val_bank, &part)?)?;
        Ok((e.accuracy, e.embeddings_used))
    };
    let (matched, _) = score(&bench.config.train_keys)?;
    let (mismatched, _) = score(&keys)?;
    let (reference, reference_embeddings) = score(&[])?;
    Ok(MismatchReport {
        eval_keys: keys,
        matched,
        mismatched,
        reference,
        reference_embeddings,
    })
}
