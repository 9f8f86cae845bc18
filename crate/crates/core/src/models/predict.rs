use std::collections::BTreeMap;

use nncore::{AttentionWeights, Graph, RngStream};
use serde::{Deserialize, Serialize};

use super::net::Model;
use super::{Result, Task};

/// Raw outputs of a batched, dropout-free pass.
pub(crate) struct Inference {
    /// `[requested head][sample] -> logits`.
    pub logits: Vec<Vec<Vec<f64>>>,
    /// Per sample: attention distribution of every computed site.
    pub attention: Vec<Vec<(String, Vec<f64>)>>,
}

/// Evaluates `seqs` in length buckets of at most `batch_size`; results are
/// returned in input order.
pub(crate) fn run_inference(
    model: &Model,
    seqs: &[Vec<usize>],
    heads: &[usize],
    batch_size: usize,
    with_attention: bool,
) -> Result<Inference> {
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in seqs.iter().enumerate() {
        by_len.entry(s.len()).or_default().push(i);
    }
    let mut logits = vec![vec![Vec::new(); seqs.len()]; heads.len()];
    let mut attention = vec![Vec::new(); seqs.len()];
    let mut rng = RngStream::new(0);
    for idx in by_len.values() {
        for chunk in idx.chunks(batch_size.max(1)) {
            let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let mut g = Graph::new(&model.store, false);
            let out = model.forward(&mut g, &batch, heads, &mut rng)?;
            for (k, &h) in heads.iter().enumerate() {
                let rows = g.value(out.logits[h].expect("requested")).to_rows();
                for (&i, row) in chunk.iter().zip(rows) {
                    logits[k][i] = row;
                }
            }
            if with_attention {
                for (name, per_seq) in out.attention {
                    for (&i, w) in chunk.iter().zip(per_seq) {
                        attention[i].push((name.clone(), w));
                    }
                }
            }
        }
    }
    Ok(Inference { logits, attention })
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadOutput {
    pub task: Task,
    pub probabilities: Vec<f64>,
}

impl HeadOutput {
    /// Index and probability of the most likely class.
    pub fn top(&self) -> (usize, f64) {
        let i = super::train::argmax(&self.probabilities);
        (i, self.probabilities[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub heads: Vec<HeadOutput>,
    pub attention: Vec<(String, AttentionWeights)>,
}

impl Prediction {
    pub fn head(&self, task: Task) -> Option<&HeadOutput> {
        self.heads.iter().find(|h| h.task == task)
    }
}

/// Class probabilities for every labelled head plus attention weights per
/// site, for already-encoded sequences.
pub fn predict_ids(model: &Model, seqs: &[Vec<usize>]) -> Result<Vec<Prediction>> {
    let heads: Vec<usize> = (0..model.spec.heads.len())
        .filter(|&h| model.spec.heads[h].task != Task::Mlm)
        .collect();
    let inf = run_inference(model, seqs, &heads, 64, true)?;
    let mut out = Vec::with_capacity(seqs.len());
    for (i, attn) in inf.attention.into_iter().enumerate() {
        let heads = heads
            .iter()
            .enumerate()
            .map(|(k, &h)| HeadOutput {
                task: model.spec.heads[h].task,
                probabilities: softmax(&inf.logits[k][i]),
            })
            .collect();
        let attention = attn
            .into_iter()
            .map(|(name, w)| Ok((name, AttentionWeights::new(w)?)))
            .collect::<Result<Vec<_>>>()?;
        out.push(Prediction { heads, attention });
    }
    Ok(out)
}

/// Encodes `texts` with the model vocabulary and predicts.
pub fn predict<S: AsRef<str>>(model: &Model, texts: &[S]) -> Result<Vec<Prediction>> {
    let seqs: Vec<Vec<usize>> = texts.iter().map(|t| model.encode(t.as_ref())).collect();
    predict_ids(model, &seqs)
}
