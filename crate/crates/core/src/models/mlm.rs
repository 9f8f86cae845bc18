use nncore::{Adam, AdamConfig, Graph, NodeId, RngStream};
use serde::{Deserialize, Serialize};

use super::config::{Architecture, EncoderConfig};
use super::net::Model;
use super::vocab::{MASK, NUM_SPECIALS};
use super::{ModelError, Result, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mask_rate: f64,
    pub mask_token_prob: f64,
    pub random_token_prob: f64,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl MlmConfig {
    pub fn from_encoder(c: &EncoderConfig, epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: c.pretrain_batch_size,
            lr: c.pretrain_lr,
            mask_rate: c.mask_rate,
            mask_token_prob: c.mask_token_prob,
            random_token_prob: c.random_token_prob,
            max_seq_len: c.max_seq_len,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MlmReport {
    /// Mean masked cross-entropy per epoch (training mode).
    pub epoch_losses: Vec<f64>,
    /// Masked cross-entropy with dropout off and a fixed masking draw.
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
    pub tokens_seen: usize,
    pub tokens_selected: usize,
    pub chunks: usize,
}

impl MlmReport {
    pub fn masked_fraction(&self) -> f64 {
        self.tokens_selected as f64 / self.tokens_seen.max(1) as f64
    }
}

/// Exactly ⌊rate·len⌋ distinct positions, drawn uniformly, in ascending
/// order.
pub fn select_mask_positions(len: usize, rate: f64, rng: &mut RngStream) -> Vec<usize> {
    let k = ((len as f64) * rate + 1e-9).floor() as usize;
    let mut all: Vec<usize> = (0..len).collect();
    // Partial Fisher-Yates: the first k slots become a uniform k-subset.
    for i in 0..k.min(len) {
        let j = i + rng.below(len - i);
        all.swap(i, j);
    }
    let mut chosen = all[..k.min(len)].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Corrupts the selected positions: `[MASK]` with probability
/// `mask_token_prob`, a random ordinary token with `random_token_prob`,
/// otherwise unchanged.
pub fn corrupt(
    seq: &[usize],
    positions: &[usize],
    mask_token_prob: f64,
    random_token_prob: f64,
    vocab_size: usize,
    rng: &mut RngStream,
) -> Vec<usize> {
    let mut out = seq.to_vec();
    for &p in positions {
        let u = rng.uniform();
        if u < mask_token_prob {
            out[p] = MASK;
        } else if u < mask_token_prob + random_token_prob && vocab_size > NUM_SPECIALS {
            out[p] = NUM_SPECIALS + rng.below(vocab_size - NUM_SPECIALS);
        }
    }
    out
}

/// Greedily packs whole sequences, in order, into chunks of at most
/// `max_len` tokens.
pub fn pack_sequences(seqs: &[Vec<usize>], max_len: usize) -> Result<Vec<Vec<usize>>> {
    let mut chunks = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for s in seqs.iter().filter(|s| !s.is_empty()) {
        if s.len() > max_len {
            return Err(ModelError::SequenceTooLong {
                len: s.len(),
                max: max_len,
            });
        }
        if current.len() + s.len() > max_len {
            chunks.push(std::mem::take(&mut current));
        }
        current.extend_from_slice(s);
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    if chunks.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    Ok(chunks)
}

struct MaskedChunk {
    input: Vec<usize>,
    targets: Vec<Option<usize>>,
    selected: usize,
}

fn mask_chunk(chunk: &[usize], cfg: &MlmConfig, vocab: usize, rng: &mut RngStream) -> MaskedChunk {
    let positions = select_mask_positions(chunk.len(), cfg.mask_rate, rng);
    let input = corrupt(chunk, &positions, cfg.mask_token_prob, cfg.random_token_prob, vocab, rng);
    let mut targets = vec![None; chunk.len()];
    for &p in &positions {
        targets[p] = Some(chunk[p]);
    }
    MaskedChunk {
        input,
        targets,
        selected: positions.len(),
    }
}

/// Summed cross-entropy over masked positions of `chunks`; unmasked
/// positions carry no target and contribute nothing.
fn masked_loss(
    model: &Model,
    g: &mut Graph,
    head: usize,
    chunks: &[MaskedChunk],
    rng: &mut RngStream,
) -> Result<Option<NodeId>> {
    let mut parts = Vec::new();
    for c in chunks.iter().filter(|c| c.selected > 0) {
        let out = model.forward(g, std::slice::from_ref(&c.input), &[head], rng)?;
        parts.push(g.cross_entropy(out.logits[head].expect("requested"), &c.targets)?);
    }
    Ok(match parts.len() {
        0 => None,
        1 => Some(parts[0]),
        _ => Some(g.add_scalars(&parts)?),
    })
}

fn mlm_head(model: &Model) -> Result<usize> {
    if !matches!(model.spec.arch, Architecture::Encoder(_)) {
        return Err(ModelError::InvalidConfig("masked-LM pretraining needs an encoder".into()));
    }
    model
        .spec
        .head_index(Task::Mlm)
        .ok_or_else(|| ModelError::InvalidConfig("encoder has no mlm head".into()))
}

/// Mean masked cross-entropy in evaluation mode under a masking draw fixed
/// by `seed`.
pub fn mlm_eval_loss(model: &Model, chunks: &[Vec<usize>], cfg: &MlmConfig, seed: u64) -> Result<f64> {
    let head = mlm_head(model)?;
    let vocab = model.spec.vocab.len();
    let root = RngStream::new(seed).split("mlm-eval");
    let (mut total, mut count) = (0.0, 0usize);
    for (i, c) in chunks.iter().enumerate() {
        let masked = mask_chunk(c, cfg, vocab, &mut root.split_index("chunk", i as u64));
        if masked.selected == 0 {
            continue;
        }
        let mut g = Graph::new(&model.store, false);
        let mut rng = RngStream::new(0);
        if let Some(loss) = masked_loss(model, &mut g, head, std::slice::from_ref(&masked), &mut rng)? {
            total += g.value(loss).item();
            count += masked.selected;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Masked-LM pretraining on packed chunks. There is no next-sentence
/// objective.
pub fn pretrain_mlm(model: &mut Model, corpus: &[Vec<usize>], cfg: &MlmConfig) -> Result<MlmReport> {
    let head = mlm_head(model)?;
    let chunks = pack_sequences(corpus, cfg.max_seq_len)?;
    let vocab = model.spec.vocab.len();
    let root = RngStream::new(cfg.seed).split("mlm");
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut report = MlmReport {
        chunks: chunks.len(),
        initial_eval_loss: mlm_eval_loss(model, &chunks, cfg, cfg.seed)?,
        ..Default::default()
    };
    for epoch in 0..cfg.epochs {
        let erng = root.split_index("epoch", epoch as u64);
        let mut order: Vec<usize> = (0..chunks.len()).collect();
        erng.split("order").shuffle(&mut order);
        let (mut loss_sum, mut masked_sum) = (0.0, 0usize);
        for (step, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let mut mrng = erng.split_index("mask", step as u64);
            let masked: Vec<MaskedChunk> = batch.iter().map(|&i| mask_chunk(&chunks[i], cfg, vocab, &mut mrng)).collect();
            let selected: usize = masked.iter().map(|m| m.selected).sum();
            report.tokens_seen += batch.iter().map(|&i| chunks[i].len()).sum::<usize>();
            report.tokens_selected += selected;
            if selected == 0 {
                continue;
            }
            let mut drng = erng.split_index("dropout", step as u64);
            let grads = {
                let mut g = Graph::new(&model.store, true);
                let loss = masked_loss(model, &mut g, head, &masked, &mut drng)?.expect("selected > 0");
                loss_sum += g.value(loss).item();
                masked_sum += selected;
                let mean = g.affine(loss, 1.0 / selected as f64, 0.0);
                g.backward(mean)?
            };
            adam.step(&mut model.store, &grads)?;
        }
        let mean = if masked_sum == 0 { 0.0 } else { loss_sum / masked_sum as f64 };
        log::info!("mlm epoch {}: masked ce {mean:.4}", epoch + 1);
        report.epoch_losses.push(mean);
    }
    report.final_eval_loss = mlm_eval_loss(model, &chunks, cfg, cfg.seed)?;
    Ok(report)
}
