use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::net::Model;
use super::predict::run_inference;
use super::train::{argmax, finetune, Sample, Target, TrainConfig, TrainReport};
use super::{ModelError, Result, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Fraction of (record, head) pairs where student and teacher argmax
    /// agree after training.
    pub agreement: f64,
    pub teacher_params: usize,
    pub student_params: usize,
    pub train: TrainReport,
    /// Wall-clock seconds for one inference pass over the pool.
    pub teacher_seconds: f64,
    pub student_seconds: f64,
}

impl DistillReport {
    pub fn param_ratio(&self) -> f64 {
        self.teacher_params as f64 / self.student_params as f64
    }

    /// Student inference speed relative to the teacher.
    pub fn throughput_ratio(&self) -> f64 {
        self.teacher_seconds / self.student_seconds.max(f64::MIN_POSITIVE)
    }
}

/// Pairs each labelled teacher head with the student head of the same task
/// and label set.
fn head_pairs(teacher: &Model, student: &Model) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for (th, head) in teacher.spec.heads.iter().enumerate() {
        if head.task == Task::Mlm {
            continue;
        }
        let sh = student
            .spec
            .head_index(head.task)
            .ok_or_else(|| ModelError::LabelSetMismatch(format!("student has no `{}` head", head.task)))?;
        if student.spec.heads[sh].labels != head.labels {
            return Err(ModelError::LabelSetMismatch(format!("`{}` labels differ", head.task)));
        }
        pairs.push((th, sh));
    }
    if pairs.is_empty() {
        return Err(ModelError::LabelSetMismatch("teacher has no labelled heads".into()));
    }
    Ok(pairs)
}

fn logit_mse(student: &Model, seqs: &[Vec<usize>], heads: &[usize], targets: &[Vec<Vec<f64>>]) -> Result<(f64, f64)> {
    let inf = run_inference(student, seqs, heads, 64, false)?;
    let (mut mse, mut agree) = (0.0, 0usize);
    for (k, per_sample) in inf.logits.iter().enumerate() {
        let (mut sq, mut n) = (0.0, 0usize);
        for (s, t) in per_sample.iter().zip(&targets[k]) {
            sq += s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            n += s.len();
            agree += usize::from(argmax(s) == argmax(t));
        }
        mse += sq / n as f64;
    }
    Ok((mse / heads.len() as f64, agree as f64 / (heads.len() * seqs.len()) as f64))
}

/// Trains `student` to reproduce the teacher's raw logits on `pool` with a
/// mean-squared-error objective (no temperature).
pub fn distill<S: AsRef<str>>(
    teacher: &Model,
    student: &mut Model,
    pool: &[S],
    cfg: &DistillConfig,
) -> Result<DistillReport> {
    if pool.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let pairs = head_pairs(teacher, student)?;
    let teacher_heads: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let student_heads: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let t_seqs: Vec<Vec<usize>> = pool.iter().map(|t| teacher.encode(t.as_ref())).collect();
    let s_seqs: Vec<Vec<usize>> = pool.iter().map(|t| student.encode(t.as_ref())).collect();

    let started = Instant::now();
    let cached = run_inference(teacher, &t_seqs, &teacher_heads, 64, false)?.logits;
    let teacher_seconds = started.elapsed().as_secs_f64();

    let samples: Vec<Sample> = s_seqs
        .iter()
        .enumerate()
        .map(|(i, tokens)| Sample {
            id: i.to_string(),
            tokens: tokens.clone(),
            targets: student_heads
                .iter()
                .enumerate()
                .map(|(k, &h)| (h, Target::Logits(cached[k][i].clone())))
                .collect(),
        })
        .collect();

    let (initial_mse, _) = logit_mse(student, &s_seqs, &student_heads, &cached)?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        patience: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: cfg.seed,
    };
    let train = finetune(student, &samples, &[], &train_cfg)?;
    let started = Instant::now();
    let (final_mse, agreement) = logit_mse(student, &s_seqs, &student_heads, &cached)?;
    let student_seconds = started.elapsed().as_secs_f64();
    Ok(DistillReport {
        initial_mse,
        final_mse,
        agreement,
        teacher_params: teacher.num_params(),
        student_params: student.num_params(),
        train,
        teacher_seconds,
        student_seconds,
    })
}
