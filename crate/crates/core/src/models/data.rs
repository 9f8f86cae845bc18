use std::collections::BTreeSet;

use crate::corpus::{proxy_label_diaglossia, DiaglossLabel, Level, TweetRecord};

use super::net::Model;
use super::train::{Sample, Target};
use super::{Result, Task, TaskHead};

/// Label of `record` for `task`. The code-switching task predicts the
/// record's location at `codesw_level`.
pub fn label_of(record: &TweetRecord, task: Task, codesw_level: Level) -> Option<String> {
    match task {
        Task::City | Task::State | Task::Country => record.label(task.level().expect("geo")).map(str::to_string),
        Task::Diagloss => match proxy_label_diaglossia(record) {
            DiaglossLabel::None => None,
            l => Some(l.as_str().to_string()),
        },
        Task::Codesw => record.label(codesw_level).map(str::to_string),
        Task::Mlm => None,
    }
}

/// One head per task with the label set observed in `records`.
pub fn heads_from(records: &[TweetRecord], tasks: &[Task], codesw_level: Level) -> Vec<TaskHead> {
    tasks
        .iter()
        .map(|&t| {
            if t == Task::Mlm {
                return TaskHead::mlm();
            }
            let labels: BTreeSet<String> = records.iter().filter_map(|r| label_of(r, t, codesw_level)).collect();
            TaskHead::new(t, labels)
        })
        .collect()
}

/// Encodes records and attaches class targets for every requested task the
/// model has a head for. Records without any target are skipped.
pub fn make_samples(model: &Model, records: &[TweetRecord], tasks: &[Task], codesw_level: Level) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut targets = Vec::new();
        for &t in tasks {
            let Some(h) = model.spec.head_index(t) else { continue };
            if let Some(label) = label_of(r, t, codesw_level) {
                targets.push((h, Target::Class(model.spec.heads[h].index_of(&label)?)));
            }
        }
        if !targets.is_empty() {
            out.push(Sample {
                id: r.id.clone(),
                tokens: model.encode(&r.text),
                targets,
            });
        }
    }
    Ok(out)
}
