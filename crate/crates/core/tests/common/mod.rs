#![allow(dead_code)]

use mdi::corpus::{LocationHierarchy, TweetRecord};
use mdi::models::{
    Architecture, BiGruConfig, EncoderConfig, HaMtlConfig, HaOrder, Model, ModelSpec, MtlAttention, Task, TaskHead, Vocab,
};
use mdi::synthetic::pseudo_word;

/// 27 words plus the three specials.
pub fn tiny_vocab() -> Vocab {
    let words: Vec<String> = (0..27).map(pseudo_word).collect();
    Vocab::build([words.join(" ").as_str()], 1)
}

pub fn tiny_bigru(layers: usize) -> BiGruConfig {
    BiGruConfig {
        embed_dim: 8,
        layers,
        units: 16,
        max_seq_len: 5,
        dropout: 0.0,
        ..BiGruConfig::default()
    }
}

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        heads: 2,
        model_dim: 16,
        ff_dim: 16,
        max_seq_len: 5,
        finetune_max_seq_len: 5,
        dropout: 0.0,
        ..EncoderConfig::default()
    }
}

pub fn geo_heads() -> Vec<TaskHead> {
    vec![
        TaskHead::new(Task::City, ["c1", "c2", "c3", "c4"]),
        TaskHead::new(Task::State, ["s1", "s2", "s3"]),
        TaskHead::new(Task::Country, ["k1", "k2"]),
    ]
}

/// Every architecture at tiny dimensions, by name.
pub fn tiny_models(seed: u64) -> Vec<Model> {
    let mut aux = geo_heads();
    aux.push(TaskHead::new(Task::Diagloss, ["DA", "MSA"]));
    let specs = vec![
        ModelSpec::new(Architecture::SingleTask(tiny_bigru(3)), vec![geo_heads().remove(0)], tiny_vocab()),
        ModelSpec::new(
            Architecture::Mtl {
                config: tiny_bigru(3),
                attention: MtlAttention::Common,
            },
            aux.clone(),
            tiny_vocab(),
        ),
        ModelSpec::new(
            Architecture::Mtl {
                config: tiny_bigru(3),
                attention: MtlAttention::TaskSpecific,
            },
            aux.clone(),
            tiny_vocab(),
        ),
        ModelSpec::new(
            Architecture::HaMtl(HaMtlConfig {
                base: tiny_bigru(4),
                order: HaOrder::CityFirst,
            }),
            aux,
            tiny_vocab(),
        ),
        ModelSpec::new(
            Architecture::HaMtl(HaMtlConfig {
                base: tiny_bigru(4),
                order: HaOrder::CountryFirst,
            }),
            geo_heads(),
            tiny_vocab(),
        ),
        ModelSpec::new(
            Architecture::Encoder(tiny_encoder()),
            vec![TaskHead::new(Task::City, ["c1", "c2", "c3", "c4"]), TaskHead::mlm()],
            tiny_vocab(),
        ),
    ];
    specs.into_iter().map(|s| Model::build(s, seed).unwrap()).collect()
}

pub fn record(id: &str, user: &str, text: &str, city: &str, state: &str, country: &str) -> TweetRecord {
    TweetRecord::new(id, user, text).with_labels(LocationHierarchy::new(city, state, country))
}
