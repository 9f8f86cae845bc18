use nncore::{
    AttentionPool, BiGru, Dense, Graph, Init, LayerNorm, MultiHeadAttention, NodeId, ParamId, ParamStore, RngStream,
};

use super::config::{Architecture, BiGruConfig, EncoderConfig, ModelSpec, MtlAttention};
use super::vocab::CLS;
use super::{ModelError, Result, Task};

/// Attention site: pools the output of one trunk layer, optionally after a
/// task-owned BiGRU branch.
#[derive(Debug, Clone)]
struct Site {
    name: String,
    /// 0-based trunk layer whose output feeds this site.
    tap: usize,
    branch: Option<BiGru>,
    attn: AttentionPool,
}

#[derive(Debug, Clone)]
struct RecurrentBody {
    embedding: ParamId,
    trunk: Vec<BiGru>,
    sites: Vec<Site>,
    dropout: f64,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    ln_attn: LayerNorm,
    ff_in: Dense,
    ff_out: Dense,
    ln_ff: LayerNorm,
}

#[derive(Debug, Clone)]
struct EncoderBody {
    tokens: ParamId,
    positions: ParamId,
    layers: Vec<EncoderLayer>,
    dropout: f64,
    max_len: usize,
}

#[derive(Debug, Clone)]
enum Body {
    Recurrent(RecurrentBody),
    Encoder(EncoderBody),
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardOut {
    /// Logits per head, `None` for heads that were not requested. The
    /// masked-LM head yields `[B·T × V]` rows in sequence-major order.
    pub logits: Vec<Option<NodeId>>,
    /// Per attention site: name and, per sequence, a distribution over its
    /// tokens.
    pub attention: Vec<(String, Vec<Vec<f64>>)>,
}

/// A built network: description, parameters and layer handles.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    body: Body,
    heads: Vec<Dense>,
    /// Attention site feeding each head (unused for the encoder).
    head_site: Vec<usize>,
}

fn site_name(layer: usize, task: Option<Task>) -> String {
    match task {
        Some(t) => format!("layer{layer}.{t}"),
        None => format!("layer{layer}"),
    }
}

impl Model {
    /// Builds and initializes a model; same spec and seed give the same
    /// parameters.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed).split("init");
        let vocab = spec.vocab.len();
        let (body, head_inputs, head_site) = match &spec.arch {
            Architecture::Encoder(c) => {
                let body = build_encoder(&mut store, c, vocab, &mut rng)?;
                let inputs = vec![c.model_dim; spec.heads.len()];
                (Body::Encoder(body), inputs, vec![0; spec.heads.len()])
            }
            arch => {
                let (body, head_site) = build_recurrent(&mut store, &spec, arch, vocab, &mut rng)?;
                let units = arch.bigru().expect("recurrent").units;
                (Body::Recurrent(body), vec![units; spec.heads.len()], head_site)
            }
        };
        let heads = spec
            .heads
            .iter()
            .zip(head_inputs)
            .map(|(h, input)| {
                let out = if h.task == Task::Mlm { vocab } else { h.labels.len() };
                Dense::new(&mut store, &format!("head.{}", h.task), input, out, &mut rng)
            })
            .collect::<nncore::Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            store,
            body,
            heads,
            head_site,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Names of the attention sites, in export order.
    pub fn attention_sites(&self) -> Vec<String> {
        match &self.body {
            Body::Recurrent(b) => b.sites.iter().map(|s| s.name.clone()).collect(),
            Body::Encoder(_) => vec!["cls".to_string()],
        }
    }

    pub fn max_seq_len(&self) -> usize {
        self.spec.arch.max_seq_len()
    }

    pub fn is_encoder(&self) -> bool {
        matches!(self.body, Body::Encoder(_))
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.spec.vocab.encode(text, self.max_seq_len())
    }

    /// Copies every parameter of `other` whose name and shape match,
    /// skipping task heads. Returns the number of tensors copied.
    pub fn load_body_from(&mut self, other: &Model) -> Result<usize> {
        if self.spec.vocab != other.spec.vocab {
            return Err(ModelError::VocabMismatch("source model uses a different vocabulary".into()));
        }
        let mut copied = 0;
        for (_, p) in other.store.iter() {
            if p.name.starts_with("head.") {
                continue;
            }
            if let Some(id) = self.store.id(&p.name) {
                if self.store.value(id).shape() == p.value.shape() {
                    *self.store.value_mut(id) = p.value.clone();
                    copied += 1;
                }
            }
        }
        Ok(copied)
    }

    /// Runs the network on `batch` (equal-length token-id sequences) for the
    /// requested heads. `rng` drives dropout when the graph is in training
    /// mode.
    pub fn forward(&self, g: &mut Graph, batch: &[Vec<usize>], heads: &[usize], rng: &mut RngStream) -> Result<ForwardOut> {
        let len = batch.first().map(Vec::len).unwrap_or(0);
        if len == 0 || batch.iter().any(|s| s.len() != len) {
            return Err(ModelError::InvalidConfig("batch sequences must be non-empty and of equal length".into()));
        }
        let vocab = self.spec.vocab.len();
        if let Some(&bad) = batch.iter().flatten().find(|&&id| id >= vocab) {
            return Err(ModelError::VocabMismatch(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        if let Some(&h) = heads.iter().find(|&&h| h >= self.heads.len()) {
            return Err(ModelError::InvalidConfig(format!("no head {h}")));
        }
        match &self.body {
            Body::Recurrent(b) => self.forward_recurrent(b, g, batch, heads, rng),
            Body::Encoder(b) => self.forward_encoder(b, g, batch, heads, rng),
        }
    }

    fn forward_recurrent(
        &self,
        body: &RecurrentBody,
        g: &mut Graph,
        batch: &[Vec<usize>],
        heads: &[usize],
        rng: &mut RngStream,
    ) -> Result<ForwardOut> {
        let mut sites: Vec<usize> = heads.iter().map(|&h| self.head_site[h]).collect();
        sites.sort_unstable();
        sites.dedup();
        let depth = sites.iter().map(|&s| body.sites[s].tap + 1).max().unwrap_or(0);

        let table = g.param(body.embedding);
        let mut seq = Vec::with_capacity(batch[0].len());
        for t in 0..batch[0].len() {
            let ids: Vec<usize> = batch.iter().map(|s| s[t]).collect();
            seq.push(g.embedding(table, &ids)?);
        }
        let mut layer_out: Vec<Vec<NodeId>> = Vec::with_capacity(depth);
        for layer in &body.trunk[..depth] {
            let h = layer.run(g, &seq)?;
            seq = dropout_all(g, &h, body.dropout, rng)?;
            layer_out.push(seq.clone());
        }

        let mut out = ForwardOut {
            logits: vec![None; self.heads.len()],
            attention: Vec::new(),
        };
        let mut contexts = vec![None; body.sites.len()];
        for &s in &sites {
            let site = &body.sites[s];
            let mut h = layer_out[site.tap].clone();
            if let Some(branch) = &site.branch {
                let hb = branch.run(g, &h)?;
                h = dropout_all(g, &hb, body.dropout, rng)?;
            }
            let (ctx, weights) = site.attn.forward(g, &h)?;
            contexts[s] = Some(ctx);
            out.attention.push((site.name.clone(), g.value(weights).to_rows()));
        }
        for &h in heads {
            let ctx = contexts[self.head_site[h]].expect("site computed");
            out.logits[h] = Some(self.heads[h].forward(g, ctx)?);
        }
        Ok(out)
    }

    fn forward_encoder(
        &self,
        body: &EncoderBody,
        g: &mut Graph,
        batch: &[Vec<usize>],
        heads: &[usize],
        rng: &mut RngStream,
    ) -> Result<ForwardOut> {
        let len = batch[0].len();
        if len > body.max_len {
            return Err(ModelError::SequenceTooLong {
                len,
                max: body.max_len,
            });
        }
        let tokens = g.param(body.tokens);
        let positions = g.param(body.positions);
        let pos_ids: Vec<usize> = (0..=len).collect();
        let pos = g.embedding(positions, &pos_ids)?;
        let mut cls_rows = Vec::with_capacity(batch.len());
        let mut token_rows = Vec::with_capacity(batch.len());
        let mut cls_attention = Vec::with_capacity(batch.len());
        for seq in batch {
            let ids: Vec<usize> = std::iter::once(CLS).chain(seq.iter().copied()).collect();
            let emb = g.embedding(tokens, &ids)?;
            let mut x = g.add(emb, pos)?;
            x = g.dropout(x, body.dropout, rng)?;
            let mut last_maps = Vec::new();
            for layer in &body.layers {
                let (a, maps) = layer.attn.forward(g, x, x)?;
                let a = g.dropout(a, body.dropout, rng)?;
                let r = g.add(x, a)?;
                x = layer.ln_attn.forward(g, r)?;
                let f = layer.ff_in.forward(g, x)?;
                let f = g.relu(f);
                let f = layer.ff_out.forward(g, f)?;
                let f = g.dropout(f, body.dropout, rng)?;
                let r = g.add(x, f)?;
                x = layer.ln_ff.forward(g, r)?;
                last_maps = maps;
            }
            cls_attention.push(cls_token_attention(g, &last_maps));
            cls_rows.push(g.gather_rows(x, &[0])?);
            token_rows.push(x);
        }
        let cls = if cls_rows.len() == 1 { cls_rows[0] } else { g.concat_rows(&cls_rows)? };
        let mut out = ForwardOut {
            logits: vec![None; self.heads.len()],
            attention: vec![("cls".to_string(), cls_attention)],
        };
        for &h in heads {
            let logits = if self.spec.heads[h].task == Task::Mlm {
                let rows: Vec<usize> = (1..=len).collect();
                let per_seq = token_rows
                    .iter()
                    .map(|&x| {
                        let t = g.gather_rows(x, &rows)?;
                        self.heads[h].forward(g, t)
                    })
                    .collect::<nncore::Result<Vec<_>>>()?;
                if per_seq.len() == 1 {
                    per_seq[0]
                } else {
                    g.concat_rows(&per_seq)?
                }
            } else {
                self.heads[h].forward(g, cls)?
            };
            out.logits[h] = Some(logits);
        }
        Ok(out)
    }
}

fn dropout_all(g: &mut Graph, seq: &[NodeId], rate: f64, rng: &mut RngStream) -> Result<Vec<NodeId>> {
    Ok(seq
        .iter()
        .map(|&h| g.dropout(h, rate, rng))
        .collect::<nncore::Result<Vec<_>>>()?)
}

/// Head-averaged attention of the `[CLS]` row over the ordinary tokens,
/// renormalized after dropping the `[CLS]` column.
fn cls_token_attention(g: &Graph, maps: &[NodeId]) -> Vec<f64> {
    let cols = g.value(maps[0]).cols();
    let mut avg = vec![0.0; cols - 1];
    for &m in maps {
        for (a, v) in avg.iter_mut().zip(&g.value(m).row(0)[1..]) {
            *a += v;
        }
    }
    let total: f64 = avg.iter().sum();
    if total > 0.0 {
        avg.iter_mut().for_each(|a| *a /= total);
    } else {
        let n = avg.len() as f64;
        avg.iter_mut().for_each(|a| *a = 1.0 / n);
    }
    avg
}

fn build_encoder(store: &mut ParamStore, c: &EncoderConfig, vocab: usize, rng: &mut RngStream) -> Result<EncoderBody> {
    let tokens = store.add("enc.tokens", vocab, c.model_dim, Init::default(), rng)?;
    let positions = store.add("enc.positions", c.max_seq_len + 1, c.model_dim, Init::default(), rng)?;
    let layers = (0..c.layers)
        .map(|i| {
            let p = format!("enc.layer{i}");
            Ok(EncoderLayer {
                attn: MultiHeadAttention::new(store, &format!("{p}.attn"), c.model_dim, c.heads, rng)?,
                ln_attn: LayerNorm::new(store, &format!("{p}.ln_attn"), c.model_dim, rng)?,
                ff_in: Dense::new(store, &format!("{p}.ff_in"), c.model_dim, c.ff_dim, rng)?,
                ff_out: Dense::new(store, &format!("{p}.ff_out"), c.ff_dim, c.model_dim, rng)?,
                ln_ff: LayerNorm::new(store, &format!("{p}.ln_ff"), c.model_dim, rng)?,
            })
        })
        .collect::<nncore::Result<Vec<_>>>()?;
    Ok(EncoderBody {
        tokens,
        positions,
        layers,
        dropout: c.dropout,
        max_len: c.max_seq_len,
    })
}

fn build_recurrent(
    store: &mut ParamStore,
    spec: &ModelSpec,
    arch: &Architecture,
    vocab: usize,
    rng: &mut RngStream,
) -> Result<(RecurrentBody, Vec<usize>)> {
    let c: &BiGruConfig = arch.bigru().expect("recurrent");
    let embedding = store.add("embedding", vocab, c.embed_dim, Init::default(), rng)?;
    let trunk_layers = match arch {
        Architecture::Mtl {
            attention: MtlAttention::TaskSpecific,
            ..
        } => c.layers - 1,
        _ => c.layers,
    };
    let trunk = (0..trunk_layers)
        .map(|i| {
            let input = if i == 0 { c.embed_dim } else { c.units };
            BiGru::new(store, &format!("trunk.{i}"), input, c.units, rng)
        })
        .collect::<nncore::Result<Vec<_>>>()?;

    let mut sites = Vec::new();
    let mut head_site = vec![usize::MAX; spec.heads.len()];
    let mut add_site = |store: &mut ParamStore, rng: &mut RngStream, name: String, tap: usize, branch: bool| {
        let branch = if branch {
            Some(BiGru::new(store, &format!("site.{name}.branch"), c.units, c.units, rng)?)
        } else {
            None
        };
        let attn = AttentionPool::new(store, &format!("site.{name}.attn"), c.units, rng)?;
        sites.push(Site { name, tap, branch, attn });
        Ok::<usize, ModelError>(sites.len() - 1)
    };
    match arch {
        Architecture::SingleTask(_)
        | Architecture::Mtl {
            attention: MtlAttention::Common,
            ..
        } => {
            let s = add_site(store, rng, site_name(c.layers, None), c.layers - 1, false)?;
            head_site.iter_mut().for_each(|h| *h = s);
        }
        Architecture::Mtl { .. } => {
            for (i, h) in spec.heads.iter().enumerate() {
                head_site[i] = add_site(store, rng, site_name(c.layers, Some(h.task)), trunk_layers - 1, true)?;
            }
        }
        Architecture::HaMtl(ha) => {
            for (layer, task) in ha.supervision() {
                let s = add_site(store, rng, site_name(layer, None), layer - 1, false)?;
                let h = spec.head_index(task).expect("validated");
                head_site[h] = s;
            }
            let top = sites.len() - 1;
            for h in head_site.iter_mut().filter(|h| **h == usize::MAX) {
                *h = top;
            }
        }
        Architecture::Encoder(_) => unreachable!("recurrent builder"),
    }
    Ok((
        RecurrentBody {
            embedding,
            trunk,
            sites,
            dropout: c.dropout,
        },
        head_site,
    ))
}

#[cfg(test)]
mod tests {
    use super::super::config::{HaMtlConfig, HaOrder};
    use super::super::{TaskHead, Vocab};
    use super::*;

    fn vocab(n: usize) -> Vocab {
        let words: Vec<String> = (0..n - 3).map(|i| format!("w{i}")).collect();
        let text = format!("{0} {0}", words.join(" "));
        Vocab::build([text.as_str()], 2)
    }

    fn tiny() -> BiGruConfig {
        BiGruConfig {
            embed_dim: 8,
            units: 16,
            dropout: 0.0,
            ..BiGruConfig::default()
        }
    }

    fn geo_heads(n: usize) -> Vec<TaskHead> {
        Task::GEO
            .iter()
            .map(|&t| TaskHead::new(t, (0..n).map(|i| format!("{t}{i}"))))
            .collect()
    }

    /// Hand-derived counts: a GRU with input i and hidden h has
    /// 3h(i + h + 1) scalars, a BiGRU of total width u has two with h = u/2.
    fn bigru_count(input: usize, units: usize) -> usize {
        let h = units / 2;
        2 * 3 * h * (input + h + 1)
    }

    #[test]
    fn single_task_parameter_count() {
        let spec = ModelSpec::new(
            Architecture::SingleTask(tiny()),
            vec![TaskHead::new(Task::City, ["a", "b", "c", "d"])],
            vocab(30),
        );
        let m = Model::build(spec, 1).unwrap();
        assert_eq!(m.num_params(), 3540);
        let expected = 30 * 8 + bigru_count(8, 16) + 2 * bigru_count(16, 16) + 16 + 16 * 4 + 4;
        assert_eq!(m.num_params(), expected);
        assert_eq!(m.attention_sites(), vec!["layer3"]);
    }

    #[test]
    fn mtl_variants_structure() {
        let common = Model::build(
            ModelSpec::new(
                Architecture::Mtl {
                    config: tiny(),
                    attention: MtlAttention::Common,
                },
                geo_heads(3),
                vocab(30),
            ),
            1,
        )
        .unwrap();
        let spec = Model::build(
            ModelSpec::new(
                Architecture::Mtl {
                    config: tiny(),
                    attention: MtlAttention::TaskSpecific,
                },
                geo_heads(3),
                vocab(30),
            ),
            1,
        )
        .unwrap();
        let queries = |m: &Model| m.store.iter().filter(|(_, p)| p.name.ends_with(".query")).count();
        assert_eq!(queries(&common), 1);
        assert_eq!(queries(&spec), 3);
        assert!(spec.num_params() > common.num_params());
    }

    #[test]
    fn ha_mtl_orders_and_counts() {
        let build = |order| {
            let mut c = HaMtlConfig::new(order);
            c.base = BiGruConfig {
                layers: 4,
                ..tiny()
            };
            Model::build(ModelSpec::new(Architecture::HaMtl(c), geo_heads(3), vocab(30)), 1).unwrap()
        };
        let city = build(HaOrder::CityFirst);
        let country = build(HaOrder::CountryFirst);
        assert_eq!(city.num_params(), country.num_params());
        assert_eq!(city.attention_sites(), vec!["layer2", "layer3", "layer4"]);
        let site_of = |m: &Model, t: Task| m.head_site[m.spec.head_index(t).unwrap()];
        assert_eq!(site_of(&city, Task::City), 0);
        assert_eq!(site_of(&city, Task::Country), 2);
        assert_eq!(site_of(&country, Task::City), 2);
        assert_eq!(site_of(&country, Task::State), 1);

        let single = |t: Task| {
            Model::build(
                ModelSpec::new(Architecture::SingleTask(tiny()), vec![TaskHead::new(t, ["x0", "x1", "x2"])], vocab(30)),
                1,
            )
            .unwrap()
            .num_params()
        };
        let three_singles: usize = Task::GEO.into_iter().map(single).sum();
        assert!(city.num_params() < three_singles);
    }

    #[test]
    fn ha_mtl_requires_all_geo_heads() {
        let mut c = HaMtlConfig::new(HaOrder::CityFirst);
        c.base = BiGruConfig { layers: 4, ..tiny() };
        let spec = ModelSpec::new(Architecture::HaMtl(c), geo_heads(3)[..2].to_vec(), vocab(30));
        assert!(matches!(Model::build(spec, 1), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn forward_shapes_and_vocab_check() {
        let m = Model::build(
            ModelSpec::new(Architecture::SingleTask(tiny()), vec![TaskHead::new(Task::City, ["a", "b"])], vocab(30)),
            3,
        )
        .unwrap();
        let mut g = Graph::new(&m.store, false);
        let mut rng = RngStream::new(0);
        let out = m.forward(&mut g, &[vec![3, 4, 5], vec![6, 7, 8]], &[0], &mut rng).unwrap();
        assert_eq!(g.value(out.logits[0].unwrap()).shape(), &[2, 2]);
        assert_eq!(out.attention[0].1.len(), 2);
        assert!(matches!(
            m.forward(&mut g, &[vec![30]], &[0], &mut rng),
            Err(ModelError::VocabMismatch(_))
        ));
    }

    #[test]
    fn encoder_forward_shapes() {
        let c = EncoderConfig {
            layers: 1,
            heads: 2,
            model_dim: 8,
            ff_dim: 16,
            max_seq_len: 6,
            finetune_max_seq_len: 6,
            dropout: 0.0,
            ..EncoderConfig::default()
        };
        let spec = ModelSpec::new(
            Architecture::Encoder(c),
            vec![TaskHead::new(Task::Country, ["a", "b", "c"]), TaskHead::mlm()],
            vocab(30),
        );
        let m = Model::build(spec, 1).unwrap();
        let mut g = Graph::new(&m.store, false);
        let mut rng = RngStream::new(0);
        let out = m.forward(&mut g, &[vec![3, 4, 5], vec![6, 7, 8]], &[0, 1], &mut rng).unwrap();
        assert_eq!(g.value(out.logits[0].unwrap()).shape(), &[2, 3]);
        assert_eq!(g.value(out.logits[1].unwrap()).shape(), &[6, 30]);
        let attn = &out.attention[0].1;
        assert_eq!(attn[0].len(), 3);
        assert!((attn[1].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            m.forward(&mut g, &[vec![3; 7]], &[0], &mut rng),
            Err(ModelError::SequenceTooLong { len: 7, max: 6 })
        ));
        assert!(!m.store.iter().any(|(_, p)| p.name.contains("nsp") || p.name.contains("next")));
    }
}
