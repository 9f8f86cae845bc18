use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mdi::corpus::{
    extract_codesw, preprocess as run_preprocess, proxy_label_diaglossia, validate_ids, write_records, DiaglossLabel, Level,
    ScriptTagger,
};
use mdi::splits::{split as run_split, verify_disjoint, RunId, Setting, SplitName, SplitResult, SplitSpec};
use mdi::synthetic::{generate, SynthConfig};
use serde::Serialize;

use super::{load_records, parse_level, write_text, Ctx};
use crate::manifest::Recorder;
use crate::{LabelKind, SplitKind, UsageError};

pub fn synth(ctx: &Ctx, out: &Path, gazetteer: Option<&Path>) -> Result<()> {
    let s = &ctx.settings;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        countries: s.get("synth.countries", d.countries)?,
        states_per_country: s.get("synth.states_per_country", d.states_per_country)?,
        cities_per_state: s.get("synth.cities_per_state", d.cities_per_state)?,
        markers_per_city: s.get("synth.markers_per_city", d.markers_per_city)?,
        shared_words: s.get("synth.shared_words", d.shared_words)?,
        phrase_len: s.get("synth.phrase_len", d.phrase_len)?,
        users_per_city: s.get("synth.users_per_city", d.users_per_city)?,
        test_users_per_city: s.get("synth.test_users_per_city", d.test_users_per_city)?,
        tweets_per_user: s.get("synth.tweets_per_user", d.tweets_per_user)?,
        reply_rate: s.get("synth.reply_rate", d.reply_rate)?,
        diacritic_rate: s.get("synth.diacritic_rate", d.diacritic_rate)?,
        seed: ctx.seed,
    };
    if cfg.test_users_per_city > cfg.users_per_city || cfg.phrase_len == 0 || cfg.shared_words < cfg.phrase_len {
        bail!(UsageError("inconsistent synth.* settings".into()));
    }
    let corpus = generate(&cfg);
    let mut rec = Recorder::new("synth");
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, records) in [("corpus", corpus.records.clone()), ("train", corpus.train()), ("test", corpus.test())] {
        let path = out.join(format!("{name}.jsonl"));
        write_records(&path, &records)?;
        rec.output(&path);
    }
    let gaz_path = gazetteer.map(Path::to_path_buf).unwrap_or_else(|| out.join("gazetteer.tsv"));
    write_text(&mut rec, &gaz_path, &corpus.gazetteer.to_tsv())?;
    let summary = BTreeMap::from([
        ("records", corpus.records.len()),
        ("train", corpus.train().len()),
        ("test", corpus.test().len()),
        ("cities", corpus.gazetteer.entries().len()),
    ]);
    ctx.finish(rec, &format!("wrote {} records to {}", corpus.records.len(), out.display()), &summary)
}

pub fn preprocess(ctx: &Ctx, input: &Path, output: &Path) -> Result<()> {
    let mut rec = Recorder::new("preprocess");
    let records = load_records(&mut rec, input)?;
    validate_ids(&records)?;
    let (kept, report) = run_preprocess(records);
    write_records(output, &kept)?;
    rec.output(output);
    let human = format!(
        "{} in, {} retweets removed, {} with too few Arabic words, {} kept",
        report.input, report.retweets_removed, report.too_few_arabic_words, report.kept
    );
    ctx.finish(rec, &human, &report)
}

pub fn label(ctx: &Ctx, kind: LabelKind, input: &Path, output: &Path) -> Result<()> {
    let mut rec = Recorder::new("label");
    let records = load_records(&mut rec, input)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    match kind {
        LabelKind::Diagloss => {
            let mut lines = String::new();
            for r in &records {
                let l = proxy_label_diaglossia(r);
                if l == DiaglossLabel::None {
                    continue;
                }
                *counts.entry(l.as_str().to_string()).or_default() += 1;
                let mut v = serde_json::to_value(r)?;
                v["diagloss"] = serde_json::Value::from(l.as_str());
                lines.push_str(&serde_json::to_string(&v)?);
                lines.push('\n');
            }
            write_text(&mut rec, output, &lines)?;
        }
        LabelKind::Codesw => {
            let level: Level = parse_level(&ctx.settings.get("codesw_level", "country".to_string())?)?;
            let kept = extract_codesw(&records, &ScriptTagger);
            for r in &kept {
                let key = r.label(level).unwrap_or("unlabelled").to_string();
                *counts.entry(key).or_default() += 1;
            }
            write_records(output, &kept)?;
            rec.output(output);
        }
    }
    let total: usize = counts.values().sum();
    ctx.finish(rec, &format!("{total} of {} records labelled", records.len()), &counts)
}

/// Split manifest: the split itself plus the configuration that produced it.
#[derive(Serialize)]
struct SplitManifest<'a> {
    #[serde(flatten)]
    result: &'a SplitResult,
    disjoint: bool,
    config: BTreeMap<String, String>,
}

pub fn split(
    ctx: &Ctx,
    kind: SplitKind,
    input: &Path,
    out: &Path,
    setting: Option<&str>,
    run: Option<&str>,
    write_dir: Option<&Path>,
) -> Result<()> {
    let mut rec = Recorder::new("split");
    let records = load_records(&mut rec, input)?;
    validate_ids(&records)?;
    let run: RunId = run.unwrap_or("A").parse().map_err(UsageError)?;
    let mut spec = match kind {
        SplitKind::Random => {
            if setting.is_some() {
                bail!(UsageError("--setting only applies to disjoint splits".into()));
            }
            let mut spec = SplitSpec::random(ctx.seed);
            spec.run = run;
            spec.ratios = (
                ctx.settings.get("split.train", spec.ratios.0)?,
                ctx.settings.get("split.dev", spec.ratios.1)?,
                ctx.settings.get("split.test", spec.ratios.2)?,
            );
            spec
        }
        SplitKind::Disjoint => {
            let setting: Setting = setting
                .ok_or_else(|| UsageError("disjoint splits need --setting narrow|medium|wide".into()))?
                .parse()
                .map_err(UsageError)?;
            SplitSpec::user_disjoint(setting, run, ctx.seed)
        }
    };
    spec.per_class_cap = ctx.settings.get_opt("split.cap")?;
    if let Some(level) = ctx.settings.get_opt::<String>("split.level")? {
        spec.level = parse_level(&level)?;
    }
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    let result = run_split(&records, &spec)?;
    let report = verify_disjoint(&result);
    if !report.disjoint {
        bail!("split is not disjoint: {report:?}");
    }
    let manifest = SplitManifest {
        result: &result,
        disjoint: report.disjoint,
        config: ctx.settings.snapshot(),
    };
    write_text(&mut rec, out, &serde_json::to_string_pretty(&manifest)?)?;
    if let Some(dir) = write_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, part) in [("train", SplitName::Train), ("dev", SplitName::Dev), ("test", SplitName::Test)] {
            let path = dir.join(format!("{name}.jsonl"));
            write_records(&path, &result.select(&records, part))?;
            rec.output(&path);
        }
    }
    let (tr, dv, te) = result.sizes();
    let summary = BTreeMap::from([("train", tr), ("dev", dv), ("test", te)]);
    ctx.finish(rec, &format!("train {tr}, dev {dv}, test {te}"), &summary)
}
