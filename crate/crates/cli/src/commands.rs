use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use relcap::applications::graph::build_caption_graph;
use relcap::applications::retrieval::{rank_images, retrieval_eval, RetrievalIndex};
use relcap::checkpoint::Checkpoint;
use relcap::dataset::enrich::{enrich_attributes, PosLexicon};
use relcap::dataset::record::{load_dataset, read_jsonl, save_dataset, to_jsonl, AttributeImage, PredictionRecord};
use relcap::dataset::toy::generate_toy_world;
use relcap::dataset::{ProviderSpec, RelationalRecord};
use relcap::io::{write_atomic, write_atomic_str};
use relcap::metrics::EvalReport;
use relcap::pipeline::{evaluate, EpochLog, TrainedModel, Trainer};
use serde::Serialize;
use serde_json::json;

use crate::args::{EnrichArgs, EvalArgs, GenToyArgs, GraphArgs, InferArgs, RetrieveArgs, TrainArgs};
use crate::config::{sha256_hex, RunConfig};
use crate::error::{CliError, CliResult};
use crate::provenance::Provenance;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("missing input {}", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(write_atomic_str(path, &text)?)
}

fn load_model(path: &Path) -> CliResult<TrainedModel> {
    require(path)?;
    Ok(TrainedModel::from_checkpoint(&Checkpoint::load(path)?)?)
}

fn load_records(path: &Path) -> CliResult<Vec<RelationalRecord>> {
    require(path)?;
    Ok(load_dataset(path)?)
}

/// Sizes of the train / val / test splits: 80 % / 10 % / the rest, by index.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

pub fn gen_toy(cfg: &mut RunConfig, args: &GenToyArgs) -> CliResult<String> {
    if let Some(n) = args.images {
        cfg.toy.images = n;
    }
    cfg.toy.validate()?;
    let (records, provider) = generate_toy_world(cfg.seed, &cfg.toy)?;
    let (n_train, n_val, _) = split_sizes(records.len());
    let parts = [
        ("train", &records[..n_train]),
        ("val", &records[n_train..n_train + n_val]),
        ("test", &records[n_train + n_val..]),
    ];
    let mut splits = Vec::new();
    for (name, part) in parts {
        let file = format!("{name}.jsonl");
        let text = to_jsonl(part)?;
        write_atomic_str(&args.out.join(&file), &text)?;
        splits.push(json!({
            "name": name,
            "file": file,
            "images": part.len(),
            "relations": part.iter().map(|r| r.relations.len()).sum::<usize>(),
            "sha256": sha256_hex(text.as_bytes()),
        }));
    }
    write_json(&args.out.join("provider.json"), &ProviderSpec::Toy(provider))?;
    let manifest = json!({
        "provenance": Provenance::new("gen-toy", cfg, &[])?,
        "seed": cfg.seed,
        "images": records.len(),
        "toy": cfg.toy,
        "splits": splits,
    });
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(format!(
        "wrote {} images to {} (train {n_train}, val {n_val}, test {})\n",
        records.len(),
        args.out.display(),
        records.len() - n_train - n_val
    ))
}

pub fn training_log(history: &[EpochLog]) -> String {
    let mut out = String::from(EpochLog::CSV_HEADER);
    out.push('\n');
    for h in history {
        out.push_str(&h.csv_row());
        out.push('\n');
    }
    out
}

pub fn train(cfg: &mut RunConfig, args: &TrainArgs) -> CliResult<String> {
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    let (train_path, provider_path) = match (&args.data, &args.train, &args.provider) {
        (_, Some(t), Some(p)) => (t.clone(), p.clone()),
        (Some(d), t, p) => (
            t.clone().unwrap_or_else(|| d.join("train.jsonl")),
            p.clone().unwrap_or_else(|| d.join("provider.json")),
        ),
        _ => return Err(CliError::Usage("give --data or both --train and --provider".into())),
    };
    require(&train_path)?;
    require(&provider_path)?;
    let records = load_dataset(&train_path)?;
    let provider: ProviderSpec = serde_json::from_str(&std::fs::read_to_string(&provider_path)?)?;
    let spec = cfg.spec()?;
    let provenance = Provenance::new("train", cfg, &[&train_path, &provider_path])?;
    let ckpt_path = args.out.join(CHECKPOINT_FILE);

    let mut trainer = if args.resume && ckpt_path.exists() {
        let mut t = Trainer::from_checkpoint(&Checkpoint::load(&ckpt_path)?)?;
        if t.trained.model.config().spec != spec {
            return Err(CliError::Usage(format!(
                "checkpoint holds `{}`, not `{spec}`",
                t.trained.model.config().spec
            )));
        }
        let mut resumed = cfg.train.clone();
        resumed.epochs = t.config.epochs;
        if resumed != t.config {
            return Err(CliError::Usage("training settings differ from the checkpoint".into()));
        }
        t.config.epochs = cfg.train.epochs;
        log::info!("resuming at epoch {}", t.epoch);
        t
    } else {
        Trainer::new(spec, &records, provider, cfg.train.clone())?
    };

    while trainer.epoch < cfg.train.epochs {
        let log = trainer.train_epoch(&records)?;
        log::info!(
            "epoch {} total {:.4} cap {:.4} pos {:.4} det {:.4} box {:.4}",
            log.epoch,
            log.total,
            log.cap,
            log.pos,
            log.det,
            log.bbox
        );
        let mut ck = trainer.to_checkpoint()?;
        if let Some(meta) = ck.meta.as_object_mut() {
            meta.insert("provenance".into(), serde_json::to_value(&provenance)?);
        }
        write_atomic(&ckpt_path, &ck.to_bytes()?)?;
        write_atomic_str(&args.out.join(TRAIN_LOG_FILE), &training_log(&trainer.history))?;
    }
    let summary = json!({
        "provenance": provenance,
        "epochs": trainer.epoch,
        "parameters": trainer.trained.model.params.num_scalars(),
        "vocabulary": trainer.trained.vocab.len(),
        "last": trainer.history.last(),
    });
    write_json(&args.out.join("train_run.json"), &summary)?;
    Ok(format!(
        "trained `{}` for {} epochs; checkpoint {}\n",
        cfg.model,
        trainer.epoch,
        ckpt_path.display()
    ))
}

/// Dataset words missing from the model vocabulary.
pub fn unknown_words(trained: &TrainedModel, records: &[RelationalRecord]) -> BTreeSet<String> {
    records
        .iter()
        .flat_map(|r| r.relations.iter().flat_map(|x| x.segments().tokens()))
        .filter(|w| !trained.vocab.contains(w))
        .collect()
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> CliResult<String> {
    let trained = load_model(&args.checkpoint)?;
    let records = load_records(&args.input)?;
    let unknown = unknown_words(&trained, &records);
    if !unknown.is_empty() {
        return Err(CliError::Data(format!(
            "vocabulary mismatch: the checkpoint does not know {:?}",
            unknown
        )));
    }
    let ev = evaluate(&trained, &records, &cfg.inference, &cfg.metrics)?;
    ev.report
        .check_ranges()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let provenance = Provenance::new("eval", cfg, &[&args.checkpoint, &args.input])?;
    write_json(&args.out, &json!({ "provenance": provenance, "report": ev.report }))?;
    let table = ev.report.to_table();
    write_atomic_str(&args.out.with_extension("txt"), &table)?;
    if let Some(p) = &args.predictions {
        write_atomic_str(p, &to_jsonl(&ev.predictions)?)?;
    }
    Ok(table)
}

pub fn read_report(path: &Path) -> CliResult<EvalReport> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(serde_json::from_value(v["report"].clone())?)
}

pub fn infer(cfg: &RunConfig, args: &InferArgs) -> CliResult<String> {
    let trained = load_model(&args.checkpoint)?;
    let records = load_records(&args.input)?;
    let mut predictions = Vec::new();
    for r in &records {
        predictions.extend(trained.predict(r, &cfg.inference)?);
    }
    write_atomic_str(&args.out, &to_jsonl(&predictions)?)?;
    Ok(format!(
        "wrote {} predictions for {} images to {}\n",
        predictions.len(),
        records.len(),
        args.out.display()
    ))
}

pub fn graph(cfg: &mut RunConfig, args: &GraphArgs) -> CliResult<String> {
    if let Some(t) = args.merge_iou {
        cfg.graph.merge_iou = t;
    }
    if !(0.0..=1.0).contains(&cfg.graph.merge_iou) {
        return Err(CliError::Usage("merge IoU must lie in [0, 1]".into()));
    }
    require(&args.predictions)?;
    let preds: Vec<PredictionRecord> = read_jsonl(&args.predictions)?;
    let mut by_image: BTreeMap<u64, Vec<PredictionRecord>> = BTreeMap::new();
    for p in preds {
        if args.image.is_none_or(|id| id == p.image_id) {
            by_image.entry(p.image_id).or_default().push(p);
        }
    }
    if let Some(id) = args.image {
        by_image.entry(id).or_default();
    }
    let mut index = Vec::new();
    let mut summary = String::new();
    for (id, preds) in &by_image {
        let g = build_caption_graph(*id, preds, cfg.graph.merge_iou);
        let stem = format!("graph_{id}");
        write_atomic_str(&args.out.join(format!("{stem}.dot")), &g.to_dot())?;
        write_atomic_str(&args.out.join(format!("{stem}.json")), &(g.to_json()? + "\n"))?;
        summary.push_str(&format!("image {id}: {} nodes, {} edges\n", g.nodes.len(), g.edges.len()));
        index.push(json!({ "image_id": id, "nodes": g.nodes.len(), "edges": g.edges.len(), "stem": stem }));
    }
    let provenance = Provenance::new("graph", cfg, &[&args.predictions])?;
    write_json(&args.out.join("graphs.json"), &json!({ "provenance": provenance, "graphs": index }))?;
    Ok(summary)
}

pub fn retrieve(cfg: &mut RunConfig, args: &RetrieveArgs) -> CliResult<String> {
    if let Some(ks) = &args.k {
        cfg.retrieval.ks = ks.clone();
    }
    if let Some(n) = args.images {
        cfg.retrieval.images = n;
    }
    let trained = load_model(&args.checkpoint)?;
    let records = load_records(&args.input)?;
    let provenance = Provenance::new("retrieve", cfg, &[&args.checkpoint, &args.input])?;
    if let Some(q) = &args.query {
        let index = RetrievalIndex::build(&trained, &records, &cfg.inference)?;
        let hits = rank_images(&trained, &index, q)?;
        write_json(&args.out, &json!({ "provenance": provenance, "query": q, "hits": hits }))?;
        let mut out = String::new();
        for (rank, h) in hits.iter().enumerate().take(10) {
            out.push_str(&format!("{:>3}  image {:<6} {:.6e}\n", rank + 1, h.image_id, h.score));
        }
        return Ok(out);
    }
    let report = retrieval_eval(&trained, &records, &cfg.retrieval, &cfg.inference)?;
    write_json(&args.out, &json!({ "provenance": provenance, "protocol": cfg.retrieval, "report": report }))?;
    let mut out = String::new();
    for (k, r) in &report.recall_at {
        out.push_str(&format!("R@{k:<4} {r:.4}\n"));
    }
    out.push_str(&format!("median rank {:.2}\n", report.median_rank));
    Ok(out)
}

pub fn enrich(cfg: &RunConfig, args: &EnrichArgs) -> CliResult<String> {
    for p in [&args.relations, &args.attributes, &args.lexicon] {
        require(p)?;
    }
    let records = load_dataset(&args.relations)?;
    let attributes: Vec<AttributeImage> = read_jsonl(&args.attributes)?;
    let lexicon = PosLexicon::load(&args.lexicon)?;
    let enriched = enrich_attributes(&records, &attributes, &lexicon, cfg.seed)?;
    save_dataset(&args.out, &enriched)?;
    Ok(format!(
        "enriched {} images with {} attribute entries into {}\n",
        enriched.len(),
        attributes.len(),
        args.out.display()
    ))
}

/// Paths a command writes, for callers that compare reruns.
pub fn gen_toy_outputs(out: &Path) -> Vec<PathBuf> {
    ["train.jsonl", "val.jsonl", "test.jsonl", "provider.json", "manifest.json"]
        .iter()
        .map(|f| out.join(f))
        .collect()
}
