//! Subcommand implementations. Every command loads and validates all of its
//! inputs before it writes anything.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crossglg::data::{preprocess, split_base_novel};
use crossglg::encoder::{export_attention, frames_to_mat};
use crossglg::eval::{evaluate, evaluate_features, extract_features};
use crossglg::experiment::build_guidance;
use crossglg::synthetic::{generate_synthetic, synthetic_descriptions};
use crossglg::text::{
    embed_joint_texts, extract_key_joints, ingest_descriptions, load_external_embeddings, save_external_embeddings,
    write_descriptions, HashedBagOfWords, KeyJointRecord,
};
use crossglg::train::{prepare_samples, train, write_loss_log};
use crossglg::{load_dataset, load_topology, Checkpoint, Dataset, JointTextEmbeddings, ModelConfig, SkeletonTopology, TrainingSet};
use serde_json::{json, Value};

use crate::args::{Cli, Command, EmbedTextArgs, EvalArgs, ExtractArgs, GenDataArgs, SweepArgs, TrainArgs, VizArgs};
use crate::config::RunConfig;
use crate::Failure;

type Outcome = Result<Value, Failure>;

struct Ctx {
    root: PathBuf,
    cfg: RunConfig,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Resolved path of an input that must exist.
    fn input(&self, p: Option<&PathBuf>, flag: &str) -> Result<PathBuf, Failure> {
        let p = p.ok_or_else(|| Failure::usage(format!("missing {flag}")))?;
        let full = self.path(p);
        if !full.exists() {
            return Err(Failure::new("io", format!("{}: no such file or directory", full.display())));
        }
        Ok(full)
    }

    fn topology(&self) -> Result<SkeletonTopology, Failure> {
        let t = &self.cfg.topology;
        Ok(if t.ends_with(".json") {
            SkeletonTopology::from_file(&self.path(Path::new(t)))?
        } else {
            load_topology(t)?
        })
    }
}

pub fn run(cli: Cli) -> Outcome {
    let root = cli.data_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut cfg = match &cli.config {
        Some(p) => {
            let full = if p.is_absolute() { p.clone() } else { root.join(p) };
            RunConfig::load(&full)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = &cli.topology {
        cfg.topology = t.clone();
    }
    let mut ctx = Ctx { root, cfg };
    match cli.command {
        Command::GenData(a) => gen_data(&ctx, &a),
        Command::Extract(a) => extract(&ctx, &a),
        Command::EmbedText(a) => embed_text(&ctx, &a),
        Command::Train(a) => {
            ctx.cfg.apply_inputs(&a.inputs);
            ctx.cfg.apply_model(&a.model);
            if a.out.is_some() {
                ctx.cfg.out = a.out.clone();
            }
            cmd_train(&ctx, &a)
        }
        Command::Eval(a) => {
            ctx.cfg.apply_eval(&a.eval);
            if a.data.is_some() {
                ctx.cfg.data = a.data.clone();
            }
            cmd_eval(&ctx, &a)
        }
        Command::SweepJid(a) => {
            ctx.cfg.apply_inputs(&a.inputs);
            ctx.cfg.apply_model(&a.model);
            ctx.cfg.apply_eval(&a.eval);
            sweep_jid(&ctx, &a)
        }
        Command::Viz(a) => {
            if a.data.is_some() {
                ctx.cfg.data = a.data.clone();
            }
            viz(&ctx, &a)
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn create_parent(file: &Path) -> Result<(), Failure> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

fn reject_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        return Err(Failure::usage(format!("{} is a file; expected a directory", path.display())));
    }
    Ok(())
}

/// File-name-safe form of an action name or sample id.
fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn gen_data(ctx: &Ctx, a: &GenDataArgs) -> Outcome {
    let mut spec = ctx.cfg.synthetic.clone();
    spec.n_classes = a.classes.unwrap_or(spec.n_classes);
    spec.samples_per_class = a.per_class.unwrap_or(spec.samples_per_class);
    spec.frames = a.frames.unwrap_or(spec.frames);
    spec.amplitude = a.amplitude.unwrap_or(spec.amplitude);
    spec.noise = a.noise.unwrap_or(spec.noise);
    let out = ctx.path(&a.out);
    reject_file(&out)?;
    let topo = ctx.topology()?;
    let ds = generate_synthetic(&spec, &topo, ctx.cfg.seed)?;
    let descs = synthetic_descriptions(spec.n_classes, &topo)?;
    let truth = serde_json::to_string_pretty(&ds.key_joint_truth).map_err(crossglg::Error::from)?;

    create_dir(&out)?;
    ds.save_jsonl(&out.join("dataset.jsonl"))?;
    if a.binary {
        ds.save_binary(&out.join("dataset.bin"))?;
    }
    write_descriptions(&out.join("descriptions.jsonl"), &descs)?;
    write(&out.join("key_joint_truth.json"), truth)?;
    Ok(json!({
        "command": "gen-data",
        "records": ds.len(),
        "classes": spec.n_classes,
        "seed": ctx.cfg.seed,
        "out": out,
    }))
}

fn extract(ctx: &Ctx, a: &ExtractArgs) -> Outcome {
    let path = ctx.input(a.descriptions.as_ref().or(ctx.cfg.descriptions.as_ref()), "--descriptions")?;
    let topo = ctx.topology()?;
    let descs = ingest_descriptions(&path, &topo)?;
    let mut body = String::new();
    for d in &descs {
        let k = extract_key_joints(d, &topo)?;
        let rec = KeyJointRecord {
            action: d.action_name.clone(),
            k: k.k,
            k_gt: k.k_gt,
        };
        body.push_str(&serde_json::to_string(&rec).map_err(crossglg::Error::from)?);
        body.push('\n');
    }
    if descs.is_empty() {
        eprintln!("{}", json!({"status": "warning", "message": format!("{} holds no descriptions", path.display())}));
    }
    let out = ctx.path(&a.out);
    create_parent(&out)?;
    write(&out, body)?;
    Ok(json!({"command": "extract", "records": descs.len(), "out": out}))
}

fn embed_text(ctx: &Ctx, a: &EmbedTextArgs) -> Outcome {
    let path = ctx.input(a.descriptions.as_ref().or(ctx.cfg.descriptions.as_ref()), "--descriptions")?;
    let dim = a.dim.unwrap_or(ctx.cfg.model.interaction.c_txt);
    if dim == 0 {
        return Err(Failure::usage("--dim must be positive"));
    }
    let out = ctx.path(&a.out);
    reject_file(&out)?;
    let topo = ctx.topology()?;
    let descs = ingest_descriptions(&path, &topo)?;
    let embedder = HashedBagOfWords::new(dim);
    let mut files: BTreeMap<String, (&str, JointTextEmbeddings)> = BTreeMap::new();
    for d in &descs {
        let name = format!("{}.json", slug(&d.action_name));
        if files.contains_key(&name) {
            return Err(Failure::new("embedding", format!("actions collide on file name `{name}`")));
        }
        files.insert(name, (&d.action_name, embed_joint_texts(d, &embedder, &topo)?));
    }
    create_dir(&out)?;
    for (name, (action, emb)) in &files {
        save_external_embeddings(&out.join(name), action, emb, &topo)?;
    }
    Ok(json!({"command": "embed-text", "actions": files.len(), "dim": dim, "out": out}))
}

/// Every external embedding manifest in `dir`, keyed by lowercase action name.
fn load_embedding_dir(dir: &Path, topo: &SkeletonTopology, c_txt: usize) -> Result<BTreeMap<String, JointTextEmbeddings>, Failure> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = BTreeMap::new();
    for p in paths {
        let (action, emb) = load_external_embeddings(&p, topo)?;
        if emb.t.cols != c_txt {
            return Err(Failure::new(
                "shape",
                format!("`{action}` embeddings have width {}, the model expects c_txt = {c_txt}", emb.t.cols),
            ));
        }
        out.insert(action.to_lowercase(), emb);
    }
    Ok(out)
}

struct Prepared {
    topo: SkeletonTopology,
    base: Dataset,
    novel: Dataset,
    model: ModelConfig,
    set: TrainingSet,
}

fn base_labels(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<usize>, Failure> {
    let present = ds.labels();
    match (&cfg.base_classes, cfg.n_base) {
        (Some(_), Some(_)) => Err(Failure::usage("give either base_classes or n_base, not both")),
        (Some(b), None) => Ok(b.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()),
        (None, Some(n)) if n == 0 || n > present.len() => {
            Err(Failure::usage(format!("n_base = {n} must lie in [1, {}]", present.len())))
        }
        (None, Some(n)) => Ok(present[..n].to_vec()),
        (None, None) => Ok(present),
    }
}

/// Loads data, descriptions and embeddings and builds the training set.
/// `blocks_pre` overrides the encoder depth and split when given.
fn prepare(ctx: &Ctx, blocks_pre: Option<(usize, usize)>) -> Result<Prepared, Failure> {
    let cfg = &ctx.cfg;
    let data = ctx.input(cfg.data.as_ref(), "--data")?;
    let desc_path = ctx.input(cfg.descriptions.as_ref(), "--descriptions")?;
    let emb_dir = match &cfg.embeddings {
        Some(p) => Some(ctx.input(Some(p), "--embeddings")?),
        None => None,
    };
    let topo = ctx.topology()?;
    let ds = load_dataset(&data, &topo)?;
    let labels = base_labels(cfg, &ds)?;
    let (base, novel) = split_base_novel(&ds, &labels)?;
    let trained = base.labels();
    if trained.is_empty() {
        return Err(Failure::new("config", "no training samples in the base classes"));
    }
    let mut model = cfg.effective_model(topo.num_joints(), trained.len());
    if let Some((blocks, pre)) = blocks_pre {
        model.encoder.blocks = blocks;
        model.encoder.pre_blocks = pre;
    }
    model.validate()?;
    let descs = ingest_descriptions(&desc_path, &topo)?;
    let external = match &emb_dir {
        Some(d) => Some(load_embedding_dir(d, &topo, model.interaction.c_txt)?),
        None => None,
    };
    let embedder = HashedBagOfWords::new(model.interaction.c_txt);
    let guidance = build_guidance(&ds.class_names, &trained, &descs, external.as_ref(), &embedder, &topo)?;
    let samples = prepare_samples(&base, &topo, model.encoder.frames);
    let set = TrainingSet::new(samples, guidance)?;
    Ok(Prepared {
        topo,
        base,
        novel,
        model,
        set,
    })
}

fn cmd_train(ctx: &Ctx, _a: &TrainArgs) -> Outcome {
    let out = ctx.path(ctx.cfg.out.as_ref().ok_or_else(|| Failure::usage("missing --out"))?);
    reject_file(&out)?;
    let p = prepare(ctx, None)?;
    let ckpt = train(&p.model, &p.set, |_| {})?;
    ckpt.save(&out)?;
    write_loss_log(&out.join("loss_log.csv"), &ckpt.metadata.losses)?;
    Ok(json!({
        "command": "train",
        "out": out,
        "classes": ckpt.metadata.classes,
        "epochs": ckpt.metadata.epochs,
        "seed": ckpt.metadata.seed,
        "alpha1": p.model.alpha1,
        "alpha2": p.model.alpha2,
        "final_loss": ckpt.metadata.losses.last(),
    }))
}

/// Splits by the checkpoint's training classes; base classes absent from the data are skipped.
fn split_for_checkpoint(ckpt: &Checkpoint, ds: &Dataset) -> Result<(Dataset, Dataset), Failure> {
    let base: Vec<usize> = ckpt.metadata.classes.iter().copied().filter(|c| ds.class_names.contains_key(c)).collect();
    Ok(split_base_novel(ds, &base)?)
}

fn load_checkpoint(ctx: &Ctx, p: &Path) -> Result<Checkpoint, Failure> {
    let dir = ctx.path(p);
    if !dir.is_dir() {
        return Err(Failure::new("checkpoint", format!("{}: no checkpoint directory", dir.display())));
    }
    Ok(Checkpoint::load(&dir)?)
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Outcome {
    let ckpt = load_checkpoint(ctx, &a.checkpoint)?;
    if !ckpt.metadata.frozen {
        return Err(crossglg::Error::NotFrozen.into());
    }
    let data = ctx.input(ctx.cfg.data.as_ref(), "--data")?;
    let topo = ctx.topology()?;
    let ds = load_dataset(&data, &topo)?;
    let (base, novel) = split_for_checkpoint(&ckpt, &ds)?;
    if novel.is_empty() {
        return Err(Failure::new("episode", "the data holds no classes outside the checkpoint's training classes"));
    }
    let settings = ctx.cfg.effective_eval();
    let base = (!base.is_empty()).then_some(&base);
    let report = evaluate(&ckpt, &novel, base, &topo, &settings)?;
    let out = ctx.path(&a.out);
    create_parent(&out)?;
    report.save(&out)?;
    Ok(json!({
        "command": "eval",
        "out": out,
        "classifier": report.classifier,
        "accuracy": report.accuracy,
        "episodes": report.episodes,
        "seed": settings.seed,
    }))
}

fn sweep_jid(ctx: &Ctx, a: &SweepArgs) -> Outcome {
    let blocks = a.model.blocks.unwrap_or(9);
    if a.pre.is_empty() {
        return Err(Failure::usage("--pre needs at least one split point"));
    }
    let out = ctx.path(&a.out);
    if out.is_dir() {
        return Err(Failure::usage(format!("{} is a directory; expected a file", out.display())));
    }
    let first = prepare(ctx, Some((blocks, a.pre[0])))?;
    let mut configs = Vec::with_capacity(a.pre.len());
    for &pre in &a.pre {
        let mut m = first.model.clone();
        m.encoder.pre_blocks = pre;
        m.validate()?;
        configs.push(m);
    }
    let settings = ctx.cfg.effective_eval();
    let mut table = String::from("n_pre,blocks,seed,classifier,accuracy,correct,total\n");
    let mut rows = Vec::new();
    for m in &configs {
        let ckpt = train(m, &first.set, |_| {})?;
        let novel = extract_features(&ckpt, &first.novel, &first.topo)?;
        let base = extract_features(&ckpt, &first.base, &first.topo)?;
        let r = evaluate_features(&novel, Some(&base), &settings)?;
        table.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.encoder.pre_blocks, blocks, m.seed, r.classifier, r.accuracy, r.correct, r.total
        ));
        rows.push(json!({"n_pre": m.encoder.pre_blocks, "accuracy": r.accuracy}));
    }
    create_parent(&out)?;
    write(&out, table)?;
    Ok(json!({"command": "sweep-jid", "out": out, "blocks": blocks, "seed": ctx.cfg.seed, "rows": rows}))
}

fn viz(ctx: &Ctx, a: &VizArgs) -> Outcome {
    let ckpt = load_checkpoint(ctx, &a.checkpoint)?;
    let data = ctx.input(ctx.cfg.data.as_ref(), "--data")?;
    let out = ctx.path(&a.out);
    reject_file(&out)?;
    let topo = ctx.topology()?;
    let enc = &ckpt.model.config.encoder;
    if topo.num_joints() != enc.joints {
        return Err(Failure::new(
            "shape",
            format!("topology `{}` has {} joints, the checkpoint expects {}", topo.name, topo.num_joints(), enc.joints),
        ));
    }
    let ds = load_dataset(&data, &topo)?;
    let chosen: Vec<&crossglg::SkeletonSequence> = match &a.samples {
        Some(ids) => ids
            .iter()
            .map(|id| {
                ds.sequences
                    .iter()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| Failure::new("missing_sample", format!("no sample with id `{id}`")))
            })
            .collect::<Result<_, _>>()?,
        None => ds.sequences.iter().take(a.limit).collect(),
    };
    let mut files = BTreeMap::new();
    let mut k_csv = String::from("id,label");
    for j in 0..enc.joints {
        k_csv.push_str(&format!(",k{j}"));
    }
    k_csv.push('\n');
    for s in &chosen {
        let coords = frames_to_mat(&preprocess(s, &topo, enc.frames).frames);
        let o = ckpt.model.encoder_output(&coords)?;
        let name = format!("attention_{}.csv", slug(&s.id));
        if files.insert(name.clone(), export_attention(&o)).is_some() {
            return Err(Failure::new("missing_sample", format!("sample ids collide on file name `{name}`")));
        }
        k_csv.push_str(&format!("{},{}", s.id, s.label));
        for k in &o.k_out {
            k_csv.push_str(&format!(",{k}"));
        }
        k_csv.push('\n');
    }
    create_dir(&out)?;
    for (name, body) in &files {
        write(&out.join(name), body)?;
    }
    write(&out.join("k_out.csv"), k_csv)?;
    Ok(json!({"command": "viz", "out": out, "samples": chosen.len()}))
}
