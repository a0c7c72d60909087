//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Runs as a plain binary (`harness = false`) so the lines come out in order
//! and unbuffered. Numeric arguments restrict the run to those criteria.
//! Criterion 6 trains six desk-scale models and dominates the
//! runtime.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crossglg::autograd::Graph;
use crossglg::data::split_base_novel;
use crossglg::encoder::{encoding_block, Reweight};
use crossglg::eval::{dc_calibrate, dc_classify, extract_features, sample_episode, tukey_transform, BaseStatistics, DcParams};
use crossglg::experiment::{build_guidance, run_synthetic_experiment, ExperimentResult, ExperimentSpec};
use crossglg::gradcheck::{check_gradients, random_training_set};
use crossglg::interaction::{interaction_block, InteractionParams};
use crossglg::model::{loss_calibrate, SampleRef};
use crossglg::synthetic::{generate_synthetic, synthetic_descriptions, SyntheticSpec};
use crossglg::text::{extract_key_joints, ingest_descriptions, write_descriptions, HashedBagOfWords};
use crossglg::train::{prepare_samples, train, Trainer, TrainingSet};
use crossglg::{load_topology, Checkpoint, CrossGlg, Dataset, InteractionConfig, Mat, ModelConfig, SkeletonSequence};

type Outcome = Result<String, String>;

const APPENDIX: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures/appendix_descriptions.jsonl");

/// Calibration weight for the desk-scale comparison. The calibration loss is
/// a per-joint mean over `V = 25` joints; weighting it by `V` turns it into the
/// per-joint sum, which a few hundred optimizer steps can move.
const DESK_ALPHA1: f64 = 25.0;
const DESK_ALPHA2: f64 = 0.2;
const G2L_SEEDS: u64 = 3;

static FULL_SEED0: OnceLock<ExperimentResult> = OnceLock::new();

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let report = check_gradients(&ModelConfig::tiny(), 0).map_err(err)?;
    let elapsed = t.elapsed();
    let worst = report.max_rel_error();
    let n = report.tensors.len();
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e} over {n} tensors"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}"))?;
    Ok(format!("max relative error {worst:.2e} over {n} tensors in {elapsed:.1?}"))
}

fn criterion_2() -> Outcome {
    // Loss decomposition on every batch of a short run.
    let cfg = ModelConfig {
        n_classes: 4,
        ..ModelConfig::tiny()
    };
    let set = random_training_set(&cfg, 3);
    let mut trainer = Trainer::new(CrossGlg::new(cfg.clone()).map_err(err)?, 12);
    let batches: [&[usize]; 4] = [&[0, 1], &[2, 3], &[1, 3], &[0, 2]];
    let mut worst = 0.0f64;
    for step in 0..12 {
        let l = trainer.train_step(&set, batches[step % 4]).map_err(err)?;
        let recombined = l.l_s + cfg.alpha1 * l.l_calibrate + cfg.alpha2 * l.l_c;
        worst = worst.max((l.l_overall - recombined).abs());
    }
    ensure(worst <= 1e-9, || format!("loss decomposition off by {worst:.3e}"))?;

    // The calibration loss vanishes exactly when the distributions coincide.
    let mut runner = TestRunner::new(PropConfig {
        cases: 256,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let dist = (2usize..30).prop_flat_map(|v| (prop::collection::vec(0.01f64..1.0, v), prop::collection::vec(0.01f64..1.0, v)));
    runner
        .run(&dist, |(a, b)| {
            let norm = |x: Vec<f64>| {
                let s: f64 = x.iter().sum();
                x.into_iter().map(|v| v / s).collect::<Vec<f64>>()
            };
            let (a, b) = (norm(a), norm(b));
            prop_assert_eq!(loss_calibrate(&a, &a).unwrap(), 0.0);
            let l = loss_calibrate(&a, &b).unwrap();
            prop_assert_eq!(l == 0.0, a == b);
            prop_assert!(l >= 0.0);
            Ok(())
        })
        .map_err(|e| format!("calibration loss: {e}"))?;

    // One-hot reweighting leaves only the chosen joint in the spatial stage.
    let model = CrossGlg::new(ModelConfig::tiny()).map_err(err)?;
    let enc = &model.config.encoder;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for j in 0..enc.joints {
        let mut g = Graph::new(&model.params);
        let f = g.input(rand_mat(&mut rng, enc.frames * enc.joints, enc.c_post));
        let mut onehot = vec![0.0; enc.joints];
        onehot[j] = 1.0;
        let k = g.input(Mat::row_vector(onehot));
        let nodes = encoding_block(
            &mut g,
            &model.layout.encoder.blocks[enc.pre_blocks],
            enc.heads,
            &model.geometry,
            f,
            Some(Reweight { k_out: k, residual: None }),
        );
        let stage = g.value(nodes.spatial_stage);
        for r in 0..stage.rows {
            let joint = r % enc.joints;
            let zero = stage.row(r).iter().all(|&v| v == 0.0);
            ensure(zero == (joint != j), || format!("one-hot at joint {j}: row {r} (joint {joint}) zero = {zero}"))?;
        }
    }

    // Distributions produced by random forwards.
    let mut worst_k = 0.0f64;
    let mut worst_attn = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = CrossGlg::new(ModelConfig::tiny()).map_err(err)?;
    for i in 0..1000 {
        if i % 100 == 0 {
            model = CrossGlg::new(ModelConfig {
                seed: i as u64,
                ..ModelConfig::tiny()
            })
            .map_err(err)?;
        }
        let enc = &model.config.encoder;
        let coords = rand_mat(&mut rng, enc.frames * enc.joints, 3);
        let mut g = Graph::new(&model.params);
        let (nodes, _) = model.skeleton_forward(&mut g, &coords).map_err(err)?;
        let k = &g.value(nodes.k_out).data;
        ensure(k.iter().all(|&v| v > 0.0 && v < 1.0), || format!("forward {i}: k_out entry outside (0, 1)"))?;
        worst_k = worst_k.max((k.iter().sum::<f64>() - 1.0).abs());
        for b in &nodes.blocks {
            let (groups, _, probs) = g.attention_probs(b.spatial_attention).expect("attention node");
            let keys = groups[0].keys.len();
            for p in probs {
                for row in p.chunks(keys) {
                    worst_attn = worst_attn.max((row.iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
    }
    ensure(worst_k <= 1e-6, || format!("k_out sums off by {worst_k:.3e}"))?;
    ensure(worst_attn <= 1e-5, || format!("attention rows off by {worst_attn:.3e}"))?;
    Ok(format!(
        "decomposition {worst:.1e}, k_out sums {worst_k:.1e}, attention rows {worst_attn:.1e} over 1000 forwards"
    ))
}

fn dm(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows, m.cols, &m.data)
}

fn oracle_affine(x: &DMatrix<f64>, w: &Mat, b: &Mat) -> DMatrix<f64> {
    let mut y = x * dm(w);
    let b = dm(b);
    for mut row in y.row_iter_mut() {
        row += &b;
    }
    y
}

fn oracle_attention(q_src: &DMatrix<f64>, kv_src: &DMatrix<f64>, store: &crossglg::params::ParamStore, p: &crossglg::encoder::AttentionParams) -> DMatrix<f64> {
    let q = oracle_affine(q_src, store.get(p.wq), store.get(p.bq));
    let k = oracle_affine(kv_src, store.get(p.wk), store.get(p.bk));
    let v = oracle_affine(kv_src, store.get(p.wv), store.get(p.bv));
    let mut s = &q * k.transpose() / (q.ncols() as f64).sqrt();
    for mut row in s.row_iter_mut() {
        let m = row.max();
        row.apply(|x| *x = (*x - m).exp());
        let z = row.sum();
        row /= z;
    }
    oracle_affine(&(s * v), store.get(p.wo), store.get(p.bo))
}

fn oracle_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn criterion_3() -> Outcome {
    let cfg = InteractionConfig {
        blocks: 1,
        c_p: 4,
        heads: 1,
        c_txt: 3,
        ..InteractionConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = crossglg::params::ParamStore::new();
    let params = InteractionParams::init(&mut store, &cfg, 4, &mut rng);
    // Random biases too, so every term of the block is exercised.
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    let p_txt = rand_mat(&mut rng, 2, 4);
    let p_st = rand_mat(&mut rng, 2, 4);
    let bp = &params.blocks[0];

    let mut g = Graph::new(&store);
    let (t, s) = (g.input(p_txt.clone()), g.input(p_st.clone()));
    let nodes = interaction_block(&mut g, bp, &cfg, t, s);

    let txt0 = dm(&p_txt);
    let st0 = dm(&p_st);
    let txt1 = &txt0 + oracle_attention(&txt0, &txt0, &store, &bp.self_attn);
    let cross = &st0 + oracle_attention(&txt1, &st0, &store, &bp.cross_attn);
    let mut h = oracle_affine(&(&txt1 + &cross), store.get(bp.fuse.w1), store.get(bp.fuse.b1));
    h.apply(|x| *x = oracle_gelu(*x));
    let st1 = oracle_affine(&h, store.get(bp.fuse.w2), store.get(bp.fuse.b2));

    let diff = |a: &DMatrix<f64>, b: &Mat| (a - dm(b)).abs().max();
    let worst = diff(&txt1, g.value(nodes.p_txt)).max(diff(&cross, g.value(nodes.cross))).max(diff(&st1, g.value(nodes.p_st)));
    ensure(worst <= 1e-10, || format!("block differs from oracle by {worst:.3e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let topo = load_topology("ntu25").map_err(err)?;
    let golden: BTreeMap<&str, Vec<usize>> = [
        ("wave hand", vec![4, 5, 6, 7, 8, 9, 10, 11]),
        ("squat down", vec![4, 5, 6, 8, 9, 10, 12, 13, 14, 15, 16, 17, 18, 19]),
        ("count money", vec![3, 7, 11]),
    ]
    .into();
    let run = || -> Result<Vec<(String, Vec<u8>)>, String> {
        let descs = ingest_descriptions(APPENDIX.as_ref(), &topo).map_err(err)?;
        descs
            .iter()
            .map(|d| Ok((d.action_name.clone(), extract_key_joints(d, &topo).map_err(err)?.k)))
            .collect()
    };
    let first = run()?;
    ensure(first.len() == golden.len(), || format!("{} fixtures, expected {}", first.len(), golden.len()))?;
    for (name, k) in &first {
        let on: Vec<usize> = k.iter().enumerate().filter(|(_, &b)| b == 1).map(|(i, _)| i).collect();
        let want = golden.get(name.as_str()).ok_or_else(|| format!("unexpected fixture `{name}`"))?;
        ensure(&on == want, || format!("`{name}`: key joints {on:?}, expected {want:?}"))?;
    }
    for _ in 0..3 {
        ensure(run()? == first, || "extraction differs between runs".into())?;
    }
    Ok("wave hand, squat down and count money match the lexicon goldens; stable over 4 runs".into())
}

fn criterion_5() -> Outcome {
    let topo = load_topology("ntu25").map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let mut spec = ExperimentSpec::desk();
    spec.synthetic = SyntheticSpec {
        n_classes: 6,
        samples_per_class: 20,
        frames: 32,
        ..SyntheticSpec::default()
    };
    spec.n_base = 4;
    spec.model.n_classes = 4;
    spec.model.epochs = 1;
    let ds = generate_synthetic(&spec.synthetic, &topo, 1).map_err(err)?;
    let (base, novel) = split_base_novel(&ds, &[0, 1, 2, 3]).map_err(err)?;

    // Train from description and key-joint files on disk.
    let desc_path = dir.path().join("descriptions.jsonl");
    write_descriptions(&desc_path, &synthetic_descriptions(6, &topo).map_err(err)?).map_err(err)?;
    let descs = ingest_descriptions(&desc_path, &topo).map_err(err)?;
    let classes: Vec<usize> = base.class_names.keys().copied().collect();
    let embedder = HashedBagOfWords::new(spec.model.interaction.c_txt);
    let guidance = build_guidance(&ds.class_names, &classes, &descs, None, &embedder, &topo).map_err(err)?;
    let set = TrainingSet::new(prepare_samples(&base, &topo, spec.model.encoder.frames), guidance).map_err(err)?;
    let ckpt_dir = dir.path().join("ckpt");
    train(&spec.model, &set, |_| {}).map_err(err)?.save(&ckpt_dir).map_err(err)?;

    let with_text = extract_features(&Checkpoint::load(&ckpt_dir).map_err(err)?, &novel, &topo).map_err(err)?;
    std::fs::remove_file(&desc_path).map_err(err)?;
    ensure(std::fs::read_dir(dir.path()).map_err(err)?.count() == 1, || "text artifacts left behind".into())?;
    let ckpt = Checkpoint::load(&ckpt_dir).map_err(err)?;
    let without = extract_features(&ckpt, &novel, &topo).map_err(err)?;
    let bitwise = with_text.features.iter().flatten().zip(without.features.iter().flatten()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(bitwise && with_text == without, || "features changed after deleting the text files".into())?;

    // The skeleton feature of a full forward ignores the text it is given.
    let s = &set.samples[0];
    let k_gt = set.guidance[&s.label].key_joints.target(false);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f_out_s = |text: &Mat| -> Result<Vec<f64>, String> {
        let mut g = Graph::new(&ckpt.model.params);
        let target = set.target_of(s.label).ok_or("unknown label")?;
        let nodes = ckpt
            .model
            .forward_sample(&mut g, SampleRef { coords: &s.coords, target, k_gt: &k_gt, text })
            .map_err(err)?;
        Ok(g.value(nodes.f_out_s).data.clone())
    };
    let c_txt = spec.model.interaction.c_txt;
    let a = f_out_s(&rand_mat(&mut rng, 25, c_txt))?;
    let b = f_out_s(&rand_mat(&mut rng, 25, c_txt))?;
    ensure(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), || "f_out^s depends on the text input".into())?;

    // Runtime on 100 samples.
    let hundred = Dataset {
        sequences: (0..100).map(|i| relabel(&ds.sequences[i % ds.sequences.len()], i)).collect(),
        ..ds.clone()
    };
    let t = Instant::now();
    let f = extract_features(&ckpt, &hundred, &topo).map_err(err)?;
    let elapsed = t.elapsed();
    ensure(f.len() == 100, || format!("{} features", f.len()))?;
    ensure(elapsed < Duration::from_secs(10), || format!("100 samples took {elapsed:.1?}"))?;
    Ok(format!("features bitwise identical without text files; 100 samples in {elapsed:.2?}"))
}

fn relabel(s: &SkeletonSequence, i: usize) -> SkeletonSequence {
    SkeletonSequence {
        id: format!("copy-{i}"),
        ..s.clone()
    }
}

fn g2l_spec(seed: u64, alpha1: f64, alpha2: f64) -> ExperimentSpec {
    let mut spec = ExperimentSpec::desk();
    spec.data_seed = seed;
    spec.model.seed = seed;
    spec.eval.seed = seed;
    spec.model.alpha1 = alpha1;
    spec.model.alpha2 = alpha2;
    spec
}

fn criterion_6() -> Outcome {
    let topo = load_topology("ntu25").map_err(err)?;
    let t = Instant::now();
    let mut wins = 0;
    let mut masses = Vec::new();
    let mut rows = Vec::new();
    for seed in 0..G2L_SEEDS {
        let full = run_synthetic_experiment(&g2l_spec(seed, DESK_ALPHA1, DESK_ALPHA2), &topo).map_err(err)?;
        let baseline = run_synthetic_experiment(&g2l_spec(seed, 0.0, 0.0), &topo).map_err(err)?;
        let (fa, ba) = (full.report.accuracy, baseline.report.accuracy);
        if fa >= ba {
            wins += 1;
        }
        masses.push((full.base_key_mass / full.base_uniform_mass, full.novel_key_mass / full.novel_uniform_mass));
        rows.push(format!(
            "seed {seed}: acc {fa:.3} vs {ba:.3}, mass/uniform base {:.2} novel {:.2}",
            full.base_key_mass / full.base_uniform_mass,
            full.novel_key_mass / full.novel_uniform_mass
        ));
        eprintln!("  {}", rows.last().expect("pushed"));
        if seed == 0 {
            let _ = FULL_SEED0.set(full);
        }
    }
    let elapsed = t.elapsed();
    let n = masses.len() as f64;
    let base_ratio = masses.iter().map(|m| m.0).sum::<f64>() / n;
    let novel_ratio = masses.iter().map(|m| m.1).sum::<f64>() / n;
    let summary = format!(
        "mean mass/uniform base {base_ratio:.2} novel {novel_ratio:.2}; full >= baseline on {wins}/{G2L_SEEDS} seeds; {:.0} s",
        elapsed.as_secs_f64()
    );
    ensure(base_ratio >= 2.0 && novel_ratio >= 2.0, || format!("informative-joint mass below 2x uniform: {summary}"))?;
    ensure(wins >= 2, || format!("full model beat the baseline on too few seeds: {summary}"))?;
    ensure(elapsed < Duration::from_secs(15 * 60), || format!("over the 15 min budget: {summary}"))?;
    Ok(summary)
}

fn criterion_7() -> Outcome {
    let topo = load_topology("ntu25").map_err(err)?;
    let spec = g2l_spec(0, DESK_ALPHA1, DESK_ALPHA2);
    let first = match FULL_SEED0.get() {
        Some(r) => r.clone(),
        None => run_synthetic_experiment(&spec, &topo).map_err(err)?,
    };
    let second = run_synthetic_experiment(&spec, &topo).map_err(err)?;
    let diff = first.checkpoint.model.params.max_abs_diff(&second.checkpoint.model.params);
    ensure(diff <= 1e-6, || format!("parameters differ by {diff:.3e}"))?;
    ensure(first.report == second.report, || "evaluation reports differ".into())?;
    ensure(first.checkpoint.metadata == second.checkpoint.metadata, || "training logs differ".into())?;
    Ok(format!("max parameter difference {diff:.1e}; reports identical"))
}

fn criterion_8() -> Outcome {
    let v = vec![0.0, 0.25, 1.5, 3.0, 1e-9];
    ensure(tukey_transform(&v, 1.0) == v, || "Tukey transform with lambda = 1 is not the identity".into())?;

    let base = vec![
        vec![1.0, 0.0, 0.5],
        vec![1.2, 0.2, 0.3],
        vec![0.8, 0.1, 0.7],
        vec![-1.0, 2.0, 0.0],
        vec![-1.4, 2.2, 0.4],
        vec![-0.6, 1.8, 0.2],
    ];
    let labels = vec![0, 0, 0, 1, 1, 1];
    let stats = BaseStatistics::compute(&base, &labels, false).map_err(err)?;
    let x = [0.9, 0.3, 0.1];
    let (mean, _) = dc_calibrate(&x, &stats, 1, 0.2).map_err(err)?;
    let mu = [1.0, 0.1, 0.5];
    for i in 0..3 {
        let want = (mu[i] + x[i]) / 2.0;
        ensure(mean[i] == want, || format!("k = 1 mean[{i}] = {}, expected {want}", mean[i]))?;
    }

    // Three classes with supports far apart in angle.
    let supports = vec![(vec![1.0, 0.1, 0.0], 7), (vec![0.0, 1.0, 0.2], 3), (vec![0.1, 0.0, 1.0], 5)];
    let queries = vec![
        vec![0.9, 0.3, 0.1],
        vec![0.2, 0.8, 0.1],
        vec![0.3, 0.2, 0.9],
        vec![0.6, 0.5, 0.0],
        vec![0.0, 0.45, 0.5],
        vec![2.0, 0.1, 1.5],
    ];
    let cosine = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let oracle: Vec<usize> = queries
        .iter()
        .map(|q| {
            supports
                .iter()
                .map(|(s, l)| (cosine(q, s), *l))
                .fold((f64::NEG_INFINITY, usize::MAX), |best, c| if c.0 > best.0 { c } else { best })
                .1
        })
        .collect();
    let params = DcParams {
        n_samples: 0,
        ..DcParams::default()
    };
    let got = dc_classify(&supports, &queries, &stats, &params, 0).map_err(err)?;
    ensure(got == oracle, || format!("dc predictions {got:?}, prototype oracle {oracle:?}"))?;
    Ok(format!("Tukey identity, k = 1 midpoint, and prototype agreement on {} queries", queries.len()))
}

fn criterion_9() -> Outcome {
    let topo = load_topology("ntu25").map_err(err)?;
    let ds = generate_synthetic(
        &SyntheticSpec {
            n_classes: 8,
            samples_per_class: 3,
            frames: 4,
            ..SyntheticSpec::default()
        },
        &topo,
        4,
    )
    .map_err(err)?;
    let ds = Arc::new(ds);
    let mut runner = TestRunner::new(PropConfig {
        cases: 128,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let d = ds.clone();
    runner
        .run(&prop::collection::btree_set(0usize..8, 0..=8), move |base| {
            let base: Vec<usize> = base.into_iter().collect();
            let (b, n) = split_base_novel(&d, &base).unwrap();
            prop_assert_eq!(b.len() + n.len(), d.len());
            prop_assert!(b.sequences.iter().all(|s| base.contains(&s.label)));
            prop_assert!(n.sequences.iter().all(|s| !base.contains(&s.label)));
            let mut ids: Vec<&str> = b.sequences.iter().chain(&n.sequences).map(|s| s.id.as_str()).collect();
            ids.sort_unstable();
            let mut all: Vec<&str> = d.sequences.iter().map(|s| s.id.as_str()).collect();
            all.sort_unstable();
            prop_assert_eq!(ids, all);
            Ok(())
        })
        .map_err(|e| format!("split partition: {e}"))?;

    let labels_of = |counts: &[usize]| -> Vec<usize> { counts.iter().enumerate().flat_map(|(c, &m)| std::iter::repeat_n(c * 3 + 1, m)).collect() };
    runner
        .run(&(prop::collection::vec(2usize..7, 1..6), any::<u64>()), |(counts, seed)| {
            let labels = labels_of(&counts);
            let e = sample_episode(&labels, seed).unwrap();
            prop_assert_eq!(e.support.len(), counts.len());
            prop_assert_eq!(e.query.len(), labels.len() - counts.len());
            for &(i, l) in &e.support {
                prop_assert_eq!(labels[i], l);
                prop_assert!(!e.query.contains(&i));
            }
            let mut classes = e.support_labels();
            classes.dedup();
            prop_assert_eq!(classes.len(), counts.len());
            prop_assert_eq!(sample_episode(&labels, seed).unwrap(), e);
            Ok(())
        })
        .map_err(|e| format!("episodes: {e}"))?;
    Ok("split partition over 128 random base sets; episode disjointness and stability over 128 draws".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient check", criterion_1),
        ("invariants", criterion_2),
        ("interaction block oracle", criterion_3),
        ("key-joint goldens", criterion_4),
        ("text-free inference", criterion_5),
        ("joint-importance guidance", criterion_6),
        ("determinism", criterion_7),
        ("distribution calibration", criterion_8),
        ("evaluation protocol", criterion_9),
    ];
    // Numeric arguments select criteria, e.g. `cargo test --test acceptance -- 3 8`.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let t = Instant::now();
        let outcome = check();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
