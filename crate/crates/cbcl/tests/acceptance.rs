//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Tolerances and time budgets are fixed below.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cbcl::experiment::{run_experiment, DataSource, ExperimentConfig, Method, SyntheticSettings, TrainSettings};
use cbcl_core::arrangement::{
    encode, ArrangementStore, ArrangementVector, BoundingBox, Relation, Scene, SceneObject, VerdictKind,
};
use cbcl_core::classifier::class_means;
use cbcl_core::cleaning::{run_campaign, CleaningTrialSpec};
use cbcl_core::linear::{cross_entropy, gradient, LinearHead};
use cbcl_core::protocol::{run_cbcl_session, GridSpec, IncrementPlan};
use cbcl_core::rng::{derive_seed, index, rng_from_seed, shuffle, standard_normal, uniform01};
use cbcl_core::{
    cluster_class, generate_synthetic, predict, predict_1nn, predict_ncm, predict_scores, split_shots, ClassId,
    Dataset, FeatureVector, LabeledExample, ModelStore, SyntheticSpec,
};

const ORACLE_DATASETS: u64 = 24;
const PARTITIONS: u64 = 12;
const FT_FINAL_GAP: f64 = 0.20;
const CBCL_FLB_GAP: f64 = 0.03;
const GRADIENT_INSTANCES: u64 = 100;
const GRADIENT_REL_ERR: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const ARRANGEMENT_CLASSES: usize = 22;
const ARRANGEMENT_BITS: usize = 990;
const RANDOM_SCENES: u64 = 1000;
const CLEANING_TRIALS: u64 = 10_000;
const DETECTION_TARGET: f64 = 20.0;
const DETECTION_TOL: f64 = 1.0;
const CLASSIFICATION_TOL: f64 = 1.0;

type Check = Result<String, String>;

/// Id, name, time budget in seconds, check.
type Criterion = (u8, &'static str, Option<u64>, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn oracle_dataset(i: u64) -> (Dataset, Dataset) {
    let mut rng = rng_from_seed(derive_seed(0xacce, i));
    let spec = SyntheticSpec {
        n_classes: 2 + index(&mut rng, 9),
        dim: 1 + index(&mut rng, 32),
        per_class_count: 8 + index(&mut rng, 13),
        class_mean_scale: 1.0 + 4.0 * uniform01(&mut rng),
        within_class_stddev: 0.3 + 1.5 * uniform01(&mut rng),
        seed: i,
    };
    let ds = generate_synthetic(&spec).unwrap();
    split_shots(&ds, 5, i).unwrap()
}

fn per_class(ds: &Dataset) -> BTreeMap<ClassId, Vec<FeatureVector>> {
    ds.by_class().into_iter().map(|(c, xs)| (c, xs.into_iter().cloned().collect())).collect()
}

fn max_pairwise(xs: &[FeatureVector]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in xs.iter().enumerate() {
        for b in &xs[i + 1..] {
            best = best.max(cbcl_core::euclidean_distance(a, b).unwrap());
        }
    }
    best
}

fn limit_check(
    threshold: impl Fn(&[FeatureVector]) -> f64,
    oracle: impl Fn(&Dataset, &FeatureVector) -> ClassId,
) -> Check {
    let (mut agree, mut total) = (0usize, 0usize);
    for i in 0..ORACLE_DATASETS {
        let (train, test) = oracle_dataset(i);
        let mut store = ModelStore::new(train.dim());
        for (c, xs) in per_class(&train) {
            store.insert(cluster_class(&xs, c, threshold(&xs)).unwrap()).unwrap();
        }
        for ex in test.examples() {
            total += 1;
            if predict(&store, &ex.vector, 1).unwrap() == oracle(&train, &ex.vector) {
                agree += 1;
            }
        }
    }
    ensure(agree == total, || format!("{agree}/{total} test points agree"))?;
    Ok(format!("{total}/{total} test points over {ORACLE_DATASETS} datasets"))
}

fn ncm_limit() -> Check {
    limit_check(|xs| max_pairwise(xs) * 1.01 + 1e-9, |train, x| predict_ncm(&class_means(train), x).unwrap())
}

fn one_nn_limit() -> Check {
    limit_check(|_| 0.0, |train, x| predict_1nn(train, x).unwrap())
}

fn batch_equals_incremental() -> Check {
    let mut points = 0;
    for p in 0..PARTITIONS {
        let (train, test) = oracle_dataset(1000 + p);
        let data = per_class(&train);
        let d = 0.5 + p as f64 * 0.25;
        let mut batch = ModelStore::new(train.dim());
        batch.learn_increment(&data, d).unwrap();

        let mut classes: Vec<ClassId> = data.keys().copied().collect();
        let mut rng = rng_from_seed(derive_seed(0x9a27, p));
        shuffle(&mut rng, &mut classes);
        let mut incremental = ModelStore::new(train.dim());
        let mut rest = classes.as_slice();
        while !rest.is_empty() {
            let take = 1 + index(&mut rng, rest.len());
            let (now, later) = rest.split_at(take);
            let chunk: BTreeMap<ClassId, Vec<FeatureVector>> = now.iter().map(|c| (*c, data[c].clone())).collect();
            incremental.learn_increment(&chunk, d).unwrap();
            rest = later;
        }
        ensure(incremental == batch, || format!("partition {p}: stores differ"))?;
        for ex in test.examples() {
            for n in [1, 3, 10] {
                let a = predict_scores(&batch, &ex.vector, n).unwrap();
                let b = predict_scores(&incremental, &ex.vector, n).unwrap();
                ensure(a == b, || format!("partition {p}: scores differ"))?;
                points += 1;
            }
        }
    }
    Ok(format!("{PARTITIONS} partitions, {points} score maps bit-identical"))
}

fn forgetting_pattern() -> Check {
    let config = |method| ExperimentConfig {
        source: DataSource::Synthetic(SyntheticSettings::default()),
        shots: 5,
        classes_per_increment: 2,
        runs: 10,
        method,
        grid: "auto".into(),
        folds: None,
        seed: 0,
        train: TrainSettings::default(),
    };
    let ds = config(Method::Cbcl).source.load().map_err(|e| e.to_string())?;
    let result = |m| run_experiment(&config(m), &ds).map_err(|e| e.to_string());
    let (cbcl, ft, flb) = (result(Method::Cbcl)?, result(Method::Ft)?, result(Method::Flb)?);

    for (run, (a, b)) in ft.runs.iter().zip(&flb.runs).enumerate() {
        ensure(a.metrics[0] == b.metrics[0], || format!("run {run}: FT and FLB differ at increment 1"))?;
    }
    let last = |r: &cbcl::experiment::ExperimentResult| *r.summary.per_increment_mean.last().unwrap();
    let gap = last(&flb) - last(&ft);
    ensure(gap >= FT_FINAL_GAP, || format!("FT final only {:.1} points below FLB", 100.0 * gap))?;
    let aia = |r: &cbcl::experiment::ExperimentResult| r.summary.average_incremental_accuracy;
    let diff = aia(&cbcl) - aia(&flb);
    ensure(diff.abs() <= CBCL_FLB_GAP, || {
        format!("CBCL vs FLB average incremental accuracy {:+.2} points", 100.0 * diff)
    })?;
    Ok(format!(
        "final FLB {:.3} FT {:.3} (gap {:.1} pts); avg inc CBCL {:.4} FLB {:.4} ({:+.2} pts); increment 1 identical",
        last(&flb),
        last(&ft),
        100.0 * gap,
        aia(&cbcl),
        aia(&flb),
        100.0 * diff
    ))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gradient_check() -> Check {
    let mut worst = 0.0f64;
    for inst in 0..GRADIENT_INSTANCES {
        let mut rng = rng_from_seed(derive_seed(0x6e4d, inst));
        let dim = 1 + index(&mut rng, 16);
        let k = 2 + index(&mut rng, 5);
        let n = 1 + index(&mut rng, 8);
        let classes: Vec<ClassId> = (0..k as u32).map(ClassId).collect();
        let mut params: Vec<f64> = (0..k * dim + k).map(|_| 0.5 * standard_normal(&mut rng)).collect();
        let batch: Vec<LabeledExample> = (0..n)
            .map(|_| LabeledExample {
                vector: FeatureVector::new((0..dim).map(|_| standard_normal(&mut rng)).collect()).unwrap(),
                label: classes[index(&mut rng, k)],
            })
            .collect();
        let refs: Vec<&LabeledExample> = batch.iter().collect();
        let head = |p: &[f64]| {
            LinearHead::from_parts(dim, classes.clone(), p[..k * dim].to_vec(), p[k * dim..].to_vec()).unwrap()
        };
        let g = gradient(&head(&params), &refs).unwrap();
        let analytic: Vec<f64> = g.weights.iter().chain(&g.bias).copied().collect();
        let mut numeric = vec![0.0; params.len()];
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + FD_STEP;
            let up = cross_entropy(&head(&params), &refs).unwrap();
            params[i] = orig - FD_STEP;
            let down = cross_entropy(&head(&params), &refs).unwrap();
            params[i] = orig;
            numeric[i] = (up - down) / (2.0 * FD_STEP);
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        let err = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
        ensure(err < GRADIENT_REL_ERR, || format!("instance {inst}: relative error {err:.2e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("{GRADIENT_INSTANCES} instances, worst relative error {worst:.2e}"))
}

fn hand_example() -> Check {
    let mut store = ModelStore::new(2);
    for (c, p) in [(0u32, [0.0, 0.0]), (1, [4.0, 0.0])] {
        let x = FeatureVector::new(p.to_vec()).unwrap();
        store.insert(cluster_class([&x], ClassId(c), 1.0).unwrap()).unwrap();
    }
    let x = FeatureVector::new(vec![1.0, 0.0]).unwrap();
    let scores = predict_scores(&store, &x, 2).unwrap();
    let (a, b) = (scores.get(ClassId(0)), scores.get(ClassId(1)));
    ensure(a == Some(1.0) && b == Some(1.0 / 3.0), || format!("scores {a:?} {b:?}"))?;
    ensure(predict(&store, &x, 2).unwrap() == ClassId(0), || "argmax is not A".into())?;
    Ok("scores {A: 1, B: 1/3}, prediction A".into())
}

fn random_scene(rng: &mut cbcl_core::rng::ChaCha8Rng, n_classes: usize) -> Scene {
    let (w, h) = (640.0, 480.0);
    let mut classes: Vec<u32> = (0..n_classes as u32).collect();
    shuffle(rng, &mut classes);
    let count = index(rng, n_classes + 1);
    let objects = classes[..count]
        .iter()
        .map(|&c| {
            let x0 = uniform01(rng) * (w - 20.0);
            let y0 = uniform01(rng) * (h - 20.0);
            let x1 = x0 + 1.0 + uniform01(rng) * (w - x0 - 1.0);
            let y1 = y0 + 1.0 + uniform01(rng) * (h - y0 - 1.0);
            SceneObject { label: ClassId(c), bbox: BoundingBox::new(x0, y0, x1, y1) }
        })
        .collect();
    Scene { width: w, height: h, objects }
}

fn arrangement_vectors() -> Check {
    let n = ARRANGEMENT_CLASSES;
    let empty = Scene { width: 10.0, height: 10.0, objects: vec![] };
    let len = encode(&empty, n).unwrap().len();
    ensure(len == ARRANGEMENT_BITS, || format!("length {len}"))?;
    let mut rng = rng_from_seed(0x5ce);
    let mut relation_bits = 0usize;
    for s in 0..RANDOM_SCENES {
        let scene = random_scene(&mut rng, n);
        let v: ArrangementVector = encode(&scene, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                for rel in [Relation::LeftOf, Relation::Above] {
                    if v.relation(rel, i, j) {
                        relation_bits += 1;
                        ensure(v.bits()[i] && v.bits()[j], || format!("scene {s}: relation bit without presence"))?;
                    }
                }
            }
        }
    }
    Ok(format!("length {len}; {relation_bits} relation bits over {RANDOM_SCENES} scenes all backed by presence"))
}

fn object(c: u32, slot: usize) -> SceneObject {
    // slots on a diagonal so every pair has a clear dominant axis
    let x = 20.0 + 120.0 * slot as f64;
    let y = 20.0 + 40.0 * slot as f64;
    SceneObject { label: ClassId(c), bbox: BoundingBox::new(x, y, x + 60.0, y + 30.0) }
}

fn arrangement_verdicts() -> Check {
    let n = ARRANGEMENT_CLASSES;
    let scene = |objs: Vec<SceneObject>| Scene { width: 640.0, height: 480.0, objects: objs };
    let mut store = ArrangementStore::new(n);
    let mut layouts = Vec::new();
    for a in 0..5u32 {
        let classes = [3 * a, 3 * a + 1, 3 * a + 2];
        let name = format!("arrangement_{a}");
        store
            .learn(&name, &scene(classes.iter().enumerate().map(|(s, &c)| object(c, s)).collect()))
            .map_err(|e| e.to_string())?;
        layouts.push((name, classes));
    }

    let (mut cases, mut correct) = (0usize, 0usize);
    for (name, classes) in &layouts {
        let stored = scene(classes.iter().enumerate().map(|(s, &c)| object(c, s)).collect());
        let v = store.check(&stored).unwrap();
        cases += 1;
        correct += usize::from(v.kind == VerdictKind::Consistent && v.distance == 0 && v.closest == [name.clone()]);

        for removed in 0..3 {
            let objs = classes.iter().enumerate().filter(|(s, _)| *s != removed).map(|(s, &c)| object(c, s)).collect();
            let v = store.check(&scene(objs)).unwrap();
            cases += 1;
            correct += usize::from(
                v.kind == VerdictKind::Missing
                    && v.closest == [name.clone()]
                    && v.missing_classes == BTreeSet::from([ClassId(classes[removed])])
                    && v.wrong_pairs.is_empty(),
            );
        }
        for replaced in 0..3 {
            for sub in (0..n as u32).filter(|c| !classes.contains(c)) {
                let objs =
                    classes.iter().enumerate().map(|(s, &c)| object(if s == replaced { sub } else { c }, s)).collect();
                let v = store.check(&scene(objs)).unwrap();
                cases += 1;
                correct += usize::from(
                    v.kind == VerdictKind::Wrong
                        && v.closest == [name.clone()]
                        && v.wrong_pairs == BTreeSet::from([(ClassId(sub), ClassId(classes[replaced]))])
                        && v.missing_classes.is_empty(),
                );
            }
        }
    }
    ensure(correct == cases, || format!("{correct}/{cases} verdicts correct"))?;

    // two stored arrangements differing in one object: removing it leaves a tie
    let mut tied = ArrangementStore::new(n);
    tied.learn("with_soap", &scene(vec![object(0, 0), object(1, 1), object(3, 2)])).unwrap();
    tied.learn("with_shampoo", &scene(vec![object(0, 0), object(1, 1), object(2, 2)])).unwrap();
    let v = tied.check(&scene(vec![object(0, 0), object(1, 1)])).unwrap();
    let both = v.closest == ["with_soap".to_string(), "with_shampoo".to_string()];
    ensure(both && v.missing_classes == BTreeSet::from([ClassId(2), ClassId(3)]), || {
        format!("tie reported as {:?} missing {:?}", v.closest, v.missing_classes)
    })?;
    Ok(format!("{cases}/{cases} verdicts correct; tie returns both candidates"))
}

fn cleaning_simulation() -> Check {
    let ds = generate_synthetic(&SyntheticSettings::default().to_spec()).unwrap();
    let plan = IncrementPlan::randomized(ds.labels(), ds.labels().len(), 5, 0).unwrap();
    let state = run_cbcl_session(&ds, &plan, &GridSpec::default(), None).unwrap();
    let (_, pool) = plan.split(&ds).unwrap();
    let n_vote = state.hyper_history[0].n_vote;
    let spec = CleaningTrialSpec {
        n_objects: 6,
        n_targets: 2,
        target_class: ClassId(0),
        p_detect_miss: 0.2,
        p_move_fail: 0.0,
        seed: 0,
    };
    let (_, b) = run_campaign(&spec, &state.store, &pool, n_vote, CLEANING_TRIALS).unwrap();

    // exhaustive error per class, weighted by how often the trial draws it
    let mut class_err = BTreeMap::new();
    let (mut wrong_all, mut all) = (0usize, 0usize);
    for (c, xs) in pool.by_class() {
        let wrong = xs.iter().filter(|x| predict(&state.store, x, n_vote).unwrap() != c).count();
        wrong_all += wrong;
        all += xs.len();
        class_err.insert(c, wrong as f64 / xs.len() as f64);
    }
    let others: Vec<f64> = class_err.iter().filter(|(c, _)| **c != spec.target_class).map(|(_, e)| *e).collect();
    let target_share = spec.n_targets as f64 / spec.n_objects as f64;
    let expected = 100.0
        * (target_share * class_err[&spec.target_class]
            + (1.0 - target_share) * others.iter().sum::<f64>() / others.len() as f64);
    let pool_err = 100.0 * wrong_all as f64 / all as f64;

    ensure((b.detection_error - DETECTION_TARGET).abs() <= DETECTION_TOL, || {
        format!("detection error {:.2}%", b.detection_error)
    })?;
    ensure(b.movement_error == 0.0, || format!("movement error {:.2}%", b.movement_error))?;
    ensure((b.classification_error - expected).abs() <= CLASSIFICATION_TOL, || {
        format!("classification error {:.2}% vs exhaustive {:.2}%", b.classification_error, expected)
    })?;
    Ok(format!(
        "detection {:.2}%, classification {:.2}% (exhaustive {:.2}%, unweighted pool {:.2}%), movement {:.2}%",
        b.detection_error, b.classification_error, expected, pool_err, b.movement_error
    ))
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Check {
    let setup = |dir: &Path| {
        fs::write(dir.join("labels.txt"), "0\tcup\n1\tplate\n2\tfork\n3\tknife\n").unwrap();
        fs::write(dir.join("table.txt"), "image 100 100\ncup 0 0 10 10\nplate 30 0 60 20\nfork 70 50 80 90\n").unwrap();
        fs::write(dir.join("odd.txt"), "image 100 100\ncup 0 0 10 10\nknife 30 0 60 20\n").unwrap();
    };
    let small = "classes=8,dim=6,per_class=15,seed=4";
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen", "--synthetic", small, "--out", "gen/f.cbfv"],
        vec!["gen", "--synthetic", small, "--out", "gen/f.csv"],
        vec!["validate", "gen/f.cbfv"],
        vec!["run", "--synthetic", small, "--runs", "4", "--method", "cbcl", "--out", "cbcl"],
        vec!["run", "--dataset", "gen/f.cbfv", "--runs", "3", "--method", "ft", "--epochs", "20", "--out", "ft"],
        vec!["run", "--dataset", "gen/f.csv", "--runs", "3", "--method", "flb", "--epochs", "20", "--out", "flb"],
        vec!["tune", "--synthetic", small, "--runs", "3", "--grid", "q=0.2,0.8;n=1,3", "--out", "tune"],
        vec!["clean-sim", "--synthetic", small, "--trials", "2000", "--out", "clean"],
        vec!["arrange", "learn", "--labels", "labels.txt", "--out", "arr/store.txt", "table.txt"],
        vec![
            "arrange",
            "check",
            "--labels",
            "labels.txt",
            "--store",
            "arr/store.txt",
            "--out",
            "arr/v.txt",
            "table.txt",
            "odd.txt",
        ],
    ];
    let mut trees = Vec::new();
    for threads in [Some("1"), Some("4"), None] {
        let dir = tempfile::tempdir().unwrap();
        setup(dir.path());
        let mut stdout = Vec::new();
        for args in &commands {
            let mut cmd = Command::new(env!("CARGO_BIN_EXE_cbcl"));
            if let Some(t) = threads {
                cmd.args(["--threads", t]);
            }
            let out = cmd.args(args).current_dir(dir.path()).env("CBCL_LOG", "off").output().unwrap();
            ensure(out.status.success(), || format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))?;
            stdout.push(out.stdout);
        }
        trees.push((files_under(dir.path()), stdout));
    }
    let files = trees[0].0.len();
    for (i, t) in trees.iter().enumerate().skip(1) {
        for (path, bytes) in &trees[0].0 {
            ensure(t.0.get(path) == Some(bytes), || format!("invocation {i}: {} differs", path.display()))?;
        }
        ensure(t.0.len() == files && t.1 == trees[0].1, || format!("invocation {i}: outputs differ"))?;
    }
    Ok(format!(
        "{} commands x 3 invocations (1, 4, default threads): {files} files and stdout identical",
        commands.len()
    ))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "NCM-limit equivalence", Some(10), ncm_limit),
        (2, "1-NN-limit equivalence", Some(10), one_nn_limit),
        (3, "batch equals incremental", Some(10), batch_equals_incremental),
        (4, "forgetting pattern", Some(300), forgetting_pattern),
        (5, "gradient check", Some(10), gradient_check),
        (6, "weighted-vote hand example", None, hand_example),
        (7, "arrangement vector length and bit invariants", None, arrangement_vectors),
        (8, "arrangement verdicts", Some(5), arrangement_verdicts),
        (9, "cleaning simulation", Some(60), cleaning_simulation),
        (10, "CLI determinism", None, determinism),
    ];
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let over = budget.is_some_and(|b| elapsed > Duration::from_secs(b));
        let (status, detail) = match result {
            Ok(_) if over => ("FAIL", format!("took {:.1}s, budget {}s", elapsed.as_secs_f64(), budget.unwrap())),
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} [{id:>2}] {name}: {detail} ({:.2}s)", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
