//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod oracles;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidi_core::attribution::{
    attribute_all_classes, deeplift, deepshap, read_attribution, Baseline, TracedInput,
};
use vidi_core::clustering::{
    embed, fit, read_clusters, read_features, seed_kmeanspp, FeatureVector, FitOptions,
};
use vidi_core::datapipe::{
    load_image, load_manifest, preprocess, save_manifest, severity_bin, stratified_split, Dataset,
    ImageRecord, Scenario, Severity,
};
use vidi_core::metrics::{classification_report, contingency, homogeneity, ClusterQuality};
use vidi_core::model_io::{load_network, network_to_parts, save_network};
use vidi_core::nn::{Dense, Layer, Network};
use vidi_core::synthetic::random_network;
use vidi_core::tensor::Tensor;
use vidi_core::Scalar;
use vidi_service::config::KRange;
use vidi_service::demo::write_demo;
use vidi_service::pipeline::run_pipeline;
use vidi_service::{RunConfig, RunStatus, RunStore};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s as f64, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn random_tensor<T: Scalar>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-2.0..2.0)))
}

fn summation_trials<T: Scalar>(trials: u64, seed: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + t);
        let net: Network<T> = random_network(&mut rng, true);
        let shape = net.input_shape();
        let x = random_tensor::<T>(&shape, &mut rng);
        let n_b = rng.gen_range(1..=4);
        let baselines: Vec<_> = (0..n_b)
            .map(|_| Baseline::new(random_tensor(&shape, &mut rng)).unwrap())
            .collect();
        let fx = net.forward(&x).unwrap();
        let fb: Vec<_> = baselines
            .iter()
            .map(|b| net.forward(b.reference()).unwrap())
            .collect();
        for map in attribute_all_classes(&net, &x, &baselines).map_err(|e| e.to_string())? {
            let c = map.target_class;
            let dt = fx.logits().data()[c].widen()
                - fb.iter().map(|f| f.logits().data()[c].widen()).sum::<f64>() / n_b as f64;
            let err = (map.contributions.sum() - dt).abs() / dt.abs().max(1.0);
            worst = worst.max(err);
            check(err <= 1e-4, || {
                format!("trial {t} class {c}: |sum C - dt| / max(1,|dt|) = {err:e}")
            })?;
        }
    }
    Ok(worst)
}

fn summation_to_delta() -> Outcome {
    let start = Instant::now();
    let w32 = summation_trials::<f32>(1000, 0)?;
    let w64 = summation_trials::<f64>(1000, 1_000_000)?;
    within(start.elapsed(), 60)?;
    Ok(format!(
        "2000 trials (1000 f32, 1000 f64), worst relative error {:.1e} / {:.1e}",
        w32, w64
    ))
}

fn shapley_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.gen_range(1..=8);
        let n_bg = rng.gen_range(1..=10);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let bg: Vec<Vec<f64>> = (0..n_bg)
            .map(|_| (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let net = Network::new(
            vec![
                Layer::Flatten,
                Layer::Dense(Dense::new(n, 1, w.clone(), vec![0.5]).unwrap()),
            ],
            [1, 1, n],
            vec!["t".into()],
        )
        .unwrap();
        let baselines: Vec<_> = bg
            .iter()
            .map(|b| Baseline::new(Tensor::new(vec![1, 1, n], b.clone()).unwrap()).unwrap())
            .collect();
        let map = deepshap(
            &net,
            &Tensor::new(vec![1, 1, n], x.clone()).unwrap(),
            &baselines,
            0,
        )
        .unwrap();
        let f = |z: &[f64]| 0.5 + w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        let phi = oracles::shapley_brute(f, &x, &bg);
        for (c, p) in map.contributions.data().iter().zip(&phi) {
            worst = worst.max((c - p).abs());
        }
        check(worst <= 1e-4, || {
            format!("case {case}: deviation {worst:e}")
        })?;
    }
    within(start.elapsed(), 30)?;
    Ok(format!("100 cases, max |C - phi| = {worst:.1e}"))
}

fn relu_hand_cases() -> Outcome {
    let net = Network::new(
        vec![
            Layer::Relu,
            Layer::Flatten,
            Layer::Dense(Dense::new(1, 1, vec![1.0f32], vec![0.0]).unwrap()),
        ],
        [1, 1, 1],
        vec!["t".into()],
    )
    .unwrap();
    let x = Tensor::full(&[1, 1, 1], 1.0f32);
    let b = Baseline::new(Tensor::full(&[1, 1, 1], -1.0f32)).unwrap();
    let c = deeplift(&net, &x, &b, 0).unwrap().contributions.data()[0];
    check(c == 1.0, || {
        format!("baseline -1, input 1: contribution {c}, expected exactly 1.0")
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rnet: Network<f32> = random_network(&mut rng, true);
    let xr = random_tensor::<f32>(&rnet.input_shape(), &mut rng);
    for map in attribute_all_classes(&rnet, &xr, &[Baseline::new(xr.clone()).unwrap()]).unwrap() {
        check(
            map.contributions.data().iter().all(|&v| v == 0.0) && map.delta_t == 0.0,
            || "input == baseline produced a non-zero map".into(),
        )?;
    }
    Ok("contribution 1.0 exactly; identical input and baseline give all-zero maps".into())
}

fn v_measure_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..500 {
        let n = rng.gen_range(1..=200);
        let n_labels = rng.gen_range(1..=6);
        let n_clusters = rng.gen_range(1..=12);
        let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n_labels)).collect();
        let clusters: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n_clusters)).collect();
        let q = ClusterQuality::score(&labels, &clusters).unwrap();
        let (h, c, v) = oracles::hcv_oracle(&labels, &clusters);
        let d = (q.homogeneity - h)
            .abs()
            .max((q.completeness - c).abs())
            .max((q.v_measure - v).abs());
        worst = worst.max(d);
        check(d <= 1e-9, || format!("case {case}: deviation {d:e}"))?;
    }
    let h = homogeneity(&contingency(&["A", "A", "B"], &[0, 1, 1]).unwrap());
    check((h - 0.2740).abs() <= 1e-4, || {
        format!("(A,A,B)/(0,1,1): h = {h}")
    })?;
    Ok(format!(
        "500 cases, max deviation {worst:.1e}; (A,A,B)/(0,1,1) h = {h:.4}"
    ))
}

fn points(raw: Vec<Vec<f64>>) -> Vec<FeatureVector<f64>> {
    raw.into_iter()
        .enumerate()
        .map(|(i, values)| FeatureVector {
            image_id: format!("p{i}"),
            values,
            provenance: String::new(),
        })
        .collect()
}

fn kmeans_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut steps = 0;
    for t in 0..200u64 {
        let n = rng.gen_range(5..80);
        let d = rng.gen_range(1..6);
        let k = rng.gen_range(1..=n.min(8));
        let pts = points(
            (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect())
                .collect(),
        );
        let m = fit(&pts, k, t, &FitOptions::default()).map_err(|e| e.to_string())?;
        for w in m.inertia_history.windows(2) {
            steps += 1;
            check(w[1] <= w[0] * (1.0 + 1e-12), || {
                format!("fit {t}: inertia rose {} -> {}", w[0], w[1])
            })?;
        }
    }
    let pts = points(
        (0..50)
            .map(|_| (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect(),
    );
    let m = fit(&pts, 1, 0, &FitOptions::default()).unwrap();
    for dim in 0..4 {
        let mean = pts.iter().map(|p| p.values[dim]).sum::<f64>() / 50.0;
        check((m.centroids[0][dim] - mean).abs() <= 1e-6, || {
            format!("k=1 centroid off the mean in dim {dim}")
        })?;
    }
    let centres = [[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]];
    let blobs = points(
        centres
            .iter()
            .flat_map(|c| {
                (0..10)
                    .map(|_| {
                        vec![
                            c[0] + rng.gen_range(-1.0..1.0),
                            c[1] + rng.gen_range(-1.0..1.0),
                        ]
                    })
                    .collect::<Vec<_>>()
            })
            .collect(),
    );
    let hits = (0..1000u64)
        .filter(|&s| {
            let mut b: Vec<usize> = seed_kmeanspp(&blobs, 3, s)
                .unwrap()
                .iter()
                .map(|v| {
                    if v[0] > 50.0 {
                        1
                    } else if v[1] > 50.0 {
                        2
                    } else {
                        0
                    }
                })
                .collect();
            b.sort();
            b == [0, 1, 2]
        })
        .count();
    check(hits >= 950, || {
        format!("one seed per blob in {hits}/1000 seedings")
    })?;
    Ok(format!("200 fits ({steps} Lloyd steps) non-increasing; k=1 mean within 1e-6; blob seeding {hits}/1000"))
}

fn severity_binning() -> Outcome {
    use Severity::*;
    let scores = [0.0, 1.0, 1.99, 2.0, 3.0, 4.0, 4.01, 5.0, 6.0];
    let expected = [
        Mild, Mild, Mild, Medium, Medium, Medium, Severe, Severe, Severe,
    ];
    for (s, e) in scores.iter().zip(expected) {
        let got = severity_bin(*s).map_err(|e| e.to_string())?;
        check(got == e, || format!("{s} -> {got:?}, expected {e:?}"))?;
    }
    Ok("9 scores binned as specified".into())
}

fn stratified_splits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels = ["mild", "medium", "severe"];
    for h in 0..50 {
        let counts: Vec<usize> = (0..3).map(|_| rng.gen_range(1..150)).collect();
        let records: Vec<ImageRecord> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| {
                (0..n).map(move |i| ImageRecord {
                    image_id: format!("{}{i}", labels[c]),
                    path: "x.png".into(),
                    label: labels[c].into(),
                    severity_score: Some([1.0, 3.0, 5.0][c]),
                })
            })
            .collect();
        let ds = Dataset {
            scenario: Scenario::CovidSeverity,
            records,
        };
        for fraction in [0.7, 0.6] {
            let (train, test) = stratified_split(&ds, fraction, h).map_err(|e| e.to_string())?;
            let mut ids: Vec<_> = train
                .iter()
                .chain(&test)
                .map(|r| r.image_id.clone())
                .collect();
            ids.sort();
            let mut all: Vec<_> = ds.records.iter().map(|r| r.image_id.clone()).collect();
            all.sort();
            check(ids == all, || {
                format!("histogram {counts:?} at {fraction}: not a partition")
            })?;
            for (c, &n) in labels.iter().zip(&counts) {
                let t = train.iter().filter(|r| r.label == *c).count() as f64;
                check((t - n as f64 * fraction).abs() <= 1.0, || {
                    format!("{counts:?} at {fraction}: {c} has {t} of {n}")
                })?;
            }
        }
    }
    Ok("50 histograms at 0.7 and 0.6: exact partitions, per-class counts within 1".into())
}

fn report_scenario() -> Outcome {
    let y_true: Vec<&str> = std::iter::repeat_n("covid", 65)
        .chain(std::iter::repeat_n("normal", 35))
        .collect();
    let y_pred: Vec<&str> = std::iter::repeat_n("covid", 62)
        .chain(std::iter::repeat_n("normal", 38))
        .collect();
    let r = classification_report(
        &y_true,
        &y_pred,
        &["covid".to_string(), "normal".to_string()],
    )
    .unwrap();
    let covid = r.class("covid").unwrap();
    check(covid.precision == 1.0, || {
        format!("precision {}", covid.precision)
    })?;
    check((covid.recall - 0.9538).abs() <= 1e-4, || {
        format!("recall {}", covid.recall)
    })?;
    Ok(format!(
        "precision {:.3}, recall {:.4}",
        covid.precision, covid.recall
    ))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("input");
    std::fs::create_dir_all(&input).unwrap();
    let config = RunConfig::load(
        &write_demo(&input, 40, 0, KRange { min: 2, max: 12 }).map_err(|e| e.to_string())?,
    )
    .unwrap();
    let store = RunStore::open(dir.path().join("data")).unwrap();
    let a = run_pipeline(&store, config.clone()).map_err(|e| e.to_string())?;
    check(a.status == RunStatus::Complete, || {
        format!("run failed: {:?}", a.error)
    })?;
    check(a.num_images == 120, || format!("{} images", a.num_images))?;
    let b = run_pipeline(&store, config).map_err(|e| e.to_string())?;
    let h = a.quality.unwrap().homogeneity;
    let k = a.k.unwrap();
    let same = a.sweep == b.sweep
        && a.quality == b.quality
        && read_clusters::<f32>(&store.run_dir(&a.run_id)).unwrap()
            == read_clusters::<f32>(&store.run_dir(&b.run_id)).unwrap();
    check(same, || "second run with identical seeds differs".into())?;
    check(h >= 0.80, || {
        format!("homogeneity {h:.3} at chosen k = {k}")
    })?;
    within(start.elapsed(), 300)?;
    Ok(format!(
        "120 images, chosen k = {k}, homogeneity {h:.3}, deterministic, {:.1}s for two runs",
        start.elapsed().as_secs_f64()
    ))
}

fn bits(t: &[f32]) -> Vec<u32> {
    t.iter().map(|v| v.to_bits()).collect()
}

fn format_roundtrip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    // model manifest + blob
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..20 {
        let net: Network<f32> = random_network(&mut rng, true);
        let (m, p) = (
            dir.path().join(format!("m{i}.json")),
            dir.path().join(format!("m{i}.bin")),
        );
        save_network(&net, &m, &p).unwrap();
        let back: Network<f32> = load_network(&m, &p).map_err(|e| e.to_string())?;
        check(
            network_to_parts(&back) == network_to_parts(&net) && back == net,
            || format!("model {i} differs"),
        )?;
    }
    // dataset manifest
    let input = dir.path().join("input");
    std::fs::create_dir_all(&input).unwrap();
    let config =
        RunConfig::load(&write_demo(&input, 3, 1, KRange { min: 2, max: 4 }).unwrap()).unwrap();
    let ds = load_manifest(&config.manifest).unwrap();
    save_manifest(&ds, &dir.path().join("copy.json")).unwrap();
    check(
        load_manifest(&dir.path().join("copy.json")).unwrap() == ds,
        || "dataset manifest differs".into(),
    )?;
    // run directory against in-memory recomputation
    let store = RunStore::open(dir.path().join("data")).unwrap();
    let run = run_pipeline(&store, config.clone()).unwrap();
    check(run.status == RunStatus::Complete, || {
        format!("run failed: {:?}", run.error)
    })?;
    check(store.get(&run.run_id).unwrap() == run, || {
        "run.json differs from returned record".into()
    })?;
    let run_dir = store.run_dir(&run.run_id);
    let net: Network<f32> = load_network(&config.model.manifest, &config.model.weights).unwrap();
    let zero = [Baseline::zeros(net.input_shape())];
    let mut maps = Vec::new();
    for r in &ds.records {
        let x = preprocess::<f32>(&load_image(&r.path).unwrap(), &config.preprocess).unwrap();
        let traced = TracedInput::new(&net, &x, &zero).unwrap();
        let per: Vec<_> = (0..3)
            .map(|c| traced.attribute(c).unwrap().with_image_id(&r.image_id))
            .collect();
        for (c, name) in net.class_names().iter().enumerate() {
            let stored = read_attribution::<f32>(
                &run_dir.join("attr"),
                &r.image_id,
                name,
                net.class_names(),
            )
            .unwrap();
            check(
                bits(stored.contributions.data()) == bits(per[c].contributions.data())
                    && stored.delta_t == per[c].delta_t,
                || format!("attribution {}.{name} differs", r.image_id),
            )?;
        }
        maps.push(per);
    }
    let features = embed(&maps, &config.embedding).unwrap();
    let stored = read_features::<f32>(&run_dir).unwrap();
    check(stored.len() == features.len(), || {
        "feature count differs".into()
    })?;
    for (a, b) in stored.iter().zip(&features) {
        check(
            a.image_id == b.image_id && bits(&a.values) == bits(&b.values),
            || format!("features of {} differ", a.image_id),
        )?;
    }
    let clusters = read_clusters::<f32>(&run_dir).unwrap();
    let refit = vidi_core::clustering::fit_best_of(
        &features,
        clusters.k,
        config.seed,
        config.n_init,
        &config.fit,
    )
    .unwrap();
    check(
        clusters.assignments == refit.assignments
            && clusters
                .centroids
                .iter()
                .zip(&refit.centroids)
                .all(|(a, b)| bits(a) == bits(b)),
        || "cluster model differs".into(),
    )?;
    Ok("20 models, dataset manifest, run record, attributions, features and clusters bit-identical".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("summation-to-delta", summation_to_delta),
        ("shapley-oracle", shapley_oracle),
        ("relu-rescale-hand-cases", relu_hand_cases),
        ("v-measure-oracle", v_measure_oracle),
        ("kmeans-invariants", kmeans_invariants),
        ("severity-binning", severity_binning),
        ("stratified-split", stratified_splits),
        ("classification-report", report_scenario),
        ("end-to-end-synthetic", end_to_end),
        ("format-roundtrip", format_roundtrip),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<26} {detail} [{secs:.2}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<26} {why} [{secs:.2}s]");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
