//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ribfrac_core::annotation::{
    generate_description, parse_worksheet, Displacement, FractureAnnotation, Location, Multiplicity, Side,
    Vocabularies, DEFAULT_CHARACTERIZATIONS,
};
use ribfrac_core::detect::{extract_patch, link_track_indices, window_hu, LinkParams, Volume, PATCH_DIMS, PATCH_LEN};
use ribfrac_core::eval::{compute_metrics, consensus, scores_from_confusion, HeadPrediction, HeadPredictions, HeadSamples};
use ribfrac_core::manifold::{
    exp_map0, exterior_angle, geodesic_distance, half_aperture, Curvature, HyperbolicPoint, DEFAULT_CONE_K,
};
use ribfrac_core::model::heads::weighted_ce;
use ribfrac_core::model::loss::{batch_objective, contrastive_loss, entailment_loss, ConeParent, ObjectiveParams};
use ribfrac_core::model::train::{cone_satisfaction, head_accuracies, retrieval_top1, train, TrainOutput};
use ribfrac_core::model::{FeaturePair, HyperbolicModel};
use ribfrac_core::ribscore::compute_ribscore;
use ribfrac_core::rng::CounterRng;
use ribfrac_core::synth::{gen_detection_stack, gen_feature_pairs, oracle_partition, SynthConfig};
use ribfrac_core::TrainConfig;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn random_unit(rng: &mut CounterRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

// 1
fn hyperboloid_constraint() -> Outcome {
    let start = Instant::now();
    let mut rng = CounterRng::new(1, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let dim = 2 + rng.below(63) as usize;
        let c = Curvature::new(rng.uniform(0.1, 10.0)).unwrap();
        let norm = rng.uniform(0.0, 2.0);
        let u: Vec<f64> = random_unit(&mut rng, dim).into_iter().map(|x| norm * x).collect();
        worst = worst.max(exp_map0(&u, c).constraint_residual(c).abs());
    }
    let t = start.elapsed();
    check(
        worst <= 1e-9 && t < Duration::from_secs(5),
        format!("max residual {worst:.2e} (limit 1e-9), {:.2} s (limit 5 s), |u| <= 2", t.as_secs_f64()),
    )
}

// 2
fn radial_isometry() -> Outcome {
    let mut rng = CounterRng::new(2, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let dim = 2 + rng.below(63) as usize;
        let c = Curvature::new(rng.uniform(0.1, 10.0)).unwrap();
        let norm = rng.uniform(0.0, 5.0);
        let u: Vec<f64> = random_unit(&mut rng, dim).into_iter().map(|x| norm * x).collect();
        let d = geodesic_distance(&exp_map0(&u, c), &HyperbolicPoint::origin(dim, c), c);
        worst = worst.max((d - norm).abs());
    }
    check(worst <= 1e-8, format!("max |d - |u|| {worst:.2e} (limit 1e-8)"))
}

// 3
const H: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

fn points(spaces: &[Vec<f64>], c: f64) -> Vec<HyperbolicPoint> {
    let c = Curvature::new(c).unwrap();
    spaces.iter().map(|s| HyperbolicPoint::from_space(s.clone(), c)).collect()
}

fn near_kink(parents: &[HyperbolicPoint], children: &[HyperbolicPoint], c: Curvature) -> bool {
    parents.iter().zip(children).any(|(p, ch)| {
        let q = 2.0 * DEFAULT_CONE_K / (c.c().sqrt() * p.space_norm());
        let a = exterior_angle(p, ch, c).unwrap();
        let ap = half_aperture(p, c, DEFAULT_CONE_K).unwrap();
        (a - ap).abs() < 1e-3 || (q - 1.0).abs() < 1e-3 || a < 1e-3 || std::f64::consts::PI - a < 1e-3
    })
}

type PointLossFn = dyn Fn(&[Vec<f64>], &[Vec<f64>], f64) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>, f64);

fn point_loss_error(loss: &PointLossFn, a: &[Vec<f64>], b: &[Vec<f64>], c: f64) -> f64 {
    let (_, da, db, dc) = loss(a, b, c);
    let mut worst: f64 = 0.0;
    for side in 0..2 {
        let (xs, gs) = if side == 0 { (a, &da) } else { (b, &db) };
        for i in 0..xs.len() {
            for k in 0..xs[i].len() {
                let f = |x: f64| {
                    let (mut a2, mut b2) = (a.to_vec(), b.to_vec());
                    if side == 0 {
                        a2[i][k] = x;
                    } else {
                        b2[i][k] = x;
                    }
                    loss(&a2, &b2, c).0
                };
                worst = worst.max(rel_err(gs[i][k], central(f, xs[i][k])));
            }
        }
    }
    worst.max(rel_err(dc, central(|x| loss(a, b, x).0, c)))
}

fn gradient_suite() -> Outcome {
    const N: usize = 8;
    const D: usize = 16;
    let spaces = |rng: &mut CounterRng, s: f64| -> Vec<Vec<f64>> {
        (0..N).map(|_| (0..D).map(|_| s * rng.normal()).collect()).collect()
    };
    let (mut ce, mut cont, mut ent, mut total) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);

    let contrastive: &PointLossFn = &|a, b, c| {
        let l = contrastive_loss(&points(a, c), &points(b, c), Curvature::new(c).unwrap(), 0.07);
        (l.loss, l.d_images, l.d_texts, l.d_c)
    };
    let entailment: &PointLossFn = &|a, b, c| {
        let l = entailment_loss(&points(a, c), &points(b, c), Curvature::new(c).unwrap(), DEFAULT_CONE_K, ConeParent::Image);
        (l.loss, l.d_images, l.d_texts, l.d_c)
    };

    let heads = [("location", 4), ("displacement", 5), ("multiple", 3), ("characterization", 6)];
    let objective = ObjectiveParams {
        weights: TrainConfig::default().loss_weights(),
        tau: 0.07,
        cone_k: DEFAULT_CONE_K,
        cone_parent: ConeParent::Image,
        learn_curvature: true,
    };

    let mut restarts = 0;
    let mut seed = 0;
    while restarts < 20 {
        let mut rng = CounterRng::new(seed, 30);
        seed += 1;

        // Weighted cross-entropy over logits.
        let k = 2 + rng.below(6) as usize;
        let logits: Vec<f64> = (0..k).map(|_| 3.0 * rng.normal()).collect();
        let weights: Vec<f64> = (0..k).map(|_| rng.uniform(0.2, 3.0)).collect();
        let y = rng.below(k as u64) as usize;
        let (_, g) = weighted_ce(&logits, y, &weights);
        for j in 0..k {
            let f = |x: f64| {
                let mut l = logits.clone();
                l[j] = x;
                weighted_ce(&l, y, &weights).0
            };
            ce = ce.max(rel_err(g[j], central(f, logits[j])));
        }

        let c = rng.uniform(0.2, 3.0);
        let (a, b) = (spaces(&mut rng, 0.3), spaces(&mut rng, 0.3));
        let (pa, pb) = (spaces(&mut rng, if seed % 2 == 0 { 0.05 } else { 0.5 }), spaces(&mut rng, 0.5));
        let cc = Curvature::new(c).unwrap();
        if near_kink(&points(&pa, c), &points(&pb, c), cc) {
            continue;
        }

        let mut model = HyperbolicModel::init(10, 7, D, &heads, rng.uniform(0.5, 2.0), &mut rng);
        for h in &mut model.heads {
            for w in &mut h.class_weights {
                *w = rng.uniform(0.5, 2.0);
            }
        }
        let data: Vec<FeaturePair> = (0..N)
            .map(|i| FeaturePair {
                scan_id: "G".into(),
                serial: i as u32,
                image: (0..10).map(|_| rng.normal()).collect(),
                text: (0..7).map(|_| rng.normal()).collect(),
                labels: heads.iter().map(|h| rng.below(h.1 as u64) as usize).collect(),
            })
            .collect();
        let (vi, vt): (Vec<_>, Vec<_>) = data.iter().map(|p| model.embed_pair(p)).unzip();
        if near_kink(&vi, &vt, model.curvature()) {
            continue;
        }
        restarts += 1;

        cont = cont.max(point_loss_error(contrastive, &a, &b, c));
        ent = ent.max(point_loss_error(entailment, &pa, &pb, c));

        let batch: Vec<&FeaturePair> = data.iter().collect();
        let (_, grad) = batch_objective(&model, &batch, &objective);
        let analytic: Vec<Vec<f64>> = grad.params().iter().map(|p| p.values.to_vec()).collect();
        for (t, values) in analytic.iter().enumerate() {
            for (k, &g) in values.iter().enumerate() {
                let f = |x: f64| {
                    let mut m = model.clone();
                    m.params_mut()[t].values[k] = x;
                    batch_objective(&m, &batch, &objective).0.total
                };
                total = total.max(rel_err(g, central(f, model.params()[t].values[k])));
            }
        }
    }
    let worst = ce.max(cont).max(ent).max(total);
    check(
        worst <= 1e-4,
        format!("max rel err: CE {ce:.1e}, contrastive {cont:.1e}, entailment {ent:.1e}, total {total:.1e} (limit 1e-4)"),
    )
}

// 4, 5
const HEADS: [(&str, usize); 4] = [("location", 4), ("displacement", 5), ("multiple", 3), ("characterization", 6)];

fn desk_dataset() -> Vec<FeaturePair> {
    let cfg = SynthConfig {
        seed: 7,
        n_pairs: 200,
        img_dim: 16,
        txt_dim: 16,
        ..Default::default()
    };
    gen_feature_pairs(&cfg, &HEADS.map(|h| h.1)).unwrap()
}

fn desk_train_config() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        epochs: 200,
        embed_dim: 16,
        batch_size: 32,
        seed: 0,
        ..Default::default()
    }
}

fn desk_training(data: &[FeaturePair]) -> (Outcome, TrainOutput) {
    let cfg = desk_train_config();
    let start = Instant::now();
    let out = train(data, &HEADS, &cfg).unwrap();
    let t = start.elapsed();
    let retrieval = retrieval_top1(&out.model, data);
    let accs = head_accuracies(&out.model, data);
    let min_acc = accs.iter().copied().fold(f64::INFINITY, f64::min);
    let cone = cone_satisfaction(&out.model, data, cfg.cone_k, cfg.cone_parent);
    let ok = retrieval >= 0.95 && min_acc >= 0.90 && cone >= 0.90 && t <= Duration::from_secs(120);
    let detail = format!(
        "retrieval@1 {retrieval:.3} (>= 0.95), min head acc {min_acc:.3} (>= 0.90), cone {cone:.3} (>= 0.90), {:.1} s (<= 120 s)",
        t.as_secs_f64()
    );
    (check(ok, detail), out)
}

fn macro_recall(model: &HyperbolicModel, data: &[FeaturePair]) -> f64 {
    let vocab = Vocabularies::default();
    let mut samples: Vec<HeadSamples> = HEADS
        .iter()
        .map(|(n, k)| HeadSamples {
            name: n.to_string(),
            n_classes: *k,
            truth: vec![],
            pred: vec![],
        })
        .collect();
    for p in data {
        let pred = consensus(&HeadPredictions::from_probs(&vocab, model.predict_proba(&p.image).unwrap()).unwrap());
        for (h, s) in samples.iter_mut().enumerate() {
            s.truth.push(p.labels[h]);
            s.pred.push(pred.heads[h].class);
        }
    }
    compute_metrics("desk", &samples).unwrap().average.recall
}

fn ablation(data: &[FeaturePair], full: &TrainOutput) -> Outcome {
    let base = desk_train_config();
    let ce_cfg = TrainConfig {
        cont_weight: 0.0,
        lambda_ent: 0.0,
        ..base
    };
    let ce = train(data, &HEADS, &ce_cfg).unwrap();
    let (r_full, r_ce) = (macro_recall(&full.model, data), macro_recall(&ce.model, data));
    check(r_full >= r_ce, format!("macro recall full {r_full:.4} vs CE-only {r_ce:.4}"))
}

// 6
fn tracking_oracle() -> Outcome {
    let p = LinkParams::default();
    let (mut mismatches, mut short, mut tracks, mut dets) = (0, 0, 0, 0);
    for seed in 0..1000u64 {
        let cfg = SynthConfig {
            seed,
            n_scans: 1 + (seed % 2) as usize,
            slices_per_scan: 1 + (seed % 10) as usize,
            boxes_per_slice: (seed % 9) as usize,
            ..Default::default()
        };
        let stack = gen_detection_stack(&cfg, &p);
        let got = link_track_indices(&stack.detections, &p);
        if got != oracle_partition(&stack.detections, &p) {
            mismatches += 1;
        }
        for t in &got {
            let z: Vec<u32> = t.iter().map(|&i| stack.detections[i].slice_index).collect();
            if t.len() < 4 || z.windows(2).any(|w| w[1] != w[0] + 1) {
                short += 1;
            }
        }
        tracks += got.len();
        dets += stack.detections.len();
    }
    check(
        mismatches == 0 && short == 0,
        format!("1000 stacks, {dets} detections, {tracks} tracks: {mismatches} mismatches, {short} tracks not >= 4 consecutive slices"),
    )
}

// 7
fn patch_geometry() -> Outcome {
    let v = Volume::filled([100, 100, 100], 300).unwrap();
    let corner = extract_patch(&v, [0, 0, 0]);
    let mut rng = CounterRng::new(7, 0);
    let mut shapes_ok = true;
    for _ in 0..200 {
        let c = [rng.below(200) as i64 - 50, rng.below(200) as i64 - 50, rng.below(200) as i64 - 50];
        shapes_ok &= extract_patch(&v, c).voxels.len() == PATCH_LEN;
    }
    let hu = [window_hu(-200.0), window_hu(400.0), window_hu(1000.0)];
    let ok = shapes_ok
        && PATCH_DIMS == [64, 64, 32]
        && corner.voxels.len() == PATCH_LEN
        && corner.pad_count == 114_688
        && hu == [0.0, 0.5, 1.0];
    check(
        ok,
        format!("dims {PATCH_DIMS:?}, corner pad_count {} (114688), HU map {hu:?}", corner.pad_count),
    )
}

// 8
fn fixture_score(name: &str) -> u8 {
    let bytes = std::fs::read(fixtures().join(name)).unwrap();
    let w = parse_worksheet(&bytes).unwrap();
    compute_ribscore(&w.scan_id, &w.annotations).score
}

fn frac(serial: u32, side: Side, rib: u8) -> FractureAnnotation {
    FractureAnnotation {
        scan_id: "X".into(),
        fracture_serial: serial,
        rib_side: side,
        rib_number: rib,
        location: Location::Lateral,
        displacement: Displacement::Undisplaced,
        characterization: "oblique".into(),
        multiple: Multiplicity::Single,
        flail_contributor: false,
        segmental_contributor: false,
    }
}

/// Fractures that raise exactly the flags in `mask` (bit i is criterion i).
fn forcing_set(mask: u8) -> Vec<FractureAnnotation> {
    let on = |i: u8| mask & (1 << i) != 0;
    let mut fs = vec![frac(1, Side::Left, 3), frac(2, Side::Left, 5), frac(3, Side::Left, 7)];
    if on(0) {
        fs.extend([frac(4, Side::Left, 9), frac(5, Side::Left, 11), frac(6, Side::Left, 9)]);
    }
    if on(1) {
        fs[2].rib_side = Side::Right;
    }
    if on(2) {
        fs[0].flail_contributor = true;
    }
    if on(3) {
        for f in &mut fs[..3] {
            f.displacement = Displacement::SeverelyDisplaced;
        }
    }
    if on(4) {
        fs[1].rib_number = 1;
    }
    if on(5) {
        fs[0].location = Location::Anterior;
        fs[1].location = Location::Posterior;
    }
    fs
}

fn random_fracture(rng: &mut CounterRng, serial: u32) -> FractureAnnotation {
    FractureAnnotation {
        scan_id: "X".into(),
        fracture_serial: serial,
        rib_side: Side::ALL[rng.below(2) as usize],
        rib_number: 1 + rng.below(12) as u8,
        location: Location::ALL[rng.below(3) as usize],
        displacement: Displacement::ALL[rng.below(4) as usize],
        characterization: DEFAULT_CHARACTERIZATIONS[rng.below(5) as usize].into(),
        multiple: Multiplicity::ALL[rng.below(2) as usize],
        flail_contributor: rng.next_f64() < 0.1,
        segmental_contributor: rng.next_f64() < 0.2,
    }
}

fn ribscore_criteria() -> Outcome {
    let (s84, s88) = (fixture_score("patient84.jsonl"), fixture_score("patient88.jsonl"));
    let mut bad_combos = 0;
    for mask in 0u8..64 {
        let r = compute_ribscore("X", &forcing_set(mask));
        let expected: [bool; 6] = std::array::from_fn(|i| mask & (1 << i) != 0);
        if r.flags != expected || r.score as u32 != mask.count_ones() {
            bad_combos += 1;
        }
    }
    let mut rng = CounterRng::new(8, 0);
    let mut decreases = 0;
    for _ in 0..1000 {
        let n = rng.below(15) as u32;
        let mut fs: Vec<_> = (1..=n).map(|s| random_fracture(&mut rng, s)).collect();
        let before = compute_ribscore("X", &fs).score;
        fs.push(random_fracture(&mut rng, n + 1));
        if compute_ribscore("X", &fs).score < before {
            decreases += 1;
        }
    }
    check(
        s84 == 1 && s88 == 5 && bad_combos == 0 && decreases == 0,
        format!("patient 84 -> {s84} (1), patient 88 -> {s88} (5), {bad_combos}/64 bad combinations, {decreases}/1000 decreases"),
    )
}

// 9
fn consensus_rule() -> Outcome {
    let mut checked = 0;
    let mut failures = 0;
    for sizes in [[3usize, 3, 3, 3], [4, 5, 3, 6], [2, 2, 2, 2]] {
        let total: usize = sizes.iter().product();
        for mut code in 0..total {
            let classes: Vec<usize> = sizes
                .iter()
                .map(|&n| {
                    let c = code % n;
                    code /= n;
                    c
                })
                .collect();
            let p = HeadPredictions {
                heads: classes
                    .iter()
                    .zip(sizes)
                    .enumerate()
                    .map(|(h, (&c, n))| HeadPrediction {
                        head: format!("h{h}"),
                        class: c,
                        probs: (0..n).map(|i| if i == c { 1.0 } else { 0.0 }).collect(),
                        no_fracture: 0,
                    })
                    .collect(),
            };
            let negatives = classes.iter().filter(|&&c| c == 0).count();
            let expected = if negatives >= 2 { vec![0; 4] } else { classes.clone() };
            let once = consensus(&p);
            if once.classes() != expected || consensus(&once) != once {
                failures += 1;
            }
            checked += 1;
        }
    }
    check(failures == 0, format!("{checked} head assignments enumerated, {failures} failures"))
}

// 10
fn metrics() -> Outcome {
    type Case = (Vec<Vec<u64>>, [f64; 3]);
    let cases: Vec<Case> = vec![
        (vec![vec![5]], [1.0, 1.0, 1.0]),
        (vec![vec![1, 0], vec![0, 1]], [1.0, 1.0, 1.0]),
        (vec![vec![0, 1], vec![1, 0]], [0.0, 0.0, 0.0]),
        (vec![vec![2, 1], vec![0, 3]], [5.0 / 6.0, 5.0 / 6.0, 7.0 / 8.0]),
        (vec![vec![3, 0], vec![0, 0]], [1.0, 1.0, 1.0]),
        (vec![vec![0, 3], vec![0, 0]], [0.0, 0.0, 0.0]),
        (vec![vec![1, 1], vec![0, 0]], [0.5, 0.5, 1.0]),
        (vec![vec![4, 1, 0], vec![2, 2, 1], vec![0, 0, 5]], [11.0 / 15.0, 11.0 / 15.0, 13.0 / 18.0]),
        (vec![vec![1, 0, 0], vec![0, 0, 0], vec![1, 0, 1]], [2.0 / 3.0, 0.75, 0.75]),
        (vec![vec![0, 0, 2], vec![0, 3, 0], vec![1, 0, 0]], [0.5, 1.0 / 3.0, 1.0 / 3.0]),
        (vec![vec![10, 0], vec![5, 5]], [0.75, 0.75, 5.0 / 6.0]),
        (vec![vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]], [1.0 / 3.0, 7.0 / 24.0, 11.0 / 36.0]),
        (
            vec![vec![1, 0, 0, 0], vec![0, 2, 0, 0], vec![0, 0, 3, 0], vec![0, 0, 0, 4]],
            [1.0, 1.0, 1.0],
        ),
        (
            vec![vec![0, 1, 0, 0], vec![0, 0, 1, 0], vec![0, 0, 0, 1], vec![1, 0, 0, 0]],
            [0.0, 0.0, 0.0],
        ),
        (
            vec![vec![2, 0, 0, 0], vec![0, 0, 0, 0], vec![0, 0, 0, 0], vec![2, 0, 0, 0]],
            [0.5, 0.5, 0.25],
        ),
        (vec![vec![7, 3], vec![3, 7]], [0.7, 0.7, 0.7]),
        (vec![vec![1, 0, 0], vec![1, 0, 0], vec![1, 0, 0]], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 9.0]),
        (vec![vec![0, 0], vec![2, 8]], [0.8, 0.8, 1.0]),
        (vec![vec![6, 2, 2], vec![0, 0, 0], vec![0, 0, 0]], [0.6, 0.6, 1.0]),
        (
            vec![
                vec![3, 1, 0, 0, 0],
                vec![0, 2, 2, 0, 0],
                vec![0, 0, 1, 0, 0],
                vec![0, 0, 0, 0, 4],
                vec![0, 0, 0, 0, 1],
            ],
            [0.5, 13.0 / 20.0, 11.0 / 25.0],
        ),
    ];
    let mut worst: f64 = 0.0;
    for (m, want) in &cases {
        let s = scores_from_confusion(m).unwrap();
        for (got, want) in [s.accuracy, s.recall, s.precision].iter().zip(want) {
            worst = worst.max((got - want).abs());
        }
    }

    #[derive(serde::Deserialize)]
    struct Golden {
        dataset: String,
        heads: Vec<HeadSamples>,
    }
    let g: Golden = serde_json::from_slice(&std::fs::read(fixtures().join("metrics_samples.json")).unwrap()).unwrap();
    let table = compute_metrics(&g.dataset, &g.heads).unwrap().to_table();
    let golden = std::fs::read_to_string(fixtures().join("metrics_table.txt")).unwrap();
    check(
        worst <= 1e-12 && table == golden,
        format!(
            "{} matrices, max deviation {worst:.1e} (1e-12); golden table {}",
            cases.len(),
            if table == golden { "identical" } else { "differs" }
        ),
    )
}

// 11
fn description() -> Outcome {
    let w = parse_worksheet(&std::fs::read(fixtures().join("description.jsonl")).unwrap()).unwrap();
    let want = std::fs::read_to_string(fixtures().join("description.txt")).unwrap();
    let got = generate_description(&w.annotations[0]);
    check(got == want.trim_end_matches('\n'), format!("generated: {got:?}"))
}

// 12
fn ribfrac(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ribfrac"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, base, out);
        } else {
            out.push((p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
        }
    }
}

fn pipeline(work: &Path, out: &str) -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
    let cfg = work.join("config.toml");
    let o = work.join(out);
    let (cfg_s, o_s) = (cfg.to_str().unwrap(), o.to_str().unwrap());
    let f = |name: &str| o.join(name).to_str().unwrap().to_string();
    let common = ["--config", cfg_s, "--jobs", "1", "--out", o_s];
    let run = |sub: &[&str]| ribfrac(&[&common[..], sub].concat());
    run(&["synth"])?;
    run(&["track", "--detections", &f("detections.jsonl"), "--volumes", &f("volumes")])?;
    run(&["train", "--dataset", &f("dataset.rfd")])?;
    run(&["infer", "--dataset", &f("dataset.rfd"), "--checkpoint", &f("model.rfc")])?;
    run(&["eval", "--dataset", &f("dataset.rfd"), "--predictions", &f("predictions.jsonl")])?;
    let sheets: Vec<String> = (0..2).map(|i| f(&format!("worksheets/SYN-{i:04}.jsonl"))).collect();
    let sheet_refs: Vec<&str> = sheets.iter().map(String::as_str).collect();
    run(&[&["validate"][..], &sheet_refs].concat())?;
    run(&[&["describe"][..], &sheet_refs].concat())?;
    run(&[&["ribscore"][..], &sheet_refs].concat())?;
    let mut files = Vec::new();
    collect_files(&o, &o, &mut files);
    Ok(files)
}

fn determinism() -> Outcome {
    let work = std::env::temp_dir().join(format!("ribfrac-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&work);
    std::fs::create_dir_all(&work).unwrap();
    std::fs::write(
        work.join("config.toml"),
        "seed = 11\n[synth]\nn_scans = 2\nn_pairs = 64\nimg_dim = 16\ntxt_dim = 16\nvolume_shape = [96, 96, 24]\n\
         [train]\nlr = 0.003\nepochs = 20\nembed_dim = 8\n",
    )
    .unwrap();
    let result = pipeline(&work, "a").and_then(|a| pipeline(&work, "b").map(|b| (a, b)));
    let _ = std::fs::remove_dir_all(&work);
    let (a, b) = result?;
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    check(
        a.len() == b.len() && differing.is_empty() && !a.is_empty(),
        format!("{} artifacts compared, differing: {differing:?}", a.len()),
    )
}

fn main() {
    let data = desk_dataset();
    let (training, full) = desk_training(&data);
    let results: Vec<(&str, Outcome)> = vec![
        ("hyperboloid constraint", hyperboloid_constraint()),
        ("radial isometry", radial_isometry()),
        ("gradient suite", gradient_suite()),
        ("desk-scale training", training),
        ("ablation direction", ablation(&data, &full)),
        ("tracking oracle", tracking_oracle()),
        ("patch geometry", patch_geometry()),
        ("ribscore", ribscore_criteria()),
        ("consensus", consensus_rule()),
        ("metrics", metrics()),
        ("description", description()),
        ("cli determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(d) => println!("criterion {:>2} {name}: PASS ({d})", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({d})", i + 1)
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
