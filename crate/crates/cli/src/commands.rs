use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ribfrac_core::anatomy::{assign_rib, RibMask};
use ribfrac_core::annotation::{generate_description, parse_worksheet_with, validate as validate_worksheet, Violation};
use ribfrac_core::detect::{extract_patch, filter_detections, link_tracks};
use ribfrac_core::eval::{compute_metrics, consensus, HeadPrediction, HeadPredictions, HeadSamples};
use ribfrac_core::formats::{self, Dataset, VolumeHeader};
use ribfrac_core::model::train::{cone_satisfaction, head_accuracies, retrieval_top1, train};
use ribfrac_core::ribscore::compute_ribscore;
use ribfrac_core::synth::{gen_detection_stack, gen_feature_pairs, gen_rib_mask, gen_volume, gen_worksheet, oracle_partition};
use ribfrac_core::{AnnotationWorksheet, Box3d, Detection, FractureTrack, HyperbolicModel, RibAssignment, Volume};

use crate::config::PipelineConfig;
use crate::run::{config_err, CmdResult, Failure, Run};

fn require_file(path: Option<PathBuf>, what: &str) -> CmdResult<PathBuf> {
    match path {
        Some(p) if p.is_file() => Ok(p),
        Some(p) => config_err(format!("{what} '{}' does not exist", p.display())),
        None => config_err(format!("no {what} given")),
    }
}

fn require_worksheets(args: Vec<PathBuf>, cfg: &PipelineConfig) -> CmdResult<Vec<PathBuf>> {
    let paths = if args.is_empty() { cfg.paths.worksheets.clone() } else { args };
    if paths.is_empty() {
        return config_err("no worksheets given");
    }
    for p in &paths {
        if !p.is_file() {
            return config_err(format!("worksheet '{}' does not exist", p.display()));
        }
    }
    Ok(paths)
}

fn pool(jobs: usize) -> CmdResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))
}

fn read_worksheets(run: &mut Run, paths: &[PathBuf]) -> CmdResult<Vec<AnnotationWorksheet>> {
    let vocab = run.config().vocab.vocabularies();
    let mut out = Vec::new();
    for p in paths {
        let bytes = run.read(p)?;
        let w = parse_worksheet_with(&bytes, &vocab).map_err(|e| anyhow!("{}: {e}", p.display()))?;
        let violations = validate_worksheet(&w, &vocab);
        if let Some(v) = violations.first() {
            return Err(anyhow!("{}: {} violation(s), first: {}: {}", p.display(), violations.len(), v.field, v.message).into());
        }
        out.push(w);
    }
    Ok(out)
}

#[derive(Serialize)]
struct FileViolations {
    file: String,
    violations: Vec<Violation>,
}

pub fn validate(cfg: &PipelineConfig, worksheets: Vec<PathBuf>) -> CmdResult {
    let paths = require_worksheets(worksheets, cfg)?;
    let mut run = Run::new("validate", cfg)?;
    let vocab = cfg.vocab.vocabularies();
    let mut report = Vec::new();
    for p in &paths {
        run.arg_path("worksheet", p.as_path());
        let bytes = run.read(p)?;
        let violations = match parse_worksheet_with(&bytes, &vocab) {
            Ok(w) => validate_worksheet(&w, &vocab),
            Err(e) => vec![Violation {
                scan_id: String::new(),
                serial: None,
                field: format!("line {}", e.line),
                message: e.kind.to_string(),
            }],
        };
        report.push(FileViolations {
            file: run.show_path(p),
            violations,
        });
    }
    run.write_json("violations.json", &report)?;
    run.finish()?;
    let total: usize = report.iter().map(|r| r.violations.len()).sum();
    for r in &report {
        for v in &r.violations {
            eprintln!("{}: serial {:?}: {}: {}", r.file, v.serial, v.field, v.message);
        }
    }
    if total > 0 {
        return Err(anyhow!("{total} violation(s)").into());
    }
    println!("{} worksheet(s), 0 violations", report.len());
    Ok(())
}

pub fn describe(cfg: &PipelineConfig, worksheets: Vec<PathBuf>) -> CmdResult {
    #[derive(Serialize)]
    struct Description<'a> {
        scan_id: &'a str,
        serial: u32,
        text: String,
    }
    let paths = require_worksheets(worksheets, cfg)?;
    let mut run = Run::new("describe", cfg)?;
    for p in &paths {
        run.arg_path("worksheet", p.as_path());
    }
    let sheets = read_worksheets(&mut run, &paths)?;
    let lines: Vec<Description> = pool(cfg.jobs)?.install(|| {
        sheets
            .par_iter()
            .flat_map_iter(|w| {
                w.annotations.iter().map(|a| Description {
                    scan_id: &a.scan_id,
                    serial: a.fracture_serial,
                    text: generate_description(a),
                })
            })
            .collect()
    });
    run.write_jsonl("descriptions.jsonl", &lines)?;
    run.finish()
}

pub fn ribscore(cfg: &PipelineConfig, worksheets: Vec<PathBuf>) -> CmdResult {
    let paths = require_worksheets(worksheets, cfg)?;
    let mut run = Run::new("ribscore", cfg)?;
    for p in &paths {
        run.arg_path("worksheet", p.as_path());
    }
    let sheets = read_worksheets(&mut run, &paths)?;
    let reports: Vec<_> = pool(cfg.jobs)?.install(|| {
        sheets
            .par_iter()
            .map(|w| compute_ribscore(&w.scan_id, &w.annotations))
            .collect()
    });
    for r in &reports {
        let flags: String = ribfrac_core::ribscore::CRITERIA
            .iter()
            .zip(r.flags)
            .filter(|(_, f)| *f)
            .map(|(c, _)| *c)
            .collect();
        println!("{}\tscore {}\tflags {}", r.patient_id, r.score, if flags.is_empty() { "-" } else { &flags });
    }
    run.write_jsonl("ribscore.jsonl", &reports)?;
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub scan_id: String,
    pub track_id: usize,
    pub box3d: Box3d,
    pub center: [i64; 3],
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rib: Option<RibAssignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_count: Option<usize>,
}

struct ScanVolume {
    volume: Volume,
    mask: Option<RibMask>,
}

fn volume_paths(dir: &Path, scan: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{scan}.json")),
        dir.join(format!("{scan}.raw")),
        dir.join(format!("{scan}.mask.raw")),
    )
}

fn load_volume(run: &mut Run, dir: &Path, scan: &str) -> CmdResult<Option<ScanVolume>> {
    let (header, raw, mask) = volume_paths(dir, scan);
    if !header.is_file() {
        return Ok(None);
    }
    let header_bytes = run.read(&header)?;
    let h: VolumeHeader = formats::parse_volume_header(&String::from_utf8_lossy(&header_bytes))
        .with_context(|| format!("{}", header.display()))?;
    let raw_bytes = run.read(&raw)?;
    let volume = formats::read_volume(&h, &raw_bytes).with_context(|| format!("{}", raw.display()))?;
    let mask = if mask.is_file() {
        let bytes = run.read(&mask)?;
        Some(formats::read_rib_mask(&h, &bytes).with_context(|| format!("{}", mask.display()))?)
    } else {
        None
    };
    Ok(Some(ScanVolume { volume, mask }))
}

pub fn track(cfg: &PipelineConfig, detections: Option<PathBuf>, volumes: Option<PathBuf>) -> CmdResult {
    let det_path = require_file(detections.or_else(|| cfg.paths.detections.clone()), "detections file")?;
    let vol_dir = volumes.or_else(|| cfg.paths.volumes.clone());
    if let Some(d) = &vol_dir {
        if !d.is_dir() {
            return config_err(format!("volume directory '{}' does not exist", d.display()));
        }
    }
    let mut run = Run::new("track", cfg)?;
    run.arg_path("detections", det_path.as_path());
    if let Some(d) = &vol_dir {
        run.arg_path("volumes", d.as_path());
    }
    let bytes = run.read(&det_path)?;
    let dets = formats::read_detections(&bytes[..]).context("reading detections")?;
    for (i, d) in dets.iter().enumerate() {
        d.check().map_err(|e| anyhow!("detection {}: {e}", i + 1))?;
    }
    let kept = filter_detections(&dets, &cfg.thresholds.filter());
    let mut by_scan: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for d in kept {
        by_scan.entry(d.scan_id.clone()).or_default().push(d);
    }
    let mut volumes_by_scan = BTreeMap::new();
    if let Some(dir) = &vol_dir {
        for scan in by_scan.keys() {
            if let Some(v) = load_volume(&mut run, dir, scan)? {
                volumes_by_scan.insert(scan.clone(), v);
            }
        }
    }

    let link = cfg.thresholds.link();
    let orientation = cfg.orientation;
    let per_scan: Vec<anyhow::Result<Vec<(TrackRecord, Option<Vec<u8>>)>>> = pool(cfg.jobs)?.install(|| {
        by_scan
            .par_iter()
            .map(|(scan, dets)| {
                let vol = volumes_by_scan.get(scan);
                link_tracks(dets, &link)
                    .into_iter()
                    .enumerate()
                    .map(|(k, t)| track_record(t, k + 1, vol, orientation))
                    .collect()
            })
            .collect()
    });

    let mut records = Vec::new();
    for scan in per_scan {
        for (rec, patch) in scan? {
            if let (Some(name), Some(bytes)) = (&rec.patch, patch) {
                run.write(name, &bytes)?;
            }
            records.push(rec);
        }
    }
    run.write_json("tracks.json", &records)?;
    println!("{} track(s) from {} detection(s)", records.len(), dets.len());
    run.finish()
}

fn track_record(
    t: FractureTrack,
    track_id: usize,
    vol: Option<&ScanVolume>,
    orientation: ribfrac_core::Orientation,
) -> anyhow::Result<(TrackRecord, Option<Vec<u8>>)> {
    let mut rec = TrackRecord {
        scan_id: t.scan_id.clone(),
        track_id,
        box3d: t.box3d,
        center: t.center,
        detections: t.detections,
        rib: None,
        patch: None,
        pad_count: None,
    };
    let mut bytes = None;
    if let Some(v) = vol {
        let rib = assign_rib(t.center, &t.box3d, v.volume.shape, orientation, v.mask.as_ref())?;
        let patch = extract_patch(&v.volume, t.center);
        rec.rib = Some(rib);
        rec.pad_count = Some(patch.pad_count);
        rec.patch = Some(format!("patches/{}_t{:03}.rfp", t.scan_id, track_id));
        bytes = Some(formats::patch_bytes(&patch));
    }
    Ok((rec, bytes))
}

fn head_layout(cfg: &PipelineConfig) -> Vec<(String, usize)> {
    cfg.vocab
        .vocabularies()
        .heads
        .iter()
        .map(|h| (h.head.clone(), h.len()))
        .collect()
}

fn read_dataset(run: &mut Run, path: &Path, cfg: &PipelineConfig) -> CmdResult<Dataset> {
    let bytes = run.read(path)?;
    let d = formats::read_dataset(&bytes).with_context(|| format!("{}", path.display()))?;
    let layout = head_layout(cfg);
    let names: Vec<&str> = layout.iter().map(|h| h.0.as_str()).collect();
    if d.heads != names {
        return Err(anyhow!("dataset heads {:?} do not match vocabulary heads {:?}", d.heads, names).into());
    }
    for p in &d.pairs {
        for (l, (name, n)) in p.labels.iter().zip(&layout) {
            if l >= n {
                return Err(anyhow!("{}/{}: label {l} out of range for head '{name}'", p.scan_id, p.serial).into());
            }
        }
    }
    Ok(d)
}

#[derive(Serialize)]
struct TrainReport {
    pairs: usize,
    epochs: usize,
    final_curvature: f64,
    retrieval_top1: f64,
    head_accuracy: BTreeMap<String, f64>,
    cone_satisfaction: f64,
}

pub fn train_cmd(cfg: &PipelineConfig, dataset: Option<PathBuf>) -> CmdResult {
    let path = require_file(dataset.or_else(|| cfg.paths.dataset.clone()), "dataset")?;
    let mut run = Run::new("train", cfg)?;
    run.arg_path("dataset", path.as_path());
    let data = read_dataset(&mut run, &path, cfg)?;
    let layout = head_layout(cfg);
    let heads: Vec<(&str, usize)> = layout.iter().map(|(n, k)| (n.as_str(), *k)).collect();
    let out = train(&data.pairs, &heads, &cfg.train).map_err(anyhow::Error::from)?;
    let accs = head_accuracies(&out.model, &data.pairs);
    let report = TrainReport {
        pairs: data.pairs.len(),
        epochs: cfg.train.epochs,
        final_curvature: out.model.curvature().c(),
        retrieval_top1: retrieval_top1(&out.model, &data.pairs),
        head_accuracy: layout.iter().map(|h| h.0.clone()).zip(accs).collect(),
        cone_satisfaction: cone_satisfaction(&out.model, &data.pairs, cfg.train.cone_k, cfg.train.cone_parent),
    };
    run.write("model.rfc", &formats::checkpoint_bytes(&out.model.to_tensors()))?;
    run.write_json("train_log.json", &out.log)?;
    run.write_json("train_report.json", &report)?;
    println!(
        "retrieval@1 {:.4}, cone {:.4}, curvature {:.4}",
        report.retrieval_top1, report.cone_satisfaction, report.final_curvature
    );
    run.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadOutput {
    pub head: String,
    pub label: String,
    pub class: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scan_id: String,
    pub serial: u32,
    pub consensus_applied: bool,
    pub heads: Vec<HeadOutput>,
}

pub fn infer(cfg: &PipelineConfig, dataset: Option<PathBuf>, checkpoint: Option<PathBuf>) -> CmdResult {
    let data_path = require_file(dataset.or_else(|| cfg.paths.dataset.clone()), "dataset")?;
    let ckpt_path = require_file(checkpoint.or_else(|| cfg.paths.checkpoint.clone()), "checkpoint")?;
    let mut run = Run::new("infer", cfg)?;
    run.arg_path("dataset", data_path.as_path());
    run.arg_path("checkpoint", ckpt_path.as_path());
    let data = read_dataset(&mut run, &data_path, cfg)?;
    let ckpt = run.read(&ckpt_path)?;
    let tensors = formats::read_checkpoint(&ckpt).context("reading checkpoint")?;
    let model = HyperbolicModel::from_tensors(&tensors).map_err(anyhow::Error::from)?;
    let vocab = cfg.vocab.vocabularies();
    if model.head_sizes() != vocab.heads.iter().map(|h| h.len()).collect::<Vec<_>>() {
        return Err(anyhow!("checkpoint heads {:?} do not match the vocabulary", model.head_sizes()).into());
    }
    let records: anyhow::Result<Vec<PredictionRecord>> = pool(cfg.jobs)?.install(|| {
        data.pairs
            .par_iter()
            .map(|p| {
                let probs = model.predict_proba(&p.image)?;
                let raw = HeadPredictions::from_probs(&vocab, probs)?;
                let fused = consensus(&raw);
                Ok(PredictionRecord {
                    scan_id: p.scan_id.clone(),
                    serial: p.serial,
                    consensus_applied: fused != raw,
                    heads: fused
                        .heads
                        .iter()
                        .zip(&vocab.heads)
                        .map(|(h, v): (&HeadPrediction, _)| HeadOutput {
                            head: h.head.clone(),
                            label: v.labels[h.class].clone(),
                            class: h.class,
                            probs: h.probs.clone(),
                        })
                        .collect(),
                })
            })
            .collect()
    });
    let records = records?;
    run.write_jsonl("predictions.jsonl", &records)?;
    run.finish()
}

pub fn eval(
    cfg: &PipelineConfig,
    dataset: Option<PathBuf>,
    predictions: Option<PathBuf>,
    name: Option<String>,
) -> CmdResult {
    let data_path = require_file(dataset.or_else(|| cfg.paths.dataset.clone()), "dataset")?;
    let pred_path = require_file(predictions.or_else(|| cfg.paths.predictions.clone()), "predictions file")?;
    let name = name.unwrap_or_else(|| {
        data_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let mut run = Run::new("eval", cfg)?;
    run.arg_path("dataset", data_path.as_path());
    run.arg_path("predictions", pred_path.as_path());
    run.arg("name", &name);
    let data = read_dataset(&mut run, &data_path, cfg)?;
    let pred_bytes = run.read(&pred_path)?;
    let mut preds: BTreeMap<(String, u32), PredictionRecord> = BTreeMap::new();
    for (i, line) in String::from_utf8_lossy(&pred_bytes).lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord = serde_json::from_str(line).with_context(|| format!("predictions line {}", i + 1))?;
        preds.insert((r.scan_id.clone(), r.serial), r);
    }
    let layout = head_layout(cfg);
    let mut samples: Vec<HeadSamples> = layout
        .iter()
        .map(|(n, k)| HeadSamples {
            name: n.clone(),
            n_classes: *k,
            truth: Vec::new(),
            pred: Vec::new(),
        })
        .collect();
    for p in &data.pairs {
        let r = preds
            .get(&(p.scan_id.clone(), p.serial))
            .ok_or_else(|| anyhow!("no prediction for {}/{}", p.scan_id, p.serial))?;
        if r.heads.len() != samples.len() {
            return Err(anyhow!("prediction for {}/{} has {} heads", p.scan_id, p.serial, r.heads.len()).into());
        }
        for ((s, h), &truth) in samples.iter_mut().zip(&r.heads).zip(&p.labels) {
            s.truth.push(truth);
            s.pred.push(h.class);
        }
    }
    let report = compute_metrics(&name, &samples).map_err(anyhow::Error::from)?;
    let table = report.to_table();
    run.write_json("metrics.json", &report)?;
    run.write("metrics.txt", table.as_bytes())?;
    print!("{table}");
    run.finish()
}

#[derive(Serialize)]
struct OracleTrack<'a> {
    scan_id: &'a str,
    detections: Vec<&'a Detection>,
}

pub fn synth(cfg: &PipelineConfig) -> CmdResult {
    let s = &cfg.synth;
    let mut run = Run::new("synth", cfg)?;
    let link = cfg.thresholds.link();

    let stack = gen_detection_stack(s, &link);
    let mut det_bytes = Vec::new();
    formats::write_detections(&mut det_bytes, &stack.detections).context("writing detections")?;
    run.write("detections.jsonl", &det_bytes)?;
    let kept = filter_detections(&stack.detections, &cfg.thresholds.filter());
    let oracle: Vec<OracleTrack> = oracle_partition(&kept, &link)
        .into_iter()
        .map(|g| OracleTrack {
            scan_id: &kept[g[0]].scan_id,
            detections: g.iter().map(|&i| &kept[i]).collect(),
        })
        .collect();
    run.write_json("oracle_tracks.json", &oracle)?;

    let vocab = cfg.vocab.vocabularies();
    let sizes: Vec<usize> = vocab.heads.iter().map(|h| h.len()).collect();
    let pairs = gen_feature_pairs(s, &sizes).map_err(anyhow::Error::from)?;
    let dataset = Dataset {
        heads: vocab.heads.iter().map(|h| h.head.clone()).collect(),
        pairs,
    };
    run.write("dataset.rfd", &formats::write_dataset(&dataset).context("encoding dataset")?)?;

    let mask = gen_rib_mask(s);
    for scan in 0..s.n_scans {
        let id = s.scan_id(scan);
        let w = gen_worksheet(s, scan, &vocab);
        run.write(&format!("worksheets/{id}.jsonl"), ribfrac_core::annotation::serialize_worksheet(&w).as_bytes())?;
        let v = gen_volume(s, scan);
        let header = VolumeHeader {
            shape: v.shape,
            spacing: v.spacing,
        };
        run.write(&format!("volumes/{id}.json"), formats::volume_header_json(&header).as_bytes())?;
        run.write(&format!("volumes/{id}.raw"), &formats::volume_bytes(&v))?;
        run.write(&format!("volumes/{id}.mask.raw"), &mask.labels)?;
    }
    println!(
        "{} detection(s), {} oracle track(s), {} pair(s), {} scan(s)",
        stack.detections.len(),
        oracle.len(),
        dataset.pairs.len(),
        s.n_scans
    );
    run.finish()
}
