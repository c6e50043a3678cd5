use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use naop_core::descriptors::DescriptorVariant;
use naop_core::eval::{self, EvalReport, Method, PrPoint};
use naop_core::forest::{self, Forest, TrainConfig};
use naop_core::geometry::FrameSize;
use naop_core::predictor::{self, CenterBiasScorer, RandomScorer, ScoredPrediction, Scorer};
use naop_core::synthgen::{self, DetectionNoise, ScenarioConfig};
use naop_core::tracker::{self, AssocConfig};
use naop_core::trackstore::{self, Dataset};
use naop_core::trajectories::Encoding;
use naop_core::Error;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::manifest::Outcome;

const DEFAULT_H: usize = 30;

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Opens `path`, hands the writer to `f` and flushes it.
fn write_file<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> naop_core::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).map_err(CliError::input(path))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn load_tracks(path: &Path) -> CliResult<Dataset> {
    trackstore::parse_tracks(open(path)?).map_err(CliError::input(path))
}

fn load_model(path: &Path) -> CliResult<Forest> {
    forest::load_model(open(path)?).map_err(CliError::input(path))
}

fn load_detections(path: &Path) -> CliResult<Vec<tracker::Detection>> {
    tracker::read_detections(open(path)?).map_err(CliError::input(path))
}

fn load_predictions(path: &Path) -> CliResult<Vec<ScoredPrediction>> {
    predictor::read_predictions(open(path)?).map_err(CliError::input(path))
}

fn frame_size(f: FrameSizeArg) -> CliResult<FrameSize> {
    Ok(FrameSize::new(f.width as f64, f.height as f64)?)
}

// ---------------------------------------------------------------------------
// Option resolution
// ---------------------------------------------------------------------------

fn encoding_of(e: &EncodingArgs) -> Encoding {
    match e.levels {
        Some(levels) => Encoding::Pyramid { levels },
        None => Encoding::Window { h: e.h.unwrap_or(DEFAULT_H) },
    }
}

fn variant_of(e: &EncodingArgs) -> DescriptorVariant {
    e.variant.unwrap_or(DescriptorVariant::Full)
}

fn train_config(f: &ForestArgs) -> TrainConfig {
    TrainConfig {
        n_trees: f.n_trees,
        max_depth: f.max_depth,
        features_per_split: f.features_per_split,
        ..TrainConfig::default()
    }
}

fn assoc_config(t: &TrackerArgs) -> CliResult<AssocConfig> {
    let d = AssocConfig::default();
    let config = AssocConfig {
        iou_threshold: t.iou_threshold.unwrap_or(d.iou_threshold),
        max_age: t.max_age.unwrap_or(d.max_age),
        min_hits: t.min_hits.unwrap_or(d.min_hits),
        det_score_min: t.det_score_min.unwrap_or(d.det_score_min),
        class_gated: !t.no_class_gate,
        kalman: d.kalman,
    };
    config.validate()?;
    Ok(config)
}

/// Rejects a model whose window or descriptor differs from the ones asked for.
fn check_model(model: &Forest, e: &EncodingArgs) -> CliResult<()> {
    if e.h.is_some() || e.levels.is_some() {
        predictor::check_encoding(model, encoding_of(e))?;
    }
    if let Some(v) = e.variant {
        if v != model.variant {
            return Err(Error::ModelMismatch(format!("model uses the {} descriptor, not {v}", model.variant)).into());
        }
    }
    Ok(())
}

fn method_of(kind: MethodKind, e: &EncodingArgs, f: &ForestArgs) -> CliResult<Method> {
    Ok(match kind {
        MethodKind::Forest => {
            Method::Forest { variant: variant_of(e), encoding: encoding_of(e), config: train_config(f) }
        }
        MethodKind::Motion => match encoding_of(e) {
            Encoding::Window { h } => Method::Motion { h },
            Encoding::Pyramid { .. } => {
                return Err(CliError::Usage("the motion method needs --h, not --levels".into()))
            }
        },
        MethodKind::CenterBias => Method::CenterBias,
        MethodKind::Random => Method::Random,
    })
}

/// A scorer that needs no training, or the forest loaded from `model`.
fn pretrained_scorer(
    kind: MethodKind,
    model: Option<&Path>,
    e: &EncodingArgs,
    seed: u64,
    out: &mut Outcome,
) -> CliResult<Box<dyn Scorer>> {
    match (kind, model) {
        (MethodKind::Forest, Some(path)) => {
            let forest = load_model(path)?;
            check_model(&forest, e)?;
            out.inputs.push(path.to_owned());
            Ok(Box::new(forest))
        }
        (MethodKind::Forest, None) => Err(CliError::Usage("the forest method needs --model".into())),
        (MethodKind::Motion, _) => {
            Err(CliError::Usage("the motion method is trained inside cross-validation; use eval --mode lopo".into()))
        }
        (_, Some(_)) => Err(CliError::Usage("--model only applies to the forest method".into())),
        (MethodKind::CenterBias, None) => Ok(Box::new(CenterBiasScorer)),
        (MethodKind::Random, None) => Ok(Box::new(RandomScorer { seed })),
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub fn gen(a: &GenArgs) -> CliResult<Outcome> {
    let mut cfg = ScenarioConfig {
        seed: a.seed,
        frame_width: a.frame_size.width,
        frame_height: a.frame_size.height,
        ..ScenarioConfig::default()
    };
    macro_rules! set {
        ($flag:ident => $field:expr) => {
            if let Some(v) = a.$flag.clone() {
                $field = v;
            }
        };
    }
    set!(subjects => cfg.n_subjects);
    set!(videos_per_subject => cfg.videos_per_subject);
    set!(tracks_per_video => cfg.tracks_per_video);
    set!(active_fraction => cfg.active_fraction);
    set!(h_signal => cfg.h_signal);
    set!(center_sigma => cfg.center_sigma);
    set!(scale_sigma => cfg.scale_sigma);
    set!(scale_growth => cfg.motion.scale_growth);
    set!(center_pull => cfg.motion.center_pull);
    set!(classes => cfg.object_classes);
    if a.scale_only {
        if a.center_pull.is_some_and(|p| p != 0.0) {
            return Err(CliError::Usage("--scale-only conflicts with a nonzero --center-pull".into()));
        }
        cfg.motion.center_pull = 0.0;
    }
    let dataset = synthgen::gen_dataset(&cfg)?;
    let mut out = Outcome { seed: Some(a.seed), ..Outcome::default() };
    write_file(&a.out, |w| trackstore::serialize_tracks(&dataset, w))?;
    out.outputs.push(a.out.clone());
    if let Some(path) = &a.detections {
        let noise = DetectionNoise { sigma_px: a.det_sigma, fp_rate: a.fp_rate, fn_rate: a.fn_rate };
        let dets = synthgen::gen_detections(&dataset, &noise, a.seed)?;
        write_file(path, |w| tracker::write_detections(&dets, w))?;
        out.outputs.push(path.clone());
    }
    log::info!("generated {} tracks", dataset.tracks.len());
    Ok(out)
}

pub fn track(a: &TrackArgs) -> CliResult<Outcome> {
    let config = assoc_config(&a.tracker)?;
    let dets = load_detections(&a.detections)?;
    let dataset = tracker::track_detections(&dets, &config, frame_size(a.frame_size)?)?;
    write_file(&a.out, |w| trackstore::serialize_tracks(&dataset, w))?;
    log::info!("{} detections -> {} tracks", dets.len(), dataset.tracks.len());
    Ok(Outcome { seed: None, inputs: vec![a.detections.clone()], outputs: vec![a.out.clone()] })
}

pub fn train(a: &TrainArgs) -> CliResult<Outcome> {
    let dataset = load_tracks(&a.tracks)?;
    let encoding = encoding_of(&a.encoding);
    let method = Method::Forest { variant: variant_of(&a.encoding), encoding, config: train_config(&a.forest) };
    let model = eval::fit(&method, &dataset, encoding, a.seed).map_err(CliError::input(&a.tracks))?;
    let predictor::Model::Forest(forest) = model else {
        unreachable!("forest method yields a forest");
    };
    write_file(&a.out, |w| forest::save_model(&forest, w))?;
    Ok(Outcome { seed: Some(a.seed), inputs: vec![a.tracks.clone()], outputs: vec![a.out.clone()] })
}

pub fn predict(a: &PredictArgs) -> CliResult<Outcome> {
    let mut out = Outcome { seed: Some(a.seed), ..Outcome::default() };
    let scorer = pretrained_scorer(a.method, a.model.as_deref(), &a.encoding, a.seed, &mut out)?;
    let preds = match (&a.tracks, &a.detections) {
        (Some(path), None) => {
            out.inputs.push(path.clone());
            predictor::run_offline(&load_tracks(path)?.densified(), scorer.as_ref())
        }
        (None, Some(path)) => {
            out.inputs.push(path.clone());
            let dets = load_detections(path)?;
            let config = assoc_config(&a.tracker)?;
            predictor::run_online(&dets, &config, scorer.as_ref(), frame_size(a.frame_size)?)
                .map_err(CliError::input(path))?
        }
        _ => return Err(CliError::Usage("give exactly one of --tracks and --detections".into())),
    };
    write_file(&a.out, |w| predictor::write_predictions(&preds, w))?;
    out.outputs.push(a.out.clone());
    log::info!("{} predictions", preds.len());
    Ok(out)
}

pub fn eval(a: &EvalArgs) -> CliResult<Outcome> {
    let mut out = Outcome { seed: Some(a.seed), inputs: vec![a.tracks.clone()], ..Outcome::default() };
    let dataset = load_tracks(&a.tracks)?;
    let json = a.out.clone();
    match a.mode {
        EvalMode::Standard => {
            let (preds, method) = eval_predictions(a, &dataset, &mut out)?;
            let dense = dataset.densified();
            let gt = eval::build_gt(&dense);
            let n_valid = gt.iter().filter(|g| g.valid).count();
            let mut report = eval::pr_and_ap(&eval::match_predictions(&preds, &gt, a.iou_min), n_valid)?;
            report.metadata.method = method;
            let csv = sibling(&json, "pr.csv");
            write_file(&json, |w| eval::write_json(&report, w))?;
            write_file(&csv, |w| eval::write_pr_csv(&report.pr, w))?;
            println!("AP {:.4} ({} valid annotations)", report.ap, n_valid);
            out.outputs.extend([json, csv]);
        }
        EvalMode::FireRate => {
            let (preds, _) = eval_predictions(a, &dataset, &mut out)?;
            let gt = eval::build_gt(&dataset.densified());
            let rows = eval::active_fire_rate(&preds, &gt, &a.thresholds, a.iou_min)?;
            let csv = sibling(&json, "csv");
            write_file(&json, |w| eval::write_json(&rows, w))?;
            write_file(&csv, |w| eval::write_rows_csv(&rows, w))?;
            for r in &rows {
                println!("threshold {:.2}: {:.3} of active objects fired", r.threshold, r.frac_active_fired);
            }
            out.outputs.extend([json, csv]);
        }
        EvalMode::Lopo => {
            no_fixed_predictions(a)?;
            let method = method_of(a.method, &a.encoding, &a.forest)?;
            let encoding = encoding_of(&a.encoding);
            let report = match a.granularity {
                Granularity::Trajectory => eval::lopo_trajectory(&dataset, &method, encoding, a.seed)?,
                Granularity::Detection => eval::lopo_detection(&dataset, &method, encoding, a.iou_min, a.seed)?,
            };
            let csv = sibling(&json, "folds.csv");
            write_file(&json, |w| eval::write_json(&report, w))?;
            write_file(&csv, |w| eval::write_folds_csv(&report, w))?;
            println!("{}: mean AP {:.4} over {} folds", report.method, report.mean_ap, report.n_evaluated);
            out.outputs.extend([json, csv]);
        }
        EvalMode::Looo => {
            no_fixed_predictions(a)?;
            let method = method_of(a.method, &a.encoding, &a.forest)?;
            let encoding = encoding_of(&a.encoding);
            let rows = match &a.class {
                Some(c) => vec![eval::looo(&dataset, c, &method, encoding, a.seed)?],
                None => eval::looo_table(&dataset, &method, encoding, a.seed)?,
            };
            let csv = sibling(&json, "csv");
            write_file(&json, |w| eval::write_json(&rows, w))?;
            write_file(&csv, |w| eval::write_rows_csv(&rows, w))?;
            for r in &rows {
                println!("{}: AP {:.4} without, {:.4} with", r.object_class, r.ap_without, r.ap_with);
            }
            out.outputs.extend([json, csv]);
        }
        EvalMode::Time => {
            no_fixed_predictions(a)?;
            let method = method_of(a.method, &a.encoding, &a.forest)?;
            let rows = eval::time_to_activation(&dataset, &method, encoding_of(&a.encoding), &a.offsets, a.seed)?;
            let csv = sibling(&json, "csv");
            write_file(&json, |w| eval::write_json(&rows, w))?;
            write_file(&csv, |w| eval::write_rows_csv(&rows, w))?;
            for r in &rows {
                println!("offset {:>3}: AP {:.4}", r.offset, r.ap);
            }
            out.outputs.extend([json, csv]);
        }
    }
    Ok(out)
}

fn no_fixed_predictions(a: &EvalArgs) -> CliResult<()> {
    if a.predictions.is_some() || a.model.is_some() {
        return Err(CliError::Usage(
            "cross-validation modes train their own models; drop --predictions and --model".into(),
        ));
    }
    Ok(())
}

/// Predictions read from `--predictions`, or produced over the densified
/// tracks by the requested scorer.
fn eval_predictions(a: &EvalArgs, dataset: &Dataset, out: &mut Outcome) -> CliResult<(Vec<ScoredPrediction>, String)> {
    if let Some(path) = &a.predictions {
        out.inputs.push(path.clone());
        return Ok((load_predictions(path)?, "predictions".into()));
    }
    let scorer = pretrained_scorer(a.method, a.model.as_deref(), &a.encoding, a.seed, out)?;
    Ok((predictor::run_offline(&dataset.densified(), scorer.as_ref()), scorer.name()))
}

pub fn sweep(a: &SweepArgs) -> CliResult<Outcome> {
    let dataset = load_tracks(&a.tracks)?;
    let encodings: Vec<Encoding> =
        a.h.iter()
            .map(|&h| Encoding::Window { h })
            .chain(a.levels.iter().map(|&levels| Encoding::Pyramid { levels }))
            .collect();
    if encodings.is_empty() {
        return Err(CliError::Usage("nothing to sweep: give --h or --levels".into()));
    }
    let rows = eval::sweep(&dataset, &encodings, &a.variants, &train_config(&a.forest), a.seed)?;
    let json = sibling(&a.out, "json");
    write_file(&a.out, |w| eval::write_sweep_csv(&rows, w))?;
    write_file(&json, |w| eval::write_json(&rows, w))?;
    for r in &rows {
        println!("{:<16} {:<15} {:.4}", r.encoding.to_string(), r.variant.to_string(), r.mean_ap);
    }
    Ok(Outcome { seed: Some(a.seed), inputs: vec![a.tracks.clone()], outputs: vec![a.out.clone(), json] })
}

pub fn plot(a: &PlotArgs) -> CliResult<Outcome> {
    let mut curves: Vec<(String, Vec<PrPoint>)> = Vec::new();
    for path in &a.reports {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        curves.extend(report_curves(path, &stem)?);
    }
    if curves.is_empty() {
        return Err(Error::InsufficientData("the reports contain no precision-recall curve".into()).into());
    }
    let svg = eval::pr_curves_svg(&curves);
    let csv = sibling(&a.out, "csv");
    write_file(&a.out, |w| Ok(w.write_all(svg.as_bytes())?))?;
    write_file(&csv, |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["curve", "recall", "precision", "threshold"])?;
        for (label, pr) in &curves {
            for p in pr {
                w.write_record([
                    label.clone(),
                    p.recall.to_string(),
                    p.precision.to_string(),
                    p.threshold.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(Outcome { seed: None, inputs: a.reports.clone(), outputs: vec![a.out.clone(), csv] })
}

/// PR curves of a standard report (one curve) or a LOPO report (one per fold).
fn report_curves(path: &Path, stem: &str) -> CliResult<Vec<(String, Vec<PrPoint>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::input(path)(e.into()))?;
    let parse = |v: serde_json::Value| -> CliResult<EvalReport> {
        serde_json::from_value(v).map_err(|e| CliError::input(path)(e.into()))
    };
    if value.get("pr").is_some() {
        return Ok(vec![(stem.to_owned(), parse(value)?.pr)]);
    }
    if let Some(folds) = value.get("folds").and_then(|f| f.as_array()) {
        let mut curves = Vec::new();
        for fold in folds {
            let subject = fold.get("subject").and_then(|s| s.as_str()).unwrap_or("?");
            if let Some(r) = fold.get("report").filter(|r| !r.is_null()) {
                curves.push((format!("{stem}/{subject}"), parse(r.clone())?.pr));
            }
        }
        return Ok(curves);
    }
    Err(CliError::input(path)(Error::InvalidArgument("not an evaluation report".into())))
}
