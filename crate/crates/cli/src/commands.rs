//! Implementations of the six subcommands.

use std::path::Path;

use dynarc::data::{encode, synth_longtail, train_toy, ToyDataset};
use dynarc::ensemble::{average_head_scores, concat_features, ModelOutputs};
use dynarc::gradcheck::{check_gradients, GradCheckConfig};
use dynarc::margins::MarginKind;
use dynarc::metrics::{accuracy, gap, GroundTruth};
use dynarc::numerics::DenseMatrix;
use dynarc::postprocess::predict_batch;
use dynarc::retrieval::{baseline_predict_batch, Gallery};
use dynarc::{io, Error};

use crate::config::{resolve_post_config, resolve_train_config, FileConfig};
use crate::{
    AppError, EnsembleArgs, EvalArgs, GradcheckArgs, Mode, PredictArgs, SynthArgs, TrainArgs,
};

fn load_config(path: Option<&Path>) -> Result<FileConfig, AppError> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::empty()),
    }
}

/// Attach the file path to bare I/O failures; other errors already name it.
fn with_path(path: &Path, e: Error) -> AppError {
    match e {
        Error::Io(io) => AppError::Runtime(format!("{}: {io}", path.display())),
        other => other.into(),
    }
}

/// Split a labels file into ids and classes, requiring every row labeled.
fn fully_labeled(
    rows: Vec<(String, Option<usize>)>,
    what: &str,
) -> Result<(Vec<String>, Vec<usize>), AppError> {
    let mut ids = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (id, class) in rows {
        let Some(class) = class else {
            return Err(AppError::Runtime(format!(
                "{what} row `{id}` has no class label; every row must be labeled"
            )));
        };
        ids.push(id);
        labels.push(class);
    }
    Ok((ids, labels))
}

fn check_row_count(features: &DenseMatrix<f64>, labels: usize) -> Result<(), AppError> {
    if features.rows() != labels {
        return Err(Error::RowCountMismatch {
            left: features.rows(),
            right: labels,
        }
        .into());
    }
    Ok(())
}

/// Map raw inputs through the optional encoder, or just renormalize them.
fn embed(
    raw: DenseMatrix<f64>,
    encoder: Option<&DenseMatrix<f64>>,
) -> Result<DenseMatrix<f64>, AppError> {
    match encoder {
        Some(enc) => Ok(encode(&raw, enc)?),
        None => Ok(raw.l2_normalized_rows()?),
    }
}

pub(crate) fn synth(a: &SynthArgs) -> Result<(), AppError> {
    let ds = synth_longtail::<f64>(a.classes, a.zipf, a.samples, a.input_dim, a.noise, a.seed)
        .map_err(|e| AppError::Usage(e.to_string()))?;
    io::write_matrix(&a.out_features, &ds.inputs, 8).map_err(|e| with_path(&a.out_features, e))?;
    let rows: Vec<(String, Option<usize>)> = ds
        .labels
        .iter()
        .enumerate()
        .map(|(i, &c)| (format!("s{i:06}"), Some(c)))
        .collect();
    io::write_labels_csv(&a.out_labels, &rows).map_err(|e| with_path(&a.out_labels, e))?;

    let mut sizes = ds.class_counts.clone();
    sizes.sort_unstable();
    println!(
        "synthesized {} samples over {} classes (dim {}, zipf {}, noise {}, seed {})",
        ds.len(),
        a.classes,
        a.input_dim,
        a.zipf,
        a.noise,
        a.seed
    );
    println!(
        "class sizes: min={} median={} max={}",
        sizes[0],
        sizes[sizes.len() / 2],
        sizes[sizes.len() - 1]
    );
    let mut lo = 1usize;
    while lo <= sizes[sizes.len() - 1] {
        let hi = lo * 2 - 1;
        let count = sizes.iter().filter(|&&s| s >= lo && s <= hi).count();
        if count > 0 {
            if lo == hi {
                println!("  size {lo}: {count} classes");
            } else {
                println!("  size {lo}-{hi}: {count} classes");
            }
        }
        lo *= 2;
    }
    println!(
        "wrote features to {} and labels to {}",
        a.out_features.display(),
        a.out_labels.display()
    );
    Ok(())
}

pub(crate) fn train(a: &TrainArgs) -> Result<(), AppError> {
    let mut file = load_config(a.config.as_deref())?;
    let cfg = resolve_train_config(&mut file, a)?;
    file.reject_unknown()?;

    let (inputs, _) = io::read_matrix::<f64>(&a.features).map_err(|e| with_path(&a.features, e))?;
    let rows = io::read_labels_csv(&a.labels).map_err(|e| with_path(&a.labels, e))?;
    check_row_count(&inputs, rows.len())?;
    let (_, labels) = fully_labeled(rows, "training")?;
    let ds = ToyDataset::new(inputs, labels, cfg.seed)?;
    println!(
        "training on {} samples, {} classes, input dim {}",
        ds.len(),
        ds.num_classes(),
        ds.input_dim()
    );

    let out = train_toy(&ds, &cfg)?;

    let kind = match cfg.margin.kind {
        MarginKind::Constant => "constant",
        MarginKind::Dynamic => "dynamic",
    };
    let m_min = out.margins.iter().copied().fold(f64::INFINITY, f64::min);
    let m_max = out
        .margins
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let m_mean = out.margins.iter().sum::<f64>() / out.margins.len() as f64;
    println!("margins ({kind}): min={m_min:.4} max={m_max:.4} mean={m_mean:.4}");
    for stats in &out.history {
        println!(
            "epoch {:>3}: loss={:.6} val_gap={:.6} val_acc={:.6}",
            stats.epoch, stats.loss, stats.val_gap, stats.val_acc
        );
    }

    io::write_head(&a.out_head, &out.head, 8).map_err(|e| with_path(&a.out_head, e))?;
    io::write_matrix(&a.out_encoder, &out.encoder, 8).map_err(|e| with_path(&a.out_encoder, e))?;
    if let Some(p) = &a.out_metrics {
        io::write_metrics_csv(p, &out.history).map_err(|e| with_path(p, e))?;
    }
    println!(
        "wrote head to {} and encoder to {}",
        a.out_head.display(),
        a.out_encoder.display()
    );
    Ok(())
}

pub(crate) fn predict(a: &PredictArgs) -> Result<(), AppError> {
    let mut file = load_config(a.config.as_deref())?;
    let (mut mode, pcfg) = resolve_post_config(&mut file, a)?;
    file.reject_unknown()?;
    if a.no_head_fusion && mode == Mode::Pp1Pp2 {
        mode = Mode::Pp1;
    }
    if mode == Mode::Pp1Pp2 && a.head.is_none() {
        return Err(AppError::Usage(
            "mode pp1+pp2 needs --head <checkpoint> (or pass --no-head-fusion)".into(),
        ));
    }

    let encoder = match &a.encoder {
        Some(p) => Some(io::read_matrix::<f64>(p).map_err(|e| with_path(p, e))?.0),
        None => None,
    };
    let (gallery_raw, _) = io::read_matrix::<f64>(&a.gallery_features)
        .map_err(|e| with_path(&a.gallery_features, e))?;
    let gallery_rows =
        io::read_labels_csv(&a.gallery_labels).map_err(|e| with_path(&a.gallery_labels, e))?;
    check_row_count(&gallery_raw, gallery_rows.len())?;
    let (gallery_ids, gallery_labels) = fully_labeled(gallery_rows, "gallery")?;
    let gallery_feats = embed(gallery_raw, encoder.as_ref())?;
    let gallery = Gallery::new(gallery_feats, gallery_labels, gallery_ids)?;

    let (query_raw, _) =
        io::read_matrix::<f64>(&a.query_features).map_err(|e| with_path(&a.query_features, e))?;
    let query_ids: Vec<String> = match &a.query_ids {
        Some(p) => {
            let rows = io::read_labels_csv(p).map_err(|e| with_path(p, e))?;
            check_row_count(&query_raw, rows.len())?;
            rows.into_iter().map(|(id, _)| id).collect()
        }
        None => (0..query_raw.rows()).map(|i| format!("q{i:06}")).collect(),
    };
    let queries = embed(query_raw, encoder.as_ref())?;

    let preds = match mode {
        Mode::Baseline => baseline_predict_batch(&gallery, &query_ids, &queries)?,
        Mode::Pp1 => predict_batch(&gallery, None, &query_ids, &queries, &pcfg)?,
        Mode::Pp1Pp2 => {
            let head_path = a.head.as_ref().unwrap();
            let head = io::read_head::<f64>(head_path, 1.0).map_err(|e| with_path(head_path, e))?;
            let head_scores = head.head_scores_batch(&queries)?;
            predict_batch(&gallery, Some(&head_scores), &query_ids, &queries, &pcfg)?
        }
    };
    io::write_predictions_csv(&a.out, &preds).map_err(|e| with_path(&a.out, e))?;
    println!(
        "wrote {} predictions to {} (mode={mode})",
        preds.len(),
        a.out.display()
    );
    Ok(())
}

pub(crate) fn eval(a: &EvalArgs) -> Result<(), AppError> {
    let preds = io::read_predictions_csv::<f64>(&a.predictions)
        .map_err(|e| with_path(&a.predictions, e))?;
    let truth =
        GroundTruth::from_pairs(io::read_labels_csv(&a.truth).map_err(|e| with_path(&a.truth, e))?);
    let g = gap(&preds, &truth)?;
    let acc = accuracy(&preds, &truth)?;
    println!("gap={g:.6} acc={acc:.6}");
    Ok(())
}

pub(crate) fn ensemble(a: &EnsembleArgs) -> Result<(), AppError> {
    let mut models = Vec::with_capacity(a.models.len());
    let mut width = 0u32;
    for spec in &a.models {
        let (feat_path, head_path) = match spec.split_once(':') {
            Some((f, h)) => (f, Some(h)),
            None => (spec.as_str(), None),
        };
        let (features, w) = io::read_matrix::<f64>(Path::new(feat_path))
            .map_err(|e| with_path(Path::new(feat_path), e))?;
        width = width.max(w);
        let head_scores = match head_path {
            Some(h) => {
                let (m, w) =
                    io::read_matrix::<f64>(Path::new(h)).map_err(|e| with_path(Path::new(h), e))?;
                width = width.max(w);
                Some(m)
            }
            None => None,
        };
        models.push(ModelOutputs {
            model_id: feat_path.to_string(),
            features,
            head_scores,
        });
    }
    let fused = concat_features(&models)?;
    io::write_matrix(&a.out_features, &fused, width).map_err(|e| with_path(&a.out_features, e))?;
    println!(
        "fused {} models: {} rows, {} dims -> {}",
        models.len(),
        fused.rows(),
        fused.cols(),
        a.out_features.display()
    );
    if let Some(p) = &a.out_head_scores {
        let scores = average_head_scores(&models)?;
        io::write_matrix(p, &scores, width).map_err(|e| with_path(p, e))?;
        println!(
            "averaged head scores: {} rows, {} classes -> {}",
            scores.rows(),
            scores.cols(),
            p.display()
        );
    }
    Ok(())
}

pub(crate) fn gradcheck(a: &GradcheckArgs) -> Result<(), AppError> {
    if a.trials == 0 {
        return Err(AppError::Usage("gradcheck needs at least one trial".into()));
    }
    let cfg = GradCheckConfig {
        trials: a.trials,
        seed: a.seed,
        eps: a.eps,
    };
    let report = check_gradients(&cfg)?;
    println!(
        "gradcheck: trials={} rejected={} max_rel_err={:.3e}",
        report.trials, report.rejected, report.max_rel_err
    );
    if report.max_rel_err > a.tol {
        return Err(AppError::Runtime(format!(
            "max relative error {:.3e} exceeds tolerance {:.3e}",
            report.max_rel_err, a.tol
        )));
    }
    Ok(())
}
