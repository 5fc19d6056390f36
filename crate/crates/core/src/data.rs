//! Synthetic long-tailed datasets, deterministic stratified k-fold
//! splitting, and a toy trainer that exercises the margin head end-to-end.
//!
//! Every random stream is derived from a single run seed plus a purpose
//! tag via [`seed_stream`], so independent components (centers, noise,
//! fold rotations, epoch shuffles, parameter init) never share a stream
//! and the whole pipeline is bit-reproducible.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::arcface::ArcFaceHead;
use crate::error::{Error, Result};
use crate::margins::MarginConfig;
use crate::metrics::{accuracy, gap, GroundTruth, Prediction};
use crate::numerics::DenseMatrix;
use crate::retrieval::{baseline_predict_batch, Gallery};
use crate::scalar::Real;

/// Derive an independent ChaCha8 stream from `(seed, tag)`.
///
/// The tag is hashed with FNV-1a, mixed into the seed, and expanded to a
/// 256-bit key with SplitMix64. Distinct tags give unrelated streams for
/// the same run seed.
pub fn seed_stream(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &byte in tag.as_bytes() {
        h = (h ^ u64::from(byte)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut state = seed ^ h;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        chunk.copy_from_slice(&(z ^ (z >> 31)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Inputs plus labels for the toy trainer. Rows are grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset<T> {
    pub inputs: DenseMatrix<T>,
    pub labels: Vec<usize>,
    pub class_counts: Vec<usize>,
    pub seed: u64,
}

impl<T: Real> ToyDataset<T> {
    /// Build from loaded inputs and labels; counts are recomputed. Every
    /// class index in `0..=max(labels)` must occur at least once.
    pub fn new(inputs: DenseMatrix<T>, labels: Vec<usize>, seed: u64) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::RowCountMismatch {
                left: inputs.rows(),
                right: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::InvalidParams("dataset has no samples".into()));
        }
        let num_classes = labels.iter().max().unwrap() + 1;
        let mut class_counts = vec![0usize; num_classes];
        for &l in &labels {
            class_counts[l] += 1;
        }
        if let Some(hole) = class_counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidParams(format!("class {hole} has no samples")));
        }
        Ok(Self {
            inputs,
            labels,
            class_counts,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }
}

/// Long-tail class sizes: every class gets one sample, the rest are
/// apportioned proportionally to `rank^-zipf_exponent` (rank 1 = largest)
/// by largest remainder, so they always sum to `total_samples`.
pub fn longtail_class_sizes(
    num_classes: usize,
    zipf_exponent: f64,
    total_samples: usize,
) -> Result<Vec<usize>> {
    if num_classes == 0 {
        return Err(Error::InvalidParams("need at least one class".into()));
    }
    if total_samples < num_classes {
        return Err(Error::InvalidParams(format!(
            "{total_samples} samples cannot cover {num_classes} classes"
        )));
    }
    if !zipf_exponent.is_finite() || zipf_exponent < 0.0 {
        return Err(Error::InvalidParams(format!(
            "zipf exponent must be finite and >= 0, got {zipf_exponent}"
        )));
    }
    let remaining = total_samples - num_classes;
    let weights: Vec<f64> = (1..=num_classes)
        .map(|rank| (rank as f64).powf(-zipf_exponent))
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights
        .iter()
        .map(|w| remaining as f64 * w / weight_sum)
        .collect();
    let mut sizes: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
        fb.partial_cmp(&fa)
            .expect("finite fractions")
            .then(a.cmp(&b))
    });
    for i in 0..remaining.saturating_sub(assigned) {
        sizes[order[i % num_classes]] += 1;
    }
    for s in &mut sizes {
        *s += 1;
    }
    Ok(sizes)
}

/// Generate a long-tailed dataset: per-class unit centers plus isotropic
/// Gaussian noise. Same arguments, same bits.
pub fn synth_longtail<T: Real>(
    num_classes: usize,
    zipf_exponent: f64,
    total_samples: usize,
    input_dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<ToyDataset<T>> {
    if num_classes < 2 {
        return Err(Error::InvalidParams(format!(
            "need >= 2 classes, got {num_classes}"
        )));
    }
    if input_dim == 0 {
        return Err(Error::InvalidParams("input_dim must be >= 1".into()));
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(Error::InvalidParams(format!(
            "noise sigma must be finite and >= 0, got {noise_sigma}"
        )));
    }
    let sizes = longtail_class_sizes(num_classes, zipf_exponent, total_samples)?;
    let mut center_rng = seed_stream(seed, "synth.centers");
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..input_dim)
                .map(|_| center_rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut noise_rng = seed_stream(seed, "synth.noise");
    let mut data: Vec<T> = Vec::with_capacity(total_samples * input_dim);
    let mut labels = Vec::with_capacity(total_samples);
    for (c, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            for &center_d in &centers[c] {
                let noise: f64 = noise_rng.sample(StandardNormal);
                data.push(T::of(center_d + noise_sigma * noise));
            }
            labels.push(c);
        }
    }
    let inputs = DenseMatrix::from_vec(total_samples, input_dim, data)?;
    Ok(ToyDataset {
        inputs,
        labels,
        class_counts: sizes,
        seed,
    })
}

/// Deterministic stratified k-fold: per class, folds follow a rotated
/// round-robin pattern shuffled by a class-specific stream, so per-fold
/// class counts differ by at most one and the assignment of a sample
/// depends only on `(seed, class, within-class rank)`.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    if labels.is_empty() {
        return Err(Error::InvalidParams("no samples to split".into()));
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    let mut folds = vec![0usize; labels.len()];
    for (c, members) in per_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut rng = seed_stream(seed, &format!("kfold.{c}"));
        let rotation = rng.random_range(0..k);
        let mut pattern: Vec<usize> = (0..members.len()).map(|i| (i + rotation) % k).collect();
        pattern.shuffle(&mut rng);
        for (rank, &sample) in members.iter().enumerate() {
            folds[sample] = pattern[rank];
        }
    }
    Ok(folds)
}

/// Hyperparameters for [`train_toy`]. `seed` drives initialization, the
/// fold split, and per-epoch shuffling; the margin config does not enter
/// any stream, so constant and dynamic runs share data and initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub embed_dim: usize,
    pub num_subcenters: usize,
    pub epochs: usize,
    pub learning_rate: T,
    pub momentum: T,
    pub batch_size: usize,
    pub scale: T,
    pub margin: MarginConfig<T>,
    pub num_folds: usize,
    pub val_fold: usize,
    pub seed: u64,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            num_subcenters: 3,
            epochs: 10,
            learning_rate: T::of(0.5),
            momentum: T::of(0.9),
            batch_size: 64,
            scale: T::of(30.0),
            margin: MarginConfig::default(),
            num_folds: 5,
            val_fold: 0,
            seed: 0,
        }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0
            || self.num_subcenters == 0
            || self.epochs == 0
            || self.batch_size == 0
        {
            return Err(Error::InvalidParams(
                "embed_dim, num_subcenters, epochs, and batch_size must be >= 1".into(),
            ));
        }
        if self.learning_rate <= T::zero() || self.scale <= T::zero() {
            return Err(Error::InvalidParams(
                "learning rate and scale must be positive".into(),
            ));
        }
        if self.momentum < T::zero() || self.momentum >= T::one() {
            return Err(Error::InvalidParams(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.num_folds < 2 {
            return Err(Error::InvalidK(self.num_folds));
        }
        if self.val_fold >= self.num_folds {
            return Err(Error::InvalidParams(format!(
                "validation fold {} out of range for {} folds",
                self.val_fold, self.num_folds
            )));
        }
        Ok(())
    }
}

/// One history row. Row 0 is the pre-training evaluation; row `e >= 1`
/// carries the running mean train loss of epoch `e` and the held-out
/// metrics measured after it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats<T> {
    pub epoch: usize,
    pub loss: T,
    pub val_gap: T,
    pub val_acc: T,
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub encoder: DenseMatrix<T>,
    pub head: ArcFaceHead<T>,
    pub margins: Vec<T>,
    pub history: Vec<EpochStats<T>>,
}

/// Map inputs through the linear encoder and L2-normalize each row.
pub fn encode<T: Real>(
    inputs: &DenseMatrix<T>,
    encoder: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    inputs.matmul(encoder)?.l2_normalized_rows()
}

/// Train the linear-encoder + margin-head toy model with SGD + momentum.
///
/// One 10x learning-rate drop happens after 75% of the epochs. Head
/// sub-centers are renormalized after every step. Margins are resolved
/// from the train-split class counts.
pub fn train_toy<T: Real>(dataset: &ToyDataset<T>, cfg: &TrainConfig<T>) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    if dataset.num_classes() < 2 {
        return Err(Error::InvalidParams("training needs >= 2 classes".into()));
    }
    let folds = stratified_kfold(&dataset.labels, cfg.num_folds, cfg.seed)?;
    let train_idx: Vec<usize> = (0..dataset.len())
        .filter(|&i| folds[i] != cfg.val_fold)
        .collect();
    let val_idx: Vec<usize> = (0..dataset.len())
        .filter(|&i| folds[i] == cfg.val_fold)
        .collect();
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InvalidParams(
            "fold split left train or validation empty".into(),
        ));
    }

    let num_classes = dataset.num_classes();
    let mut train_counts = vec![0usize; num_classes];
    for &i in &train_idx {
        train_counts[dataset.labels[i]] += 1;
    }
    let schedule = cfg.margin.schedule_for_counts(&train_counts)?;
    // a class can lose all its samples to the validation fold; it still
    // needs a margin, so size 0 is treated as the rarest observed size
    let floored: Vec<usize> = train_counts.iter().map(|&n| n.max(1)).collect();
    let margins = schedule.margins_from_counts(&floored)?;

    let d_in = dataset.input_dim();
    let mut init_rng = seed_stream(cfg.seed, "train.encoder");
    let init_scale = 1.0 / (d_in as f64).sqrt();
    let enc_data: Vec<T> = (0..d_in * cfg.embed_dim)
        .map(|_| T::of(init_scale * init_rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let mut encoder = DenseMatrix::from_vec(d_in, cfg.embed_dim, enc_data)?;
    let mut head_rng = seed_stream(cfg.seed, "train.head");
    let mut head = ArcFaceHead::random(
        num_classes,
        cfg.num_subcenters,
        cfg.embed_dim,
        margins.clone(),
        cfg.scale,
        &mut head_rng,
    )?;

    let mut velocity_enc = vec![T::zero(); d_in * cfg.embed_dim];
    let mut velocity_head = vec![T::zero(); head.weights().data().len()];

    let gather = |indices: &[usize]| -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(indices.len(), d_in);
        for (r, &i) in indices.iter().enumerate() {
            m.row_mut(r).copy_from_slice(dataset.inputs.row(i));
        }
        m
    };
    let train_inputs = gather(&train_idx);
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| dataset.labels[i]).collect();
    let val_inputs = gather(&val_idx);
    let val_truth = GroundTruth::from_pairs(
        val_idx
            .iter()
            .enumerate()
            .map(|(r, &i)| (format!("v{r}"), Some(dataset.labels[i]))),
    );
    let val_ids: Vec<String> = (0..val_idx.len()).map(|r| format!("v{r}")).collect();
    let gallery_ids: Vec<String> = (0..train_idx.len()).map(|r| format!("t{r}")).collect();

    let evaluate = |encoder: &DenseMatrix<T>, head: &ArcFaceHead<T>| -> Result<(T, T, T)> {
        let train_emb = encode(&train_inputs, encoder)?;
        let loss = head.loss_and_grad(&train_emb, &train_labels)?.loss;
        let gallery = Gallery::new(train_emb, train_labels.clone(), gallery_ids.clone())?;
        let val_emb = encode(&val_inputs, encoder)?;
        let preds: Vec<Prediction<T>> = baseline_predict_batch(&gallery, &val_ids, &val_emb)?;
        Ok((
            loss,
            gap(&preds, &val_truth)?,
            accuracy(&preds, &val_truth)?,
        ))
    };

    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let (loss0, gap0, acc0) = evaluate(&encoder, &head)?;
    history.push(EpochStats {
        epoch: 0,
        loss: loss0,
        val_gap: gap0,
        val_acc: acc0,
    });

    let drop_after = cfg.epochs * 3 / 4;
    let n_train = train_idx.len();
    for epoch in 1..=cfg.epochs {
        let lr = if epoch > drop_after {
            cfg.learning_rate * T::of(0.1)
        } else {
            cfg.learning_rate
        };
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut seed_stream(cfg.seed, &format!("train.order.{epoch}")));
        let mut epoch_loss = T::zero();
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let mut x = DenseMatrix::zeros(b, d_in);
            let mut targets = Vec::with_capacity(b);
            for (r, &j) in batch.iter().enumerate() {
                x.row_mut(r).copy_from_slice(train_inputs.row(j));
                targets.push(train_labels[j]);
            }
            let z = x.matmul(&encoder)?;
            let mut emb = z.clone();
            let mut z_norms = Vec::with_capacity(b);
            for r in 0..b {
                let row = emb.row_mut(r);
                let norm = crate::numerics::l2_norm(row);
                if !norm.is_finite() || norm.as_f64() <= crate::numerics::NORM_EPS {
                    return Err(Error::DivergedLoss {
                        epoch,
                        loss: f64::NAN,
                    });
                }
                for v in row.iter_mut() {
                    *v /= norm;
                }
                z_norms.push(norm);
            }
            let out = head.loss_and_grad(&emb, &targets)?;
            if !out.loss.is_finite() {
                return Err(Error::DivergedLoss {
                    epoch,
                    loss: out.loss.as_f64(),
                });
            }
            epoch_loss += out.loss * T::of(b as f64);

            // backprop through row normalization:
            // grad_z = (grad_e - e * (grad_e . e)) / |z|
            let mut grad_z = DenseMatrix::zeros(b, cfg.embed_dim);
            for (r, &z_norm) in z_norms.iter().enumerate() {
                let ge = out.grad_embeddings.row(r);
                let e = emb.row(r);
                let radial = crate::numerics::dot(ge, e);
                let gz = grad_z.row_mut(r);
                for d in 0..cfg.embed_dim {
                    gz[d] = (ge[d] - e[d] * radial) / z_norm;
                }
            }
            // grad_encoder = x^T grad_z
            let mut grad_enc = vec![T::zero(); d_in * cfg.embed_dim];
            for r in 0..b {
                let xr = x.row(r);
                let gz = grad_z.row(r);
                for (i, &xv) in xr.iter().enumerate() {
                    let dst = &mut grad_enc[i * cfg.embed_dim..(i + 1) * cfg.embed_dim];
                    for (dv, &gv) in dst.iter_mut().zip(gz) {
                        *dv += xv * gv;
                    }
                }
            }
            for ((v, g), w) in velocity_enc
                .iter_mut()
                .zip(&grad_enc)
                .zip(encoder.data_mut())
            {
                *v = cfg.momentum * *v + *g;
                *w -= lr * *v;
            }
            for ((v, g), w) in velocity_head
                .iter_mut()
                .zip(out.grad_weights.data())
                .zip(head.weights_mut().data_mut())
            {
                *v = cfg.momentum * *v + *g;
                *w -= lr * *v;
            }
            head.renormalize_weights()?;
        }
        epoch_loss /= T::of(n_train as f64);
        if !epoch_loss.is_finite() {
            return Err(Error::DivergedLoss {
                epoch,
                loss: epoch_loss.as_f64(),
            });
        }
        let (_, val_gap, val_acc) = evaluate(&encoder, &head)?;
        history.push(EpochStats {
            epoch,
            loss: epoch_loss,
            val_gap,
            val_acc,
        });
    }

    Ok(TrainOutput {
        encoder,
        head,
        margins,
        history,
    })
}
