//! Finite-difference verification of the head's analytic gradients.
//!
//! Random instances are drawn in 64-bit, rejecting configurations where the
//! loss is non-differentiable or numerically fragile: near-ties in the
//! per-class max over sub-centers, target cosines near the hard-region
//! branch point, and cosines near the +-1 clamp. On the survivors the
//! analytic gradients w.r.t. embeddings and weights must match central
//! differences to a normwise relative error below 1e-6.

use rand::Rng;

use crate::arcface::ArcFaceHead;
use crate::data::seed_stream;
use crate::error::Result;
use crate::numerics::{finite_diff_grad, l2_normalize, relative_error, DenseMatrix, FD_EPS};

/// Minimum allowed gap between the best and second-best sub-center cosine.
const MAX_TIE_GAP: f64 = 1e-3;
/// Minimum allowed distance from the hard-region branch threshold.
const BRANCH_GAP: f64 = 1e-3;
/// Cosines this close to +-1 are rejected (the sqrt in sin(theta) loses
/// smoothness right at the clamp).
const COS_LIMIT: f64 = 0.999;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub eps: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            seed: 0,
            eps: FD_EPS,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub trials: usize,
    /// Worst normwise relative error across all trials and both gradient
    /// blocks.
    pub max_rel_err: f64,
    /// Instances discarded by the rejection rules before `trials` clean
    /// ones were found.
    pub rejected: usize,
}

struct Instance {
    head: ArcFaceHead<f64>,
    embeddings: DenseMatrix<f64>,
    targets: Vec<usize>,
}

fn random_unit_rows<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix<f64> {
    let mut m = DenseMatrix::zeros(rows, cols);
    for i in 0..rows {
        let v: Vec<f64> = (0..cols)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        m.row_mut(i).copy_from_slice(&l2_normalize(&v).unwrap());
    }
    m
}

fn draw_instance<R: Rng>(rng: &mut R) -> Instance {
    let num_classes = rng.random_range(2..=10);
    let num_subcenters = rng.random_range(1..=3);
    let embed_dim = rng.random_range(4..=32);
    let batch = rng.random_range(1..=8);
    let margins: Vec<f64> = (0..num_classes)
        .map(|_| rng.random_range(0.05..0.5))
        .collect();
    let scale = rng.random_range(1.0..30.0);
    let weights = random_unit_rows(num_classes * num_subcenters, embed_dim, rng);
    let head = ArcFaceHead::new(
        num_classes,
        num_subcenters,
        embed_dim,
        weights,
        margins,
        scale,
    )
    .expect("random instance is valid");
    let embeddings = random_unit_rows(batch, embed_dim, rng);
    let targets: Vec<usize> = (0..batch)
        .map(|_| rng.random_range(0..num_classes))
        .collect();
    Instance {
        head,
        embeddings,
        targets,
    }
}

/// True when every sample sits safely inside one smooth branch of the loss.
fn well_conditioned(inst: &Instance) -> bool {
    let k = inst.head.num_subcenters();
    for (row, &target) in inst.targets.iter().enumerate() {
        let e = inst.embeddings.row(row);
        let cosines = inst.head.class_cosines(e).expect("dims match");
        for c in 0..inst.head.num_classes() {
            if cosines.values[c].abs() > COS_LIMIT {
                return false;
            }
            if k > 1 {
                let mut best = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                for sub in 0..k {
                    let cos = crate::numerics::dot(e, inst.head.weights().row(c * k + sub));
                    if cos > best {
                        second = best;
                        best = cos;
                    } else if cos > second {
                        second = cos;
                    }
                }
                if best - second < MAX_TIE_GAP {
                    return false;
                }
            }
        }
        let threshold = -(inst.head.margins()[target].cos());
        if (cosines.values[target] - threshold).abs() < BRANCH_GAP {
            return false;
        }
    }
    true
}

fn loss_at(inst: &Instance, embeddings: &DenseMatrix<f64>, weights: &DenseMatrix<f64>) -> f64 {
    let head = ArcFaceHead::from_parts_unchecked(
        inst.head.num_classes(),
        inst.head.num_subcenters(),
        inst.head.embed_dim(),
        weights.clone(),
        inst.head.margins().to_vec(),
        inst.head.scale(),
    );
    head.loss_and_grad(embeddings, &inst.targets)
        .expect("perturbed instance evaluates")
        .loss
}

fn check_instance(inst: &Instance, eps: f64) -> Result<f64> {
    let analytic = inst.head.loss_and_grad(&inst.embeddings, &inst.targets)?;
    let (b, d) = (inst.embeddings.rows(), inst.embeddings.cols());
    let w_rows = inst.head.weights().rows();

    let fd_emb = finite_diff_grad(
        |flat| {
            let m = DenseMatrix::from_vec(b, d, flat.to_vec()).expect("finite perturbation");
            loss_at(inst, &m, inst.head.weights())
        },
        inst.embeddings.data(),
        eps,
    );
    let err_emb = relative_error(analytic.grad_embeddings.data(), &fd_emb, 1e-8);

    let fd_w = finite_diff_grad(
        |flat| {
            let m = DenseMatrix::from_vec(w_rows, d, flat.to_vec()).expect("finite perturbation");
            loss_at(inst, &inst.embeddings, &m)
        },
        inst.head.weights().data(),
        eps,
    );
    let err_w = relative_error(analytic.grad_weights.data(), &fd_w, 1e-8);

    Ok(err_emb.max(err_w))
}

/// Run the full suite: draw well-conditioned random instances and compare
/// analytic gradients against central finite differences.
pub fn check_gradients(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = seed_stream(cfg.seed, "gradcheck");
    let mut max_rel_err = 0.0_f64;
    let mut rejected = 0usize;
    let mut done = 0usize;
    let attempt_cap = cfg.trials.saturating_mul(1000).max(1000);
    let mut attempts = 0usize;
    while done < cfg.trials {
        attempts += 1;
        assert!(
            attempts <= attempt_cap,
            "rejection sampling failed to find {} clean instances",
            cfg.trials
        );
        let inst = draw_instance(&mut rng);
        if !well_conditioned(&inst) {
            rejected += 1;
            continue;
        }
        max_rel_err = max_rel_err.max(check_instance(&inst, cfg.eps)?);
        done += 1;
    }
    Ok(GradCheckReport {
        trials: cfg.trials,
        max_rel_err,
        rejected,
    })
}
