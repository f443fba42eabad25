//! Least-squares adversarial losses, L1 reconstruction terms and the paired /
//! unpaired objective compositions.
//!
//! Every adversarial term uses least-squares targets (real = 1, fake = 0,
//! generator target = 1) with mean reduction over patches and batch. The
//! discriminator side is halved so a maximally wrong discriminator scores 1.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{ImageBatch, PatchMap, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight on the L1 cycle-consistency term.
    pub lambda_cycle_l1: f64,
    /// Weight on the identity term.
    pub lambda_identity: f64,
    /// Weight on the optional perceptual term.
    pub lambda_perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cycle_l1: 10.0,
            lambda_identity: 5.0,
            lambda_perceptual: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("lambda_cycle_l1", self.lambda_cycle_l1),
            ("lambda_identity", self.lambda_identity),
            ("lambda_perceptual", self.lambda_perceptual),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Named loss terms. The conditional discriminators appear under different
/// names in the two objectives because they play different roles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    GanG1D1,
    GanG2D2,
    /// Generator side of D4(x, y) vs D4(x, G1(x)).
    CondPairedD4,
    /// Generator side of D3(y, x) vs D3(y, G2(y)).
    CondPairedD3,
    /// Generator side of D3(G1(x), x) vs D3(G1(x), G2(G1(x))).
    CycleAdvD3,
    /// Generator side of D4(G2(y), y) vs D4(G2(y), G1(G2(y))).
    CycleAdvD4,
    CycleL1,
    Identity,
    Perceptual,
    D1,
    D2,
    D3,
    D4,
}

impl Term {
    pub const ALL: [Term; 13] = [
        Term::GanG1D1,
        Term::GanG2D2,
        Term::CondPairedD4,
        Term::CondPairedD3,
        Term::CycleAdvD3,
        Term::CycleAdvD4,
        Term::CycleL1,
        Term::Identity,
        Term::Perceptual,
        Term::D1,
        Term::D2,
        Term::D3,
        Term::D4,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Term::GanG1D1 => "gan_g1_d1",
            Term::GanG2D2 => "gan_g2_d2",
            Term::CondPairedD4 => "cgan_d4_paired",
            Term::CondPairedD3 => "cgan_d3_paired",
            Term::CycleAdvD3 => "cgan_d3_cycle",
            Term::CycleAdvD4 => "cgan_d4_cycle",
            Term::CycleL1 => "cycle_l1",
            Term::Identity => "identity",
            Term::Perceptual => "perceptual",
            Term::D1 => "d1",
            Term::D2 => "d2",
            Term::D3 => "d3",
            Term::D4 => "d4",
        }
    }

    pub fn from_key(key: &str) -> Option<Term> {
        Term::ALL.into_iter().find(|t| t.key() == key)
    }
}

/// Scalar values of every loss term at one step, plus the composed totals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub terms: BTreeMap<Term, f64>,
    pub total_generator: f64,
    pub total_discriminator: f64,
}

impl LossReport {
    pub fn with_terms(terms: impl IntoIterator<Item = (Term, f64)>) -> Self {
        LossReport {
            terms: terms.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn set(&mut self, term: Term, value: f64) {
        self.terms.insert(term, value);
    }

    pub fn get(&self, term: Term) -> Option<f64> {
        self.terms.get(&term).copied()
    }

    pub fn has(&self, term: Term) -> bool {
        self.terms.contains_key(&term)
    }

    pub fn is_finite(&self) -> bool {
        self.terms.values().all(|v| v.is_finite())
            && self.total_generator.is_finite()
            && self.total_discriminator.is_finite()
    }

    fn require(&self, term: Term) -> Result<f64> {
        self.get(term).ok_or(Error::MissingTerm(term.key()))
    }

    pub(crate) fn apply(&mut self, objective: &Objective) {
        self.total_generator = objective.generator_total;
        self.total_discriminator = objective.discriminators.sum();
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (term, v) in &self.terms {
            write!(f, "{}={v:.6e} ", term.key())?;
        }
        write!(
            f,
            "total_generator={:.6e} total_discriminator={:.6e}",
            self.total_generator, self.total_discriminator
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiscriminatorTotals {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
}

impl DiscriminatorTotals {
    pub fn sum(&self) -> f64 {
        self.d1 + self.d2 + self.d3 + self.d4
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub generator_total: f64,
    pub discriminators: DiscriminatorTotals,
}

fn compose(report: &LossReport, weights: &LossWeights, adversarial: [Term; 4]) -> Result<Objective> {
    let mut total = 0.0;
    for term in adversarial {
        total += report.require(term)?;
    }
    total += weights.lambda_cycle_l1 * report.require(Term::CycleL1)?;
    total += weights.lambda_identity * report.require(Term::Identity)?;
    if let Some(p) = report.get(Term::Perceptual) {
        total += weights.lambda_perceptual * p;
    }
    let discriminators = DiscriminatorTotals {
        d1: report.require(Term::D1)?,
        d2: report.require(Term::D2)?,
        d3: report.require(Term::D3)?,
        d4: report.require(Term::D4)?,
    };
    Ok(Objective {
        generator_total: total,
        discriminators,
    })
}

/// Objective for aligned samples: D1/D2 adversarial terms, D4 and D3 as
/// conditional discriminators on the true pair, weighted cycle and identity terms.
pub fn compose_paired_objective(report: &LossReport, weights: &LossWeights) -> Result<Objective> {
    compose(
        report,
        weights,
        [Term::GanG1D1, Term::GanG2D2, Term::CondPairedD4, Term::CondPairedD3],
    )
}

/// Objective for unaligned samples: D3/D4 act as adversarial cycle-consistency critics.
pub fn compose_unpaired_objective(report: &LossReport, weights: &LossWeights) -> Result<Objective> {
    compose(
        report,
        weights,
        [Term::GanG1D1, Term::GanG2D2, Term::CycleAdvD3, Term::CycleAdvD4],
    )
}

fn same_shape(context: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(context, a.shape(), b.shape()));
    }
    Ok(())
}

/// `mean((scores - target)^2)` and its gradient with respect to `scores`.
pub fn least_squares(scores: &Tensor, target: f64) -> (f64, Tensor) {
    let n = scores.len() as f64;
    let value = scores.iter().map(|s| (s - target) * (s - target)).sum::<f64>() / n;
    let grad = scores.mapv(|s| 2.0 * (s - target) / n);
    (value, grad)
}

/// `mean(|a - b|)` and its gradient with respect to `a` (zero where `a == b`).
pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> (f64, Tensor) {
    let n = a.len() as f64;
    let mut grad = a - b;
    let value = grad.iter().map(|d| d.abs()).sum::<f64>() / n;
    grad.mapv_inplace(|d| {
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    (value, grad)
}

/// Discriminator loss with gradients for `(real, fake)` scores.
pub fn discriminator_ls_with_grad(real: &Tensor, fake: &Tensor) -> (f64, Tensor, Tensor) {
    let (lr, gr) = least_squares(real, 1.0);
    let (lf, gf) = least_squares(fake, 0.0);
    (0.5 * (lr + lf), gr * 0.5, gf * 0.5)
}

pub fn ls_adversarial_d(real_scores: &PatchMap, fake_scores: &PatchMap) -> Result<f64> {
    same_shape("ls_adversarial_d", &real_scores.data, &fake_scores.data)?;
    Ok(discriminator_ls_with_grad(&real_scores.data, &fake_scores.data).0)
}

pub fn ls_adversarial_g(fake_scores: &PatchMap) -> f64 {
    least_squares(&fake_scores.data, 1.0).0
}

/// `(discriminator loss, generator loss)` for D3 scoring `(G1(x), x)` as real
/// and `(G1(x), x_r)` as fake (or the D4 mirror).
pub fn adversarial_cycle_terms(real: &PatchMap, fake: &PatchMap) -> Result<(f64, f64)> {
    Ok((ls_adversarial_d(real, fake)?, ls_adversarial_g(fake)))
}

/// `(discriminator loss, generator loss)` for D4 scoring `(x, y)` as real and
/// `(x, G1(x))` as fake (or the D3 mirror with `(y, x)` / `(y, G2(y))`).
pub fn conditional_paired_terms(real: &PatchMap, fake: &PatchMap) -> Result<(f64, f64)> {
    Ok((ls_adversarial_d(real, fake)?, ls_adversarial_g(fake)))
}

fn paired_l1(context: &'static str, a: &ImageBatch, b: &ImageBatch) -> Result<f64> {
    same_shape(context, a.data(), b.data())?;
    Ok(mean_abs_diff(a.data(), b.data()).0)
}

pub fn cycle_l1(x: &ImageBatch, x_r: &ImageBatch, y: &ImageBatch, y_r: &ImageBatch) -> Result<f64> {
    Ok(paired_l1("cycle_l1 (x, x_r)", x_r, x)? + paired_l1("cycle_l1 (y, y_r)", y_r, y)?)
}

pub fn identity_loss(g1_of_y: &ImageBatch, y: &ImageBatch, g2_of_x: &ImageBatch, x: &ImageBatch) -> Result<f64> {
    Ok(paired_l1("identity (G1(y), y)", g1_of_y, y)? + paired_l1("identity (G2(x), x)", g2_of_x, x)?)
}

/// Feature stack source for the perceptual term, e.g. a pretrained backbone
/// loaded outside this crate.
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, image: &Tensor) -> Vec<Tensor>;

    /// Gradient with respect to `image` given gradients for each extracted layer.
    fn backprop(&self, image: &Tensor, feature_grads: &[Tensor]) -> Tensor;
}

/// Weighted sum of per-layer mean absolute differences, with per-layer
/// gradients with respect to `fake`.
pub fn perceptual_loss_with_grad(fake: &[Tensor], real: &[Tensor], layer_weights: &[f64]) -> Result<(f64, Vec<Tensor>)> {
    if fake.len() != real.len() || fake.len() != layer_weights.len() {
        return Err(Error::Arity {
            context: "perceptual_loss",
            reason: format!(
                "{} fake layers, {} real layers, {} weights",
                fake.len(),
                real.len(),
                layer_weights.len()
            ),
        });
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(fake.len());
    for ((f, r), w) in fake.iter().zip(real).zip(layer_weights) {
        same_shape("perceptual_loss layer", f, r)?;
        let (v, g) = mean_abs_diff(f, r);
        total += w * v;
        grads.push(g * *w);
    }
    Ok((total, grads))
}

pub fn perceptual_loss(fake: &[Tensor], real: &[Tensor], layer_weights: &[f64]) -> Result<f64> {
    perceptual_loss_with_grad(fake, real, layer_weights).map(|(v, _)| v)
}
