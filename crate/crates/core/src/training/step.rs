use ndarray::{concatenate, s, Axis};

use super::{NetId, Networks, Perceptual, PoolEntry, TrainConfig, TrainState};
use crate::data::Phase;
use crate::error::{Error, Result};
use crate::losses::{
    compose_paired_objective, compose_unpaired_objective, discriminator_ls_with_grad, least_squares, mean_abs_diff,
    perceptual_loss_with_grad, LossReport, LossWeights, Term,
};
use crate::networks::{concat_condition, generator_check, split_condition, Domain, Gradients, ImageBatch, NetworkParameters, Tensor};

/// Settings for one generator-side evaluation.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorOptions<'a> {
    pub weights: &'a LossWeights,
    pub identity: bool,
    pub perceptual: Option<&'a Perceptual>,
    /// Restrict the differentiated objective to a single term with unit weight.
    pub only: Option<Term>,
}

/// Generator-side losses, their weighted sum and the gradients of that sum.
#[derive(Clone, Debug)]
pub struct GeneratorPass {
    pub report: LossReport,
    pub objective: f64,
    pub g1: Gradients,
    pub g2: Gradients,
    /// `G1(x)`.
    pub fake_y: Tensor,
    /// `G2(y)`.
    pub fake_x: Tensor,
    /// `G2(G1(x))`.
    pub rec_x: Tensor,
    /// `G1(G2(y))`.
    pub rec_y: Tensor,
}

/// Least-squares generator term `mean((D(input) - 1)^2)` and, when `scale`
/// is non-zero, `scale` times its gradient with respect to `input`.
fn adversarial_input_grad(d: &NetworkParameters, input: Tensor, scale: f64) -> (f64, Option<Tensor>) {
    let rec = d.record(input);
    let (value, grad) = least_squares(&rec.output, 1.0);
    if scale == 0.0 {
        return (value, None);
    }
    (value, Some(d.backprop(rec, grad * scale, None)))
}

fn add_into(acc: &mut Tensor, g: &Tensor) {
    *acc += g;
}

/// Evaluates the generator objective of `phase` on `(x, y)` and
/// backpropagates it into G1 and G2.
///
/// Paired: D4 judges `(x, G1(x))` and D3 judges `(y, G2(y))`. Unpaired: D3
/// judges `(G1(x), G2(G1(x)))` and D4 judges `(G2(y), G1(G2(y)))`; gradients
/// reach the generators through both the condition and the reconstruction.
pub fn generator_pass(nets: &Networks, x: &Tensor, y: &Tensor, phase: Phase, options: &GeneratorOptions) -> Result<GeneratorPass> {
    generator_check(&nets.g1, x)?;
    generator_check(&nets.g2, y)?;
    let coef = |term: Term, weight: f64| match options.only {
        Some(only) if only == term => 1.0,
        Some(_) => 0.0,
        None => weight,
    };
    let w = options.weights;
    let (g1, g2) = (&nets.g1, &nets.g2);
    let mut report = LossReport::default();
    let mut objective = 0.0;
    let mut grads_g1 = g1.zeros_like();
    let mut grads_g2 = g2.zeros_like();

    let r_fake_y = g1.record(x.clone());
    let r_fake_x = g2.record(y.clone());
    let fake_y = r_fake_y.output.clone();
    let fake_x = r_fake_x.output.clone();
    let r_rec_x = g2.record(fake_y.clone());
    let r_rec_y = g1.record(fake_x.clone());
    let rec_x = r_rec_x.output.clone();
    let rec_y = r_rec_y.output.clone();

    let mut d_fake_y = Tensor::zeros(fake_y.raw_dim());
    let mut d_fake_x = Tensor::zeros(fake_x.raw_dim());
    let mut d_rec_x = Tensor::zeros(rec_x.raw_dim());
    let mut d_rec_y = Tensor::zeros(rec_y.raw_dim());

    let mut record = |term: Term, value: f64, c: f64| {
        report.set(term, value);
        objective += c * value;
    };

    // D1 / D2 realism.
    for (term, d, fake, acc) in [
        (Term::GanG1D1, &nets.d1, &fake_y, &mut d_fake_y),
        (Term::GanG2D2, &nets.d2, &fake_x, &mut d_fake_x),
    ] {
        let c = coef(term, 1.0);
        let (v, g) = adversarial_input_grad(d, fake.clone(), c);
        record(term, v, c);
        if let Some(g) = g {
            add_into(acc, &g);
        }
    }

    // D3 / D4 in the role the phase assigns them.
    match phase {
        Phase::Paired => {
            for (term, d, cond, fake, acc) in [
                (Term::CondPairedD4, &nets.d4, x, &fake_y, &mut d_fake_y),
                (Term::CondPairedD3, &nets.d3, y, &fake_x, &mut d_fake_x),
            ] {
                let c = coef(term, 1.0);
                let cc = cond.dim().1;
                let (v, g) = adversarial_input_grad(d, concat_condition(cond, fake)?, c);
                record(term, v, c);
                if let Some(g) = g {
                    add_into(acc, &split_condition(&g, cc).1);
                }
            }
        }
        Phase::Unpaired => {
            for (term, d, cond, rec, d_cond, d_rec) in [
                (Term::CycleAdvD3, &nets.d3, &fake_y, &rec_x, &mut d_fake_y, &mut d_rec_x),
                (Term::CycleAdvD4, &nets.d4, &fake_x, &rec_y, &mut d_fake_x, &mut d_rec_y),
            ] {
                let c = coef(term, 1.0);
                let cc = cond.dim().1;
                let (v, g) = adversarial_input_grad(d, concat_condition(cond, rec)?, c);
                record(term, v, c);
                if let Some(g) = g {
                    let (gc, gi) = split_condition(&g, cc);
                    add_into(d_cond, &gc);
                    add_into(d_rec, &gi);
                }
            }
        }
    }

    // L1 cycle consistency.
    let c = coef(Term::CycleL1, w.lambda_cycle_l1);
    let (vx, gx) = mean_abs_diff(&rec_x, x);
    let (vy, gy) = mean_abs_diff(&rec_y, y);
    record(Term::CycleL1, vx + vy, c);
    d_rec_x.scaled_add(c, &gx);
    d_rec_y.scaled_add(c, &gy);

    // Perceptual distance of G1(x) to its ground truth.
    if let (Phase::Paired, Some(p)) = (phase, options.perceptual) {
        let c = coef(Term::Perceptual, w.lambda_perceptual);
        let fake_feats = p.extractor.extract(&fake_y);
        let real_feats = p.extractor.extract(y);
        let (v, mut feat_grads) = perceptual_loss_with_grad(&fake_feats, &real_feats, &p.layer_weights)?;
        record(Term::Perceptual, v, c);
        if c != 0.0 {
            feat_grads.iter_mut().for_each(|g| *g *= c);
            add_into(&mut d_fake_y, &p.extractor.backprop(&fake_y, &feat_grads));
        }
    }

    // Identity: G1 on Y and G2 on X should change nothing.
    if options.identity {
        let c = coef(Term::Identity, w.lambda_identity);
        let r_id_y = g1.record(y.clone());
        let r_id_x = g2.record(x.clone());
        let (vy, gy) = mean_abs_diff(&r_id_y.output, y);
        let (vx, gx) = mean_abs_diff(&r_id_x.output, x);
        record(Term::Identity, vx + vy, c);
        if c != 0.0 {
            g1.backprop(r_id_y, gy * c, Some(&mut grads_g1));
            g2.backprop(r_id_x, gx * c, Some(&mut grads_g2));
        }
    } else {
        record(Term::Identity, 0.0, 0.0);
    }

    let through_rec_x = g2.backprop(r_rec_x, d_rec_x, Some(&mut grads_g2));
    let through_rec_y = g1.backprop(r_rec_y, d_rec_y, Some(&mut grads_g1));
    d_fake_y += &through_rec_x;
    d_fake_x += &through_rec_y;
    g1.backprop(r_fake_y, d_fake_y, Some(&mut grads_g1));
    g2.backprop(r_fake_x, d_fake_x, Some(&mut grads_g2));

    Ok(GeneratorPass {
        report,
        objective,
        g1: grads_g1,
        g2: grads_g2,
        fake_y,
        fake_x,
        rec_x,
        rec_y,
    })
}

/// Least-squares discriminator loss on `(real, fake)` inputs and its parameter gradients.
pub fn discriminator_pass(d: &NetworkParameters, real: Tensor, fake: Tensor) -> (f64, Gradients) {
    let rec_real = d.record(real);
    let rec_fake = d.record(fake);
    let (loss, g_real, g_fake) = discriminator_ls_with_grad(&rec_real.output, &rec_fake.output);
    let mut grads = d.zeros_like();
    d.backprop(rec_real, g_real, Some(&mut grads));
    d.backprop(rec_fake, g_fake, Some(&mut grads));
    (loss, grads)
}

fn sample(t: &Tensor, i: usize) -> Tensor {
    t.slice(s![i..i + 1, .., .., ..]).to_owned()
}

fn stack(parts: &[Tensor]) -> Tensor {
    let views: Vec<_> = parts.iter().map(|t| t.view()).collect();
    concatenate(Axis(0), &views).expect("pool entries share a shape")
}

/// Runs every sample of a batch through `pool`, returning the (condition, image) batch to score.
fn pooled(state: &mut TrainState, which: NetId, image: &Tensor, condition: Option<&Tensor>) -> (Option<Tensor>, Tensor) {
    let n = image.dim().0;
    let mut images = Vec::with_capacity(n);
    let mut conditions = Vec::with_capacity(n);
    for i in 0..n {
        let fresh = PoolEntry {
            image: sample(image, i),
            condition: condition.map(|c| sample(c, i)),
        };
        let pool = match which {
            NetId::D1 => &mut state.pools.d1,
            NetId::D2 => &mut state.pools.d2,
            NetId::D3 => &mut state.pools.d3,
            _ => &mut state.pools.d4,
        };
        let out = pool.query(fresh, &mut state.rng);
        images.push(out.image);
        if let Some(c) = out.condition {
            conditions.push(c);
        }
    }
    let conditions = (!conditions.is_empty()).then(|| stack(&conditions));
    (conditions, stack(&images))
}

/// A conditional discriminator's inputs for one update. Real and fresh fake
/// share one condition by construction.
struct Critique {
    net: NetId,
    condition: Tensor,
    real: Tensor,
    fake: Tensor,
}

fn check_pair(x: &ImageBatch, y: &ImageBatch) -> Result<()> {
    if x.domain() != Domain::X || y.domain() != Domain::Y {
        return Err(Error::Validation(format!(
            "training steps take an X batch and a Y batch, got {:?} and {:?}",
            x.domain(),
            y.domain()
        )));
    }
    let ([nx, _, hx, wx], [ny, _, hy, wy]) = (x.shape(), y.shape());
    if (nx, hx, wx) != (ny, hy, wy) {
        return Err(Error::shape("y batch (batch, height, width)", &[nx, hx, wx], &[ny, hy, wy]));
    }
    Ok(())
}

pub fn training_step_paired(state: &mut TrainState, x: &ImageBatch, y: &ImageBatch, config: &TrainConfig) -> Result<LossReport> {
    training_step(state, x, y, Phase::Paired, config)
}

pub fn training_step_unpaired(state: &mut TrainState, x: &ImageBatch, y: &ImageBatch, config: &TrainConfig) -> Result<LossReport> {
    training_step(state, x, y, Phase::Unpaired, config)
}

/// One iteration: a joint generator update, then D1, D2, D3 and D4 each on
/// its own loss with pool-mediated fakes. All updates use gradients taken
/// before any parameter changes. A non-finite loss leaves networks and
/// optimizer moments untouched, although the pools have already been queried.
pub fn training_step(state: &mut TrainState, x: &ImageBatch, y: &ImageBatch, phase: Phase, config: &TrainConfig) -> Result<LossReport> {
    if state.phase != phase {
        return Err(Error::Phase(format!(
            "{} step requested during the {} phase (epoch {})",
            phase.as_str(),
            state.phase.as_str(),
            state.epoch
        )));
    }
    check_pair(x, y)?;
    let (x, y) = (x.data(), y.data());
    let options = GeneratorOptions {
        weights: &config.weights,
        identity: state.identity_enabled,
        perceptual: state.perceptual.as_ref(),
        only: None,
    };
    let gen = generator_pass(&state.networks, x, y, phase, &options)?;
    let mut report = gen.report;

    let (_, fake_y) = pooled(state, NetId::D1, &gen.fake_y, None);
    let (l1, grads_d1) = discriminator_pass(&state.networks.d1, y.clone(), fake_y);
    let (_, fake_x) = pooled(state, NetId::D2, &gen.fake_x, None);
    let (l2, grads_d2) = discriminator_pass(&state.networks.d2, x.clone(), fake_x);

    let critiques = match phase {
        Phase::Paired => [
            Critique {
                net: NetId::D3,
                condition: y.clone(),
                real: x.clone(),
                fake: gen.fake_x.clone(),
            },
            Critique {
                net: NetId::D4,
                condition: x.clone(),
                real: y.clone(),
                fake: gen.fake_y.clone(),
            },
        ],
        Phase::Unpaired => [
            Critique {
                net: NetId::D3,
                condition: gen.fake_y.clone(),
                real: x.clone(),
                fake: gen.rec_x.clone(),
            },
            Critique {
                net: NetId::D4,
                condition: gen.fake_x.clone(),
                real: y.clone(),
                fake: gen.rec_y.clone(),
            },
        ],
    };
    let mut conditional = Vec::with_capacity(2);
    for c in critiques {
        let (cond, fake) = pooled(state, c.net, &c.fake, Some(&c.condition));
        let cond = cond.expect("conditional pools keep conditions");
        let d = state.networks.get(c.net);
        let real_in = concat_condition(&c.condition, &c.real)?;
        let fake_in = concat_condition(&cond, &fake)?;
        conditional.push(discriminator_pass(d, real_in, fake_in));
    }
    let [(l3, grads_d3), (l4, grads_d4)]: [(f64, Gradients); 2] = conditional.try_into().expect("two critiques");

    report.set(Term::D1, l1);
    report.set(Term::D2, l2);
    report.set(Term::D3, l3);
    report.set(Term::D4, l4);
    let objective = match phase {
        Phase::Paired => compose_paired_objective(&report, &config.weights)?,
        Phase::Unpaired => compose_unpaired_objective(&report, &config.weights)?,
    };
    report.apply(&objective);
    if !report.is_finite() {
        return Err(Error::NonFinite {
            step: state.global_step + 1,
            report: Box::new(report),
        });
    }

    let grads = [
        (NetId::G1, gen.g1),
        (NetId::G2, gen.g2),
        (NetId::D1, grads_d1),
        (NetId::D2, grads_d2),
        (NetId::D3, grads_d3),
        (NetId::D4, grads_d4),
    ];
    for (id, g) in grads {
        let spec = config.optimizer(id);
        let lr = super::lr_at_epoch(spec, state.epoch, config)?;
        let params = state.networks.get_mut(id);
        state.optimizers.get_mut(id).apply(spec, lr, params, &g);
    }
    state.global_step += 1;
    Ok(report)
}
