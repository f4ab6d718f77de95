//! Analytic gradients against central finite differences in f64.

use kdgan::distill::{discriminator_objective, generator_objective, Objectives};
use kdgan::losses::{self, DistillWeights, LossWeights};
use kdgan::model::{Discriminator, GenOutput, Generator};
use kdgan::nn::{Activation, Parameterized, Stack};
use kdgan::rng::{stream, Stream};
use kdgan::{ArchSpec, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const LOSS_STEP: f64 = 1e-4;
const LOSS_TOL: f64 = 1e-4;
const MODEL_STEP: f64 = 1e-3;
const MODEL_TOL: f64 = 1e-2;
const MIN_GRAD: f64 = 1e-6;
const SEEDS: u64 = 12;
/// Step and tolerance for the unconditioned check at DCGAN initialization.
const INIT_STEP: f64 = 1e-6;
const INIT_TOL: f64 = 1e-3;

fn tiny() -> ArchSpec {
    ArchSpec::new(1, [1, 1, 1], 2)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, Stream::Shuffle);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn check_elementwise(name: &str, f: impl Fn(&[f64]) -> f64, grad: &[f64], at: &[f64]) {
    for i in 0..at.len() {
        let (mut plus, mut minus) = (at.to_vec(), at.to_vec());
        plus[i] += LOSS_STEP;
        minus[i] -= LOSS_STEP;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * LOSS_STEP);
        let e = rel_err(grad[i], numeric);
        assert!(e < LOSS_TOL, "{name}[{i}]: analytic {} numeric {numeric} rel err {e}", grad[i]);
    }
}

pub fn distance_gradients() {
    for seed in 0..20 {
        let a = random_vec(17, seed);
        let b = random_vec(17, seed + 100);
        check_elementwise("mse", |a| losses::mse(a, &b).unwrap(), &losses::mse_grad(&a, &b).unwrap(), &a);
        check_elementwise("l1", |a| losses::l1(a, &b).unwrap(), &losses::l1_grad(&a, &b).unwrap(), &a);
    }
}

pub fn cross_entropy_gradients() {
    for seed in 0..20 {
        let p_real: Vec<f64> = random_vec(9, seed).iter().map(|v| 0.5 + 0.45 * v).collect();
        let p_fake: Vec<f64> = random_vec(9, seed + 50).iter().map(|v| 0.5 + 0.45 * v).collect();
        let (g_real, g_fake) = losses::discriminator_loss_grad(&p_real, &p_fake);
        check_elementwise("bce real", |p| losses::discriminator_loss(p, &p_fake), &g_real, &p_real);
        check_elementwise("bce fake", |p| losses::discriminator_loss(&p_real, p), &g_fake, &p_fake);
    }
}

/// Central differences over every learnable parameter of `model`. A parameter
/// whose difference interval crosses a kink (a ReLU / LeakyReLU input or an L1
/// residual changing sign, as reported by `kinks`) has no derivative to
/// compare against there and is skipped. Returns (checked, skipped).
#[allow(clippy::too_many_arguments)]
fn check_params<M: Parameterized<f64>>(
    name: &str,
    model: &M,
    analytic: &M,
    step: f64,
    tol: f64,
    loss: impl Fn(&M) -> f64,
    kinks: impl Fn(&M) -> Vec<bool>,
) -> (usize, usize) {
    let grads: Vec<Vec<f64>> = analytic.params().into_iter().map(|(_, t)| t.data().to_vec()).collect();
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let base = kinks(model);
    let (mut checked, mut skipped) = (0, 0);
    for (k, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let perturbed = |delta: f64| {
                let mut m = model.clone();
                m.params_mut()[k].1.data_mut()[i] += delta;
                m
            };
            let (plus, minus) = (perturbed(step), perturbed(-step));
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
            if g[i].abs().max(numeric.abs()) <= MIN_GRAD {
                continue;
            }
            if kinks(&plus) != base || kinks(&minus) != base {
                skipped += 1;
                continue;
            }
            let e = rel_err(g[i], numeric);
            assert!(e < tol, "{name} {}[{i}]: analytic {} numeric {numeric} rel err {e}", names[k], g[i]);
            checked += 1;
        }
    }
    (checked, skipped)
}

/// Runs `stack` stage by stage in training mode, recording the sign of every
/// ReLU / LeakyReLU output.
fn stack_signs(stack: &Stack<f64>, x: &Tensor<f64>, stages: usize, signs: &mut Vec<bool>) -> Tensor<f64> {
    let mut stack = stack.clone();
    let mut h = x.clone();
    for i in 0..stages {
        h = stack.forward_train_range(&h, i..i + 1).0;
        if matches!(stack.stages[i].activation, Activation::Relu | Activation::LeakyRelu(_)) {
            signs.extend(h.data().iter().map(|&v| v > 0.0));
        }
    }
    h
}

fn residual_signs(a: &Tensor<f64>, b: &Tensor<f64>, signs: &mut Vec<bool>) {
    signs.extend(a.data().iter().zip(b.data()).map(|(p, q)| p > q));
}

fn generator_kinks(g: &Generator<f64>, d: &Discriminator<f64>, x: &Tensor<f64>, teacher: &GenOutput<f64>) -> Vec<bool> {
    let mut signs = Vec::new();
    let z1 = stack_signs(&g.encoder, x, g.encoder.len(), &mut signs);
    let x_hat = stack_signs(&g.decoder, &z1, g.decoder.len(), &mut signs);
    stack_signs(&g.reencoder, &x_hat, g.reencoder.len(), &mut signs);
    residual_signs(&x_hat, x, &mut signs);
    residual_signs(&x_hat, &teacher.x_hat, &mut signs);
    stack_signs(&d.net, &x_hat, FEATURE_STAGES, &mut signs);
    signs
}

fn discriminator_kinks(d: &Discriminator<f64>, x: &Tensor<f64>, fake: &Tensor<f64>) -> Vec<bool> {
    let mut signs = Vec::new();
    stack_signs(&d.net, x, d.net.len(), &mut signs);
    stack_signs(&d.net, fake, d.net.len(), &mut signs);
    signs
}

/// Discriminator stages up to and including the feature tap.
const FEATURE_STAGES: usize = 3;

fn images(n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = stream(seed, Stream::Shuffle);
    let normal = Normal::new(0.0, 0.5).unwrap();
    // Binary pixels: a tanh reconstruction never reaches +-1, so the
    // reconstruction L1 term has no kink to cross.
    let data = (0..n * 1024).map(|_| f64::signum(normal.sample(&mut rng))).collect();
    Tensor::from_vec(&[n, 1, 32, 32], data).unwrap()
}

fn smooth_images(n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = stream(seed, Stream::Shuffle);
    let normal = Normal::new(0.0, 0.5).unwrap();
    let data = (0..n * 1024).map(|_| f64::tanh(normal.sample(&mut rng))).collect();
    Tensor::from_vec(&[n, 1, 32, 32], data).unwrap()
}

/// Central differences at step 1e-3 only measure the derivative where the loss
/// is smooth over the whole difference interval, so the check runs at a point
/// chosen away from non-differentiable and badly conditioned regions:
///
/// - conv layers followed by batch norm are scale invariant, so at the DCGAN
///   init scale (0.02) a 1e-3 step is a 5% relative perturbation; their
///   weights are scaled to O(1);
/// - batch-norm shifts put LeakyReLU inputs mostly on the negative branch and
///   ReLU inputs on the positive branch, away from the kink;
/// - the un-normalized output layers get moderate weights so the latent code
///   is O(1) without saturating anything.
///
/// The same analytic gradients are also checked at the plain DCGAN
/// initialization with a small step, see `gradients_at_initialization`.
fn networks(seed: u64) -> (Generator<f64>, Discriminator<f64>) {
    let mut rng = stream(seed, Stream::TeacherInit);
    let mut g = Generator::new(&tiny(), &mut rng);
    let mut d = Discriminator::new(&tiny(), &mut rng);
    condition(&mut g);
    condition(&mut d);
    (g, d)
}

const NORMALIZED_SCALE: f64 = 50.0;
const OUTPUT_SCALE: f64 = 10.0;
const BN_SHIFT: f64 = 2.0;

fn condition<M: Parameterized<f64>>(m: &mut M) {
    let normalized: Vec<String> =
        m.params().into_iter().filter_map(|(n, _)| n.strip_suffix("bn.weight").map(|p| format!("{p}conv.weight"))).collect();
    for (name, t) in m.params_mut() {
        let scale = if normalized.contains(&name) {
            NORMALIZED_SCALE
        } else if name.ends_with("conv.weight") {
            OUTPUT_SCALE
        } else {
            1.0
        };
        t.data_mut().iter_mut().for_each(|v| *v *= scale);
        if name.ends_with("bn.bias") {
            // Decoder stages use ReLU, everything else LeakyReLU.
            let shift = if name.starts_with("decoder") { BN_SHIFT } else { -BN_SHIFT };
            t.data_mut().iter_mut().for_each(|v| *v += shift);
        }
    }
}

/// Teacher outputs for the distillation terms. The reconstruction is pushed
/// towards +1 so the L1 kink at equal pixels is out of reach of the student.
fn teacher_targets(seed: u64, x: &Tensor<f64>) -> GenOutput<f64> {
    let (mut teacher, _) = networks(seed);
    let last = format!("decoder.{}.conv.bias", teacher.decoder.stages.len() - 1);
    for (name, t) in teacher.params_mut() {
        if name == last {
            t.data_mut().iter_mut().for_each(|v| *v += 6.0);
        }
    }
    teacher.forward(x).unwrap()
}

/// Most parameters must be checkable; kinks inside the interval are the exception.
fn report(term: &str, seed: u64, checked: usize, skipped: usize) {
    println!("{term} seed {seed}: {checked} checked, {skipped} skipped at kinks");
    assert!(checked >= 20, "{term} seed {seed}: only {checked} parameters checked");
    assert!(skipped * 3 <= checked + skipped, "{term} seed {seed}: {skipped} of {} parameters straddle a kink", checked + skipped);
}

/// One generator-side loss in isolation: weights select the term.
#[derive(Clone, Copy, Debug)]
struct Term {
    name: &'static str,
    objectives: Objectives,
    gan: bool,
    distill: bool,
}

fn terms() -> Vec<Term> {
    let gan = |name, w_con, w_enc, w_adv| Term {
        name,
        objectives: Objectives { loss: LossWeights { w_con, w_enc, w_adv }, distill: DistillWeights::default() },
        gan: true,
        distill: false,
    };
    let kd = |name, w1, wx, w2| Term {
        name,
        objectives: Objectives { loss: LossWeights::default(), distill: DistillWeights { w1, wx, w2 } },
        gan: false,
        distill: true,
    };
    vec![
        gan("S_con", 1.0, 0.0, 0.0),
        gan("S_enc", 0.0, 1.0, 0.0),
        gan("S_adv", 0.0, 0.0, 1.0),
        kd("K1", 1.0, 0.0, 0.0),
        kd("Kx", 0.0, 1.0, 0.0),
        kd("K2", 0.0, 0.0, 1.0),
    ]
}

fn term_value(term: &Term, g: &Generator<f64>, d: &Discriminator<f64>, x: &Tensor<f64>, teacher: &GenOutput<f64>, grads: Option<&mut Generator<f64>>) -> f64 {
    let mut g = g.clone();
    let mut d = d.clone();
    let (out, cache) = g.forward_train(x).unwrap();
    let mut scratch = g.zeros_like();
    let grads = grads.unwrap_or(&mut scratch);
    let disc = if term.gan { Some(&mut d) } else { None };
    let target = if term.distill { Some(teacher) } else { None };
    let rec = generator_objective(&g, &out, &cache, x, disc, target, &term.objectives, grads).unwrap();
    rec.l_g + rec.k_l
}

pub fn generator_loss_gradients() {
    for seed in 0..SEEDS {
        let (g, d) = networks(seed);
        let x = images(1, seed);
        let target = teacher_targets(seed + 10, &x);
        for term in terms() {
            let mut grads = g.zeros_like();
            term_value(&term, &g, &d, &x, &target, Some(&mut grads));
            let (checked, skipped) = check_params(
                term.name,
                &g,
                &grads,
                MODEL_STEP,
                MODEL_TOL,
                |m| term_value(&term, m, &d, &x, &target, None),
                |m| generator_kinks(m, &d, &x, &target),
            );
            report(term.name, seed, checked, skipped);
        }
    }
}

pub fn discriminator_loss_gradients() {
    for seed in 0..SEEDS {
        let (g, d) = networks(seed);
        let x = images(1, seed);
        let fake = g.forward(&x).unwrap().x_hat;
        let mut grads = d.zeros_like();
        discriminator_objective(&mut d.clone(), &x, &fake, &mut grads).unwrap();
        let (checked, skipped) = check_params(
            "L_d",
            &d,
            &grads,
            MODEL_STEP,
            MODEL_TOL,
            |m| {
                let mut scratch = m.zeros_like();
                discriminator_objective(&mut m.clone(), &x, &fake, &mut scratch).unwrap()
            },
            |m| discriminator_kinks(m, &x, &fake),
        );
        report("L_d", seed, checked, skipped);
    }
}

/// Plain DCGAN initialization, several images per batch, every loss term at
/// once; a small step keeps the difference quotient inside the smooth region.
pub fn gradients_at_initialization() {
    for seed in 0..3 {
        let mut rng = stream(seed, Stream::TeacherInit);
        let g = Generator::<f64>::new(&tiny(), &mut rng);
        let d = Discriminator::<f64>::new(&tiny(), &mut rng);
        let teacher = Generator::<f64>::new(&tiny(), &mut rng);
        let x = smooth_images(3, seed);
        let target = teacher.forward(&x).unwrap();
        let all = Term { name: "L_g + K_l", objectives: Objectives::default(), gan: true, distill: true };
        let mut grads = g.zeros_like();
        term_value(&all, &g, &d, &x, &target, Some(&mut grads));
        let (checked, skipped) = check_params(
            all.name,
            &g,
            &grads,
            INIT_STEP,
            INIT_TOL,
            |m| term_value(&all, m, &d, &x, &target, None),
            |m| generator_kinks(m, &d, &x, &target),
        );
        report(all.name, seed, checked, skipped);

        let fake = g.forward(&x).unwrap().x_hat;
        let mut grads = d.zeros_like();
        discriminator_objective(&mut d.clone(), &x, &fake, &mut grads).unwrap();
        let (checked, skipped) = check_params(
            "L_d",
            &d,
            &grads,
            INIT_STEP,
            INIT_TOL,
            |m| discriminator_objective(&mut m.clone(), &x, &fake, &mut m.zeros_like()).unwrap(),
            |m| discriminator_kinks(m, &x, &fake),
        );
        report("L_d", seed, checked, skipped);
    }
}
