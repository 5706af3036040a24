//! Gradient attacks in the canonical `[0, 1]` pixel space: FGSM, PGD and
//! DeepFool.

mod file;


use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::Cell;
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, Network};
use crate::parallel;
use crate::tensor::Tensor;

pub use file::{attack_records, quantize_within_budget, read_adversarial_set, write_adversarial_set, AdversarialMeta, AdversarialSet};

/// Budgets used for mixed-ε datasets.
pub const EPSILON_GRID: [f32; 3] = [0.02, 0.06, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Pgd,
    DeepFool,
}

impl AttackMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Pgd => "pgd",
            AttackMethod::DeepFool => "deepfool",
        }
    }
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    pub method: AttackMethod,
    /// L∞ budget; ignored by DeepFool.
    pub epsilon: f32,
    /// PGD iterations, or the DeepFool iteration cap.
    pub steps: usize,
    pub step_size: f32,
    pub random_start: bool,
    pub overshoot: f32,
    pub seed: u64,
}

impl AttackParams {
    pub fn fgsm(epsilon: f32) -> Self {
        AttackParams {
            method: AttackMethod::Fgsm,
            epsilon,
            steps: 1,
            step_size: epsilon,
            random_start: false,
            overshoot: 0.0,
            seed: 0,
        }
    }

    /// Ten steps of `ε/4` from a random start.
    pub fn pgd(epsilon: f32, seed: u64) -> Self {
        AttackParams {
            method: AttackMethod::Pgd,
            epsilon,
            steps: 10,
            step_size: epsilon / 4.0,
            random_start: true,
            overshoot: 0.0,
            seed,
        }
    }

    pub fn deepfool() -> Self {
        AttackParams {
            method: AttackMethod::DeepFool,
            epsilon: 0.0,
            steps: 50,
            step_size: 0.0,
            random_start: false,
            overshoot: 0.02,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(Error::Config("attack steps must be >= 1".into()));
        }
        if self.method == AttackMethod::Pgd && !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("pgd step_size must be > 0, got {}", self.step_size)));
        }
        if !(self.overshoot >= 0.0 && self.overshoot.is_finite()) {
            return Err(Error::Config(format!("overshoot must be >= 0, got {}", self.overshoot)));
        }
        Ok(())
    }
}

/// An attack method with a list of budgets, as written on the command line:
/// `fgsm:eps=0.02,0.06,0.1`, `pgd:eps=0.1,steps=20,step_size=0.01`,
/// `deepfool:max_iter=50,overshoot=0.02`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub method: AttackMethod,
    pub epsilons: Vec<f32>,
    pub steps: usize,
    /// Absolute PGD step; `None` means a quarter of each budget.
    pub step_size: Option<f32>,
    pub random_start: bool,
    pub overshoot: f32,
    pub seed: u64,
}

impl AttackSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let cell = Cell::parse(text)?;
        match cell.name.as_str() {
            "fgsm" => {
                cell.expect_keys(&["eps"])?;
                Ok(AttackSpec {
                    method: AttackMethod::Fgsm,
                    epsilons: cell.get_list("eps", &EPSILON_GRID)?,
                    steps: 1,
                    step_size: None,
                    random_start: false,
                    overshoot: 0.0,
                    seed: 0,
                })
            }
            "pgd" => {
                cell.expect_keys(&["eps", "steps", "step_size", "random_start", "seed"])?;
                Ok(AttackSpec {
                    method: AttackMethod::Pgd,
                    epsilons: cell.get_list("eps", &EPSILON_GRID)?,
                    steps: cell.get("steps", 10)?,
                    step_size: cell.values("step_size").map(|_| cell.get("step_size", 0.0)).transpose()?,
                    random_start: cell.get("random_start", true)?,
                    overshoot: 0.0,
                    seed: cell.get("seed", 0)?,
                })
            }
            "deepfool" => {
                cell.expect_keys(&["max_iter", "overshoot"])?;
                Ok(AttackSpec {
                    method: AttackMethod::DeepFool,
                    epsilons: vec![0.0],
                    steps: cell.get("max_iter", 50)?,
                    step_size: None,
                    random_start: false,
                    overshoot: cell.get("overshoot", 0.02)?,
                    seed: 0,
                })
            }
            other => Err(Error::Config(format!("unknown attack {other:?}"))),
        }
    }

    pub fn params(&self, epsilon: f32) -> AttackParams {
        AttackParams {
            method: self.method,
            epsilon,
            steps: self.steps,
            step_size: match self.method {
                AttackMethod::Fgsm => epsilon,
                _ => self.step_size.unwrap_or(epsilon / 4.0),
            },
            random_start: self.random_start,
            overshoot: self.overshoot,
            seed: self.seed,
        }
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let eps = || self.epsilons.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",");
        match self.method {
            AttackMethod::Fgsm => write!(f, "fgsm:eps={}", eps()),
            AttackMethod::Pgd => {
                write!(f, "pgd:eps={},steps={}", eps(), self.steps)?;
                if let Some(s) = self.step_size {
                    write!(f, ",step_size={s}")?;
                }
                write!(f, ",random_start={},seed={}", self.random_start, self.seed)
            }
            AttackMethod::DeepFool => write!(f, "deepfool:max_iter={},overshoot={}", self.steps, self.overshoot),
        }
    }
}

impl std::str::FromStr for AttackSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackSpec::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    /// `C×H×W`, values in `[0, 1]`.
    pub adversarial: Tensor,
    pub label: usize,
    pub original_class: usize,
    pub adversarial_class: usize,
    /// The adversarial image is misclassified.
    pub success: bool,
    pub linf_distance: f32,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub method: AttackMethod,
    pub epsilon: f32,
    pub images: usize,
    /// Fraction of originals classified correctly.
    pub clean_accuracy: f64,
    /// Fraction still classified correctly after the attack.
    pub adversarial_accuracy: f64,
    pub successes: usize,
    pub mean_linf: f64,
}

impl AttackSummary {
    pub fn from_results(params: &AttackParams, results: &[AttackResult]) -> Self {
        let n = results.len().max(1) as f64;
        AttackSummary {
            method: params.method,
            epsilon: params.epsilon,
            images: results.len(),
            clean_accuracy: results.iter().filter(|r| r.original_class == r.label).count() as f64 / n,
            adversarial_accuracy: results.iter().filter(|r| r.adversarial_class == r.label).count() as f64 / n,
            successes: results.iter().filter(|r| r.success).count(),
            mean_linf: results.iter().map(|r| r.linf_distance as f64).sum::<f64>() / n,
        }
    }
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn linf(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn check_unit_range(images: &Tensor) -> Result<()> {
    if images.data().iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("attack input must lie in [0, 1]".into()))
    }
}

fn as_batch(net: &Network, image: &Tensor) -> Result<Tensor> {
    if image.shape() != net.input_shape() {
        return Err(Error::Shape(format!(
            "expected a single {:?} image, got {:?}",
            net.input_shape(),
            image.shape()
        )));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    Tensor::new(shape, image.data().to_vec())
}

/// Signed-gradient ascent on a whole `N×C×H×W` batch: `steps` moves of
/// `step_size`, each followed by projection onto the ε-ball around the
/// original and onto `[0, 1]`. `start` replaces the original as the first
/// iterate.
fn signed_ascent(
    net: &Network,
    originals: &Tensor,
    labels: &[usize],
    start: Tensor,
    epsilon: f32,
    step_size: f32,
    steps: usize,
) -> Result<Tensor> {
    let mut x = start;
    for _ in 0..steps {
        let grad = net.input_gradient(&x, labels)?;
        for ((v, &g), &o) in x.data_mut().iter_mut().zip(grad.data()).zip(originals.data()) {
            let moved = *v + step_size * sign(g);
            *v = moved.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
        }
    }
    Ok(x)
}

/// Uniform noise in `[-ε, ε]` around each image; image `first + i` of the
/// batch draws from stream `first + i` so results do not depend on how a
/// dataset is chunked.
fn random_start(originals: &Tensor, epsilon: f32, seed: u64, first: u64) -> Tensor {
    let mut x = originals.clone();
    let per_image = originals.item_shape().iter().product::<usize>().max(1);
    for (i, item) in x.data_mut().chunks_exact_mut(per_image).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(first + i as u64);
        for v in item {
            if epsilon > 0.0 {
                *v = (*v + rng.gen_range(-epsilon..=epsilon)).clamp(0.0, 1.0);
            }
        }
    }
    x
}

fn results_from(
    net: &Network,
    originals: &Tensor,
    labels: &[usize],
    adversarial: Tensor,
    iterations: usize,
) -> Result<Vec<AttackResult>> {
    let before = net.predict(originals)?;
    let after = net.predict(&adversarial)?;
    Ok((0..labels.len())
        .map(|i| AttackResult {
            adversarial: Tensor::new(originals.item_shape().to_vec(), adversarial.item(i).to_vec())
                .expect("item shape"),
            label: labels[i],
            original_class: before[i],
            adversarial_class: after[i],
            success: after[i] != labels[i],
            linf_distance: linf(adversarial.item(i), originals.item(i)),
            iterations,
        })
        .collect())
}

fn gradient_attack_batch(
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    params: &AttackParams,
    first: u64,
) -> Result<Vec<AttackResult>> {
    params.validate()?;
    check_unit_range(batch)?;
    let (start, step, steps) = match params.method {
        AttackMethod::Fgsm => (batch.clone(), params.epsilon, 1),
        AttackMethod::Pgd => {
            let start = if params.random_start {
                random_start(batch, params.epsilon, params.seed, first)
            } else {
                batch.clone()
            };
            (start, params.step_size, params.steps)
        }
        AttackMethod::DeepFool => unreachable!("deepfool is attacked image by image"),
    };
    let adv = signed_ascent(net, batch, labels, start, params.epsilon, step, steps)?;
    results_from(net, batch, labels, adv, steps)
}

/// One signed-gradient step of size ε on the cross-entropy loss of `label`.
pub fn fgsm(net: &Network, image: &Tensor, label: usize, epsilon: f32) -> Result<AttackResult> {
    let batch = as_batch(net, image)?;
    let mut r = gradient_attack_batch(net, &batch, &[label], &AttackParams::fgsm(epsilon), 0)?;
    Ok(r.pop().expect("one result"))
}

/// Projected gradient descent on the loss, from a seeded random start in
/// the ε-ball when `random_start` is set.
#[allow(clippy::too_many_arguments)]
pub fn pgd(
    net: &Network,
    image: &Tensor,
    label: usize,
    epsilon: f32,
    step_size: f32,
    steps: usize,
    random_start: bool,
    seed: u64,
) -> Result<AttackResult> {
    let params = AttackParams {
        method: AttackMethod::Pgd,
        epsilon,
        steps,
        step_size,
        random_start,
        overshoot: 0.0,
        seed,
    };
    let batch = as_batch(net, image)?;
    let mut r = gradient_attack_batch(net, &batch, &[label], &params, 0)?;
    Ok(r.pop().expect("one result"))
}

/// Multi-class DeepFool. Each iteration linearises every competing logit
/// around the current point and moves towards the closest linearised
/// boundary; the accumulated step is scaled by `1 + overshoot`.
pub fn deepfool(net: &Network, image: &Tensor, label: usize, max_iter: usize, overshoot: f32) -> Result<AttackResult> {
    let batch = as_batch(net, image)?;
    check_unit_range(&batch)?;
    let classes = net.class_count();
    if label >= classes {
        return Err(Error::InvalidArgument(format!("label {label} out of range for {classes} classes")));
    }
    let original_class = net.predict(&batch)?[0];
    let x0 = image.data();
    let mut x = image.clone();
    let mut total = vec![0.0f64; x0.len()];
    let mut current = original_class;
    let mut iterations = 0;
    while current == label && iterations < max_iter {
        let (logits, grads) = net.logit_gradients(&x)?;
        let gc = grads[label].data();
        let mut best: Option<(f64, usize)> = None;
        for (l, g) in grads.iter().enumerate() {
            if l == label {
                continue;
            }
            let norm2: f64 = g.data().iter().zip(gc).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
            let gap = (logits[l] - logits[label]) as f64;
            let dist = gap.abs() / norm2.sqrt().max(1e-12);
            if best.is_none_or(|(d, _)| dist < d) {
                best = Some((dist, l));
            }
        }
        let (_, l) = best.expect("at least two classes");
        let gl = grads[l].data();
        let norm2: f64 = gl.iter().zip(gc).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().max(1e-24);
        let scale = (((logits[l] - logits[label]) as f64).abs() + 1e-4) / norm2;
        for ((t, a), b) in total.iter_mut().zip(gl).zip(gc) {
            *t += scale * (a - b) as f64;
        }
        for ((v, &o), &t) in x.data_mut().iter_mut().zip(x0).zip(&total) {
            *v = (o as f64 + (1.0 + overshoot as f64) * t).clamp(0.0, 1.0) as f32;
        }
        iterations += 1;
        current = argmax_rows(&net.forward(&as_batch(net, &x)?, &[])?.logits.data()[..classes], classes)[0];
    }
    Ok(AttackResult {
        linf_distance: linf(x.data(), x0),
        adversarial: x,
        label,
        original_class,
        adversarial_class: current,
        success: current != label,
        iterations,
    })
}

/// Images handled per gradient call in [`attack_batch`].
const ATTACK_CHUNK: usize = 64;

/// Attacks every image of an `N×C×H×W` batch.
pub fn attack_batch(
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    params: &AttackParams,
    workers: usize,
) -> Result<(Vec<AttackResult>, AttackSummary)> {
    params.validate()?;
    let n = batch.batch_len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} images", labels.len())));
    }
    let results = match params.method {
        AttackMethod::DeepFool => {
            let indices: Vec<usize> = (0..n).collect();
            parallel::map(&indices, workers, |_, &i| {
                let image = Tensor::new(batch.item_shape().to_vec(), batch.item(i).to_vec())?;
                deepfool(net, &image, labels[i], params.steps, params.overshoot)
            })?
        }
        _ => {
            let starts: Vec<usize> = (0..n).step_by(ATTACK_CHUNK).collect();
            let parts = parallel::map(&starts, workers, |_, &s| {
                let e = (s + ATTACK_CHUNK).min(n);
                let items: Vec<&[f32]> = (s..e).map(|i| batch.item(i)).collect();
                let chunk = Tensor::stack(&items, batch.item_shape())?;
                gradient_attack_batch(net, &chunk, &labels[s..e], params, s as u64)
            })?;
            parts.into_iter().flatten().collect()
        }
    };
    let summary = AttackSummary::from_results(params, &results);
    Ok((results, summary))
}

/// Budget for each of `count` items when a dataset is split into equal
/// consecutive parts, one per grid entry (the first parts take the
/// remainder).
pub fn split_epsilons(count: usize, grid: &[f32]) -> Result<Vec<f32>> {
    if grid.is_empty() {
        return Err(Error::Config("empty epsilon grid".into()));
    }
    let parts = grid.len();
    let (base, extra) = (count / parts, count % parts);
    let mut out = Vec::with_capacity(count);
    for (j, &eps) in grid.iter().enumerate() {
        let size = base + usize::from(j < extra);
        out.extend(std::iter::repeat_n(eps, size));
    }
    Ok(out)
}
