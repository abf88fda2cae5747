//! ℓ∞ gradient-sign attacks on the normalized model input.

use ndarray::{Array3, Zip};
use rand::Rng;

use crate::perception::{valid_range, ImageTensor, LaneNet, Objective, Scalar};
use crate::Result;

fn sign<A: Scalar>(v: A) -> A {
    if v > A::zero() {
        A::one()
    } else if v < A::zero() {
        -A::one()
    } else {
        A::zero()
    }
}

/// Clamps `adv` to the representable range without pushing any value
/// further from `base` than it already was.
fn clamp_valid_around<A: Scalar>(adv: &mut Array3<A>, base: &Array3<A>) {
    for (c, (mut a, b)) in adv.outer_iter_mut().zip(base.outer_iter()).enumerate() {
        let (lo, hi) = valid_range(c);
        let (lo, hi) = (A::of(lo), A::of(hi));
        Zip::from(&mut a).and(&b).for_each(|a, &b| {
            *a = a.max(lo.min(b)).min(hi.max(b));
        });
    }
}

/// Projects `adv` onto the ε-ball around `base`, then clamps to the valid
/// range.
fn project<A: Scalar>(adv: &mut Array3<A>, base: &Array3<A>, eps: A) {
    Zip::from(&mut *adv).and(base).for_each(|a, &b| {
        *a = a.max(b - eps).min(b + eps);
    });
    clamp_valid_around(adv, base);
}

/// adv = input ± ε·sign(grad), clamped; `+` for untargeted (ascend the loss),
/// `-` for targeted (descend toward the target).
pub fn fgsm_perturb<A: Scalar>(input: &ImageTensor<A>, grad: &Array3<A>, epsilon: f64, targeted: bool) -> ImageTensor<A> {
    let eps = A::of(if targeted { -epsilon } else { epsilon });
    let base = input.data();
    let mut adv = base.clone();
    Zip::from(&mut adv).and(grad).for_each(|a, &g| *a = *a + eps * sign(g));
    project(&mut adv, base, A::of(epsilon));
    ImageTensor::from_array(adv).expect("shape preserved")
}

/// Gradient used for an untargeted step. At the clean input the residual
/// against the clean-prediction anchor is zero and so is the gradient; it
/// is then taken at a seeded probe point inside the ball, which amounts to
/// one power-iteration step toward the direction of fastest loss growth.
fn untargeted_grad<A: Scalar, R: Rng>(
    model: &LaneNet<A>,
    x: &ImageTensor<A>,
    objective: &Objective,
    probe_radius: f64,
    known_raw: Option<[f64; 2]>,
    rng: &mut R,
) -> Result<Array3<A>> {
    let (ax, ay) = objective.anchor();
    let at_anchor = |raw: [f64; 2]| raw[0] == ax && raw[1] == ay;
    // a known clean output equal to the anchor means the gradient is zero
    if !known_raw.is_some_and(at_anchor) || probe_radius <= 0.0 {
        let (g, raw) = model.grad_input(x, objective)?;
        if !at_anchor(raw) || probe_radius <= 0.0 {
            return Ok(g);
        }
    }
    let base = x.data();
    let mut probe = base.mapv(|v| v + A::of(rng.random_range(-probe_radius..=probe_radius)));
    clamp_valid_around(&mut probe, base);
    let probe = ImageTensor::from_array(probe).expect("shape preserved");
    Ok(model.grad_input(&probe, objective)?.0)
}

/// One-shot FGSM against `model`: computes the gradient for `objective`
/// and takes the sign step. `clean_raw` is the model's raw output on
/// `input` when the caller already has it.
pub fn fgsm_attack<A: Scalar, R: Rng>(
    model: &LaneNet<A>,
    input: &ImageTensor<A>,
    objective: &Objective,
    epsilon: f64,
    clean_raw: Option<[f64; 2]>,
    rng: &mut R,
) -> Result<ImageTensor<A>> {
    let targeted = matches!(objective, Objective::Targeted { .. });
    let grad = if targeted {
        model.grad_input(input, objective)?.0
    } else {
        untargeted_grad(model, input, objective, epsilon / 10.0, clean_raw, rng)?
    };
    Ok(fgsm_perturb(input, &grad, epsilon, targeted))
}

#[derive(Debug, Clone)]
pub struct PgdOutcome<A> {
    pub adv: ImageTensor<A>,
    pub iterations: u32,
    /// A gradient or activation went non-finite; `adv` is the clean input.
    pub convergence_failure: bool,
}

/// Projected gradient descent: optional uniform random start in the ball,
/// then `num_iter` sign steps of size `alpha`, each followed by projection
/// onto the ε-ball and the valid range. `on_iterate` sees every iterate,
/// including the random start.
#[allow(clippy::too_many_arguments)]
pub fn pgd_perturb<A: Scalar, R: Rng>(
    model: &LaneNet<A>,
    input: &ImageTensor<A>,
    objective: &Objective,
    epsilon: f64,
    alpha: f64,
    num_iter: u32,
    random_start: bool,
    clean_raw: Option<[f64; 2]>,
    rng: &mut R,
    mut on_iterate: impl FnMut(u32, &ImageTensor<A>),
) -> PgdOutcome<A> {
    let targeted = matches!(objective, Objective::Targeted { .. });
    let base = input.data();
    let eps = A::of(epsilon);
    let step = A::of(if targeted { -alpha } else { alpha });
    let mut adv = base.clone();
    if random_start && epsilon > 0.0 {
        adv.mapv_inplace(|v| v + A::of(rng.random_range(-epsilon..=epsilon)));
        project(&mut adv, base, eps);
    }
    let mut x = ImageTensor::from_array(adv).expect("shape preserved");
    on_iterate(0, &x);
    let failed = |iterations| PgdOutcome {
        adv: input.clone(),
        iterations,
        convergence_failure: true,
    };
    for it in 1..=num_iter {
        let grad = if targeted {
            model.grad_input(&x, objective).map(|(g, _)| g)
        } else {
            let known = if it == 1 && !random_start { clean_raw } else { None };
            untargeted_grad(model, &x, objective, (epsilon / 10.0).min(alpha), known, rng)
        };
        let grad = match grad {
            Ok(g) => g,
            Err(_) => return failed(it),
        };
        let mut next = x.into_data();
        Zip::from(&mut next).and(&grad).for_each(|a, &g| *a = *a + step * sign(g));
        project(&mut next, base, eps);
        x = ImageTensor::from_array(next).expect("shape preserved");
        on_iterate(it, &x);
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return failed(num_iter);
    }
    PgdOutcome {
        adv: x,
        iterations: num_iter,
        convergence_failure: false,
    }
}

/// Re-applies a stored perturbation to a new clean input (off-frames of a
/// periodic attack), keeping the result inside the ball and valid range.
pub fn apply_delta<A: Scalar>(input: &ImageTensor<A>, delta: &Array3<A>, epsilon: f64) -> ImageTensor<A> {
    let base = input.data();
    let mut adv = base + delta;
    project(&mut adv, base, A::of(epsilon));
    ImageTensor::from_array(adv).expect("shape preserved")
}
