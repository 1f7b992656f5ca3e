//! Central finite-difference gradient checking with a kink guard.
//!
//! A coordinate is compared only if estimates at steps `h` and `h/2` agree;
//! disagreement means a non-differentiable point (ReLU, abs, max) lies
//! within the stencil, and the coordinate is skipped and replaced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::params::{Group, ParamStore, Session};
use crate::tensor::Tensor;

pub mod suite;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates sampled per tensor; `0` checks every coordinate.
    pub coords_per_tensor: usize,
    /// Relative disagreement between the `h` and `h/2` estimates that marks a kink.
    pub kink_threshold: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-4,
            tolerance: 1e-4,
            coords_per_tensor: 6,
            kink_threshold: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst: Option<String>,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// A differentiable scalar function of some tensors.
pub trait Objective {
    fn eval(&self, inputs: &[Tensor], params: &ParamStore) -> f64;
    /// Value plus gradients for every input and every parameter.
    fn grad(
        &self,
        inputs: &[Tensor],
        params: &ParamStore,
    ) -> (f64, Vec<Tensor>, Vec<Option<Tensor>>);
}

/// Scalar objective built from a block forward that returns a tensor; the
/// output is contracted against a fixed random weight.
pub struct BlockObjective<F> {
    pub forward: F,
    pub weight_seed: u64,
}

fn contraction_weight(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

impl<F> BlockObjective<F>
where
    F: Fn(&mut Session, &[Var]) -> Var,
{
    fn run(
        &self,
        inputs: &[Tensor],
        params: &ParamStore,
        backward: bool,
    ) -> (f64, Vec<Tensor>, Vec<Option<Tensor>>) {
        let mut s = Session::new(params, &[Group::Ddon, Group::Ilgfn]);
        let vars: Vec<Var> = inputs.iter().map(|t| s.g.leaf(t.clone(), true)).collect();
        let out = (self.forward)(&mut s, &vars);
        let loss = if s.g.value(out).len() == 1 {
            out
        } else {
            let w =
                s.g.constant(contraction_weight(s.g.shape(out), self.weight_seed));
            let p = s.g.mul(out, w);
            s.g.sum_all(p)
        };
        let value = s.g.value(loss).item();
        if !backward {
            return (value, Vec::new(), Vec::new());
        }
        let mut grads = s.g.backward(loss);
        let gi = vars
            .iter()
            .map(|&v| {
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(s.g.shape(v).to_vec()))
            })
            .collect();
        let gp = s.param_grads(&mut grads);
        (value, gi, gp)
    }
}

impl<F> Objective for BlockObjective<F>
where
    F: Fn(&mut Session, &[Var]) -> Var,
{
    fn eval(&self, inputs: &[Tensor], params: &ParamStore) -> f64 {
        self.run(inputs, params, false).0
    }

    fn grad(
        &self,
        inputs: &[Tensor],
        params: &ParamStore,
    ) -> (f64, Vec<Tensor>, Vec<Option<Tensor>>) {
        self.run(inputs, params, true)
    }
}

/// Shorthand for a parameter-free scalar graph function.
pub fn check_fn(
    name: &str,
    inputs: &[Tensor],
    f: impl Fn(&mut Graph, &[Var]) -> Var,
    opts: &GradcheckOptions,
) -> GradcheckReport {
    let store = ParamStore::new();
    let obj = BlockObjective {
        forward: |s: &mut Session, v: &[Var]| f(&mut s.g, v),
        weight_seed: opts.seed ^ 0x9e37,
    };
    check(name, &obj, inputs, &store, opts)
}

enum Target {
    Input(usize),
    Param(usize),
}

/// Checks gradients for all inputs and every parameter used by the objective.
pub fn check(
    name: &str,
    obj: &impl Objective,
    inputs: &[Tensor],
    params: &ParamStore,
    opts: &GradcheckOptions,
) -> GradcheckReport {
    let (_, gin, gpar) = obj.grad(inputs, params);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradcheckReport {
        name: name.to_string(),
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    let base = obj.eval(inputs, params);
    let mut work_inputs = inputs.to_vec();
    let mut work_params = params.clone();

    let mut targets: Vec<(Target, usize, String)> = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        targets.push((Target::Input(i), t.len(), format!("input{i}")));
    }
    for (i, g) in gpar.iter().enumerate() {
        if g.is_some() {
            let e = &params.entries()[i];
            targets.push((Target::Param(i), e.value.len(), e.name.clone()));
        }
    }

    for (target, len, label) in targets {
        if len == 0 {
            continue;
        }
        let analytic = match target {
            Target::Input(i) => &gin[i],
            Target::Param(i) => gpar[i].as_ref().unwrap(),
        };
        let want = if opts.coords_per_tensor == 0 {
            len
        } else {
            opts.coords_per_tensor.min(len)
        };
        let mut order: Vec<usize> = (0..len).collect();
        if want < len {
            for i in 0..len {
                let j = rng.random_range(i..len);
                order.swap(i, j);
            }
        }
        let mut done = 0;
        for &coord in &order {
            if done == want {
                break;
            }
            let mut eval_at = |delta: f64| -> f64 {
                let v = match target {
                    Target::Input(i) => &mut work_inputs[i].data_mut()[coord],
                    Target::Param(i) => &mut work_params
                        .get_mut(crate::params::ParamId::from_index(i))
                        .data_mut()[coord],
                };
                let orig = *v;
                *v = orig + delta;
                let f = obj.eval(&work_inputs, &work_params);
                let v = match target {
                    Target::Input(i) => &mut work_inputs[i].data_mut()[coord],
                    Target::Param(i) => &mut work_params
                        .get_mut(crate::params::ParamId::from_index(i))
                        .data_mut()[coord],
                };
                *v = orig;
                f
            };
            let h = opts.step;
            let (fp, fm) = (eval_at(h / 2.0), eval_at(-h / 2.0));
            let n1 = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            let n2 = (fp - fm) / h;
            // A kink very close to the base point biases both central estimates
            // equally; the one-sided slopes still disagree by the slope jump.
            let (fwd, bwd) = ((fp - base) / (h / 2.0), (base - fm) / (h / 2.0));
            let scale = n1.abs().max(n2.abs()).max(1e-6);
            if (n1 - n2).abs() > opts.kink_threshold * scale
                || (fwd - bwd).abs() > opts.kink_threshold * scale
            {
                report.skipped_kinks += 1;
                continue;
            }
            // Richardson extrapolation of the two central estimates.
            let numeric = (4.0 * n2 - n1) / 3.0;
            let a = analytic.data()[coord];
            let err = if a.is_finite() && numeric.is_finite() {
                rel_error(a, numeric)
            } else {
                f64::INFINITY
            };
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some(format!(
                        "{label}[{coord}]: analytic {a:.6e}, numeric {numeric:.6e}"
                    ));
                }
            }
            report.checked += 1;
            done += 1;
        }
    }
    report
}
