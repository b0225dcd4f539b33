//! Central finite-difference validation of analytic gradients.
//!
//! Works over any model that exposes its [`ParamStore`]: the driver perturbs
//! one scalar parameter at a time, re-evaluates the loss, and compares the
//! central difference against the analytic gradient. Relative error uses a
//! small absolute floor in the denominator so that near-zero gradients are
//! compared absolutely (the raw ratio would amplify pure rounding noise).

use crate::scalar::Scalar;

use super::params::ParamStore;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_fd: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Floor for the relative-error denominator.
const REL_FLOOR: f64 = 1e-6;

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(REL_FLOOR)
}

/// Checks every trainable parameter of `model`.
///
/// `fill_grads` must zero the gradient buffers, run one forward/backward and
/// leave the analytic gradients in the store; `eval_loss` must re-run the
/// same forward and return the loss; `params` exposes the store. The two
/// closures have to be deterministic (same batch, same everything) or the
/// comparison is meaningless.
pub fn finite_difference_report<S: Scalar, M>(
    model: &mut M,
    mut fill_grads: impl FnMut(&mut M),
    mut eval_loss: impl FnMut(&mut M) -> S,
    params: impl Fn(&mut M) -> &mut ParamStore<S>,
    h: f64,
) -> GradCheckReport {
    fill_grads(model);
    let analytic: Vec<(String, Vec<f64>)> = params(model)
        .iter()
        .filter(|p| p.trainable)
        .map(|p| (p.name.clone(), p.grad.data().iter().map(|g| g.as_f64()).collect()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_fd: 0.0,
        checked: 0,
    };
    let hs = S::of(h);
    for (name, grads) in &analytic {
        let id = params(model).id(name).expect("param exists");
        for (i, &g) in grads.iter().enumerate() {
            let x0 = params(model).value(id).data()[i];
            params(model).value_mut(id).data_mut()[i] = x0 + hs;
            let lp = eval_loss(model).as_f64();
            params(model).value_mut(id).data_mut()[i] = x0 - hs;
            let lm = eval_loss(model).as_f64();
            params(model).value_mut(id).data_mut()[i] = x0;
            let fd = (lp - lm) / (2.0 * h);
            let e = rel_err(g, fd);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.worst_analytic = g;
                report.worst_fd = fd;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Linear;
    use crate::nn::ops;
    use crate::nn::params::ParamStore;

    /// Tiny two-layer MLP with a BCE head, gradients written by hand the
    /// same way the real model does it.
    struct TinyMlp {
        store: ParamStore<f64>,
        l1: Linear,
        l2: Linear,
        input: Vec<f64>,
        target: f64,
    }

    impl TinyMlp {
        fn new() -> Self {
            let mut rng = crate::seeding::stream_rng(99, "tiny-mlp");
            let mut store = ParamStore::new();
            let l1 = Linear::new(&mut store, "l1", 6, 5, &mut rng).unwrap();
            let l2 = Linear::new(&mut store, "l2", 5, 1, &mut rng).unwrap();
            use rand::Rng;
            let input = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            TinyMlp { store, l1, l2, input, target: 1.0 }
        }

        fn forward(&self) -> (f64, Vec<f64>, Vec<f64>) {
            let h_pre = self.l1.forward(&self.store, &self.input).unwrap();
            let h = ops::leaky_relu(&crate::nn::Tensor::from_vec(h_pre.clone()));
            let z = self.l2.forward(&self.store, h.data()).unwrap()[0];
            (z, h_pre, h.data().to_vec())
        }

        fn loss(&self) -> f64 {
            let (z, _, _) = self.forward();
            ops::bce_with_logit(z, self.target, 1.0).0
        }

        fn backward(&mut self) {
            self.store.zero_grad();
            let mut grads = self.store.grad_buffers();
            let (z, h_pre, h) = self.forward();
            let (_, dz) = ops::bce_with_logit(z, self.target, 1.0);
            let gh = self.l2.backward(&self.store, &mut grads, &h, &[dz]);
            let gh_pre = ops::leaky_relu_backward(
                &crate::nn::Tensor::from_vec(h_pre),
                &crate::nn::Tensor::from_vec(gh),
            );
            let _ = self.l1.backward(&self.store, &mut grads, &self.input, gh_pre.data());
            self.store.accumulate_grads_from(&grads);
        }
    }

    #[test]
    fn tiny_mlp_passes_gradient_check() {
        let mut model = TinyMlp::new();
        let report = finite_difference_report(
            &mut model,
            |m| m.backward(),
            |m| m.loss(),
            |m| &mut m.store,
            1e-5,
        );
        assert!(report.checked > 0);
        assert!(
            report.passes(1e-6),
            "max rel err {} at {}[{}]: analytic {} vs fd {}",
            report.max_rel_err,
            report.worst_param,
            report.worst_index,
            report.worst_analytic,
            report.worst_fd
        );
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut model = TinyMlp::new();
        let report = finite_difference_report(
            &mut model,
            |m| {
                m.backward();
                // Sabotage one entry.
                let id = m.store.id("l1.weight").unwrap();
                m.store.grad_mut(id).data_mut()[3] += 0.5;
            },
            |m| m.loss(),
            |m| &mut m.store,
            1e-5,
        );
        assert!(!report.passes(1e-4));
        assert_eq!(report.worst_param, "l1.weight");
        assert_eq!(report.worst_index, 3);
    }
}
