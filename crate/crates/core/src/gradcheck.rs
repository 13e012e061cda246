//! Central finite-difference checks of analytic gradients.

use crate::error::Result;
use crate::nn::Parameterized;

/// Worst parameter found by [`check_gradient`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub n_params: usize,
    pub n_failed: usize,
    pub worst_name: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// `|fd - a| / max(|fd|, |a|)`, zero when both are below the floor.
    pub worst_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.n_failed == 0
    }
}

pub const STEP: f64 = 1e-5;
/// Absolute slack for entries whose gradient is numerically zero.
pub const ABS_FLOOR: f64 = 1e-8;

/// Compares `analytic` against central differences of `loss` at `params`,
/// perturbing every scalar in turn. An entry passes when
/// `|fd - a| <= rel_tol * max(|fd|, |a|) + ABS_FLOOR`.
pub fn check_gradient<P, F>(params: &P, analytic: &P, rel_tol: f64, loss: F) -> Result<GradCheck>
where
    P: Parameterized + Clone,
    F: Fn(&P) -> Result<f64>,
{
    let names: Vec<(String, usize)> = params.named_arrays().iter().map(|(n, a)| (n.clone(), a.len())).collect();
    let base = params.to_flat();
    let grad = analytic.to_flat();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut report = GradCheck {
        n_params: base.len(),
        n_failed: 0,
        worst_name: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        worst_rel_error: 0.0,
    };
    let mut worst_excess = f64::NEG_INFINITY;
    let mut offset = 0;
    for (name, len) in names {
        for k in 0..len {
            let i = offset + k;
            flat[i] = base[i] + STEP;
            probe.set_flat(&flat);
            let up = loss(&probe)?;
            flat[i] = base[i] - STEP;
            probe.set_flat(&flat);
            let down = loss(&probe)?;
            flat[i] = base[i];
            let fd = (up - down) / (2.0 * STEP);
            let a = grad[i];
            let scale = fd.abs().max(a.abs());
            let diff = (fd - a).abs();
            let excess = diff - (rel_tol * scale + ABS_FLOOR);
            if excess > 0.0 {
                report.n_failed += 1;
            }
            if excess > worst_excess {
                worst_excess = excess;
                report.worst_name = name.clone();
                report.worst_index = k;
                report.worst_analytic = a;
                report.worst_numeric = fd;
                report.worst_rel_error = if scale > ABS_FLOOR { diff / scale } else { 0.0 };
            }
        }
        offset += len;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Head;
    use ndarray::array;

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let head = Head {
            weight: array![[0.3, -0.5]],
            bias: array![0.1],
        };
        let r = array![1.5, 2.0];
        let loss = |h: &Head| Ok(h.logits(&r)[0].powi(2));
        let z = head.logits(&r)[0];
        let mut g = Head::zeros(1, 2);
        head.backward(&r, &array![2.0 * z], &mut g);
        assert!(check_gradient(&head, &g, 1e-6, loss).unwrap().passed());
        g.bias[0] += 0.1;
        let bad = check_gradient(&head, &g, 1e-6, loss).unwrap();
        assert_eq!(bad.n_failed, 1);
        assert_eq!(bad.worst_name, "bias");
    }
}
