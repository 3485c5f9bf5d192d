//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use super::tape::{Tape, Var};
use super::{ParamSet, Scalar};
use crate::error::{Error, Result};

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub per_parameter: BTreeMap<String, f64>,
}

impl GradCheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_error < threshold
    }
}

/// Compare analytic gradients of a scalar-valued builder against central
/// finite differences `(f(p+eps) - f(p-eps)) / (2 eps)` for every element
/// of every parameter in the set.
///
/// The builder must construct the same computation on each call; only the
/// parameter values vary between evaluations.
pub fn grad_check<F, B>(
    op_name: &str,
    params: &ParamSet<F>,
    eps: f64,
    builder: B,
) -> Result<GradCheckReport>
where
    F: Scalar,
    B: Fn(&mut Tape<F>, &ParamSet<F>) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidParameter {
            name: "eps",
            reason: format!("must lie in [1e-7, 1e-3], got {eps}"),
        });
    }

    let eval = |ps: &ParamSet<F>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = builder(&mut tape, ps)?;
        let v = tape.item(out)?;
        let v = v
            .to_f64()
            .ok_or_else(|| Error::NonFinite {
                what: format!("grad_check loss for `{op_name}`"),
            })?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: format!("grad_check loss for `{op_name}`"),
            });
        }
        Ok(v)
    };

    // Analytic pass.
    let mut work = params.clone();
    let analytic: BTreeMap<String, Vec<f64>> = {
        let mut tape = Tape::new();
        let out = builder(&mut tape, &work)?;
        tape.backward_params(out, &mut work)?;
        work.iter()
            .map(|(path, t)| {
                let g = t
                    .grad()
                    .map(|g| g.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
                    .unwrap_or_else(|| vec![0.0; t.numel()]);
                (path.clone(), g)
            })
            .collect()
    };

    let mut per_parameter = BTreeMap::new();
    let mut max_rel = 0.0f64;
    let paths: Vec<String> = work.paths().cloned().collect();
    for path in paths {
        let base: Vec<F> = work.get(&path)?.data().to_vec();
        let mut param_max = 0.0f64;
        for i in 0..base.len() {
            let orig = base[i];
            let step = F::from_f64_c(eps);

            let mut plus = base.clone();
            plus[i] = orig + step;
            work.set_data(&path, plus).map_err(|_| Error::NonFinite {
                what: format!("perturbed parameter `{path}`[{i}]"),
            })?;
            let f_plus = eval(&work).map_err(|e| wrap_param(e, &path))?;

            let mut minus = base.clone();
            minus[i] = orig - step;
            work.set_data(&path, minus).map_err(|_| Error::NonFinite {
                what: format!("perturbed parameter `{path}`[{i}]"),
            })?;
            let f_minus = eval(&work).map_err(|e| wrap_param(e, &path))?;

            work.set_data(&path, base.clone())?;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[&path][i];
            let rel = rel_error(a, numeric);
            param_max = param_max.max(rel);
        }
        max_rel = max_rel.max(param_max);
        per_parameter.insert(path, param_max);
    }

    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_error: max_rel,
        per_parameter,
    })
}

fn wrap_param(e: Error, path: &str) -> Error {
    match e {
        Error::NonFinite { what } => Error::NonFinite {
            what: format!("{what} (while perturbing `{path}`)"),
        },
        other => other,
    }
}

/// `|a - n| / max(1, |a|, |n|)`: relative for large gradients, absolute
/// near zero so finite-difference noise on flat directions does not
/// dominate.
fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_layer_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new(4);
        ps.get_or_create("w", &[4, 2], 4).unwrap();
        ps.get_or_zeros("b", &[2]).unwrap();
        let xdata: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::matrix(3, 4, xdata).unwrap();

        let report = grad_check("linear", &ps, 1e-5, |tape, ps| {
            let xv = tape.constant(&x)?;
            let w = tape.param(ps, "w")?;
            let b = tape.param(ps, "b")?;
            let y = tape.linear(xv, w, Some(b))?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "rel {}", report.max_rel_error);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut ps = ParamSet::new(4);
        ps.get_or_create("w", &[2, 2], 2).unwrap();
        let report = grad_check("constant", &ps, 1e-5, |tape, _ps| {
            tape.constant_scalar(2.5)
        })
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let ps = ParamSet::<f64>::new(0);
        let err = grad_check("x", &ps, 1e-2, |tape, _| tape.constant_scalar(0.0)).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }

    #[test]
    fn gru_single_step_grads_match_fd() {
        use crate::numerics::GruLayer;
        let layer = GruLayer::new("g", 3, 4).unwrap();
        let mut ps = ParamSet::new(8);
        layer.init(&mut ps).unwrap();
        let x = Tensor::vector(vec![0.3, -0.8, 0.5]).unwrap();
        let report = grad_check("gru_step", &ps, 1e-5, |tape, ps| {
            let h0 = tape.constant(&Tensor::zeros(vec![4]).unwrap())?;
            let xv = tape.constant(&x)?;
            let h = layer.step(tape, ps, h0, xv)?;
            let sq = tape.mul(h, h)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "rel {}", report.max_rel_error);
    }
}
