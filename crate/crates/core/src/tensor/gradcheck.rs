use super::{Gradients, ParamStore, Result, Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to rounding are judged on an absolute scale.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub passed: bool,
}

fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn loss_of<F>(forward: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, params)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(TensorError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Central differences for every element of every parameter.
pub fn numeric_gradients<F>(forward: &F, params: &ParamStore, step: f64) -> Result<Gradients>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut work = params.clone();
    let mut out = Gradients::default();
    for id in params.ids() {
        let n = params.get(id).numel();
        let mut g = vec![0.0; n];
        for (k, slot) in g.iter_mut().enumerate() {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + step;
            let plus = loss_of(forward, &work)?;
            work.get_mut(id).data_mut()[k] = orig - step;
            let minus = loss_of(forward, &work)?;
            work.get_mut(id).data_mut()[k] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        out.insert(id, Tensor::new(params.get(id).shape().to_vec(), g)?);
    }
    Ok(out)
}

/// Elementwise comparison of two gradient sets over every parameter.
pub fn compare_gradients(
    params: &ParamStore,
    analytic: &Gradients,
    numeric: &Gradients,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut worst_err = 0.0;
    let mut worst = None;
    let mut checked = 0;
    for id in params.ids() {
        let a = analytic.get(id)?;
        let n = numeric.get(id)?;
        if a.shape() != n.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "compare_gradients",
                left: a.shape().to_vec(),
                right: n.shape().to_vec(),
            });
        }
        for (k, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(x, y, config.floor);
            checked += 1;
            if e > worst_err || e.is_nan() {
                worst_err = e;
                worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst_err,
        worst,
        checked,
        passed: worst_err < config.tolerance,
    })
}

/// Compares tape gradients of `forward` against central differences.
///
/// `forward` must build its loss on the supplied tape from the supplied
/// parameters; it is evaluated twice at the base point first and must agree
/// bit for bit.
pub fn finite_difference_check<F>(
    forward: F,
    params: &ParamStore,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if config.tolerance <= 0.0 || config.step <= 0.0 {
        return Err(TensorError::InvalidArgument(
            "gradient check step and tolerance must be positive".into(),
        ));
    }
    let first = loss_of(&forward, params)?;
    let second = loss_of(&forward, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }
    let mut tape = Tape::new();
    let loss = forward(&mut tape, params)?;
    let analytic = tape.backward(loss)?;
    // Parameters never touched by the forward pass have zero gradient.
    let mut full = Gradients::default();
    for id in params.ids() {
        let g = match analytic.get(id) {
            Ok(g) => g.clone(),
            Err(_) => Tensor::zeros(params.get(id).shape()),
        };
        full.insert(id, g);
    }
    let numeric = numeric_gradients(&forward, params, config.step)?;
    compare_gradients(params, &full, &numeric, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamId;
    use std::cell::Cell;

    fn linear_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "w",
            Tensor::matrix(2, 2, vec![0.3, -1.2, 0.7, 0.4]).unwrap(),
        );
        s
    }

    fn linear(tape: &mut Tape, p: &ParamStore) -> Result<Var> {
        let x = tape.constant(Tensor::matrix(1, 2, vec![1.5, -0.5])?);
        let w = tape.param(p, ParamId(0));
        let y = tape.matmul(x, w)?;
        tape.sum(y)
    }

    #[test]
    fn linear_map_is_exact() {
        let report = finite_difference_check(
            linear,
            &linear_store(),
            &GradCheckConfig {
                tolerance: 1e-8,
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, 4);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let params = linear_store();
        let mut tape = Tape::new();
        let loss = linear(&mut tape, &params).unwrap();
        let mut analytic = tape.backward(loss).unwrap();
        analytic.get_mut(ParamId(0)).unwrap().data_mut()[1] += 0.1;
        let numeric = numeric_gradients(&linear, &params, 1e-5).unwrap();
        let report =
            compare_gradients(&params, &analytic, &numeric, &GradCheckConfig::default()).unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst, Some(("w".to_string(), 1)));
    }

    #[test]
    fn non_deterministic_forward_is_rejected() {
        let calls = Cell::new(0u32);
        let params = linear_store();
        let result = finite_difference_check(
            |tape: &mut Tape, p: &ParamStore| {
                calls.set(calls.get() + 1);
                let w = tape.param(p, ParamId(0));
                let s = tape.sum(w)?;
                tape.scale(s, 1.0 + calls.get() as f64 * 1e-3)
            },
            &params,
            &GradCheckConfig::default(),
        );
        assert!(matches!(result, Err(TensorError::NonDeterministic { .. })));
    }
}
