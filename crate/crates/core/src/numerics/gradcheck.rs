use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Var};
use crate::scalar::Scalar;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// max |autodiff − central| / max(1, |central|) over every scalar.
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub scalars_checked: usize,
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `h`, perturbing every scalar of every parameter in `params`.
///
/// `f` builds a scalar (`1 × 1`) output on a graph bound to the store it is
/// given, fetching parameters with [`Graph::param`].
pub fn gradcheck<T, F>(f: F, params: &ParamStore<T>, h: T) -> Result<GradcheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<'_, T>) -> Result<Var>,
{
    if h <= T::zero() {
        return Err(Error::InvalidArgument("gradcheck step must be > 0".into()));
    }
    let analytic = {
        let mut g = Graph::with_params(params);
        let out = f(&mut g)?;
        check_finite(g.value(out).get(0, 0))?;
        g.backward(out)?.for_store(params)
    };

    let eval = |store: &ParamStore<T>| -> Result<T> {
        let mut g = Graph::with_params(store);
        let out = f(&mut g)?;
        let v = g.value(out).get(0, 0);
        check_finite(v)?;
        Ok(v)
    };

    let mut work = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        scalars_checked: 0,
    };
    let two_h = h + h;
    for name in &names {
        let len = params.get(name).map_or(0, |t| t.len());
        let grad = analytic.get(name).expect("gradient for every parameter");
        for i in 0..len {
            let orig = params.get(name).unwrap().data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;

            let central = ((plus - minus) / two_h).as_f64();
            let ad = grad.data()[i].as_f64();
            let rel = (ad - central).abs() / central.abs().max(1.0);
            report.scalars_checked += 1;
            if rel > report.max_relative_error || report.scalars_checked == 1 {
                report.max_relative_error = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

fn check_finite<T: Scalar>(v: T) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradcheck objective is {v}")))
    }
}
