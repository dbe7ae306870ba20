use super::{DiffError, Tape, Tensor, Var};

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` builds a scalar loss on a fresh tape from the bound parameters. The
/// result is `max |analytic − numeric| / max(1, |numeric|)` over every entry
/// of every parameter; any non-finite quantity yields `f64::INFINITY`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let params: Vec<Tensor> = params.iter().map(|p| p.detached().trainable()).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = match f(&mut tape, &vars) {
        Ok(l) => l,
        Err(_) => return f64::INFINITY,
    };
    let grads = match tape.backward(loss) {
        Ok(g) => g,
        Err(_) => return f64::INFINITY,
    };

    let eval = |ps: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p)).collect();
        match f(&mut tape, &vars) {
            Ok(l) => tape.value(l).item().unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        }
    };

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(Tensor::into_data)
            .unwrap_or_else(|| vec![0.0; params[pi].numel()]);
        for j in 0..params[pi].numel() {
            let orig = params[pi].data()[j];
            probe[pi].data_mut()[j] = orig + h;
            let up = eval(&probe);
            probe[pi].data_mut()[j] = orig - h;
            let down = eval(&probe);
            probe[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic[j] - numeric).abs() / numeric.abs().max(1.0);
            if !err.is_finite() {
                return f64::INFINITY;
            }
            worst = worst.max(err);
        }
    }
    worst
}
