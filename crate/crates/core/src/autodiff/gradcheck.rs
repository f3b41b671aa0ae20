use crate::error::{Error, Result};

use super::array::Array;
use super::tape::{Tape, Tensor};

/// Outcome of comparing a tape gradient against central finite differences.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Check the tape gradient of a scalar-valued function at `x` against
/// (f(x+h e_i) - f(x-h e_i)) / 2h on the given coordinates.
pub fn gradcheck_coords<F>(f: F, x: &Array, h: f64, coords: &[usize]) -> Result<GradcheckReport>
where
    F: Fn(&Tape, &Tensor) -> Tensor,
{
    assert!(h > 0.0, "gradcheck step h must be positive");
    let tape = Tape::new();
    let xt = tape.leaf(x.clone());
    let y = f(&tape, &xt);
    assert_eq!(y.numel(), 1, "gradcheck requires a scalar-valued function");
    if !y.item().is_finite() {
        return Err(Error::Numerical(
            "gradcheck: non-finite function value at base point".into(),
        ));
    }
    tape.backward(&y);
    let analytic = xt.grad().expect("backward populates gradients");

    let eval = |arr: &Array| -> f64 {
        let t = Tape::no_grad();
        let xt = t.leaf(arr.clone());
        f(&t, &xt).item()
    };

    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };
    let mut probe = x.clone();
    for &i in coords {
        assert!(i < x.numel(), "gradcheck coordinate {i} out of range");
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let fp = eval(&probe);
        probe.data[i] = orig - h;
        let fm = eval(&probe);
        probe.data[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numerical(format!(
                "gradcheck: non-finite evaluation at coordinate {i}"
            )));
        }
        let fd = (fp - fm) / (2.0 * h);
        let err = rel_err(analytic[i], fd);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_coord = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = fd;
        }
    }
    Ok(report)
}

/// Check every coordinate of `x`.
pub fn gradcheck<F>(f: F, x: &Array, h: f64) -> Result<GradcheckReport>
where
    F: Fn(&Tape, &Tensor) -> Tensor,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    gradcheck_coords(f, x, h, &coords)
}
