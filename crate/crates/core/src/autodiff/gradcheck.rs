use super::matrix::DenseMatrix;
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat coordinate (across all leaves, in order) with the worst error.
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
    /// Coordinates whose ±h probes landed on different sides of a relu,
    /// smooth-relu or norm-guard kink; differences are meaningless there.
    pub skipped_kinks: usize,
}

/// `|a - n| / max(1, |a|, |n|)`: relative for large gradients, absolute for
/// small ones where finite differences are dominated by roundoff.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn evaluate<F>(f: &F, leaves: &[DenseMatrix]) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids = leaves
        .iter()
        .map(|l| tape.param(l.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &ids)?;
    let shape = tape.shape(out);
    if shape != (1, 1) {
        return Err(Error::Shape {
            op: "grad_check",
            lhs: shape,
            rhs: (1, 1),
        });
    }
    Ok((tape.value(out).item(), tape.kink_signature()))
}

/// Checks `backward` against `(f(x+h) - f(x-h)) / 2h` for every coordinate
/// of every leaf. `f` receives a fresh tape plus the leaf ids and must
/// return a scalar node.
pub fn grad_check<F>(f: F, leaves: &[DenseMatrix], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut tape = Tape::new();
    let ids = leaves
        .iter()
        .map(|l| tape.param(l.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &ids)?;
    let grads = tape.backward(out)?;
    let base_sig = tape.kink_signature();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_coordinate: None,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut probe = leaves.to_vec();
    let mut flat = 0;
    for (li, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).expect("registered leaf");
        for c in 0..leaves[li].len() {
            let x = leaves[li].data()[c];
            probe[li].data_mut()[c] = x + h;
            let (fp, sp) = evaluate(&f, &probe)?;
            probe[li].data_mut()[c] = x - h;
            let (fm, sm) = evaluate(&f, &probe)?;
            probe[li].data_mut()[c] = x;

            if sp != base_sig || sm != base_sig {
                report.skipped_kinks += 1;
            } else {
                let numeric = (fp - fm) / (2.0 * h);
                let err = relative_error(analytic.data()[c], numeric);
                if report.worst_coordinate.is_none() || err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst_coordinate = Some(flat);
                }
                report.checked += 1;
            }
            flat += 1;
        }
    }
    Ok(report)
}
