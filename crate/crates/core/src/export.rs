//! CSV dumps of phase portraits, Lyapunov surfaces, decrease maps and
//! closed-loop time series. Floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::DenseMatrix;
use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::neural::{LyapunovCandidate, PolicyNet, QuadraticLyapunov};
use crate::rollout::{closed_loop_step, lyapunov_difference_field, SimTrajectory};

/// Formats a float so that parsing it back yields the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Regular grid over a 2-D slice of the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub dims: (usize, usize),
    pub ranges: [(f64, f64); 2],
    pub resolution: (usize, usize),
    /// Values of every state coordinate off the slice (length `n_x`).
    pub fixed: Vec<f64>,
}

impl GridSpec {
    /// `res x res` grid over dims `(i, j)` with all other coordinates 0.
    pub fn slice(n_x: usize, dims: (usize, usize), range_i: (f64, f64), range_j: (f64, f64), res: usize) -> Result<Self> {
        let g = GridSpec {
            dims,
            ranges: [range_i, range_j],
            resolution: (res, res),
            fixed: vec![0.0; n_x],
        };
        g.validate(n_x)?;
        Ok(g)
    }

    /// Full box for two-state plants; the `(ẋ, ẏ)` velocity slice otherwise.
    pub fn default_for(model: &dyn SystemModel, res: usize) -> Result<Self> {
        let n = model.n_x();
        let dims = if n > 4 { (3, 4) } else { (0, 1.min(n - 1)) };
        let b = model.state_box();
        Self::slice(n, dims, (b.lo[dims.0], b.hi[dims.0]), (b.lo[dims.1], b.hi[dims.1]), res)
    }

    pub fn validate(&self, n_x: usize) -> Result<()> {
        if self.resolution.0 < 2 || self.resolution.1 < 2 {
            return Err(Error::invalid("grid resolution must be at least 2 per dimension"));
        }
        if self.dims.0 >= n_x || self.dims.1 >= n_x || self.dims.0 == self.dims.1 {
            return Err(Error::invalid(format!("invalid slice dims {:?} for n_x = {n_x}", self.dims)));
        }
        if self.fixed.len() != n_x {
            return Err(Error::invalid("fixed coordinate vector must have length n_x"));
        }
        if self.ranges.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::invalid("grid ranges must satisfy lo < hi"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.resolution.0 * self.resolution.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn axis(&self, which: usize) -> Vec<f64> {
        let (lo, hi) = self.ranges[which];
        let n = if which == 0 { self.resolution.0 } else { self.resolution.1 };
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    /// All grid states as rows, first slice dimension outermost.
    pub fn points(&self, n_x: usize) -> Result<DenseMatrix> {
        self.validate(n_x)?;
        let (ai, aj) = (self.axis(0), self.axis(1));
        let mut data = Vec::with_capacity(self.len() * n_x);
        for &vi in &ai {
            for &vj in &aj {
                let mut x = self.fixed.clone();
                x[self.dims.0] = vi;
                x[self.dims.1] = vj;
                data.extend_from_slice(&x);
            }
        }
        DenseMatrix::new(self.len(), n_x, data)
    }

    /// `n` points spread evenly along the boundary of the slice rectangle.
    pub fn fringe(&self, n: usize) -> Vec<Vec<f64>> {
        let [(li, hi_), (lj, hj)] = self.ranges;
        let (wi, wj) = (hi_ - li, hj - lj);
        let perim = 2.0 * (wi + wj);
        (0..n)
            .map(|k| {
                let s = perim * k as f64 / n as f64;
                let (a, b) = if s < wi {
                    (li + s, lj)
                } else if s < wi + wj {
                    (hi_, lj + (s - wi))
                } else if s < 2.0 * wi + wj {
                    (hi_ - (s - wi - wj), hj)
                } else {
                    (li, hj - (s - 2.0 * wi - wj))
                };
                let mut x = self.fixed.clone();
                x[self.dims.0] = a;
                x[self.dims.1] = b;
                x
            })
            .collect()
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Writes closed-loop trajectories from the grid fringe (`traj_id,k,x_i,x_j`)
/// to `phase_path` and the one-step displacement field (`x_i,x_j,dx_i,dx_j`)
/// to `field_path`.
pub fn export_phase_portrait(
    policy: &PolicyNet,
    model: &dyn SystemModel,
    grid: &GridSpec,
    n_trajectories: usize,
    steps: usize,
    phase_path: &Path,
    field_path: &Path,
) -> Result<()> {
    let (di, dj) = grid.dims;
    let mut phase = String::from("traj_id,k,x_i,x_j\n");
    let starts = grid.fringe(n_trajectories);
    if !starts.is_empty() {
        let mut current = DenseMatrix::from_rows(&starts)?;
        let mut alive: Vec<usize> = (0..starts.len()).collect();
        let mut rows: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); starts.len()];
        for (r, &id) in alive.iter().enumerate() {
            rows[id].push((0, current.get(r, di), current.get(r, dj)));
        }
        for k in 1..=steps {
            let (_, next) = closed_loop_step(policy, model, &current)?;
            let mut keep = Vec::new();
            for (r, &id) in alive.iter().enumerate() {
                let x = next.row(r);
                if x.iter().all(|v| v.abs() <= crate::rollout::DIVERGENCE_BOUND) {
                    rows[id].push((k, x[di], x[dj]));
                    keep.push(r);
                }
            }
            current = next.select_rows(&keep);
            alive = keep.iter().map(|&r| alive[r]).collect();
            if alive.is_empty() {
                break;
            }
        }
        for (id, traj) in rows.iter().enumerate() {
            for (k, a, b) in traj {
                let _ = writeln!(phase, "{id},{k},{},{}", fmt_f64(*a), fmt_f64(*b));
            }
        }
    }

    let pts = grid.points(model.n_x())?;
    let (_, next) = closed_loop_step(policy, model, &pts)?;
    let mut field = String::from("x_i,x_j,dx_i,dx_j\n");
    for r in 0..pts.rows() {
        let (x, y) = (pts.row(r), next.row(r));
        let _ = writeln!(
            field,
            "{},{},{},{}",
            fmt_f64(x[di]),
            fmt_f64(x[dj]),
            fmt_f64(y[di] - x[di]),
            fmt_f64(y[dj] - x[dj])
        );
    }
    if n_trajectories > 0 {
        write_file(phase_path, &phase)?;
    }
    write_file(field_path, &field)
}

/// Rows `x_i,x_j,V` over the grid.
pub fn export_lyapunov_surface(lyap: &dyn LyapunovCandidate, n_x: usize, grid: &GridSpec, path: &Path) -> Result<()> {
    let pts = grid.points(n_x)?;
    let v = lyap.eval_rows(&pts)?;
    let mut out = String::from("x_i,x_j,V\n");
    for (r, val) in v.iter().enumerate() {
        let x = pts.row(r);
        let _ = writeln!(out, "{},{},{}", fmt_f64(x[grid.dims.0]), fmt_f64(x[grid.dims.1]), fmt_f64(*val));
    }
    write_file(path, &out)
}

fn vdiff_csv(grid: &GridSpec, pts: &DenseMatrix, field: &DenseMatrix) -> String {
    let mut out = String::from("x_i,x_j,dV\n");
    for (r, dv) in field.data().iter().enumerate() {
        let x = pts.row(r);
        let _ = writeln!(out, "{},{},{}", fmt_f64(x[grid.dims.0]), fmt_f64(x[grid.dims.1]), fmt_f64(*dv));
    }
    out
}

/// One-step decrease maps `x_i,x_j,dV` for the learned certificate and for
/// the quadratic baseline `xᵀx`, with identical row order.
pub fn export_vdiff_maps(
    lyap: &dyn LyapunovCandidate,
    policy: &PolicyNet,
    model: &dyn SystemModel,
    grid: &GridSpec,
    learned_path: &Path,
    quadratic_path: &Path,
) -> Result<()> {
    let pts = grid.points(model.n_x())?;
    let learned = lyapunov_difference_field(lyap, policy, model, grid)?;
    let quadratic = lyapunov_difference_field(&QuadraticLyapunov, policy, model, grid)?;
    write_file(learned_path, &vdiff_csv(grid, &pts, &learned))?;
    write_file(quadratic_path, &vdiff_csv(grid, &pts, &quadratic))
}

/// `k,x1..xn,u1..um,V,stage_loss`; the final state row leaves the input and
/// stage-loss fields empty.
pub fn export_trajectory(sim: &SimTrajectory, path: &Path) -> Result<()> {
    write_file(path, &trajectory_csv(sim))
}

pub fn trajectory_csv(sim: &SimTrajectory) -> String {
    let n_x = sim.states[0].len();
    let n_u = sim.controls.first().map_or(0, Vec::len);
    let mut out = String::from("k");
    for i in 1..=n_x {
        let _ = write!(out, ",x{i}");
    }
    for i in 1..=n_u {
        let _ = write!(out, ",u{i}");
    }
    out.push_str(",V,stage_loss\n");
    for (k, x) in sim.states.iter().enumerate() {
        out.push_str(&k.to_string());
        for v in x {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        match sim.controls.get(k) {
            Some(u) => {
                for v in u {
                    let _ = write!(out, ",{}", fmt_f64(*v));
                }
            }
            None => out.push_str(&",".repeat(n_u)),
        }
        let _ = write!(out, ",{}", fmt_f64(sim.values[k]));
        match sim.stage_losses.get(k) {
            Some(l) => {
                let _ = writeln!(out, ",{}", fmt_f64(*l));
            }
            None => out.push_str(",\n"),
        }
    }
    out
}
