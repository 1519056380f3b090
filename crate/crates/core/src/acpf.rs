//! AC power-flow residuals, a damped Newton solver and the deviation check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PfError;
use crate::grid::{line_power, AdmittanceMatrix, DemandSnapshot, GridAlgebraicState, MicrogridSpec, PowerSetpoint};

#[derive(Debug, Clone, PartialEq)]
pub struct PfResidual {
    pub r_p: Vec<f64>,
    pub r_q: Vec<f64>,
}

impl PfResidual {
    pub fn max_abs(&self) -> f64 {
        self.r_p.iter().chain(&self.r_q).fold(0.0, |a, r| a.max(r.abs()))
    }
}

/// `r_p[l] = p_l - sum_m p_lm`, `r_q[l] = q_l - sum_m q_lm`.
pub fn pf_residual(z: &GridAlgebraicState, y: &AdmittanceMatrix) -> PfResidual {
    let n = y.n();
    let mut r_p = z.p.clone();
    let mut r_q = z.q.clone();
    for l in 0..n {
        for m in 0..n {
            let (p, q) = line_power(z, l, m, y);
            r_p[l] -= p;
            r_q[l] -= q;
        }
    }
    PfResidual { r_p, r_q }
}

/// Per-bus device injection `(p, q)` of a setpoint minus demand.
pub fn net_injection(spec: &MicrogridSpec, y: &PowerSetpoint, d: &DemandSnapshot) -> (Vec<f64>, Vec<f64>) {
    let mut p: Vec<f64> = d.p_d.iter().map(|x| -x).collect();
    let mut q: Vec<f64> = d.q_d.iter().map(|x| -x).collect();
    for (k, &bus) in spec.generators.iter().enumerate() {
        p[bus] += y.p_g[k];
        q[bus] += y.q_g[k];
    }
    for (k, &bus) in spec.batteries.iter().enumerate() {
        p[bus] += y.p_b[k];
        q[bus] += y.q_b[k];
    }
    (p, q)
}

/// `[p_l - (p_g + p_b - p_d)]_l` followed by the reactive analog, length `2N`.
pub fn balance_residual(
    spec: &MicrogridSpec,
    y: &PowerSetpoint,
    z: &GridAlgebraicState,
    d: &DemandSnapshot,
) -> Vec<f64> {
    let (p, q) = net_injection(spec, y, d);
    let rp = z.p.iter().zip(&p).map(|(a, b)| a - b);
    let rq = z.q.iter().zip(&q).map(|(a, b)| a - b);
    rp.chain(rq).collect()
}

/// Bus flows `P_l = sum_m p_lm`, `Q_l = sum_m q_lm` and their partials with
/// respect to all `v` and `theta`.
struct FlowJacobian {
    p: DVector<f64>,
    q: DVector<f64>,
    dp_dv: DMatrix<f64>,
    dp_dt: DMatrix<f64>,
    dq_dv: DMatrix<f64>,
    dq_dt: DMatrix<f64>,
}

fn flow_jacobian(v: &[f64], theta: &[f64], y: &AdmittanceMatrix) -> FlowJacobian {
    let n = y.n();
    let mut j = FlowJacobian {
        p: DVector::zeros(n),
        q: DVector::zeros(n),
        dp_dv: DMatrix::zeros(n, n),
        dp_dt: DMatrix::zeros(n, n),
        dq_dv: DMatrix::zeros(n, n),
        dq_dt: DMatrix::zeros(n, n),
    };
    for l in 0..n {
        for m in 0..n {
            let (g, b) = (y.g[(l, m)], y.b[(l, m)]);
            if g == 0.0 && b == 0.0 {
                continue;
            }
            let (s, c) = (theta[l] - theta[m]).sin_cos();
            let a = g * c + b * s;
            let bb = g * s - b * c;
            let vv = v[l] * v[m];
            j.p[l] += vv * a;
            j.q[l] += vv * bb;
            if l == m {
                j.dp_dv[(l, l)] += 2.0 * v[l] * g;
                j.dq_dv[(l, l)] += -2.0 * v[l] * b;
                continue;
            }
            j.dp_dv[(l, l)] += v[m] * a;
            j.dp_dv[(l, m)] += v[l] * a;
            j.dq_dv[(l, l)] += v[m] * bb;
            j.dq_dv[(l, m)] += v[l] * bb;
            // d a / d theta_l = -bb, d bb / d theta_l = a
            j.dp_dt[(l, l)] -= vv * bb;
            j.dp_dt[(l, m)] += vv * bb;
            j.dq_dt[(l, l)] += vv * a;
            j.dq_dt[(l, m)] -= vv * a;
        }
    }
    j
}

fn inf_norm(x: &DVector<f64>) -> f64 {
    x.iter().fold(0.0, |a, r| a.max(r.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 50, max_halvings: 20 }
    }
}

fn newton_raw(
    spec: &MicrogridSpec,
    y: &AdmittanceMatrix,
    p_inj: &[f64],
    q_inj: &[f64],
    opts: &NewtonOptions,
) -> Result<GridAlgebraicState, PfError> {
    let n = spec.n_buses;
    if p_inj.len() != n || q_inj.len() != n || y.n() != n {
        return Err(PfError::Dimension(format!("expected {n} buses")));
    }
    let r = spec.reference_bus;
    let free: Vec<usize> = (0..n).filter(|&b| b != r).collect();
    let k = free.len();
    let mut v = vec![1.0; n];
    let mut theta = vec![0.0; n];
    v[r] = spec.v_bounds[r].0;

    let mismatch = |v: &[f64], t: &[f64]| -> (DVector<f64>, FlowJacobian) {
        let fj = flow_jacobian(v, t, y);
        let mut f = DVector::zeros(2 * k);
        for (i, &b) in free.iter().enumerate() {
            f[i] = fj.p[b] - p_inj[b];
            f[k + i] = fj.q[b] - q_inj[b];
        }
        (f, fj)
    };

    let (mut f, mut fj) = mismatch(&v, &theta);
    let mut norm = inf_norm(&f);
    let mut it = 0;
    while norm > opts.tol {
        if it == opts.max_iter {
            return Err(PfError::NoConvergence { iterations: it, residual: norm });
        }
        it += 1;
        // Unknowns ordered [theta_free, v_free].
        let mut jac = DMatrix::zeros(2 * k, 2 * k);
        for (i, &a) in free.iter().enumerate() {
            for (c, &b) in free.iter().enumerate() {
                jac[(i, c)] = fj.dp_dt[(a, b)];
                jac[(i, k + c)] = fj.dp_dv[(a, b)];
                jac[(k + i, c)] = fj.dq_dt[(a, b)];
                jac[(k + i, k + c)] = fj.dq_dv[(a, b)];
            }
        }
        let dx = match jac.lu().solve(&(-&f)) {
            Some(dx) if dx.iter().all(|x| x.is_finite()) => dx,
            _ => return Err(PfError::NoConvergence { iterations: it, residual: norm }),
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let mut vt = v.clone();
            let mut tt = theta.clone();
            for (i, &b) in free.iter().enumerate() {
                tt[b] += step * dx[i];
                vt[b] += step * dx[k + i];
            }
            let (ft, fjt) = mismatch(&vt, &tt);
            let nt = inf_norm(&ft);
            if nt < norm && vt.iter().all(|x| *x > 0.0) {
                v = vt;
                theta = tt;
                f = ft;
                fj = fjt;
                norm = nt;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(PfError::NoConvergence { iterations: it, residual: norm });
        }
    }
    Ok(GridAlgebraicState { p: fj.p.iter().copied().collect(), q: fj.q.iter().copied().collect(), v, theta })
}

/// Solve for `v`, `theta` given net injections at the non-reference buses
/// (entries at the reference bus are ignored; the reference bus is the slack).
/// Flat start, damped by step halving.
pub fn newton_solve(
    spec: &MicrogridSpec,
    y: &AdmittanceMatrix,
    p_inj: &[f64],
    q_inj: &[f64],
    opts: &NewtonOptions,
) -> Result<GridAlgebraicState, PfError> {
    let z = newton_raw(spec, y, p_inj, q_inj, opts)?;
    for bus in 0..spec.n_buses {
        let (vl, vh) = spec.v_bounds[bus];
        let (tl, th) = spec.theta_bounds[bus];
        let slack = 1e-9;
        if z.v[bus] < vl - slack || z.v[bus] > vh + slack {
            return Err(PfError::OutOfBounds { bus, what: format!("v = {}", z.v[bus]) });
        }
        if z.theta[bus] < tl - slack || z.theta[bus] > th + slack {
            return Err(PfError::OutOfBounds { bus, what: format!("theta = {}", z.theta[bus]) });
        }
    }
    Ok(z)
}

/// Device power boxes for the deviation check. Generators that are off get `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceBoxes {
    pub p_g: Vec<(f64, f64)>,
    pub q_g: Vec<(f64, f64)>,
    pub p_b: Vec<(f64, f64)>,
    pub q_b: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationOptions {
    pub random_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Balance residual required for a start to count as AC-feasible.
    pub feas_tol: f64,
    pub step_tol: f64,
}

impl Default for DeviationOptions {
    fn default() -> Self {
        Self { random_starts: 3, seed: 0, max_iter: 100, feas_tol: 1e-10, step_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationResult {
    /// Squared active-power distance to the nearest AC-feasible setpoint found.
    pub v_check: f64,
    pub projected: PowerSetpoint,
    pub solved_state: GridAlgebraicState,
    pub converged_starts: usize,
}

/// Reduced variable layout: `[p_g, q_g, p_b, q_b, v_free, theta_free]`.
struct Reduced<'a> {
    spec: &'a MicrogridSpec,
    y: &'a AdmittanceMatrix,
    d: &'a DemandSnapshot,
    free: Vec<usize>,
    n_g: usize,
    n_b: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    target: Vec<f64>,
    /// Objective weight per variable (1 for device active powers, 0 otherwise).
    weight: Vec<f64>,
}

impl<'a> Reduced<'a> {
    fn new(
        spec: &'a MicrogridSpec,
        y: &'a AdmittanceMatrix,
        d: &'a DemandSnapshot,
        boxes: &DeviceBoxes,
        y_ref: &PowerSetpoint,
    ) -> Self {
        let free: Vec<usize> = (0..spec.n_buses).filter(|&b| b != spec.reference_bus).collect();
        let (n_g, n_b) = (spec.generators.len(), spec.batteries.len());
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut target = Vec::new();
        let mut weight = Vec::new();
        let groups: [(&[(f64, f64)], &[f64], f64); 4] = [
            (&boxes.p_g, &y_ref.p_g, 1.0),
            (&boxes.q_g, &y_ref.q_g, 0.0),
            (&boxes.p_b, &y_ref.p_b, 1.0),
            (&boxes.q_b, &y_ref.q_b, 0.0),
        ];
        for (bx, r, w) in groups {
            for (&(lo, hi), &t) in bx.iter().zip(r) {
                lower.push(lo);
                upper.push(hi);
                target.push(t);
                weight.push(w);
            }
        }
        for &b in &free {
            lower.push(spec.v_bounds[b].0);
            upper.push(spec.v_bounds[b].1);
            target.push(0.0);
            weight.push(0.0);
        }
        for &b in &free {
            lower.push(spec.theta_bounds[b].0);
            upper.push(spec.theta_bounds[b].1);
            target.push(0.0);
            weight.push(0.0);
        }
        Self { spec, y, d, free, n_g, n_b, lower, upper, target, weight }
    }

    fn len(&self) -> usize {
        self.lower.len()
    }

    fn dev_offset(&self) -> usize {
        2 * self.n_g + 2 * self.n_b
    }

    fn setpoint(&self, x: &[f64]) -> PowerSetpoint {
        let (g, b) = (self.n_g, self.n_b);
        PowerSetpoint {
            p_g: x[..g].to_vec(),
            q_g: x[g..2 * g].to_vec(),
            p_b: x[2 * g..2 * g + b].to_vec(),
            q_b: x[2 * g + b..2 * g + 2 * b].to_vec(),
        }
    }

    fn voltages(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.spec.n_buses;
        let r = self.spec.reference_bus;
        let mut v = vec![self.spec.v_bounds[r].0; n];
        let mut t = vec![0.0; n];
        let off = self.dev_offset();
        let k = self.free.len();
        for (i, &b) in self.free.iter().enumerate() {
            v[b] = x[off + i];
            t[b] = x[off + k + i];
        }
        (v, t)
    }

    fn pack(&self, y: &PowerSetpoint, v: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = y.p_g.iter().chain(&y.q_g).chain(&y.p_b).chain(&y.q_b).copied().collect();
        x.extend(self.free.iter().map(|&b| v[b]));
        x.extend(self.free.iter().map(|&b| theta[b]));
        self.clip(&mut x);
        x
    }

    fn clip(&self, x: &mut [f64]) {
        for ((xi, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(lo, hi);
        }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.target).zip(&self.weight).map(|((xi, t), w)| w * (xi - t).powi(2)).sum()
    }

    /// Balance constraints `c(x) = flows - net injection` (length `2N`) and their Jacobian.
    fn constraints(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.spec.n_buses;
        let (v, t) = self.voltages(x);
        let fj = flow_jacobian(&v, &t, self.y);
        let (p_inj, q_inj) = net_injection(self.spec, &self.setpoint(x), self.d);
        let mut c = DVector::zeros(2 * n);
        for l in 0..n {
            c[l] = fj.p[l] - p_inj[l];
            c[n + l] = fj.q[l] - q_inj[l];
        }
        let mut jac = DMatrix::zeros(2 * n, self.len());
        let (g, b) = (self.n_g, self.n_b);
        for (k, &bus) in self.spec.generators.iter().enumerate() {
            jac[(bus, k)] = -1.0;
            jac[(n + bus, g + k)] = -1.0;
        }
        for (k, &bus) in self.spec.batteries.iter().enumerate() {
            jac[(bus, 2 * g + k)] = -1.0;
            jac[(n + bus, 2 * g + b + k)] = -1.0;
        }
        let off = self.dev_offset();
        let kf = self.free.len();
        for l in 0..n {
            for (i, &m) in self.free.iter().enumerate() {
                jac[(l, off + i)] = fj.dp_dv[(l, m)];
                jac[(l, off + kf + i)] = fj.dp_dt[(l, m)];
                jac[(n + l, off + i)] = fj.dq_dv[(l, m)];
                jac[(n + l, off + kf + i)] = fj.dq_dt[(l, m)];
            }
        }
        (c, jac)
    }
}

/// Proximal weight on variables without objective terms.
const PROX: f64 = 1e-6;

/// Equality-constrained QP step with variables in `fixed` pinned to `fixed_step`.
fn qp_step(
    h: &[f64],
    grad: &[f64],
    c: &DVector<f64>,
    jac: &DMatrix<f64>,
    fixed: &[Option<f64>],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = h.len();
    let m = c.len();
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let nf = free.len();
    let mut rhs_c = -c.clone();
    for i in 0..n {
        if let Some(s) = fixed[i] {
            for r in 0..m {
                rhs_c[r] -= jac[(r, i)] * s;
            }
        }
    }
    let dim = nf + m;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (a, &i) in free.iter().enumerate() {
        kkt[(a, a)] = h[i];
        rhs[a] = -grad[i];
        for r in 0..m {
            kkt[(a, nf + r)] = jac[(r, i)];
            kkt[(nf + r, a)] = jac[(r, i)];
        }
    }
    for r in 0..m {
        rhs[nf + r] = rhs_c[r];
    }
    // Regularize the dual block only if the plain system is singular.
    let sol = kkt.clone().full_piv_lu().solve(&rhs).filter(|s| s.iter().all(|v| v.is_finite())).or_else(|| {
        let mut k2 = kkt;
        for r in 0..m {
            k2[(nf + r, nf + r)] = -1e-10;
        }
        k2.full_piv_lu().solve(&rhs).filter(|s| s.iter().all(|v| v.is_finite()))
    })?;
    let mut dx = DVector::zeros(n);
    for i in 0..n {
        if let Some(s) = fixed[i] {
            dx[i] = s;
        }
    }
    for (a, &i) in free.iter().enumerate() {
        dx[i] = sol[a];
    }
    Some((dx, sol.rows(nf, m).into_owned()))
}

struct LocalResult {
    x: Vec<f64>,
    residual: f64,
}

/// Projected Levenberg-Marquardt on `|c(x)|^2` inside the boxes. Used when the
/// SQP line search stalls away from the AC manifold.
fn restore(red: &Reduced, mut x: Vec<f64>, tol: f64) -> Option<(Vec<f64>, DVector<f64>, DMatrix<f64>)> {
    let n = red.len();
    let (mut c, mut jac) = red.constraints(&x);
    let mut mu = 1e-4;
    for _ in 0..500 {
        if inf_norm(&c) <= tol {
            return Some((x, c, jac));
        }
        let g = jac.transpose() * &c;
        let jtj = jac.transpose() * &jac;
        let mut pinned = vec![false; n];
        let dx = loop {
            let mut a = jtj.clone();
            let mut rhs = -g.clone();
            for i in 0..n {
                a[(i, i)] += mu * (1.0 + jtj[(i, i)]);
                if pinned[i] {
                    for k in 0..n {
                        a[(i, k)] = 0.0;
                        a[(k, i)] = 0.0;
                    }
                    a[(i, i)] = 1.0;
                    rhs[i] = 0.0;
                }
            }
            let dx = a.cholesky()?.solve(&rhs);
            let mut changed = false;
            for i in 0..n {
                let at_lo = x[i] <= red.lower[i] + 1e-12 && dx[i] < 0.0;
                let at_hi = x[i] >= red.upper[i] - 1e-12 && dx[i] > 0.0;
                if !pinned[i] && (at_lo || at_hi) {
                    pinned[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break dx;
            }
        };
        let mut xt: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + d).collect();
        red.clip(&mut xt);
        let (ct, jt) = red.constraints(&xt);
        if ct.norm_squared() < c.norm_squared() {
            x = xt;
            c = ct;
            jac = jt;
            mu = (mu / 3.0).max(1e-12);
        } else {
            mu *= 4.0;
            if mu > 1e8 {
                return None;
            }
        }
    }
    None
}

fn local_solve(red: &Reduced, mut x: Vec<f64>, opts: &DeviationOptions) -> Option<LocalResult> {
    let n = red.len();
    let h: Vec<f64> = red.weight.iter().map(|&w| 2.0 * w + PROX).collect();
    let mut nu: f64 = 1.0;
    let (mut c, mut jac) = red.constraints(&x);
    for _ in 0..opts.max_iter {
        let grad: Vec<f64> = (0..n).map(|i| 2.0 * red.weight[i] * (x[i] - red.target[i])).collect();
        // Active set: fix each variable that the step would push out of its box.
        let mut fixed: Vec<Option<f64>> = vec![None; n];
        let (dx, lambda) = loop {
            let (dx, lambda) = qp_step(&h, &grad, &c, &jac, &fixed)?;
            let mut changed = false;
            for i in 0..n {
                if fixed[i].is_some() {
                    continue;
                }
                let t = x[i] + dx[i];
                if t > red.upper[i] + 1e-12 {
                    fixed[i] = Some(red.upper[i] - x[i]);
                    changed = true;
                } else if t < red.lower[i] - 1e-12 {
                    fixed[i] = Some(red.lower[i] - x[i]);
                    changed = true;
                }
            }
            if !changed {
                break (dx, lambda);
            }
        };
        let step_norm = inf_norm(&dx);
        let c_norm = inf_norm(&c);
        if c_norm <= opts.feas_tol && step_norm <= opts.step_tol {
            return Some(LocalResult { x, residual: c_norm });
        }
        nu = nu.max(2.0 * inf_norm(&lambda) + 1.0);
        let merit = |x: &[f64], c: &DVector<f64>| red.objective(x) + nu * c.iter().map(|v| v.abs()).sum::<f64>();
        let m0 = merit(&x, &c);
        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let mut xt: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + alpha * d).collect();
            red.clip(&mut xt);
            let (ct, jt) = red.constraints(&xt);
            if merit(&xt, &ct) <= m0 || alpha < 1e-6 {
                next = Some((xt, ct, jt));
                break;
            }
            alpha *= 0.5;
        }
        let (xt, ct, jt) = next?;
        if alpha < 1e-3 && inf_norm(&ct) > 1e-6 {
            let (xr, cr, jr) = restore(red, xt, opts.feas_tol)?;
            x = xr;
            c = cr;
            jac = jr;
            continue;
        }
        x = xt;
        c = ct;
        jac = jt;
    }
    let residual = inf_norm(&c);
    (residual <= opts.feas_tol.max(1e-8)).then_some(LocalResult { x, residual })
}

/// Project `y_ref` onto the AC-feasible setpoints for demand `d`:
/// minimize the squared distance of device active powers to `y_ref` subject to
/// the full AC balance at every bus and the device and voltage boxes.
///
/// Starts, in order: `y_ref` with a Newton solve using the reference bus as
/// slack, the optional `qc_start` state, then `opts.random_starts` seeded
/// random points. The best converged start wins.
pub fn deviation_check(
    y_ref: &PowerSetpoint,
    d: &DemandSnapshot,
    spec: &MicrogridSpec,
    y: &AdmittanceMatrix,
    boxes: &DeviceBoxes,
    qc_start: Option<&GridAlgebraicState>,
    opts: &DeviationOptions,
) -> Result<DeviationResult, PfError> {
    let dims_ok = y_ref.p_g.len() == spec.generators.len()
        && y_ref.q_g.len() == spec.generators.len()
        && y_ref.p_b.len() == spec.batteries.len()
        && y_ref.q_b.len() == spec.batteries.len()
        && boxes.p_g.len() == spec.generators.len()
        && boxes.p_b.len() == spec.batteries.len()
        && d.p_d.len() == spec.n_buses;
    if !dims_ok {
        return Err(PfError::Dimension("setpoint, boxes and demand must match the grid".into()));
    }
    let red = Reduced::new(spec, y, d, boxes, y_ref);
    let mut starts = Vec::new();
    {
        let (p, q) = net_injection(spec, y_ref, d);
        let flat = GridAlgebraicState::flat(spec.n_buses);
        let z = newton_raw(spec, y, &p, &q, &NewtonOptions::default()).unwrap_or(flat);
        starts.push(red.pack(y_ref, &z.v, &z.theta));
    }
    if let Some(z) = qc_start {
        starts.push(red.pack(y_ref, &z.v, &z.theta));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.random_starts {
        let x: Vec<f64> = red
            .lower
            .iter()
            .zip(&red.upper)
            .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
            .collect();
        starts.push(x);
    }

    let mut best: Option<(f64, LocalResult)> = None;
    let mut converged = 0;
    for x0 in starts {
        if let Some(res) = local_solve(&red, x0, opts) {
            converged += 1;
            let obj = red.objective(&res.x);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, res));
            }
        }
    }
    let (v_check, res) = best.ok_or(PfError::NoFeasiblePoint)?;
    let projected = red.setpoint(&res.x);
    let (v, theta) = red.voltages(&res.x);
    let fj = flow_jacobian(&v, &theta, y);
    let solved_state = GridAlgebraicState { p: fj.p.iter().copied().collect(), q: fj.q.iter().copied().collect(), v, theta };
    debug_assert!(res.residual <= 1e-8);
    Ok(DeviationResult { v_check, projected, solved_state, converged_starts: converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_admittance, Line};

    fn two_bus() -> MicrogridSpec {
        MicrogridSpec {
            n_buses: 2,
            generators: vec![],
            batteries: vec![],
            reference_bus: 0,
            lines: vec![Line { from: 0, to: 1, g: 1.0, b: -5.0 }],
            ground: vec![(0.0, 0.0); 2],
            v_bounds: vec![(1.0, 1.0), (0.5, 1.5)],
            theta_bounds: vec![(0.0, 0.0), (-1.0, 1.0)],
        }
    }

    #[test]
    fn flat_profile_with_diag_injections_has_zero_residual() {
        let s = two_bus();
        let y = build_admittance(&s).unwrap();
        let mut z = GridAlgebraicState::flat(2);
        // Row sums of Y vanish without ground admittance, so the flat profile injects nothing.
        let r = pf_residual(&z, &y);
        assert!(r.max_abs() < 1e-15);
        z.p[1] = 1.0;
        let r = pf_residual(&z, &y);
        assert!((r.r_p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_admittance_residual_is_injection() {
        let y = AdmittanceMatrix { g: DMatrix::zeros(2, 2), b: DMatrix::zeros(2, 2) };
        let z = GridAlgebraicState { p: vec![0.0, 1.0], ..GridAlgebraicState::flat(2) };
        assert_eq!(pf_residual(&z, &y).r_p, vec![0.0, 1.0]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let s = two_bus();
        let y = build_admittance(&s).unwrap();
        let v = [1.02, 0.97];
        let t = [0.03, -0.05];
        let j = flow_jacobian(&v, &t, &y);
        let h = 1e-7;
        for k in 0..2 {
            let mut vp = v;
            vp[k] += h;
            let jp = flow_jacobian(&vp, &t, &y);
            let mut tp = t;
            tp[k] += h;
            let jt = flow_jacobian(&v, &tp, &y);
            for l in 0..2 {
                assert!(((jp.p[l] - j.p[l]) / h - j.dp_dv[(l, k)]).abs() < 1e-5);
                assert!(((jp.q[l] - j.q[l]) / h - j.dq_dv[(l, k)]).abs() < 1e-5);
                assert!(((jt.p[l] - j.p[l]) / h - j.dp_dt[(l, k)]).abs() < 1e-5);
                assert!(((jt.q[l] - j.q[l]) / h - j.dq_dt[(l, k)]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn newton_zero_injection_is_flat() {
        let s = two_bus();
        let y = build_admittance(&s).unwrap();
        let z = newton_solve(&s, &y, &[0.0; 2], &[0.0; 2], &NewtonOptions::default()).unwrap();
        assert_eq!(z.v, vec![1.0, 1.0]);
        assert_eq!(z.theta, vec![0.0, 0.0]);
    }

    #[test]
    fn newton_huge_injection_fails() {
        let s = two_bus();
        let y = build_admittance(&s).unwrap();
        let err = newton_solve(&s, &y, &[0.0, 1000.0], &[0.0; 2], &NewtonOptions::default()).unwrap_err();
        assert!(matches!(err, PfError::NoConvergence { .. }));
    }

    #[test]
    fn newton_out_of_box_reported() {
        let mut s = two_bus();
        s.theta_bounds[1] = (-0.01, 0.01);
        let y = build_admittance(&s).unwrap();
        let err = newton_solve(&s, &y, &[0.0, 0.5], &[0.0; 2], &NewtonOptions::default()).unwrap_err();
        assert!(matches!(err, PfError::OutOfBounds { bus: 1, .. }));
    }

    #[test]
    fn balance_residual_is_linear_mismatch() {
        let mut s = two_bus();
        s.generators = vec![0];
        let y = PowerSetpoint { p_g: vec![2.5], q_g: vec![0.0], p_b: vec![], q_b: vec![] };
        let d = DemandSnapshot { p_d: vec![0.0, 2.5], q_d: vec![0.0, 0.0] };
        let z = GridAlgebraicState { p: vec![2.5, -2.5], q: vec![0.0; 2], v: vec![1.0; 2], theta: vec![0.0; 2] };
        assert!(balance_residual(&s, &y, &z, &d).iter().all(|r| r.abs() < 1e-15));
        let d2 = DemandSnapshot { p_d: vec![0.0, 2.0], q_d: vec![0.0, 0.1] };
        let r = balance_residual(&s, &y, &z, &d2);
        assert!((r[1] + 0.5).abs() < 1e-15 && (r[3] - 0.1).abs() < 1e-15);
    }
}
