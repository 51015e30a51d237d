//! Independent reference solutions used by the acceptance tests.
//!
//! Nothing here touches the assembly or solver code paths: the shock
//! structure comes from integrating the steady 1D equations directly, the
//! stagnation constants from closed-form normal-shock and isentropic
//! relations, and the unsteady reference from a first-order finite-volume
//! scheme.

use sha2::{Digest, Sha256};

/// Steady boundary-layer profile: y = (1 - exp(x Pe)) / (1 - exp(Pe)),
/// evaluated in an overflow-safe rearrangement.
pub fn exact_advection_diffusion(x: f64, peclet: f64) -> f64 {
    assert!(peclet > 0.0, "Peclet number must be positive");
    if peclet < 1e-3 {
        // exp-m1 form is accurate in the diffusion-dominated limit.
        return f64::exp_m1(x * peclet) / f64::exp_m1(peclet);
    }
    // Multiply through by exp(-Pe): every exponent is non-positive.
    let num = ((x - 1.0) * peclet).exp() - (-peclet).exp();
    let den = 1.0 - (-peclet).exp();
    num / den
}

/// Inviscid normal-shock jump for a perfect gas.
#[derive(Clone, Copy, Debug)]
pub struct NormalShock {
    pub density_ratio: f64,
    pub pressure_ratio: f64,
    pub velocity_ratio: f64,
    pub temperature_ratio: f64,
    pub mach_downstream: f64,
}

pub fn normal_shock(mach: f64, gamma: f64) -> NormalShock {
    assert!(mach > 1.0, "normal shock needs supersonic inflow");
    let m2 = mach * mach;
    let density_ratio = (gamma + 1.0) * m2 / ((gamma - 1.0) * m2 + 2.0);
    let pressure_ratio = 1.0 + 2.0 * gamma / (gamma + 1.0) * (m2 - 1.0);
    let mach_downstream =
        (((gamma - 1.0) * m2 + 2.0) / (2.0 * gamma * m2 - (gamma - 1.0))).sqrt();
    NormalShock {
        density_ratio,
        pressure_ratio,
        velocity_ratio: 1.0 / density_ratio,
        temperature_ratio: pressure_ratio / density_ratio,
        mach_downstream,
    }
}

/// Stagnation quantities under the unit-density, unit-sound-speed scaling
/// (freestream pressure 1/gamma, freestream velocity M).
#[derive(Clone, Copy, Debug)]
pub struct StagnationReference {
    /// Pitot stagnation pressure behind the normal shock.
    pub p_stag: f64,
    /// Stagnation pressure coefficient.
    pub c_p_stag: f64,
    /// Density of gas at rest on the isothermal wall at the stagnation
    /// pressure: p_stag / (R T_wall).
    pub rho_wall_stag: f64,
    /// Wall temperature in code units (2.5 times the freestream value).
    pub t_wall: f64,
    /// Freestream temperature in code units.
    pub t_inf: f64,
    /// Freestream stagnation temperature.
    pub t_total_inf: f64,
}

pub fn stagnation_reference(mach: f64, gamma: f64, gas_constant: f64) -> StagnationReference {
    assert!(mach > 1.0);
    let p_inf = 1.0 / gamma;
    let shock = normal_shock(mach, gamma);
    let p2 = p_inf * shock.pressure_ratio;
    let m2 = shock.mach_downstream;
    // Isentropic compression from just behind the shock to rest.
    let p_stag = p2 * (1.0 + 0.5 * (gamma - 1.0) * m2 * m2).powf(gamma / (gamma - 1.0));
    let c_p_stag = (p_stag - p_inf) / (0.5 * mach * mach);
    let t_inf = p_inf / gas_constant;
    let t_wall = 2.5 * t_inf;
    let rho_wall_stag = p_stag / (gas_constant * t_wall);
    let t_total_inf = t_inf * (1.0 + 0.5 * (gamma - 1.0) * mach * mach);
    StagnationReference {
        p_stag,
        c_p_stag,
        rho_wall_stag,
        t_wall,
        t_inf,
        t_total_inf,
    }
}

/// Sampled steady viscous-shock structure between the upstream and
/// downstream equilibria.
#[derive(Clone, Debug)]
pub struct ShockOdeSolution {
    /// Positions, shifted so the density midpoint sits at zero.
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub velocity: Vec<f64>,
    pub temperature: Vec<f64>,
    pub pressure: Vec<f64>,
    /// Normal-normal viscous stress (4/3 mu v').
    pub tau_nn: Vec<f64>,
    /// Normal heat flux (-k T').
    pub q_n: Vec<f64>,
    pub upstream: [f64; 3],
    pub downstream: [f64; 3],
    pub gas_constant: f64,
}

impl ShockOdeSolution {
    /// Linear interpolation of the density profile.
    pub fn density_at(&self, x: f64) -> f64 {
        interp(&self.x, &self.density, x)
    }

    pub fn velocity_at(&self, x: f64) -> f64 {
        interp(&self.x, &self.velocity, x)
    }

    pub fn pressure_at(&self, x: f64) -> f64 {
        interp(&self.x, &self.pressure, x)
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= *xs.last().unwrap() {
        return *ys.last().unwrap();
    }
    let idx = xs.partition_point(|&v| v < x).max(1);
    let (x0, x1) = (xs[idx - 1], xs[idx]);
    let t = (x - x0) / (x1 - x0);
    ys[idx - 1] * (1.0 - t) + ys[idx] * t
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("shock-structure integration did not reach the downstream state")]
    ShockNotConverged,
}

/// Integrate the steady one-dimensional shock structure for constant
/// dynamic viscosity and Prandtl number.
///
/// Scaling: unit upstream density and sound speed, upstream velocity equal
/// to the Mach number, viscosity mu = M / Re (unit reference length). The
/// two-point problem is solved by marching from a small perturbation of the
/// upstream equilibrium along its unstable manifold.
pub fn viscous_shock_ode(
    mach: f64,
    reynolds: f64,
    prandtl: f64,
    gamma: f64,
) -> Result<ShockOdeSolution, OracleError> {
    let gas_constant = 287.0;
    let rho1 = 1.0;
    let v1 = mach;
    let p1 = 1.0 / gamma;
    let t1 = p1 / (gas_constant * rho1);
    let mu = rho1 * v1 / reynolds;
    let cp = gamma * gas_constant / (gamma - 1.0);
    let k = mu * cp / prandtl;

    let mass = rho1 * v1;
    let momentum = mass * v1 + p1;
    let energy = mass * (cp * t1 + 0.5 * v1 * v1);

    let shock = normal_shock(mach, gamma);
    let v2 = v1 * shock.velocity_ratio;
    let t2 = t1 * shock.temperature_ratio;

    let rhs = |v: f64, t: f64| -> (f64, f64) {
        let dv = (mass * v + mass * gas_constant * t / v - momentum) / (4.0 / 3.0 * mu);
        let dt = (mass * (cp * t + 0.5 * v * v) - 4.0 / 3.0 * mu * dv * v - energy) / k;
        (dv, dt)
    };

    // The upstream equilibrium is an unstable node and the downstream one a
    // saddle; the connecting orbit enters the saddle along its stable
    // eigendirection. March backward from the saddle along that direction:
    // in reverse time the upstream node attracts, so no shooting is needed.
    let fd = 1e-7 * v1;
    let (fvp, ftp) = rhs(v2 + fd, t2);
    let (fvm, ftm) = rhs(v2 - fd, t2);
    let a11 = (fvp - fvm) / (2.0 * fd);
    let a21 = (ftp - ftm) / (2.0 * fd);
    let fdt = 1e-7 * t2;
    let (gvp, gtp) = rhs(v2, t2 + fdt);
    let (gvm, gtm) = rhs(v2, t2 - fdt);
    let a12 = (gvp - gvm) / (2.0 * fdt);
    let a22 = (gtp - gtm) / (2.0 * fdt);
    let tr = a11 + a22;
    let det = a11 * a22 - a12 * a21;
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    let lam_stable = 0.5 * (tr - disc);
    // Eigenvector for the stable eigenvalue, scaled so v increases.
    let mut evec = if a12.abs() > 1e-30 {
        [a12, lam_stable - a11]
    } else {
        [lam_stable - a22, a21]
    };
    let norm = (evec[0] * evec[0] / (v1 * v1) + evec[1] * evec[1] / (t2 * t2)).sqrt();
    evec[0] /= norm;
    evec[1] /= norm;
    if evec[0] < 0.0 {
        evec[0] = -evec[0];
        evec[1] = -evec[1];
    }

    // Viscous length scale sets the step.
    let ell = mu / mass;
    let h = -ell / 200.0;
    let delta = 1e-9;
    let mut v = v2 + delta * evec[0];
    let mut t = t2 + delta * evec[1];
    let mut x = 0.0;
    let max_steps = 40_000_000usize;

    let mut xs = Vec::new();
    let mut vs = Vec::new();
    let mut ts = Vec::new();
    let sample_every = 20;
    let mut converged = false;
    for step in 0..max_steps {
        if step % sample_every == 0 {
            xs.push(x);
            vs.push(v);
            ts.push(t);
        }
        // Classical fourth-order step.
        let (k1v, k1t) = rhs(v, t);
        let (k2v, k2t) = rhs(v + 0.5 * h * k1v, t + 0.5 * h * k1t);
        let (k3v, k3t) = rhs(v + 0.5 * h * k2v, t + 0.5 * h * k2t);
        let (k4v, k4t) = rhs(v + h * k3v, t + h * k3t);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        t += h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
        x += h;
        if !(v.is_finite() && t.is_finite()) || v <= 0.0 {
            return Err(OracleError::ShockNotConverged);
        }
        if (v - v1).abs() < 1e-9 * v1 && (t - t1).abs() < 1e-9 * t1 {
            xs.push(x);
            vs.push(v);
            ts.push(t);
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OracleError::ShockNotConverged);
    }
    // Flip so x runs from the upstream state to the downstream state.
    xs.reverse();
    vs.reverse();
    ts.reverse();
    let x0 = xs[0];
    for xv in &mut xs {
        *xv -= x0;
    }

    // Derived fields and centering on the density midpoint.
    let n = xs.len();
    let mut density = Vec::with_capacity(n);
    let mut pressure = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for i in 0..n {
        let rho = mass / vs[i];
        density.push(rho);
        pressure.push(rho * gas_constant * ts[i]);
        let (dv, dt) = rhs(vs[i], ts[i]);
        tau.push(4.0 / 3.0 * mu * dv);
        q.push(-k * dt);
    }
    let rho2 = rho1 * shock.density_ratio;
    let rho_mid = 0.5 * (rho1 + rho2);
    let mut x_mid = xs[n - 1];
    for i in 1..n {
        if (density[i - 1] - rho_mid) * (density[i] - rho_mid) <= 0.0 {
            let f = (rho_mid - density[i - 1]) / (density[i] - density[i - 1]);
            x_mid = xs[i - 1] + f * (xs[i] - xs[i - 1]);
            break;
        }
    }
    for xv in &mut xs {
        *xv -= x_mid;
    }

    Ok(ShockOdeSolution {
        x: xs,
        density,
        velocity: vs,
        temperature: ts,
        pressure,
        tau_nn: tau,
        q_n: q,
        upstream: [rho1, v1, t1],
        downstream: [rho2, v2, t2],
        gas_constant,
    })
}

/// First-order finite-volume reference for viscous Burgers flow on [0, 1]:
/// exact-Riemann (Godunov) convective flux, central diffusion, explicit
/// time stepping. Inflow ghost on the left holds the initial boundary
/// value; the right boundary copies out.
pub struct BurgersReference {
    pub x_centers: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn burgers_reference(
    ic: impl Fn(f64) -> f64,
    eps: f64,
    t_final: f64,
    n_cells: usize,
) -> BurgersReference {
    assert!(n_cells >= 16);
    let h = 1.0 / n_cells as f64;
    let x_centers: Vec<f64> = (0..n_cells).map(|i| (i as f64 + 0.5) * h).collect();
    let mut y: Vec<f64> = x_centers.iter().map(|&x| ic(x)).collect();
    let inflow = ic(0.0);

    let godunov = |ul: f64, ur: f64| -> f64 {
        let f = |u: f64| 0.5 * u * u;
        if ul <= ur {
            if ul <= 0.0 && 0.0 <= ur {
                0.0
            } else {
                f(ul).min(f(ur))
            }
        } else {
            f(ul).max(f(ur))
        }
    };

    let mut t = 0.0;
    let mut flux = vec![0.0; n_cells + 1];
    while t < t_final {
        let umax = y.iter().fold(0.1f64, |a, &b| a.max(b.abs()));
        let dt_adv = 0.4 * h / umax;
        let dt_diff = if eps > 0.0 { 0.4 * h * h / (2.0 * eps) } else { f64::INFINITY };
        let dt = dt_adv.min(dt_diff).min(t_final - t);
        for i in 0..=n_cells {
            let ul = if i == 0 { inflow } else { y[i - 1] };
            let ur = if i == n_cells { y[n_cells - 1] } else { y[i] };
            let mut f = godunov(ul, ur);
            if eps > 0.0 {
                f -= eps * (ur - ul) / if i == 0 || i == n_cells { 0.5 * h } else { h };
            }
            flux[i] = f;
        }
        for i in 0..n_cells {
            y[i] -= dt / h * (flux[i + 1] - flux[i]);
        }
        t += dt;
    }
    BurgersReference { x_centers, y }
}

/// L1 difference against a doubled grid, for a grid-convergence check.
pub fn burgers_richardson_gap(
    ic: impl Fn(f64) -> f64 + Copy,
    eps: f64,
    t_final: f64,
    n_cells: usize,
) -> f64 {
    let coarse = burgers_reference(ic, eps, t_final, n_cells);
    let fine = burgers_reference(ic, eps, t_final, 2 * n_cells);
    let mut gap = 0.0;
    for (i, &yc) in coarse.y.iter().enumerate() {
        let yf = 0.5 * (fine.y[2 * i] + fine.y[2 * i + 1]);
        gap += (yc - yf).abs() / n_cells as f64;
    }
    gap
}

/// Deterministic CSV with a content-hash header line.
pub fn profile_csv(header: &str, columns: &[(&str, &[f64])]) -> String {
    let mut body = String::new();
    body.push_str(header);
    body.push('\n');
    let names: Vec<&str> = columns.iter().map(|(n, _)| *n).collect();
    body.push_str(&names.join(","));
    body.push('\n');
    let rows = columns.first().map(|(_, v)| v.len()).unwrap_or(0);
    for r in 0..rows {
        let vals: Vec<String> = columns.iter().map(|(_, v)| format!("{:.17e}", v[r])).collect();
        body.push_str(&vals.join(","));
        body.push('\n');
    }
    let mut hasher = Sha256::new();
    hasher.update(body.as_bytes());
    format!("# sha256 {:x}\n{body}", hasher.finalize())
}
