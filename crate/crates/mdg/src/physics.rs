//! Flux models, equation of state, and constitutive tensors.
//!
//! All kernels are generic over [`Scalar`] so the assembly can run them with
//! jets and obtain exact derivatives with respect to point values. States are
//! slices of length `m`; gradients and fluxes use the small row-major matrix
//! type [`SMat`] with one row per state component.

use crate::jet::{Jet, Scalar};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("inadmissible state: {quantity} = {value:.6e}")]
    Inadmissible { quantity: &'static str, value: f64 },
}

/// Minimal row-major matrix over a generic scalar.
#[derive(Clone, Debug)]
pub struct SMat<S> {
    pub rows: usize,
    pub cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> SMat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SMat {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        SMat { rows, cols, data }
    }

    pub fn at(&self, r: usize, c: usize) -> &S {
        &self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn values(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.at(r, c).value())
    }
}

/// Gas closure for the compressible flow model.
#[derive(Clone, Debug)]
pub struct GasModel {
    /// Ratio of specific heats for air.
    pub gamma: f64,
    /// Mixed specific gas constant for air.
    pub gas_constant: f64,
    /// Dynamic viscosity (constant; no temperature dependence).
    pub mu: f64,
    /// Freestream dynamic viscosity used in the auxiliary-variable scaling.
    pub mu_inf: f64,
    /// Prandtl number closing the thermal conductivity, k = mu c_p / Pr.
    pub prandtl: f64,
}

impl GasModel {
    pub fn air(mu: f64) -> Self {
        GasModel {
            gamma: 1.4,
            gas_constant: 287.0,
            mu,
            mu_inf: mu,
            prandtl: 0.72,
        }
    }

    pub fn cp(&self) -> f64 {
        self.gamma * self.gas_constant / (self.gamma - 1.0)
    }

    pub fn conductivity(&self) -> f64 {
        self.mu * self.cp() / self.prandtl
    }

    /// Specific internal energy at temperature `t`.
    pub fn internal_energy(&self, t: f64) -> f64 {
        self.gas_constant * t / (self.gamma - 1.0)
    }
}

/// Thermodynamic quantities derived from a conservative state.
pub struct EosEval<S> {
    pub pressure: S,
    pub temperature: S,
    pub enthalpy: S,
    pub sound_speed: S,
}

/// Choice of constitutive law relating the auxiliary variable to gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constitutive {
    /// G = I: the auxiliary variable is the state gradient.
    Gradient,
    /// G is the homogeneity tensor: the auxiliary variable is the viscous flux.
    Flux,
    /// G = sqrt(eps): symmetric split of a linear diffusive flux.
    ScaledFlux,
    /// Compressible flow scaling: sigma is mu_inf^{-1/2} (0, tau, -q).
    NsScaled,
}

#[derive(Clone, Debug)]
pub enum Equations {
    AdvectionDiffusion { velocity: Vec<f64>, diffusivity: f64 },
    Burgers { viscosity: f64 },
    NavierStokes { gas: GasModel, spatial_dim: usize },
}

/// A governing system plus its constitutive choice and space-time flag.
#[derive(Clone, Debug)]
pub struct FluxModel {
    pub equations: Equations,
    pub constitutive: Constitutive,
    pub spacetime: bool,
}

impl FluxModel {
    pub fn advection_diffusion(velocity: Vec<f64>, diffusivity: f64, spacetime: bool) -> Self {
        FluxModel {
            equations: Equations::AdvectionDiffusion {
                velocity,
                diffusivity,
            },
            constitutive: Constitutive::ScaledFlux,
            spacetime,
        }
    }

    pub fn burgers(viscosity: f64, spacetime: bool) -> Self {
        FluxModel {
            equations: Equations::Burgers { viscosity },
            constitutive: Constitutive::ScaledFlux,
            spacetime,
        }
    }

    pub fn navier_stokes(gas: GasModel, spatial_dim: usize, spacetime: bool) -> Self {
        FluxModel {
            equations: Equations::NavierStokes { gas, spatial_dim },
            constitutive: Constitutive::NsScaled,
            spacetime,
        }
    }

    /// Number of state components.
    pub fn m(&self) -> usize {
        match &self.equations {
            Equations::AdvectionDiffusion { .. } | Equations::Burgers { .. } => 1,
            Equations::NavierStokes { spatial_dim, .. } => spatial_dim + 2,
        }
    }

    /// Spatial dimension d_x.
    pub fn d_x(&self) -> usize {
        match &self.equations {
            Equations::AdvectionDiffusion { velocity, .. } => velocity.len(),
            Equations::Burgers { .. } => 1,
            Equations::NavierStokes { spatial_dim, .. } => *spatial_dim,
        }
    }

    /// Total flux dimension: d_x plus a temporal column for space-time runs.
    pub fn d(&self) -> usize {
        self.d_x() + usize::from(self.spacetime)
    }

    /// Scalar diffusivity of the linear models.
    fn eps(&self) -> f64 {
        match &self.equations {
            Equations::AdvectionDiffusion { diffusivity, .. } => *diffusivity,
            Equations::Burgers { viscosity } => *viscosity,
            Equations::NavierStokes { .. } => unreachable!("eps is for scalar models"),
        }
    }

    pub fn check_admissible(&self, y: &[f64]) -> Result<(), PhysicsError> {
        if let Equations::NavierStokes { gas, spatial_dim } = &self.equations {
            let rho = y[0];
            if !(rho > 0.0) {
                return Err(PhysicsError::Inadmissible {
                    quantity: "density",
                    value: rho,
                });
            }
            let kinetic: f64 =
                (0..*spatial_dim).map(|i| y[1 + i] * y[1 + i]).sum::<f64>() / (2.0 * rho);
            let p = (gas.gamma - 1.0) * (y[spatial_dim + 1] - kinetic);
            if !(p > 0.0) {
                return Err(PhysicsError::Inadmissible {
                    quantity: "pressure",
                    value: p,
                });
            }
        }
        for v in y {
            if !v.is_finite() {
                return Err(PhysicsError::Inadmissible {
                    quantity: "state",
                    value: *v,
                });
            }
        }
        Ok(())
    }

    /// Pressure, temperature, stagnation enthalpy, and sound speed.
    pub fn eos<S: Scalar>(&self, y: &[S]) -> EosEval<S> {
        let Equations::NavierStokes { gas, spatial_dim } = &self.equations else {
            panic!("equation of state applies to the compressible model");
        };
        let d_x = *spatial_dim;
        let rho = y[0].clone();
        let mut kinetic = S::zero();
        for i in 0..d_x {
            kinetic = kinetic + y[1 + i].clone() * &y[1 + i] / &rho * 0.5;
        }
        let pressure = (y[d_x + 1].clone() - &kinetic) * (gas.gamma - 1.0);
        let temperature = pressure.clone() / &rho / gas.gas_constant;
        let enthalpy = (y[d_x + 1].clone() + &pressure) / &rho;
        let sound_speed = (pressure.clone() * gas.gamma / &rho).sqrt();
        EosEval {
            pressure,
            temperature,
            enthalpy,
            sound_speed,
        }
    }

    /// Convective flux, one column per spatial direction.
    pub fn convective<S: Scalar>(&self, y: &[S]) -> SMat<S> {
        let (m, d_x) = (self.m(), self.d_x());
        match &self.equations {
            Equations::AdvectionDiffusion { velocity, .. } => {
                SMat::from_fn(m, d_x, |_, i| y[0].clone() * velocity[i])
            }
            Equations::Burgers { .. } => SMat::from_fn(m, d_x, |_, _| y[0].clone() * &y[0] * 0.5),
            Equations::NavierStokes { .. } => {
                let eos = self.eos(y);
                let rho = &y[0];
                let mut out = SMat::zeros(m, d_x);
                for i in 0..d_x {
                    let vi = y[1 + i].clone() / rho;
                    out.set(0, i, y[1 + i].clone());
                    for j in 0..d_x {
                        let mut f = y[1 + j].clone() * &vi;
                        if i == j {
                            f = f + &eos.pressure;
                        }
                        out.set(1 + j, i, f);
                    }
                    out.set(d_x + 1, i, eos.enthalpy.clone() * rho * &vi);
                }
                out
            }
        }
    }

    /// Apply the constitutive tensor: G(y) contracted with an m-by-d_x
    /// matrix of spatial gradients. Linear in `grad` for fixed `y`.
    pub fn constitutive_apply<S: Scalar>(&self, y: &[S], grad: &SMat<S>) -> SMat<S> {
        let (m, d_x) = (self.m(), self.d_x());
        assert_eq!((grad.rows, grad.cols), (m, d_x));
        match (&self.equations, self.constitutive) {
            (_, Constitutive::Gradient) => grad.clone(),
            (Equations::NavierStokes { gas, .. }, Constitutive::NsScaled) => {
                let scale = gas.mu_inf.sqrt().recip();
                let rho = &y[0];
                let v: Vec<S> = (0..d_x).map(|i| y[1 + i].clone() / rho).collect();
                // Velocity gradient: dv_j/dx_i = (d(rho v_j) - v_j d(rho)) / rho.
                let grad_v = SMat::from_fn(d_x, d_x, |j, i| {
                    (grad.at(1 + j, i).clone() - v[j].clone() * grad.at(0, i)) / rho
                });
                let tau = viscous_stress(gas.mu, &grad_v);
                let mut out = SMat::zeros(m, d_x);
                let k = gas.conductivity();
                let eos = self.eos(y);
                for i in 0..d_x {
                    let mut dkin = S::zero();
                    for j in 0..d_x {
                        dkin = dkin
                            + (grad.at(1 + j, i).clone() * &v[j]
                                + y[1 + j].clone() * grad_v.at(j, i))
                                * 0.5;
                    }
                    let dp = (grad.at(d_x + 1, i).clone() - dkin) * (gas.gamma - 1.0);
                    let dt = (dp - eos.temperature.clone() * gas.gas_constant * grad.at(0, i))
                        / (rho.clone() * gas.gas_constant);
                    let q_i = -(dt * k);
                    for j in 0..d_x {
                        out.set(1 + j, i, tau.at(j, i).clone() * scale);
                    }
                    out.set(m - 1, i, -(q_i * scale));
                }
                out
            }
            (_, Constitutive::Flux) => {
                let eps = self.eps();
                SMat::from_fn(m, d_x, |r, c| grad.at(r, c).clone() * eps)
            }
            (_, Constitutive::ScaledFlux) => {
                let s = self.eps().sqrt();
                SMat::from_fn(m, d_x, |r, c| grad.at(r, c).clone() * s)
            }
            _ => panic!("constitutive choice does not match the governing system"),
        }
    }

    /// Viscous flux expressed through the auxiliary variable.
    pub fn viscous_from_aux<S: Scalar>(&self, y: &[S], sigma: &SMat<S>) -> SMat<S> {
        let (m, d_x) = (self.m(), self.d_x());
        assert_eq!((sigma.rows, sigma.cols), (m, d_x));
        match (&self.equations, self.constitutive) {
            (_, Constitutive::Gradient) => {
                let eps = self.eps();
                SMat::from_fn(m, d_x, |r, c| sigma.at(r, c).clone() * eps)
            }
            (_, Constitutive::Flux) => sigma.clone(),
            (_, Constitutive::ScaledFlux) => {
                let s = self.eps().sqrt();
                SMat::from_fn(m, d_x, |r, c| sigma.at(r, c).clone() * s)
            }
            (Equations::NavierStokes { gas, .. }, Constitutive::NsScaled) => {
                let scale = gas.mu_inf.sqrt();
                let rho = &y[0];
                let v: Vec<S> = (0..d_x).map(|i| y[1 + i].clone() / rho).collect();
                let mut out = SMat::zeros(m, d_x);
                for i in 0..d_x {
                    for r in 0..=d_x {
                        out.set(r, i, sigma.at(r, i).clone() * scale);
                    }
                    let mut energy = sigma.at(m - 1, i).clone();
                    for j in 0..d_x {
                        energy = energy + sigma.at(1 + j, i).clone() * &v[j];
                    }
                    out.set(m - 1, i, energy * scale);
                }
                out
            }
            _ => panic!("constitutive choice does not match the governing system"),
        }
    }

    /// Total flux: convective minus viscous, with the state itself as the
    /// temporal column for space-time problems.
    pub fn total_flux<S: Scalar>(&self, y: &[S], sigma: &SMat<S>) -> SMat<S> {
        let (m, d_x, d) = (self.m(), self.d_x(), self.d());
        let conv = self.convective(y);
        let visc = self.viscous_from_aux(y, sigma);
        SMat::from_fn(m, d, |r, c| {
            if c < d_x {
                conv.at(r, c).clone() - visc.at(r, c)
            } else {
                y[r].clone()
            }
        })
    }
}

/// Viscous stress tensor from a velocity gradient (dv_j/dx_i in column i),
/// with the 2/3 divergence subtraction on the diagonal.
pub fn viscous_stress<S: Scalar>(mu: f64, grad_v: &SMat<S>) -> SMat<S> {
    let d = grad_v.rows;
    let mut div = S::zero();
    for i in 0..d {
        div = div + grad_v.at(i, i);
    }
    SMat::from_fn(d, d, |j, i| {
        let mut t = (grad_v.at(j, i).clone() + grad_v.at(i, j)) * mu;
        if i == j {
            t = t - div.clone() * (2.0 * mu / 3.0);
        }
        t
    })
}

/// Analytic flux and constitutive derivatives at a state.
pub struct FluxDerivatives {
    /// Per flux direction: d(total flux column)/dy, an m-by-m matrix.
    pub dflux_dy: Vec<DMatrix<f64>>,
    /// Per flux direction: d(total flux column)/dsigma, m by (m d_x).
    pub dflux_dsigma: Vec<DMatrix<f64>>,
    /// d(G(y) grad)/dy at fixed grad, (m d_x) by m.
    pub dconstitutive_dy: DMatrix<f64>,
}

/// Derivatives of the total flux and constitutive application, exact to
/// round-off, for checks and diagnostics.
pub fn flux_derivatives(model: &FluxModel, y: &[f64], sigma: &DMatrix<f64>) -> FluxDerivatives {
    let (m, d_x, d) = (model.m(), model.d_x(), model.d());
    let n_vars = m + m * d_x;
    let yj: Vec<Jet> = (0..m).map(|i| Jet::variable(y[i], i, n_vars)).collect();
    let sj = SMat::from_fn(m, d_x, |r, c| {
        Jet::variable(sigma[(r, c)], m + r * d_x + c, n_vars)
    });
    let flux = model.total_flux(&yj, &sj);
    let mut dflux_dy = Vec::with_capacity(d);
    let mut dflux_dsigma = Vec::with_capacity(d);
    for col in 0..d {
        dflux_dy.push(DMatrix::from_fn(m, m, |r, k| flux.at(r, col).deriv(k)));
        dflux_dsigma.push(DMatrix::from_fn(m, m * d_x, |r, k| {
            flux.at(r, col).deriv(m + k)
        }));
    }
    let grad = SMat::from_fn(m, d_x, |r, c| Jet::constant(sigma[(r, c)]));
    let applied = model.constitutive_apply(&yj, &grad);
    let dconstitutive_dy = DMatrix::from_fn(m * d_x, m, |rk, k| {
        let (r, c) = (rk / d_x, rk % d_x);
        applied.at(r, c).deriv(k)
    });
    FluxDerivatives {
        dflux_dy,
        dflux_dsigma,
        dconstitutive_dy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn ns2d() -> FluxModel {
        FluxModel::navier_stokes(GasModel::air(1e-3), 2, false)
    }

    #[test]
    fn burgers_convective_flux() {
        let model = FluxModel::burgers(0.0, false);
        let f = model.convective(&[2.0]);
        assert_eq!(*f.at(0, 0), 2.0);
    }

    #[test]
    fn advection_flux_is_linear() {
        let model = FluxModel::advection_diffusion(vec![3.0], 0.0, false);
        let f = model.convective(&[1.5]);
        assert_eq!(*f.at(0, 0), 4.5);
    }

    #[test]
    fn compressible_flux_at_rest() {
        let model = ns2d();
        let f = model.convective(&[1.0, 0.0, 0.0, 1.0]);
        let expect = [[0.0, 0.4, 0.0, 0.0], [0.0, 0.0, 0.4, 0.0]];
        for i in 0..2 {
            for r in 0..4 {
                assert!((f.at(r, i) - expect[i][r]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn eos_examples() {
        let model = ns2d();
        let e = model.eos(&[1.0f64, 0.0, 0.0, 1.0]);
        assert!((e.pressure - 0.4).abs() < 1e-15);
        assert!((e.enthalpy - 1.4).abs() < 1e-15);
        let e2 = model.eos(&[1.0f64, 1.0, 0.0, 1.0]);
        assert!((e2.pressure - 0.2).abs() < 1e-15);
        // Nondimensional freestream with unit density and sound speed.
        let gamma = 1.4;
        let p_inf = 1.0 / gamma;
        let y = [1.0f64, 0.0, 0.0, p_inf / (gamma - 1.0)];
        let e3 = model.eos(&y);
        assert!((e3.pressure - p_inf).abs() < 1e-15);
        assert!((e3.sound_speed - 1.0).abs() < 1e-14);
    }

    #[test]
    fn admissibility_rejects_vacuum_and_negative_pressure() {
        let model = ns2d();
        assert!(model.check_admissible(&[0.0, 0.0, 0.0, 1.0]).is_err());
        assert!(model.check_admissible(&[1.0, 2.0, 0.0, 1.0]).is_err());
        assert!(model.check_admissible(&[1.0, 0.2, 0.0, 1.0]).is_ok());
    }

    #[test]
    fn gradient_constitutive_is_identity() {
        let mut model = FluxModel::advection_diffusion(vec![1.0, 0.5], 1e-2, false);
        model.constitutive = Constitutive::Gradient;
        let grad = SMat::from_fn(1, 2, |_, c| if c == 0 { 3.0 } else { -1.0 });
        let g = model.constitutive_apply(&[0.7], &grad);
        assert_eq!(*g.at(0, 0), 3.0);
        assert_eq!(*g.at(0, 1), -1.0);
    }

    #[test]
    fn scaled_flux_scales_by_sqrt_eps() {
        let model = FluxModel::advection_diffusion(vec![1.0], 1e-4, false);
        let grad = SMat::from_fn(1, 1, |_, _| 1.0);
        let g = model.constitutive_apply(&[0.0], &grad);
        assert!((g.at(0, 0) - 0.01).abs() < 1e-16);
    }

    #[test]
    fn compressible_constitutive_zero_gradient() {
        let model = ns2d();
        let grad = SMat::zeros(4, 2);
        let g = model.constitutive_apply(&[1.0, 0.3, -0.1, 1.5], &grad);
        for r in 0..4 {
            for c in 0..2 {
                assert_eq!(*g.at(r, c), 0.0);
            }
        }
    }

    #[test]
    fn compressible_constitutive_pure_shear() {
        // Uniform rho and T, velocity (v1(x2), 0): only tau_12 = tau_21 = mu.
        let model = ns2d();
        let (rho, v1) = (1.2, 0.8);
        let gas = match &model.equations {
            Equations::NavierStokes { gas, .. } => gas.clone(),
            _ => unreachable!(),
        };
        let p = 1.0;
        let y = [rho, rho * v1, 0.0, p / (gas.gamma - 1.0) + 0.5 * rho * v1 * v1];
        // d(rho v1)/dx2 = rho (dv1/dx2 = 1), d(rho E)/dx2 = rho v1.
        let mut grad = SMat::zeros(4, 2);
        grad.set(1, 1, rho);
        grad.set(3, 1, rho * v1);
        let g = model.constitutive_apply(&y, &grad);
        let scale = gas.mu_inf.sqrt().recip();
        assert!(g.at(0, 0).abs() < 1e-14 && g.at(0, 1).abs() < 1e-14);
        assert!((g.at(1, 1) - scale * gas.mu).abs() < 1e-12, "tau_12");
        assert!((g.at(2, 0) - scale * gas.mu).abs() < 1e-12, "tau_21");
        assert!(g.at(1, 0).abs() < 1e-12 && g.at(2, 1).abs() < 1e-12, "diag");
        assert!(g.at(3, 0).abs() < 1e-12 && g.at(3, 1).abs() < 1e-12, "q");
    }

    #[test]
    fn zero_auxiliary_gives_zero_viscous_flux() {
        let model = ns2d();
        let f = model.viscous_from_aux(&[1.0, 0.2, 0.1, 1.1], &SMat::zeros(4, 2));
        for r in 0..4 {
            for c in 0..2 {
                assert_eq!(*f.at(r, c), 0.0);
            }
        }
    }

    #[test]
    fn scaled_flux_round_trip_recovers_linear_viscous_flux() {
        let eps = 1e-3;
        let model = FluxModel::burgers(eps, false);
        let grad = SMat::from_fn(1, 1, |_, _| 2.0);
        let sigma = model.constitutive_apply(&[0.4], &grad);
        let f = model.viscous_from_aux(&[0.4], &sigma);
        assert!((f.at(0, 0) - eps * 2.0).abs() < 1e-15);
    }

    /// Direct evaluation of the viscous flux from state and gradient.
    fn direct_viscous(model: &FluxModel, y: &[f64], grad: &SMat<f64>) -> SMat<f64> {
        let Equations::NavierStokes { gas, spatial_dim } = &model.equations else {
            unreachable!()
        };
        let d_x = *spatial_dim;
        let rho = y[0];
        let v: Vec<f64> = (0..d_x).map(|i| y[1 + i] / rho).collect();
        let grad_v =
            SMat::from_fn(d_x, d_x, |j, i| (grad.at(1 + j, i) - v[j] * grad.at(0, i)) / rho);
        let tau = viscous_stress(gas.mu, &grad_v);
        let eos = model.eos(y);
        let mut out = SMat::zeros(d_x + 2, d_x);
        for i in 0..d_x {
            let mut dkin = 0.0;
            for j in 0..d_x {
                dkin += 0.5 * (grad.at(1 + j, i) * v[j] + y[1 + j] * grad_v.at(j, i));
            }
            let dp = (gas.gamma - 1.0) * (grad.at(d_x + 1, i) - dkin);
            let dt = (dp - eos.temperature * gas.gas_constant * grad.at(0, i))
                / (rho * gas.gas_constant);
            let q_i = -gas.conductivity() * dt;
            let mut energy = -q_i;
            for j in 0..d_x {
                out.set(1 + j, i, *tau.at(j, i));
                energy += tau.at(i, j) * v[j];
            }
            out.set(d_x + 1, i, energy);
        }
        out
    }

    #[test]
    fn auxiliary_round_trip_matches_direct_viscous_flux() {
        let model = ns2d();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let y = [
                0.5 + rng.random::<f64>(),
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                2.0 + rng.random::<f64>(),
            ];
            let grad = SMat::from_fn(4, 2, |_, _| rng.random::<f64>() - 0.5);
            let sigma = model.constitutive_apply(&y, &grad);
            let via_aux = model.viscous_from_aux(&y, &sigma);
            let direct = direct_viscous(&model, &y, &grad);
            for r in 0..4 {
                for c in 0..2 {
                    let scale = direct.at(r, c).abs().max(1.0);
                    assert!(
                        (via_aux.at(r, c) - direct.at(r, c)).abs() / scale < 1e-12,
                        "entry ({r},{c}): {} vs {}",
                        via_aux.at(r, c),
                        direct.at(r, c)
                    );
                }
            }
        }
    }

    #[test]
    fn mass_row_of_consistent_viscous_flux_vanishes() {
        let model = ns2d();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let y = [
                0.5 + rng.random::<f64>(),
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                2.0 + rng.random::<f64>(),
            ];
            let grad = SMat::from_fn(4, 2, |_, _| rng.random::<f64>() - 0.5);
            let sigma = model.constitutive_apply(&y, &grad);
            let f = model.viscous_from_aux(&y, &sigma);
            assert!(f.at(0, 0).abs() < 1e-14 && f.at(0, 1).abs() < 1e-14);
        }
    }

    #[test]
    fn constitutive_is_linear_in_gradient() {
        let model = ns2d();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let y = [1.1, 0.3, -0.2, 2.4];
        for _ in 0..20 {
            let g1 = SMat::from_fn(4, 2, |_, _| rng.random::<f64>() - 0.5);
            let g2 = SMat::from_fn(4, 2, |_, _| rng.random::<f64>() - 0.5);
            let (a, b) = (1.7, -0.6);
            let combo = SMat::from_fn(4, 2, |r, c| a * g1.at(r, c) + b * g2.at(r, c));
            let lhs = model.constitutive_apply(&y, &combo);
            let r1 = model.constitutive_apply(&y, &g1);
            let r2 = model.constitutive_apply(&y, &g2);
            for r in 0..4 {
                for c in 0..2 {
                    let rhs = a * r1.at(r, c) + b * r2.at(r, c);
                    assert!((lhs.at(r, c) - rhs).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn spacetime_flux_appends_state_column() {
        let model = FluxModel::burgers(0.0, true);
        let f = model.total_flux(&[0.2], &SMat::zeros(1, 1));
        assert!((f.at(0, 0) - 0.02).abs() < 1e-16);
        assert!((f.at(0, 1) - 0.2).abs() < 1e-16);
    }

    #[test]
    fn zero_state_zero_flux() {
        let model = FluxModel::burgers(1e-3, true);
        let f = model.total_flux(&[0.0], &SMat::zeros(1, 1));
        assert_eq!(*f.at(0, 0), 0.0);
        assert_eq!(*f.at(0, 1), 0.0);
    }

    #[test]
    fn stress_trace_vanishes_in_three_dimensions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let grad_v = SMat::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5);
            let tau = viscous_stress(0.37, &grad_v);
            let trace = tau.at(0, 0) + tau.at(1, 1) + tau.at(2, 2);
            assert!(trace.abs() < 1e-14, "trace = {trace}");
        }
    }

    #[test]
    fn burgers_flux_derivative_example() {
        let model = FluxModel::burgers(1e-2, false);
        let d = flux_derivatives(&model, &[2.0], &DMatrix::zeros(1, 1));
        assert!((d.dflux_dy[0][(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn advection_flux_sigma_derivative_is_constant() {
        let eps = 1e-2;
        let model = FluxModel::advection_diffusion(vec![1.0], eps, false);
        let d = flux_derivatives(&model, &[0.3], &DMatrix::from_element(1, 1, 0.7));
        assert!((d.dflux_dsigma[0][(0, 0)] + eps.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let models: Vec<FluxModel> = vec![
            FluxModel::advection_diffusion(vec![1.0, -0.4], 1e-2, false),
            FluxModel::burgers(1e-3, true),
            ns2d(),
            FluxModel::navier_stokes(GasModel::air(2e-3), 1, true),
        ];
        for model in &models {
            let (m, d_x, d) = (model.m(), model.d_x(), model.d());
            let y: Vec<f64> = match &model.equations {
                Equations::NavierStokes { .. } => {
                    let mut y = vec![0.8 + rng.random::<f64>()];
                    for _ in 0..d_x {
                        y.push(rng.random::<f64>() - 0.5);
                    }
                    y.push(2.0 + rng.random::<f64>());
                    y
                }
                _ => vec![rng.random::<f64>() + 0.3],
            };
            let sigma = DMatrix::from_fn(m, d_x, |_, _| rng.random::<f64>() - 0.5);
            let der = flux_derivatives(model, &y, &sigma);
            let h = 1e-6;
            let flux_at = |y: &[f64], s: &DMatrix<f64>| -> SMat<f64> {
                let sm = SMat::from_fn(m, d_x, |r, c| s[(r, c)]);
                model.total_flux(y, &sm)
            };
            for k in 0..m {
                let mut yp = y.clone();
                let mut ym = y.clone();
                let step = h * y[k].abs().max(1.0);
                yp[k] += step;
                ym[k] -= step;
                let fp = flux_at(&yp, &sigma);
                let fm = flux_at(&ym, &sigma);
                for col in 0..d {
                    for r in 0..m {
                        let fd = (fp.at(r, col) - fm.at(r, col)) / (2.0 * step);
                        let an = der.dflux_dy[col][(r, k)];
                        let scale = an.abs().max(1.0);
                        assert!(
                            (an - fd).abs() / scale < 1e-6,
                            "dF/dy[{r},{col};{k}]: {an} vs {fd}"
                        );
                    }
                }
            }
            for rk in 0..m * d_x {
                let (r0, c0) = (rk / d_x, rk % d_x);
                let mut sp = sigma.clone();
                let mut sm = sigma.clone();
                let step = h * sigma[(r0, c0)].abs().max(1.0);
                sp[(r0, c0)] += step;
                sm[(r0, c0)] -= step;
                let fp = flux_at(&y, &sp);
                let fm = flux_at(&y, &sm);
                for col in 0..d {
                    for r in 0..m {
                        let fd = (fp.at(r, col) - fm.at(r, col)) / (2.0 * step);
                        let an = der.dflux_dsigma[col][(r, rk)];
                        let scale = an.abs().max(1.0);
                        assert!(
                            (an - fd).abs() / scale < 1e-6,
                            "dF/dsigma[{r},{col};{rk}]: {an} vs {fd}"
                        );
                    }
                }
            }
        }
    }
}
