//! Implicit Newmark-β integration, 1-D elastoplastic material relations and
//! a synthetic impact scenario that renders its element stresses as frames.
//!
//! Units follow the tonne–millimetre–second convention: masses in t,
//! stiffnesses in N/mm, forces in N, stresses in MPa.
//!
//! Two printed relations are implemented in their standard mechanical form:
//! the initial acceleration uses `M⁻¹ (F − C ṙ − K r)` and the mean stress of
//! the deviator is `tr(σ) / 3`. The effective load uses the usual Newmark
//! pairing `M (a0 r + a2 ṙ + a3 r̈) + C (a1 r + a4 ṙ + a5 r̈)`, which is the
//! one consistent with the acceleration update.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{CoreError, Result};
use crate::imaging::{render_field, FrameMeta, FrameSequence, Source};

pub type ForceFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// External load as a function of time.
#[derive(Clone)]
pub enum Force {
    Zero,
    Constant(DVector<f64>),
    Function(ForceFn),
}

impl Force {
    pub fn at(&self, t: f64, n: usize) -> DVector<f64> {
        match self {
            Force::Zero => DVector::zeros(n),
            Force::Constant(f) => f.clone(),
            Force::Function(f) => f(t),
        }
    }
}

impl fmt::Debug for Force {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Force::Zero => write!(f, "Force::Zero"),
            Force::Constant(v) => write!(f, "Force::Constant({:?})", v.as_slice()),
            Force::Function(_) => write!(f, "Force::Function(..)"),
        }
    }
}

/// Unilateral spring against a rigid stop: pushes back on `dof` only while
/// its displacement is positive (penetration).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopSpring {
    pub dof: usize,
    pub stiffness: f64,
}

#[derive(Clone, Debug)]
pub struct DynamicSystem {
    mass: DMatrix<f64>,
    damping: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    force: Force,
    stop: Option<StopSpring>,
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

impl DynamicSystem {
    pub fn new(mass: DMatrix<f64>, damping: DMatrix<f64>, stiffness: DMatrix<f64>, force: Force) -> Result<Self> {
        let n = mass.nrows();
        if n == 0 {
            return Err(CoreError::InvalidArgument("system needs at least one degree of freedom".into()));
        }
        for (name, m) in [("mass", &mass), ("damping", &damping), ("stiffness", &stiffness)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(CoreError::DimensionMismatch(format!(
                    "{name} matrix is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        if !is_symmetric(&mass) || mass.clone().cholesky().is_none() {
            return Err(CoreError::Singular(
                "mass matrix must be symmetric positive definite".into(),
            ));
        }
        if !is_symmetric(&stiffness) {
            return Err(CoreError::InvalidArgument("stiffness matrix must be symmetric".into()));
        }
        let min_eig = stiffness.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-9 * stiffness.amax().max(1.0) {
            return Err(CoreError::InvalidArgument(format!(
                "stiffness matrix must be positive semi-definite (eigenvalue {min_eig})"
            )));
        }
        if let Force::Constant(f) = &force {
            if f.len() != n {
                return Err(CoreError::DimensionMismatch(format!(
                    "force has {} entries, system has {n}",
                    f.len()
                )));
            }
        }
        Ok(Self {
            mass,
            damping,
            stiffness,
            force,
            stop: None,
        })
    }

    /// Single-degree-of-freedom oscillator.
    pub fn sdof(mass: f64, damping: f64, stiffness: f64, force: Force) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, mass),
            DMatrix::from_element(1, 1, damping),
            DMatrix::from_element(1, 1, stiffness),
            force,
        )
    }

    pub fn with_stop(mut self, stop: StopSpring) -> Result<Self> {
        if stop.dof >= self.dofs() || !(stop.stiffness > 0.0) {
            return Err(CoreError::InvalidArgument(format!("invalid stop spring {stop:?}")));
        }
        self.stop = Some(stop);
        Ok(self)
    }

    pub fn dofs(&self) -> usize {
        self.mass.nrows()
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn force_at(&self, t: f64) -> DVector<f64> {
        self.force.at(t, self.dofs())
    }

    fn stop_active(&self, r: &DVector<f64>) -> bool {
        self.stop.is_some_and(|s| r[s.dof] > 0.0)
    }

    /// Tangent stiffness with the stop spring engaged or not.
    fn stiffness_with(&self, engaged: bool) -> DMatrix<f64> {
        let mut k = self.stiffness.clone();
        if let (true, Some(s)) = (engaged, self.stop) {
            k[(s.dof, s.dof)] += s.stiffness;
        }
        k
    }

    /// `½ ṙᵀ M ṙ + ½ rᵀ K r` (stop spring included while engaged).
    pub fn energy(&self, state: &DynamicState) -> f64 {
        let k = self.stiffness_with(self.stop_active(&state.displacement));
        0.5 * state.velocity.dot(&(&self.mass * &state.velocity))
            + 0.5 * state.displacement.dot(&(&k * &state.displacement))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicState {
    pub time: f64,
    pub displacement: DVector<f64>,
    pub velocity: DVector<f64>,
    pub acceleration: DVector<f64>,
}

impl DynamicState {
    /// State at `t = 0` with the acceleration from the equation of motion.
    pub fn initial(system: &DynamicSystem, r0: DVector<f64>, v0: DVector<f64>) -> Result<Self> {
        let a0 = initial_acceleration(system, &r0, &v0)?;
        Ok(Self {
            time: 0.0,
            displacement: r0,
            velocity: v0,
            acceleration: a0,
        })
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.displacement.len() != n || self.velocity.len() != n || self.acceleration.len() != n {
            return Err(CoreError::DimensionMismatch(format!("state vectors must have {n} entries")));
        }
        Ok(())
    }
}

/// Newmark integration constants `a0..a7`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewmarkCoefficients {
    pub beta: f64,
    pub gamma: f64,
    pub dt: f64,
    pub a: [f64; 8],
}

pub fn newmark_coefficients(beta: f64, gamma: f64, dt: f64) -> Result<NewmarkCoefficients> {
    if !(beta > 0.0) || !(dt > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "Newmark needs beta > 0 and dt > 0 (beta = {beta}, dt = {dt})"
        )));
    }
    let a = [
        1.0 / (beta * dt * dt),
        gamma / (beta * dt),
        1.0 / (beta * dt),
        1.0 / (2.0 * beta) - 1.0,
        gamma / beta - 1.0,
        dt * (gamma / (2.0 * beta) - 1.0),
        dt * (1.0 - gamma),
        gamma * dt,
    ];
    Ok(NewmarkCoefficients { beta, gamma, dt, a })
}

/// `r̈₀ = M⁻¹ [F(0) − C ṙ₀ − K r₀]`.
pub fn initial_acceleration(system: &DynamicSystem, r0: &DVector<f64>, v0: &DVector<f64>) -> Result<DVector<f64>> {
    let n = system.dofs();
    if r0.len() != n || v0.len() != n {
        return Err(CoreError::DimensionMismatch(format!("initial vectors must have {n} entries")));
    }
    let k = system.stiffness_with(system.stop_active(r0));
    let rhs = system.force_at(0.0) - &system.damping * v0 - k * r0;
    system
        .mass
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CoreError::Singular("mass matrix".into()))
}

/// Advance one step. With a stop spring the contact state is re-linearized:
/// the solve is repeated with the engagement implied by the new displacement
/// until it stops changing.
pub fn newmark_step(state: &DynamicState, system: &DynamicSystem, coeffs: &NewmarkCoefficients) -> Result<DynamicState> {
    let n = system.dofs();
    state.check(n)?;
    let [a0, a1, a2, a3, a4, a5, a6, a7] = coeffs.a;
    let (r, v, acc) = (&state.displacement, &state.velocity, &state.acceleration);
    let t_next = state.time + coeffs.dt;
    let load = system.force_at(t_next)
        + &system.mass * (r * a0 + v * a2 + acc * a3)
        + &system.damping * (r * a1 + v * a4 + acc * a5);
    let dyn_part = &system.mass * a0 + &system.damping * a1;

    let mut engaged = system.stop_active(r);
    let mut r_next = DVector::zeros(n);
    for _ in 0..4 {
        let k_eff = system.stiffness_with(engaged) + &dyn_part;
        r_next = k_eff
            .lu()
            .solve(&load)
            .ok_or_else(|| CoreError::Singular("effective stiffness matrix".into()))?;
        let now = system.stop_active(&r_next);
        if now == engaged {
            break;
        }
        engaged = now;
    }
    let acc_next = (&r_next - r) * a0 - v * a2 - acc * a3;
    let v_next = v + acc * a6 + &acc_next * a7;
    let next = DynamicState {
        time: t_next,
        displacement: r_next,
        velocity: v_next,
        acceleration: acc_next,
    };
    let finite = next.displacement.iter().chain(next.velocity.iter()).chain(next.acceleration.iter()).all(|x| x.is_finite());
    if !finite {
        return Err(CoreError::Diverged {
            step: 0,
            time: t_next,
        });
    }
    Ok(next)
}

pub fn shear_modulus(young: f64, poisson: f64) -> f64 {
    young / (2.0 * (1.0 + poisson))
}

/// Isotropic compliance: `{σx, σy, σz, σxy, σxz, σyz}` to
/// `{εx, εy, εz, γxy, γxz, γyz}` with engineering shear strains.
pub fn strain_from_stress(stress: [f64; 6], young: f64, poisson: f64) -> Result<[f64; 6]> {
    if !(young > 0.0) {
        return Err(CoreError::InvalidArgument(format!("Young's modulus must be positive, got {young}")));
    }
    let [sx, sy, sz, sxy, sxz, syz] = stress;
    let g = shear_modulus(young, poisson);
    Ok([
        (sx - poisson * (sy + sz)) / young,
        (sy - poisson * (sx + sz)) / young,
        (sz - poisson * (sx + sy)) / young,
        sxy / g,
        sxz / g,
        syz / g,
    ])
}

/// `S = σ − (tr σ / 3) I`.
pub fn deviatoric_stress(stress: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let scale = stress.amax().max(f64::MIN_POSITIVE);
    if (stress - stress.transpose()).amax() > 1e-12 * scale {
        return Err(CoreError::InvalidArgument("stress tensor must be symmetric".into()));
    }
    let mean = stress.trace() / 3.0;
    Ok(stress - Matrix3::identity() * mean)
}

/// Trapezoidal `∫ σ dε` along a monotone loading path starting at the origin.
pub fn strain_energy_density(path: &[(f64, f64)]) -> Result<f64> {
    let Some(&(e0, s0)) = path.first() else {
        return Ok(0.0);
    };
    if e0 != 0.0 || s0 != 0.0 {
        return Err(CoreError::InvalidArgument(format!("path must start at (0, 0), got ({e0}, {s0})")));
    }
    let mut total = 0.0;
    for (i, w) in path.windows(2).enumerate() {
        let ((ea, sa), (eb, sb)) = (w[0], w[1]);
        if eb < ea {
            return Err(CoreError::InvalidArgument(format!(
                "strain decreases at point {} ({eb} < {ea}); unloading is not supported",
                i + 1
            )));
        }
        total += 0.5 * (sa + sb) * (eb - ea);
    }
    Ok(total)
}

/// Uniaxial elastoplastic material with a tabulated hardening curve.
#[derive(Clone, Debug, PartialEq)]
pub struct Material1D {
    pub young: f64,
    pub poisson: f64,
    /// `(plastic strain, yield stress MPa)`, strictly increasing in both.
    pub hardening: Vec<(f64, f64)>,
}

impl Material1D {
    pub fn new(young: f64, poisson: f64, hardening: Vec<(f64, f64)>) -> Result<Self> {
        if !(young > 0.0) || !(poisson > 0.0 && poisson < 0.5) {
            return Err(CoreError::InvalidArgument(format!(
                "need E > 0 and 0 < nu < 0.5 (E = {young}, nu = {poisson})"
            )));
        }
        match hardening.first() {
            Some(&(ep, _)) if ep == 0.0 => {}
            _ => {
                return Err(CoreError::InvalidArgument(
                    "hardening curve must start at zero plastic strain".into(),
                ))
            }
        }
        if hardening.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1)) {
            return Err(CoreError::InvalidArgument(
                "hardening curve must increase strictly in both columns".into(),
            ));
        }
        Ok(Self {
            young,
            poisson,
            hardening,
        })
    }

    /// Al alloy 6061-T6.
    pub fn aluminium_6061_t6() -> Self {
        Self::new(
            71_275.0,
            0.33,
            vec![
                (0.0, 241.5),
                (0.0069, 263.0),
                (0.0217, 278.8),
                (0.0921, 318.8),
                (0.1408, 346.7),
                (0.1914, 374.5),
                (0.2181, 388.8),
                (0.2862, 423.8),
                (0.3728, 464.3),
                (0.4078, 473.6),
            ],
        )
        .expect("tabulated material is valid")
    }

    pub fn initial_yield(&self) -> f64 {
        self.hardening[0].1
    }

    /// Stress magnitude for a monotonically loaded total strain, sign preserved:
    /// elastic up to first yield, then `σ = H(|ε| − σ / E)`.
    pub fn stress(&self, strain: f64) -> f64 {
        let e = strain.abs();
        let elastic = self.young * e;
        if elastic <= self.initial_yield() {
            return elastic.copysign(strain);
        }
        // g(σ) = σ − H(e − σ/E) is increasing; bracket [σy, E e].
        let (mut lo, mut hi) = (self.initial_yield(), elastic);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let g = mid - uniaxial_yield_stress((e - mid / self.young).max(0.0), self);
            if g > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-13 * hi {
                break;
            }
        }
        (0.5 * (lo + hi)).copysign(strain)
    }
}

/// Piecewise-linear hardening curve, constant beyond the last row.
pub fn uniaxial_yield_stress(plastic_strain: f64, material: &Material1D) -> f64 {
    let h = &material.hardening;
    let ep = plastic_strain.max(0.0);
    let last = h[h.len() - 1];
    if ep >= last.0 {
        return last.1;
    }
    let i = h.partition_point(|&(x, _)| x <= ep) - 1;
    let (x0, y0) = h[i];
    let (x1, y1) = h[i + 1];
    if ep == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (ep - x0) / (x1 - x0)
}

/// Mass chain striking a rigid stop through a unilateral spring.
///
/// Mass 0 faces the stop and rests against it at `t = 0` while the rest of
/// the chain moves towards it; positive displacement points towards the
/// stop. Element
/// `i` joins masses `i` and `i + 1`; its compressive strain is
/// `(u[i+1] − u[i]) / element_length`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpactScenario {
    pub masses: Vec<f64>,
    pub stiffnesses: Vec<f64>,
    /// Rayleigh damping `C = alpha M + beta K`.
    pub damping_alpha: f64,
    pub damping_beta: f64,
    /// Initial velocity of every mass behind the front one, mm/s.
    pub initial_velocity: f64,
    /// Force on the last mass towards the stop, N, reached after `push_ramp`.
    pub push_force: f64,
    /// Duration of the half-cosine ramp of the push force, s.
    pub push_ramp: f64,
    pub stop_stiffness: f64,
    pub element_length: f64,
    pub newmark_beta: f64,
    pub newmark_gamma: f64,
    pub dt: f64,
    pub duration: f64,
    /// Integration steps between recorded frames.
    pub frame_stride: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Upper end of the rendered stress range, MPa.
    pub stress_range: f64,
    pub material: Material1D,
}

impl Default for ImpactScenario {
    fn default() -> Self {
        Self {
            masses: vec![8.0e-2; 8],
            stiffnesses: vec![7.0e4; 7],
            damping_alpha: 250.0,
            damping_beta: 8.0e-4,
            initial_velocity: 70.0,
            push_force: 1180.0,
            push_ramp: 5.0e-3,
            stop_stiffness: 7.0e4,
            element_length: 10.0,
            newmark_beta: 0.25,
            newmark_gamma: 0.5,
            dt: 1.0e-5,
            duration: 0.0398,
            frame_stride: 20,
            frame_height: 64,
            frame_width: 64,
            stress_range: 300.0,
            material: Material1D::aluminium_6061_t6(),
        }
    }
}

impl ImpactScenario {
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn frame_count(&self) -> usize {
        self.steps() / self.frame_stride + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidArgument(m));
        let n = self.masses.len();
        if n < 2 {
            return bad("impact chain needs at least two masses".into());
        }
        if self.stiffnesses.len() != n - 1 {
            return bad(format!("{} masses need {} stiffnesses, got {}", n, n - 1, self.stiffnesses.len()));
        }
        if self.masses.iter().chain(&self.stiffnesses).any(|&v| !(v > 0.0)) {
            return bad("masses and stiffnesses must be positive".into());
        }
        if !(self.dt > 0.0) || !(self.duration > 0.0) || self.frame_stride == 0 {
            return bad("dt, duration and frame stride must be positive".into());
        }
        if self.damping_alpha < 0.0 || self.damping_beta < 0.0 || self.push_ramp < 0.0 {
            return bad("damping coefficients and push ramp must be non-negative".into());
        }
        if !(self.stop_stiffness > 0.0) || !(self.element_length > 0.0) || !(self.stress_range > 0.0) {
            return bad("stop stiffness, element length and stress range must be positive".into());
        }
        if self.frame_count() < 10 {
            return bad(format!("scenario yields {} frames, at least 10 required", self.frame_count()));
        }
        Ok(())
    }

    pub fn system(&self) -> Result<DynamicSystem> {
        let n = self.masses.len();
        let m = DMatrix::from_diagonal(&DVector::from_vec(self.masses.clone()));
        let mut k = DMatrix::zeros(n, n);
        for (i, &ki) in self.stiffnesses.iter().enumerate() {
            k[(i, i)] += ki;
            k[(i + 1, i + 1)] += ki;
            k[(i, i + 1)] -= ki;
            k[(i + 1, i)] -= ki;
        }
        let c = &m * self.damping_alpha + &k * self.damping_beta;
        let (push, ramp) = (self.push_force, self.push_ramp);
        let force = Force::Function(Arc::new(move |t| {
            let level = if t >= ramp { 1.0 } else { 0.5 * (1.0 - (std::f64::consts::PI * t / ramp).cos()) };
            let mut f = DVector::zeros(n);
            f[n - 1] = push * level;
            f
        }));
        DynamicSystem::new(m, c, k, force)?.with_stop(StopSpring {
            dof: 0,
            stiffness: self.stop_stiffness,
        })
    }

    /// Element stresses (MPa, compression positive) for a displacement vector.
    pub fn element_stresses(&self, displacement: &DVector<f64>) -> Vec<f64> {
        (0..self.masses.len() - 1)
            .map(|i| {
                let strain = (displacement[i + 1] - displacement[i]) / self.element_length;
                self.material.stress(strain)
            })
            .collect()
    }
}

/// Integrate a scenario and render one frame every `frame_stride` steps.
pub fn generate_sequence(scenario: &ImpactScenario) -> Result<FrameSequence> {
    scenario.validate()?;
    let system = scenario.system()?;
    let n = system.dofs();
    let coeffs = newmark_coefficients(scenario.newmark_beta, scenario.newmark_gamma, scenario.dt)?;
    let mut v0 = DVector::from_element(n, scenario.initial_velocity);
    v0[0] = 0.0;
    let mut state = DynamicState::initial(&system, DVector::zeros(n), v0)?;
    let steps = scenario.steps();
    let mut frames = Vec::with_capacity(scenario.frame_count());
    let mut record = |step: usize, state: &DynamicState| -> Result<()> {
        let stresses = scenario.element_stresses(&state.displacement);
        let magnitudes: Vec<f64> = stresses.iter().map(|s| s.abs()).collect();
        let objective = magnitudes.iter().copied().fold(0.0, f64::max);
        let frame = render_field(
            &magnitudes,
            (0.0, scenario.stress_range),
            scenario.frame_height,
            scenario.frame_width,
        )?;
        frames.push(frame.with_meta(FrameMeta {
            iteration_index: step / scenario.frame_stride,
            time: step as f64 * scenario.dt,
            objective,
            source: Source::Simulated,
        }));
        Ok(())
    };
    record(0, &state)?;
    for step in 1..=steps {
        state = newmark_step(&state, &system, &coeffs).map_err(|e| match e {
            CoreError::Diverged { time, .. } => CoreError::Diverged { step, time },
            other => other,
        })?;
        if step % scenario.frame_stride == 0 {
            record(step, &state)?;
        }
    }
    FrameSequence::new(frames, "impact-simulation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn coefficient_values() {
        let c = newmark_coefficients(0.25, 0.5, 0.01).unwrap();
        let expect = [40000.0, 200.0, 400.0, 1.0, 1.0, 0.0, 0.005, 0.005];
        for (a, e) in c.a.iter().zip(expect) {
            assert!((a - e).abs() <= 1e-9 * e.abs().max(1.0), "{a} vs {e}");
        }
        let d = newmark_coefficients(0.25, 0.5, 0.02).unwrap();
        assert!((d.a[0] - c.a[0] / 4.0).abs() < 1e-9);
        assert!((d.a[2] - c.a[2] / 2.0).abs() < 1e-9);
        let g = newmark_coefficients(0.25, 1.0, 0.01).unwrap();
        assert_eq!(g.a[6], 0.0);
        assert_eq!(g.a[7], 0.01);
        assert!(newmark_coefficients(0.0, 0.5, 0.01).is_err());
        assert!(newmark_coefficients(0.25, 0.5, 0.0).is_err());
    }

    #[test]
    fn initial_acceleration_cases() {
        let free = DynamicSystem::sdof(1.0, 0.0, 4.0, Force::Zero).unwrap();
        let zero = DVector::zeros(1);
        assert_eq!(initial_acceleration(&free, &zero, &zero).unwrap()[0], 0.0);
        let one = DVector::from_element(1, 1.0);
        assert_eq!(initial_acceleration(&free, &one, &zero).unwrap()[0], -4.0);
        let pushed = DynamicSystem::sdof(2.0, 0.0, 1.0, Force::Constant(DVector::from_element(1, 6.0))).unwrap();
        assert_eq!(initial_acceleration(&pushed, &zero, &zero).unwrap()[0], 3.0);
    }

    #[test]
    fn singular_mass_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let z = DMatrix::zeros(2, 2);
        assert!(matches!(
            DynamicSystem::new(m, z.clone(), z, Force::Zero),
            Err(CoreError::Singular(_))
        ));
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let sys = DynamicSystem::sdof(1.0, 0.1, 3.0, Force::Zero).unwrap();
        let c = newmark_coefficients(0.25, 0.5, 1e-2).unwrap();
        let z = DVector::zeros(1);
        let s0 = DynamicState::initial(&sys, z.clone(), z).unwrap();
        let s1 = newmark_step(&s0, &sys, &c).unwrap();
        assert_eq!(s1.displacement[0], 0.0);
        assert_eq!(s1.velocity[0], 0.0);
        assert!((s1.time - 1e-2).abs() < 1e-18);
    }

    #[test]
    fn free_vibration_matches_cosine() {
        let k = (2.0 * PI).powi(2);
        let sys = DynamicSystem::sdof(1.0, 0.0, k, Force::Zero).unwrap();
        let c = newmark_coefficients(0.25, 0.5, 1e-3).unwrap();
        let mut s = DynamicState::initial(&sys, DVector::from_element(1, 1.0), DVector::zeros(1)).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            s = newmark_step(&s, &sys, &c).unwrap();
            worst = worst.max((s.displacement[0] - (2.0 * PI * s.time).cos()).abs());
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn damped_constant_force_settles_statically() {
        let k = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 1.0]);
        let m = DMatrix::identity(2, 2);
        let c = &m * 2.0 + &k * 0.1;
        let f = DVector::from_vec(vec![1.0, 2.0]);
        let sys = DynamicSystem::new(m, c, k.clone(), Force::Constant(f.clone())).unwrap();
        let co = newmark_coefficients(0.25, 0.5, 0.05).unwrap();
        let mut s = DynamicState::initial(&sys, DVector::zeros(2), DVector::zeros(2)).unwrap();
        for _ in 0..4000 {
            s = newmark_step(&s, &sys, &co).unwrap();
        }
        let exact = k.lu().solve(&f).unwrap();
        assert!((s.displacement - exact).amax() < 1e-6);
    }

    #[test]
    fn material_relations() {
        let g = shear_modulus(71275.0, 0.33);
        assert!((g - 26795.11).abs() < 0.01, "{g}");
        assert_eq!(shear_modulus(10.0, 0.0), 5.0);
        assert_eq!(shear_modulus(2.0, 0.0), 1.0);

        assert_eq!(strain_from_stress([0.0; 6], 71275.0, 0.33).unwrap(), [0.0; 6]);
        let e = strain_from_stress([100.0, 0.0, 0.0, 0.0, 0.0, 0.0], 71275.0, 0.33).unwrap();
        assert!((e[0] - 1.40302e-3).abs() < 1e-8);
        assert!((e[1] + 4.6300e-4).abs() < 1e-8 && e[1] == e[2]);
        assert_eq!(&e[3..], &[0.0; 3]);
        let s = strain_from_stress([0.0, 0.0, 0.0, 50.0, 0.0, 0.0], 71275.0, 0.33).unwrap();
        assert!((s[3] - 50.0 / g).abs() < 1e-15 && s[0] == 0.0);
        assert!(strain_from_stress([1.0; 6], 0.0, 0.3).is_err());
    }

    #[test]
    fn hardening_table_lookup() {
        let m = Material1D::aluminium_6061_t6();
        assert_eq!(uniaxial_yield_stress(0.0, &m), 241.5);
        assert_eq!(uniaxial_yield_stress(0.0069, &m), 263.0);
        assert!((uniaxial_yield_stress(0.00345, &m) - 252.25).abs() < 1e-12);
        for &(ep, s) in &m.hardening {
            assert_eq!(uniaxial_yield_stress(ep, &m), s);
        }
        assert_eq!(uniaxial_yield_stress(2.0, &m), 473.6);
    }

    #[test]
    fn stress_curve_is_elastic_then_hardening() {
        let m = Material1D::aluminium_6061_t6();
        assert!((m.stress(1e-3) - 71.275).abs() < 1e-12);
        assert!((m.stress(-1e-3) + 71.275).abs() < 1e-12);
        // past yield: σ = H(ε − σ/E)
        let eps = 0.02;
        let s = m.stress(eps);
        let h = uniaxial_yield_stress(eps - s / m.young, &m);
        assert!((s - h).abs() < 1e-9, "{s} vs {h}");
        assert!(s > 241.5 && s < 278.8);
    }

    #[test]
    fn deviator_cases() {
        let p = Matrix3::identity() * 7.0;
        assert!(deviatoric_stress(&p).unwrap().amax() < 1e-12);
        let mut u = Matrix3::zeros();
        u[(0, 0)] = 300.0;
        let s = deviatoric_stress(&u).unwrap();
        assert!((s[(0, 0)] - 200.0).abs() < 1e-12);
        assert!((s[(1, 1)] + 100.0).abs() < 1e-12 && (s[(2, 2)] + 100.0).abs() < 1e-12);
        let shear = Matrix3::new(0.0, 5.0, 0.0, 5.0, 0.0, 2.0, 0.0, 2.0, 0.0);
        assert_eq!(deviatoric_stress(&shear).unwrap(), shear);
        let asym = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(deviatoric_stress(&asym).is_err());
    }

    #[test]
    fn strain_energy_paths() {
        assert_eq!(strain_energy_density(&[]).unwrap(), 0.0);
        assert_eq!(strain_energy_density(&[(0.0, 0.0)]).unwrap(), 0.0);
        let e = 71275.0;
        let u = strain_energy_density(&[(0.0, 0.0), (1e-3, e * 1e-3)]).unwrap();
        assert!((u - 0.5 * e * 1e-6).abs() < 1e-12);
        assert!((u - 0.035638).abs() < 1e-6);
        let coarse = [(0.0, 0.0), (0.003, 213.825), (0.05, 280.0)];
        let mut fine = vec![(0.0, 0.0)];
        for w in coarse.windows(2) {
            for j in 1..=10 {
                let t = j as f64 / 10.0;
                fine.push((w[0].0 + t * (w[1].0 - w[0].0), w[0].1 + t * (w[1].1 - w[0].1)));
            }
        }
        let a = strain_energy_density(&coarse).unwrap();
        let b = strain_energy_density(&fine).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert!(strain_energy_density(&[(0.0, 0.0), (0.2, 1.0), (0.1, 1.0)]).is_err());
    }

    #[test]
    fn rest_scenario_gives_identical_frames() {
        let sc = ImpactScenario {
            initial_velocity: 0.0,
            push_force: 0.0,
            duration: 2e-3,
            frame_stride: 10,
            frame_height: 8,
            frame_width: 8,
            ..Default::default()
        };
        let seq = generate_sequence(&sc).unwrap();
        assert_eq!(seq.len(), sc.frame_count());
        let first = seq.frames()[0].pixels().to_vec();
        for f in seq.frames() {
            assert_eq!(f.pixels(), &first[..]);
            assert_eq!(f.meta.objective, 0.0);
        }
    }

    #[test]
    fn too_few_frames_is_rejected() {
        let sc = ImpactScenario {
            duration: 1e-4,
            ..Default::default()
        };
        assert!(generate_sequence(&sc).is_err());
    }
}
