//! Numerical audits of the PD+ boundedness argument, the stiffness
//! characterization experiment and the skew-symmetry check.
//!
//! Norms are Euclidean for vectors and spectral for matrices throughout.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::{contact_compensation, PdPlusGains};
use crate::dynamics::{
    central_difference7, contact_potential, contact_wrench, coriolis_matrix, energy, external_generalized_force,
    gravity_forces, mass_matrix, ContactModel, ExternalLoad, RobotState,
};
use crate::error::{Error, Result};
use crate::kinematics::ChainKinematics;
use crate::robot::{RobotDescription, Segment};
use crate::trace::SimTrace;

/// Upper bound on `‖F_c‖` for desired trajectories with `‖q_d‖ ≤ qd_max_norm`:
/// `λmax(K̂)·qd_max_norm + λmax(K_P)·α_s`.
///
/// `α_s` bounds the Euclidean norm of the saturated state `S(q)`; each of its
/// `m` module entries is below `2·Δmax`, so `α_s = 2·max(Δmax)·√m`.
pub fn f_c_bound(gains: &PdPlusGains, robot: &RobotDescription, qd_max_norm: f64) -> Result<f64> {
    gains.validate(robot)?;
    if !(qd_max_norm >= 0.0) {
        return Err(Error::Domain(format!("qd_max_norm must be >= 0, got {qd_max_norm}")));
    }
    let k_hat = robot.stiffness_diagonal() + &gains.kp;
    Ok(k_hat.max() * qd_max_norm + gains.kp.max() * saturation_bound(gains, robot))
}

/// `α_s`, the bound on `‖S(q)‖` used by [`f_c_bound`].
pub fn saturation_bound(gains: &PdPlusGains, robot: &RobotDescription) -> f64 {
    let mut max_sat: f64 = 0.0;
    let mut m = 0usize;
    for s in robot.modules() {
        for i in 0..3 {
            max_sat = max_sat.max(gains.sat_limits[s.offset + i]);
            m += 1;
        }
    }
    2.0 * max_sat * (m as f64).sqrt()
}

/// Envelope `γ₃ + γ₁ r + γ₂ r²` of `‖M‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertiaBound {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

impl InertiaBound {
    pub fn envelope(&self, r: f64) -> f64 {
        self.gamma3 + self.gamma1 * r + self.gamma2 * r * r
    }

    /// Re-expresses a bound in `‖q‖` as one in `‖e‖ = ‖q − q_d‖`, using
    /// `‖q‖ ≤ ‖e‖ + qd_max_norm`.
    pub fn in_error_coordinates(&self, qd_max_norm: f64) -> Self {
        let a = qd_max_norm;
        Self {
            gamma3: self.gamma3 + self.gamma1 * a + self.gamma2 * a * a,
            gamma1: self.gamma1 + 2.0 * self.gamma2 * a,
            gamma2: self.gamma2,
        }
    }
}

/// Safety factor applied to the fitted slope.
pub const INERTIA_FIT_INFLATION: f64 = 1.1;
/// Safety factor applied to the sampled minimum eigenvalue of `M`.
pub const SIGMA_MIN_DEFLATION: f64 = 0.9;

/// Fits `‖M(q)‖ ≤ γ₃ + γ₁‖q‖` over `sample_count` admissible configurations.
pub fn inertia_bound_fit(robot: &RobotDescription, sample_count: usize, seed: u64) -> Result<InertiaBound> {
    if sample_count < 100 {
        return Err(Error::Domain(format!("inertia fit needs at least 100 samples, got {sample_count}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<_> = (0..sample_count).map(|_| robot.sample_admissible(&mut rng)).collect();
    inertia_bound_from_samples(robot, &samples)
}

/// Envelope through `γ₃ = ‖M(0)‖` with the largest sampled slope
/// `(‖M(q)‖ − γ₃)/‖q‖`, inflated by [`INERTIA_FIT_INFLATION`]. Adding
/// samples can only raise the coefficients.
pub fn inertia_bound_from_samples(robot: &RobotDescription, samples: &[DVector<f64>]) -> Result<InertiaBound> {
    let gamma3 = spectral_norm(&mass_matrix(&DVector::zeros(robot.dof()), robot)?);
    let mut slope: f64 = 0.0;
    for q in samples {
        let excess = spectral_norm(&mass_matrix(q, robot)?) - gamma3;
        let r = q.norm();
        // ignore round-off on configuration-independent inertia
        if excess > 1e-12 * gamma3 && r > 0.0 {
            slope = slope.max(excess / r);
        }
    }
    Ok(InertiaBound { gamma1: INERTIA_FIT_INFLATION * slope, gamma2: 0.0, gamma3 })
}

/// Smallest eigenvalue of `M` over the samples, deflated by
/// [`SIGMA_MIN_DEFLATION`].
pub fn sigma_min_estimate(robot: &RobotDescription, samples: &[DVector<f64>]) -> Result<f64> {
    let mut lo = f64::INFINITY;
    for q in std::iter::once(&DVector::zeros(robot.dof())).chain(samples) {
        lo = lo.min(SymmetricEigen::new(mass_matrix(q, robot)?).eigenvalues.min());
    }
    Ok(SIGMA_MIN_DEFLATION * lo)
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.amax()
}

/// Ultimate bound `b = √(((λmax(K̂) + γ₃)μ² + γ₁μ³ + γ₂μ⁴)/(λmin(K̂) + σ_min))`.
pub fn ultimate_bound(gamma: &InertiaBound, lambda_min_k: f64, lambda_max_k: f64, sigma_min: f64, mu: f64) -> f64 {
    let num = (lambda_max_k + gamma.gamma3) * mu * mu + gamma.gamma1 * mu.powi(3) + gamma.gamma2 * mu.powi(4);
    (num / (lambda_min_k + sigma_min)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub t: f64,
    pub quantity: &'static str,
    /// Amount by which the inequality fails.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOptions {
    /// Samples used for the inertia envelope and `σ_min(M)`.
    pub sample_count: usize,
    pub seed: u64,
    /// Time after the first trace row from which the ultimate bound is checked.
    pub transient: f64,
    /// Relative tolerance on `V̇`, scaled by `max|V̇|`.
    pub vdot_tolerance: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self { sample_count: 200, seed: 0, transient: 1.0, vdot_tolerance: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub alpha_fc: f64,
    pub qd_max_norm: f64,
    pub alpha_s: f64,
    pub mu: f64,
    /// Envelope of `‖M‖` in `‖e‖`.
    pub gamma: InertiaBound,
    pub lambda_min_k: f64,
    pub lambda_max_k: f64,
    pub lambda_min_d: f64,
    pub sigma_min: f64,
    pub b: f64,
    pub samples_checked: usize,
    /// Samples where `‖ė‖ ≥ μ`, i.e. where the decrease condition applies.
    pub samples_outside_mu: usize,
    pub max_abs_vdot: f64,
    pub vdot_tolerance: f64,
    /// Largest `‖(e, ė)‖` after the transient.
    pub max_state_norm_after_transient: f64,
    /// Largest `V̇ + λmin(D̂)‖ė‖² − α_Fc‖ė‖` (non-positive when the
    /// dissipation inequality holds everywhere).
    pub max_dissipation_margin: f64,
    pub violations: Vec<Violation>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "PD+ boundedness audit");
        let _ = writeln!(s, "alpha_s        = {:.6e}   bound on |S(q)|", self.alpha_s);
        let _ = writeln!(s, "|q_d|_max      = {:.6e}", self.qd_max_norm);
        let _ = writeln!(s, "alpha_Fc       = {:.6e}   |F_c| <= lmax(K^) |q_d|_max + lmax(K_P) alpha_s", self.alpha_fc);
        let _ = writeln!(s, "lambda_min(D^) = {:.6e}", self.lambda_min_d);
        let _ = writeln!(s, "mu             = {:.6e}   alpha_Fc / lmin(D^)", self.mu);
        let _ = writeln!(s, "lambda(K^)     = [{:.6e}, {:.6e}]", self.lambda_min_k, self.lambda_max_k);
        let _ = writeln!(
            s,
            "gamma          = (g1 {:.6e}, g2 {:.6e}, g3 {:.6e})   |M| <= g3 + g1|e| + g2|e|^2",
            self.gamma.gamma1, self.gamma.gamma2, self.gamma.gamma3
        );
        let _ = writeln!(s, "sigma_min(M)   = {:.6e}   sampled, deflated", self.sigma_min);
        let _ = writeln!(s, "b              = {:.6e}   alpha1^-1(alpha2(mu))", self.b);
        let _ = writeln!(s, "samples        = {}", self.samples_checked);
        let _ = writeln!(
            s,
            "decrease check: Vdot <= -lmin(D^)|edot|^2 where |edot| >= mu, tolerance {:.3e}; applies at {} samples",
            self.vdot_tolerance, self.samples_outside_mu
        );
        let _ = writeln!(
            s,
            "dissipation check: Vdot <= -lmin(D^)|edot|^2 + alpha_Fc|edot| at every sample; worst margin {:.6e}",
            self.max_dissipation_margin
        );
        let _ = writeln!(
            s,
            "ultimate bound check: |(e, edot)| <= b after transient; largest {:.6e}",
            self.max_state_norm_after_transient
        );
        let _ = writeln!(s, "violations     = {}", self.violations.len());
        for v in &self.violations {
            let _ = writeln!(s, "  t = {:.6} {} margin {:.6e}", v.t, v.quantity, v.margin);
        }
        s
    }

    /// Two-column `quantity,value` table followed by `violation` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let e = |e: csv::Error| Error::Csv(e.to_string());
        wr.write_record(["quantity", "value", "t"]).map_err(e)?;
        let rows = [
            ("alpha_fc", self.alpha_fc),
            ("qd_max_norm", self.qd_max_norm),
            ("alpha_s", self.alpha_s),
            ("mu", self.mu),
            ("gamma1", self.gamma.gamma1),
            ("gamma2", self.gamma.gamma2),
            ("gamma3", self.gamma.gamma3),
            ("lambda_min_k", self.lambda_min_k),
            ("lambda_max_k", self.lambda_max_k),
            ("lambda_min_d", self.lambda_min_d),
            ("sigma_min", self.sigma_min),
            ("b", self.b),
            ("samples_checked", self.samples_checked as f64),
            ("samples_outside_mu", self.samples_outside_mu as f64),
            ("max_abs_vdot", self.max_abs_vdot),
            ("max_state_norm_after_transient", self.max_state_norm_after_transient),
            ("max_dissipation_margin", self.max_dissipation_margin),
        ];
        for (k, v) in rows {
            wr.write_record([k.to_string(), format!("{v:?}"), String::new()]).map_err(e)?;
        }
        for v in &self.violations {
            wr.write_record([format!("violation:{}", v.quantity), format!("{:?}", v.margin), format!("{:?}", v.t)])
                .map_err(e)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Audits a PD+ trace against the Lyapunov decrease and ultimate-bound
/// inequalities. `V = ½ėᵀMė + ½eᵀK̂e` with `e = q − q_d`; `V̇` is the central
/// difference of `V` at the trace step. When `report_out` is given the text
/// report is written there.
pub fn verify_boundedness(
    trace: &SimTrace,
    gains: &PdPlusGains,
    robot: &RobotDescription,
    options: &BoundOptions,
    report_out: Option<&Path>,
) -> Result<BoundReport> {
    gains.validate(robot)?;
    if !trace.has_reference() {
        return Err(Error::TraceMetadata("desired configuration columns (qd_*, qdotd_*)"));
    }
    if trace.len() < 3 {
        return Err(Error::TraceMetadata("at least three rows"));
    }
    trace.check_timestamps()?;
    let n = robot.dof();
    if trace.coordinate_names.len() != n {
        return Err(Error::DimensionMismatch {
            what: "trace coordinates",
            expected: n,
            got: trace.coordinate_names.len(),
        });
    }

    let k_hat = robot.stiffness_diagonal() + &gains.kp;
    let d_hat = robot.damping_diagonal() + &gains.kd;
    let (lambda_min_k, lambda_max_k, lambda_min_d) = (k_hat.min(), k_hat.max(), d_hat.min());
    if !(lambda_min_d > 0.0) {
        return Err(Error::Domain("D + K_D must be positive definite".into()));
    }
    let qd_max_norm = trace.rows.iter().map(|r| r.q_d.as_ref().map_or(0.0, |v| v.norm())).fold(0.0, f64::max);
    let alpha_s = saturation_bound(gains, robot);
    let alpha_fc = f_c_bound(gains, robot, qd_max_norm)?;
    let mu = alpha_fc / lambda_min_d;

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let samples: Vec<_> = (0..options.sample_count.max(100)).map(|_| robot.sample_admissible(&mut rng)).collect();
    let gamma = inertia_bound_from_samples(robot, &samples)?.in_error_coordinates(qd_max_norm);
    let sigma_min = sigma_min_estimate(robot, &samples)?;
    let b = ultimate_bound(&gamma, lambda_min_k, lambda_max_k, sigma_min, mu);

    let mut v = Vec::with_capacity(trace.len());
    let mut edot_norm = Vec::with_capacity(trace.len());
    let mut state_norm = Vec::with_capacity(trace.len());
    for r in &trace.rows {
        let e = &r.q - r.q_d.as_ref().expect("checked");
        let ed = &r.qdot - r.qdot_d.as_ref().expect("checked");
        let m = mass_matrix(&r.q, robot)?;
        v.push(0.5 * ed.dot(&(&m * &ed)) + 0.5 * e.dot(&k_hat.component_mul(&e)));
        edot_norm.push(ed.norm());
        state_norm.push((e.norm_squared() + ed.norm_squared()).sqrt());
    }
    let dt = trace.dt;
    let vdot: Vec<f64> = (1..v.len() - 1).map(|k| (v[k + 1] - v[k - 1]) / (2.0 * dt)).collect();
    let max_abs_vdot = vdot.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let tol = options.vdot_tolerance * max_abs_vdot;

    let mut violations = Vec::new();
    let mut outside = 0;
    let mut max_dissipation_margin = f64::NEG_INFINITY;
    for (i, vd) in vdot.iter().enumerate() {
        let k = i + 1;
        let t = trace.rows[k].t;
        let en = edot_norm[k];
        let decrease = -lambda_min_d * en * en;
        if en >= mu {
            outside += 1;
            if *vd > decrease + tol {
                violations.push(Violation { t, quantity: "lyapunov_decrease", margin: vd - decrease });
            }
        }
        let margin = vd - (decrease + alpha_fc * en);
        max_dissipation_margin = max_dissipation_margin.max(margin);
        if margin > tol {
            violations.push(Violation { t, quantity: "dissipation", margin });
        }
    }
    let t_start = trace.rows[0].t + options.transient;
    let mut max_after = 0.0_f64;
    for (r, s) in trace.rows.iter().zip(&state_norm) {
        if r.t >= t_start {
            max_after = max_after.max(*s);
            if *s > b {
                violations.push(Violation { t: r.t, quantity: "ultimate_bound", margin: s - b });
            }
        }
    }

    let report = BoundReport {
        alpha_fc,
        qd_max_norm,
        alpha_s,
        mu,
        gamma,
        lambda_min_k,
        lambda_max_k,
        lambda_min_d,
        sigma_min,
        b,
        samples_checked: vdot.len(),
        samples_outside_mu: outside,
        max_abs_vdot,
        vdot_tolerance: tol,
        max_state_norm_after_transient: max_after,
        max_dissipation_margin,
        violations,
    };
    if let Some(path) = report_out {
        std::fs::write(path, report.to_text())?;
    }
    Ok(report)
}

/// Largest `‖F_c‖` over a batch of `(q, q_d)` pairs.
pub fn max_contact_compensation(
    pairs: impl IntoIterator<Item = (DVector<f64>, DVector<f64>)>,
    gains: &PdPlusGains,
    robot: &RobotDescription,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (q, qd) in pairs {
        worst = worst.max(contact_compensation(&q, &qd, gains, robot)?.f_c.norm());
    }
    Ok(worst)
}

/// `max |vᵀ(Ṁ − 2C)v|` over unit `v`, i.e. the spectral radius of the
/// symmetric part of `Ṁ − 2C`. `Ṁ` is a seven-point difference of `M` along
/// `q + s q̇` with step [`SKEW_FD_STEP`] in `s`.
pub fn skew_symmetry_residual(q: &DVector<f64>, qdot: &DVector<f64>, robot: &RobotDescription) -> Result<f64> {
    RobotState::new(q.clone(), qdot.clone(), 0.0).validate(robot)?;
    let h = SKEW_FD_STEP;
    let n = robot.dof();
    let mut failed = None;
    let mdot = central_difference7(h, |t| {
        mass_matrix(&(q + qdot * t), robot).unwrap_or_else(|e| {
            failed.get_or_insert(e);
            DMatrix::zeros(n, n)
        })
    });
    if let Some(e) = failed {
        return Err(e);
    }
    let c = coriolis_matrix(q, qdot, robot)?;
    let a = mdot - c * 2.0;
    let sym = (&a + a.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym).eigenvalues.amax())
}

/// Step (in units of time along `q̇`) used by [`skew_symmetry_residual`].
pub const SKEW_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessRow {
    pub delta_l: f64,
    pub mass: f64,
    /// Deflection of the load point along gravity.
    pub displacement: f64,
    /// `m g / Δh`.
    pub stiffness: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StiffnessTable {
    pub rows: Vec<StiffnessRow>,
}

impl StiffnessTable {
    /// Mean stiffness over the masses at one compression setting.
    pub fn mean_stiffness(&self, delta_l: f64) -> Option<f64> {
        let ks: Vec<f64> = self.rows.iter().filter(|r| r.delta_l == delta_l).map(|r| r.stiffness).collect();
        (!ks.is_empty()).then(|| ks.iter().sum::<f64>() / ks.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let e = |e: csv::Error| Error::Csv(e.to_string());
        wr.write_record(["delta_l", "mass", "displacement", "stiffness"]).map_err(e)?;
        for r in &self.rows {
            wr.write_record([r.delta_l, r.mass, r.displacement, r.stiffness].map(|v| format!("{v:?}"))).map_err(e)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("delta_l [m]   mass [kg]   dh [m]         k [N/m]\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:>10.4}  {:>9.3}   {:.6e}   {:.6e}", r.delta_l, r.mass, r.displacement, r.stiffness);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessOptions {
    /// Distance from the module tip plate to the point where the weight hangs (m).
    pub load_arm: f64,
    /// Gravitational acceleration (m/s²); gravity acts across the module axis.
    pub gravity: f64,
    pub contact: ContactModel,
    /// Convergence threshold on the generalized force residual (N).
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for StiffnessOptions {
    fn default() -> Self {
        Self { load_arm: 0.01, gravity: 9.81, contact: ContactModel::default(), tolerance: 1e-9, max_iterations: 200 }
    }
}

/// Clamps the first module of `robot` with its axis horizontal, holds the
/// compression `δL` fixed, hangs each mass from the tip and records the
/// static deflection relative to the unloaded equilibrium.
pub fn stiffness_experiment(
    robot: &RobotDescription,
    delta_l: &[f64],
    masses: &[f64],
    options: &StiffnessOptions,
) -> Result<StiffnessTable> {
    options.contact.validate()?;
    if let Some(m) = masses.iter().find(|m| !(**m > 0.0)) {
        return Err(Error::Domain(format!("suspended mass must be > 0, got {m}")));
    }
    if !(options.gravity > 0.0) {
        return Err(Error::Domain("gravity must be > 0".into()));
    }
    let module = robot
        .modules()
        .next()
        .ok_or_else(|| Error::Config("stiffness experiment needs a robot with a module".into()))?
        .module
        .clone();
    // gravity along −x, module axis along z
    let g = Vector3::new(-options.gravity, 0.0, 0.0);
    let bench = RobotDescription::new(vec![Segment::Module(module)], g, options.load_arm)?;
    let mut table = StiffnessTable::default();
    for &dl in delta_l {
        let free = static_equilibrium(&bench, dl, Vector3::zeros(), options)?;
        let x0 = ChainKinematics::new(&bench, &free)?.end_effector.translation;
        for &m in masses {
            let f = g * m;
            let q = static_equilibrium(&bench, dl, f, options)?;
            let x = ChainKinematics::new(&bench, &q)?.end_effector.translation;
            let dh = (x - x0).dot(&g.normalize());
            if !(dh > 0.0) {
                return Err(Error::Domain(format!("non-positive deflection {dh} at delta_l = {dl}, mass = {m}")));
            }
            table.rows.push(StiffnessRow {
                delta_l: dl,
                mass: m,
                displacement: dh,
                stiffness: m * options.gravity / dh,
            });
        }
    }
    Ok(table)
}

/// Minimizes the potential over the bend coordinates with `δL` held, by
/// Newton steps on a finite-difference Hessian and backtracking line search.
fn static_equilibrium(
    bench: &RobotDescription,
    delta_l: f64,
    tip_force: Vector3<f64>,
    options: &StiffnessOptions,
) -> Result<DVector<f64>> {
    let load = ExternalLoad::end_effector(tip_force);
    let potential = |q: &DVector<f64>| -> Result<f64> {
        let e = energy(&RobotState::new(q.clone(), DVector::zeros(3), 0.0), bench)?;
        let x = ChainKinematics::new(bench, q)?.end_effector.translation;
        // the axial term is constant here and would only add round-off
        let k = bench.stiffness_diagonal();
        let bend = 0.5 * (k[0] * q[0] * q[0] + k[1] * q[1] * q[1]);
        Ok(bend + e.gravitational + contact_potential(q, bench, &options.contact) - tip_force.dot(&x))
    };
    let residual = |q: &DVector<f64>| -> Result<[f64; 2]> {
        let ch = ChainKinematics::new(bench, q)?;
        let r = bench.stiffness_diagonal().component_mul(q) + gravity_forces(q, bench)?
            - contact_wrench(q, &DVector::zeros(3), bench, &options.contact)?
            - external_generalized_force(bench, &ch, &load)?;
        Ok([r[0], r[1]])
    };
    let mut q = DVector::from_vec(vec![0.0, 0.0, delta_l]);
    bench.check_configuration(&q)?;
    let h = 1e-8;
    let mut res = residual(&q)?;
    for _ in 0..options.max_iterations {
        let rn = res[0].hypot(res[1]);
        if rn < options.tolerance {
            return Ok(q);
        }
        let mut hess = nalgebra::Matrix2::zeros();
        for j in 0..2 {
            let mut qp = q.clone();
            qp[j] += h;
            let mut qm = q.clone();
            qm[j] -= h;
            let (rp, rm) = (residual(&qp)?, residual(&qm)?);
            for i in 0..2 {
                hess[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let hess = (hess + hess.transpose()) * 0.5;
        let grad = nalgebra::Vector2::new(res[0], res[1]);
        let steepest = -grad / bench.stiffness_diagonal().max();
        let newton = hess.cholesky().map(|ch| -ch.solve(&grad));
        let u0 = potential(&q)?;
        let mut accepted = false;
        for dir in newton.into_iter().chain(std::iter::once(steepest)) {
            let slope = grad.dot(&dir);
            if !(slope < 0.0) {
                continue;
            }
            let mut step = 1.0;
            for _ in 0..40 {
                let mut trial = q.clone();
                trial[0] += step * dir[0];
                trial[1] += step * dir[1];
                if bench.check_configuration(&trial).is_ok() && potential(&trial)? <= u0 + 1e-4 * step * slope {
                    q = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if accepted {
                break;
            }
        }
        res = residual(&q)?;
        if !accepted {
            break;
        }
    }
    Err(Error::StaticSolve { iterations: options.max_iterations, residual: res[0].hypot(res[1]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::{Joint, RigidBody};

    #[test]
    fn f_c_bound_affine_in_qd_norm() {
        let r = RobotDescription::four_module_default();
        let g = PdPlusGains::default_for(&r);
        let a1 = f_c_bound(&g, &r, 0.3).unwrap();
        let a2 = f_c_bound(&g, &r, 0.6).unwrap();
        let lk = (r.stiffness_diagonal() + &g.kp).max();
        assert!((a2 - a1 - lk * 0.3).abs() < 1e-9 * a2);
    }

    #[test]
    fn f_c_bound_zero_gain_zero_reference() {
        let r = RobotDescription::four_module_default();
        let mut g = PdPlusGains::default_for(&r);
        g.kp.fill(0.0);
        assert_eq!(f_c_bound(&g, &r, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn ultimate_bound_closed_form() {
        let gamma = InertiaBound { gamma1: 2.0, gamma2: 0.5, gamma3: 3.0 };
        // ((10 + 3)·4 + 2·8 + 0.5·16)/(1 + 1) = 38
        assert!((ultimate_bound(&gamma, 1.0, 10.0, 1.0, 2.0) - 38f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn error_coordinate_envelope_dominates() {
        let g = InertiaBound { gamma1: 1.5, gamma2: 0.25, gamma3: 2.0 };
        let a = 0.7;
        let ge = g.in_error_coordinates(a);
        for r in [0.0, 0.1, 1.0, 5.0] {
            assert!(ge.envelope(r) >= g.envelope(r + a) - 1e-12);
        }
    }

    #[test]
    fn constant_inertia_has_flat_envelope() {
        let joint = Joint {
            axis: [0.0, 0.0, 1.0],
            offset: 0.05,
            damping: 0.0,
            motor: Some(RigidBody { mass: 0.2, com: [0.0, 0.0, 0.02], inertia: [1e-4, 1e-4, 3e-5] }),
            range: [-3.0, 3.0],
            armature: 1e-3,
        };
        let r = RobotDescription::new(vec![Segment::Joint(joint)], Vector3::new(0.0, 0.0, -9.81), 0.0).unwrap();
        let fit = inertia_bound_fit(&r, 100, 1).unwrap();
        assert_eq!(fit.gamma1, 0.0);
        assert_eq!(fit.gamma2, 0.0);
        assert!((fit.gamma3 - (3e-5 + 1e-3)).abs() < 1e-15);
    }

    #[test]
    fn skew_residual_zero_at_rest() {
        let r = RobotDescription::four_module_default();
        let q = DVector::from_fn(r.dof(), |i, _| 0.002 * i as f64);
        assert!(skew_symmetry_residual(&q, &DVector::zeros(r.dof()), &r).unwrap() < 1e-12);
    }
}
