//! Fluid (mean-field) model of epidemic routing: 2N+1 coupled ODEs for
//! the average infected/susceptible local counts per community and the
//! average infected roaming count, plus the average-delay integral.
//!
//! The right-hand side mirrors the stochastic models' rate structure with
//! the community meeting rate evaluated at real-valued occupancies through
//! a unit-step formulation that vanishes at 0 and equals `gamma` at 1.

use thiserror::Error;

use crate::config::NetworkConfig;
use crate::io::fmt_f64;
use crate::models::MeetingRates;

/// Fraction of the population that must be infected before the delay
/// integral is considered saturated.
pub const SATURATION_FRACTION: f64 = 0.999;
/// Hard cap on integration time when extending to saturation.
pub const T_MAX_CAP: f64 = 1.0e6;
/// Default integration step.
pub const DEFAULT_DT: f64 = 0.5;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum OdeError {
    #[error(
        "integration step too large at t = {t}: component changed by {delta:.3e} > 10% of M ({limit:.3e}); reduce dt"
    )]
    StepTooLarge { t: f64, delta: f64, limit: f64 },
    #[error(
        "epidemic not saturated at the {t_max} s cap (total infected {total_infected:.6} < {threshold:.6})"
    )]
    NotSaturated { t_max: f64, total_infected: f64, threshold: f64 },
    #[error("fluid model requires at least 3 nodes, got M = {0}")]
    PopulationTooSmall(u32),
    #[error("integration step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

/// Mean-field state at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct OdeState {
    pub t: f64,
    /// Average infected local nodes per community.
    pub i_l: Vec<f64>,
    /// Average susceptible local nodes per community.
    pub s_l: Vec<f64>,
    /// Average infected roaming nodes.
    pub i_r: f64,
}

impl OdeState {
    pub fn initial(n: usize) -> Self {
        OdeState { t: 0.0, i_l: vec![0.0; n], s_l: vec![0.0; n], i_r: 1.0 }
    }

    pub fn total_infected(&self) -> f64 {
        self.i_r + self.i_l.iter().sum::<f64>()
    }

    pub fn susceptible_roaming(&self, m: u32) -> f64 {
        f64::from(m)
            - self.i_r
            - self.i_l.iter().sum::<f64>()
            - self.s_l.iter().sum::<f64>()
    }

    /// Non-negativity and population bound, with `tol` slack for
    /// integrator roundoff.
    pub fn invariants_hold(&self, m: u32, tol: f64) -> bool {
        self.i_r >= -tol
            && self.i_l.iter().chain(&self.s_l).all(|&x| x >= -tol)
            && self.susceptible_roaming(m) >= -tol
    }
}

/// Time derivative of an [`OdeState`].
#[derive(Clone, Debug, PartialEq)]
pub struct OdeDeriv {
    pub d_i_l: Vec<f64>,
    pub d_s_l: Vec<f64>,
    pub d_i_r: f64,
}

/// Unit step with `theta(0) = 1`, making the community meeting rate hit
/// `gamma` exactly at occupancy 1.
fn theta(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Community meeting rate at real-valued occupancy `n`:
/// `gamma + theta(1-n)*(n-1)*gamma + theta(n-1)*(n-1)*(eta-gamma)/(M-2)`.
/// Vanishes at 0, equals `gamma` at 1, then grows linearly to `eta` at
/// `M-1`; between 0 and 1 it interpolates as `n*gamma`.
pub fn r_meet_real(n: f64, rates: &MeetingRates, m: u32) -> f64 {
    let g = rates.gamma;
    g + theta(1.0 - n) * (n - 1.0) * g
        + theta(n - 1.0) * (n - 1.0) * (rates.eta - g) / f64::from(m - 2)
}

/// Right-hand side of the fluid model. Susceptible roaming nodes are the
/// population remainder `M - I_r - sum(I_l + S_l)`.
pub fn ode_rhs(state: &OdeState, cfg: &NetworkConfig, rates: &MeetingRates) -> OdeDeriv {
    let n = cfg.n;
    debug_assert_eq!(state.i_l.len(), n);
    debug_assert_eq!(state.s_l.len(), n);
    let m = cfg.m;
    let s_r = state.susceptible_roaming(m);
    let rmeet: Vec<f64> = state.s_l.iter().map(|&s| r_meet_real(s, rates, m)).collect();

    let mut d_i_l = vec![0.0; n];
    let mut d_s_l = vec![0.0; n];
    for i in 0..n {
        let inflow = state.i_r * cfg.beta * cfg.p_l * cfg.p_sel[i];
        let pair_infection = state.s_l[i] * state.i_l[i] * rates.lambda;
        let roam_infection = state.i_r * rmeet[i];
        d_i_l[i] = -state.i_l[i] * cfg.alpha * cfg.p_r + inflow + pair_infection + roam_infection;
        d_s_l[i] = s_r * cfg.beta * cfg.p_l * cfg.p_sel[i]
            - state.s_l[i] * cfg.alpha * cfg.p_r
            - pair_infection
            - roam_infection;
    }
    let d_i_r = -state.i_r * cfg.beta * cfg.p_l
        + state.i_l.iter().map(|&i| i * cfg.alpha * cfg.p_r).sum::<f64>()
        + s_r * (state.i_r * rates.mu + rmeet.iter().sum::<f64>());
    OdeDeriv { d_i_l, d_s_l, d_i_r }
}

/// Integrated trajectory, sampled after every step.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<OdeState>,
    /// Nominal step size used (the last step may be shorter).
    pub dt: f64,
    /// Number of component clampings applied to keep the state
    /// non-negative.
    pub clamped: u64,
}

impl Trajectory {
    pub fn final_state(&self) -> &OdeState {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// CSV export: `t,I_r,I_l_1..I_l_N,S_l_1..S_l_N,total_infected`.
    pub fn to_csv(&self) -> String {
        let n = self.states[0].i_l.len();
        let mut header = String::from("t,I_r");
        for i in 1..=n {
            header.push_str(&format!(",I_l_{i}"));
        }
        for i in 1..=n {
            header.push_str(&format!(",S_l_{i}"));
        }
        header.push_str(",total_infected\n");
        let mut out = header;
        for s in &self.states {
            out.push_str(&fmt_f64(s.t));
            out.push(',');
            out.push_str(&fmt_f64(s.i_r));
            for &v in &s.i_l {
                out.push(',');
                out.push_str(&fmt_f64(v));
            }
            for &v in &s.s_l {
                out.push(',');
                out.push_str(&fmt_f64(v));
            }
            out.push(',');
            out.push_str(&fmt_f64(s.total_infected()));
            out.push('\n');
        }
        out
    }
}

/// Flat vector layout: `[i_l_0..i_l_{n-1}, s_l_0..s_l_{n-1}, i_r]`.
fn to_flat(state: &OdeState, y: &mut [f64]) {
    let n = state.i_l.len();
    y[..n].copy_from_slice(&state.i_l);
    y[n..2 * n].copy_from_slice(&state.s_l);
    y[2 * n] = state.i_r;
}

fn from_flat(t: f64, y: &[f64], n: usize) -> OdeState {
    OdeState { t, i_l: y[..n].to_vec(), s_l: y[n..2 * n].to_vec(), i_r: y[2 * n] }
}

fn rhs_flat(t: f64, y: &[f64], cfg: &NetworkConfig, rates: &MeetingRates, dy: &mut [f64]) {
    let n = cfg.n;
    let state = from_flat(t, y, n);
    let d = ode_rhs(&state, cfg, rates);
    dy[..n].copy_from_slice(&d.d_i_l);
    dy[n..2 * n].copy_from_slice(&d.d_s_l);
    dy[2 * n] = d.d_i_r;
}

struct Stepper<'a> {
    cfg: &'a NetworkConfig,
    rates: &'a MeetingRates,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(cfg: &'a NetworkConfig, rates: &'a MeetingRates) -> Self {
        let dim = 2 * cfg.n + 1;
        Stepper {
            cfg,
            rates,
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// One classical 4th-order step of size `h`; clamps negative
    /// components and counts the clampings; errors when any component
    /// moved by more than 10% of the population.
    fn step(
        &mut self,
        t: f64,
        y: &mut [f64],
        h: f64,
        clamped: &mut u64,
    ) -> Result<(), OdeError> {
        let dim = y.len();
        rhs_flat(t, y, self.cfg, self.rates, &mut self.k1);
        for i in 0..dim {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        rhs_flat(t + 0.5 * h, &self.tmp, self.cfg, self.rates, &mut self.k2);
        for i in 0..dim {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        rhs_flat(t + 0.5 * h, &self.tmp, self.cfg, self.rates, &mut self.k3);
        for i in 0..dim {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        rhs_flat(t + h, &self.tmp, self.cfg, self.rates, &mut self.k4);

        let limit = 0.1 * f64::from(self.cfg.m);
        for i in 0..dim {
            let delta =
                h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
            if !delta.is_finite() || delta.abs() > limit {
                return Err(OdeError::StepTooLarge { t, delta: delta.abs(), limit });
            }
            y[i] += delta;
            if y[i] < 0.0 {
                y[i] = 0.0;
                *clamped += 1;
            }
        }
        Ok(())
    }
}

fn check_inputs(cfg: &NetworkConfig, dt: f64) -> Result<(), OdeError> {
    if cfg.m < 3 {
        return Err(OdeError::PopulationTooSmall(cfg.m));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(OdeError::InvalidStep(dt));
    }
    Ok(())
}

/// Integrates from the standard initial condition (one infected roaming
/// node, empty communities) up to `t_max` with fixed step `dt`; the final
/// step is shortened to land exactly on `t_max`.
pub fn integrate(
    cfg: &NetworkConfig,
    rates: &MeetingRates,
    t_max: f64,
    dt: f64,
) -> Result<Trajectory, OdeError> {
    check_inputs(cfg, dt)?;
    let n = cfg.n;
    let mut y = vec![0.0; 2 * n + 1];
    let initial = OdeState::initial(n);
    to_flat(&initial, &mut y);
    let mut states = vec![initial];
    let mut clamped = 0;
    let mut stepper = Stepper::new(cfg, rates);
    let mut t = 0.0;
    while t < t_max - 1e-12 {
        let h = dt.min(t_max - t);
        stepper.step(t, &mut y, h, &mut clamped)?;
        t += h;
        states.push(from_flat(t, &y, n));
    }
    Ok(Trajectory { states, dt, clamped })
}

/// Integrates until the total infected count reaches
/// [`SATURATION_FRACTION`] of the population, extending `t_max` as needed
/// up to the [`T_MAX_CAP`] hard cap.
pub fn integrate_until_saturated(
    cfg: &NetworkConfig,
    rates: &MeetingRates,
    dt: f64,
) -> Result<Trajectory, OdeError> {
    check_inputs(cfg, dt)?;
    let n = cfg.n;
    let threshold = SATURATION_FRACTION * f64::from(cfg.m);
    let mut y = vec![0.0; 2 * n + 1];
    let initial = OdeState::initial(n);
    to_flat(&initial, &mut y);
    let mut states = vec![initial];
    let mut clamped = 0;
    let mut stepper = Stepper::new(cfg, rates);
    let mut t = 0.0;
    loop {
        if states.last().unwrap().total_infected() >= threshold {
            return Ok(Trajectory { states, dt, clamped });
        }
        if t >= T_MAX_CAP {
            return Err(OdeError::NotSaturated {
                t_max: T_MAX_CAP,
                total_infected: states.last().unwrap().total_infected(),
                threshold,
            });
        }
        let h = dt.min(T_MAX_CAP - t);
        stepper.step(t, &mut y, h, &mut clamped)?;
        t += h;
        states.push(from_flat(t, &y, n));
    }
}

/// Average delivery delay from a saturated trajectory:
/// `E(D) = t_max - (1/(M-1)) * integral(total_infected(t) - 1) dt`,
/// trapezoidal quadrature on the trajectory grid. Requires the final total
/// infected count to have reached [`SATURATION_FRACTION`] of `m`.
pub fn average_delay_ode(traj: &Trajectory, m: u32) -> Result<f64, OdeError> {
    let threshold = SATURATION_FRACTION * f64::from(m);
    let last = traj.final_state();
    if last.total_infected() < threshold {
        return Err(OdeError::NotSaturated {
            t_max: last.t,
            total_infected: last.total_infected(),
            threshold,
        });
    }
    let mut integral = 0.0;
    for pair in traj.states.windows(2) {
        let f0 = pair[0].total_infected() - 1.0;
        let f1 = pair[1].total_infected() - 1.0;
        integral += 0.5 * (f0 + f1) * (pair[1].t - pair[0].t);
    }
    Ok(last.t - integral / f64::from(m - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetworkConfig;

    fn test_config(n: usize, m: u32) -> NetworkConfig {
        let (centers, p_sel): (Vec<(f64, f64)>, Vec<f64>) = match n {
            3 => (
                vec![(250.0, 250.0), (250.0, 750.0), (750.0, 250.0)],
                vec![0.2, 0.4, 0.4],
            ),
            4 => (
                vec![(250.0, 250.0), (250.0, 750.0), (750.0, 250.0), (750.0, 750.0)],
                vec![0.2, 0.4, 0.1, 0.3],
            ),
            _ => panic!("unsupported test size"),
        };
        NetworkConfig {
            n,
            m,
            l: 1000.0,
            l_c: 100.0,
            r: 10.0,
            alpha: 1.0 / 80.0,
            beta: 1.0 / 520.0,
            p_r: 0.2,
            p_l: 0.8,
            p_sel,
            community_centers: centers,
            v_min: 5.0,
            v_max: 15.0,
            v_trans: 20.0,
        }
    }

    fn test_rates() -> MeetingRates {
        MeetingRates { lambda: 2.4e-2, mu: 2.54e-4, gamma: 2.586e-4, eta: 1.086e-3 }
    }

    #[test]
    fn meeting_rate_at_real_occupancies() {
        let r = test_rates();
        let m = 11;
        assert_eq!(r_meet_real(0.0, &r, m), 0.0);
        assert!((r_meet_real(0.5, &r, m) - 0.5 * r.gamma).abs() < 1e-18);
        assert_eq!(r_meet_real(1.0, &r, m), r.gamma);
        let expect = r.gamma + 4.0 * (r.eta - r.gamma) / 9.0;
        assert!((r_meet_real(5.0, &r, m) - expect).abs() < 1e-18);
        assert!((r_meet_real(10.0, &r, m) - r.eta).abs() < 1e-18);
    }

    /// At the initial condition the per-community infection inflow is the
    /// pure arrival term: the step terms of the meeting rate cancel at
    /// occupancy zero.
    #[test]
    fn rhs_at_initial_condition() {
        let cfg = test_config(3, 10);
        let rates = test_rates();
        let state = OdeState::initial(3);
        let d = ode_rhs(&state, &cfg, &rates);
        for i in 0..3 {
            let expect_i = cfg.beta * cfg.p_l * cfg.p_sel[i];
            assert!((d.d_i_l[i] - expect_i).abs() < 1e-18, "d_i_l[{i}]");
            let expect_s = 9.0 * cfg.beta * cfg.p_l * cfg.p_sel[i];
            assert!((d.d_s_l[i] - expect_s).abs() < 1e-15, "d_s_l[{i}]");
        }
        let expect_r = -cfg.beta * cfg.p_l + 9.0 * rates.mu;
        assert!((d.d_i_r - expect_r).abs() < 1e-15);
    }

    #[test]
    fn rhs_scales_linearly_with_rates() {
        let cfg = test_config(3, 10);
        let rates = test_rates();
        let c = 3.7;
        let scaled_cfg = NetworkConfig { alpha: cfg.alpha * c, beta: cfg.beta * c, ..cfg.clone() };
        let scaled_rates = MeetingRates {
            lambda: rates.lambda * c,
            mu: rates.mu * c,
            gamma: rates.gamma * c,
            eta: rates.eta * c,
        };
        let state = OdeState {
            t: 0.0,
            i_l: vec![0.5, 1.25, 0.0],
            s_l: vec![2.0, 0.75, 3.5],
            i_r: 1.5,
        };
        let d1 = ode_rhs(&state, &cfg, &rates);
        let d2 = ode_rhs(&state, &scaled_cfg, &scaled_rates);
        for i in 0..3 {
            assert!((d2.d_i_l[i] - c * d1.d_i_l[i]).abs() < 1e-12 * d1.d_i_l[i].abs().max(1.0));
            assert!((d2.d_s_l[i] - c * d1.d_s_l[i]).abs() < 1e-12 * d1.d_s_l[i].abs().max(1.0));
        }
        assert!((d2.d_i_r - c * d1.d_i_r).abs() < 1e-12 * d1.d_i_r.abs().max(1.0));
    }

    #[test]
    fn no_infection_growth_when_saturated() {
        let cfg = test_config(3, 10);
        let rates = test_rates();
        let state = OdeState {
            t: 0.0,
            i_l: vec![2.0, 4.0, 3.0],
            s_l: vec![0.0, 0.0, 0.0],
            i_r: 1.0,
        };
        assert_eq!(state.susceptible_roaming(10), 0.0);
        let d = ode_rhs(&state, &cfg, &rates);
        for i in 0..3 {
            assert!(d.d_s_l[i] <= 1e-18, "no susceptible inflow at saturation");
        }
        let total = d.d_i_r + d.d_i_l.iter().sum::<f64>();
        assert!(total.abs() < 1e-15, "total infected stationary at saturation, got {total}");
    }

    #[test]
    fn zero_horizon_yields_initial_state_only() {
        let cfg = test_config(3, 10);
        let traj = integrate(&cfg, &test_rates(), 0.0, 0.5).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.states[0], OdeState::initial(3));
        assert_eq!(traj.clamped, 0);
    }

    #[test]
    fn saturates_and_conserves_population() {
        let cfg = test_config(4, 100);
        let rates = test_rates();
        let traj = integrate_until_saturated(&cfg, &rates, 0.5).unwrap();
        let last = traj.final_state();
        assert!(last.total_infected() >= 99.9);
        assert!(last.total_infected() <= 100.0 + 1e-6);
        let mut prev = 0.0;
        for s in &traj.states {
            assert!(s.invariants_hold(100, 1e-6), "invariants at t = {}", s.t);
            let tot = s.total_infected();
            assert!(tot >= prev - 1e-9, "total infected must not decrease at t = {}", s.t);
            prev = tot;
        }
    }

    #[test]
    fn step_halving_converges() {
        let cfg = test_config(4, 100);
        let rates = test_rates();
        let t_max = 400.0;
        let full = integrate(&cfg, &rates, t_max, 0.5).unwrap();
        let half = integrate(&cfg, &rates, t_max, 0.25).unwrap();
        let diff =
            (full.final_state().total_infected() - half.final_state().total_infected()).abs();
        assert!(diff < 1e-6 * 100.0, "step-halving changed total infected by {diff}");
    }

    #[test]
    fn average_delay_matches_survival_integral() {
        let cfg = test_config(4, 100);
        let rates = test_rates();
        let traj = integrate_until_saturated(&cfg, &rates, 0.5).unwrap();
        let delay = average_delay_ode(&traj, 100).unwrap();
        // Survival form: integral of 1 - (total-1)/(M-1) over the grid.
        let mut survival = 0.0;
        for pair in traj.states.windows(2) {
            let f0 = 1.0 - (pair[0].total_infected() - 1.0) / 99.0;
            let f1 = 1.0 - (pair[1].total_infected() - 1.0) / 99.0;
            survival += 0.5 * (f0 + f1) * (pair[1].t - pair[0].t);
        }
        assert!(
            (delay - survival).abs() <= 0.01 * delay.abs(),
            "delay {delay} vs survival integral {survival}"
        );
        assert!(delay > 0.0);
    }

    #[test]
    fn constant_saturated_trajectory_has_zero_delay() {
        let m = 10;
        let full = OdeState { t: 0.0, i_l: vec![0.0; 4], s_l: vec![0.0; 4], i_r: 10.0 };
        let mut second = full.clone();
        second.t = 50.0;
        let traj = Trajectory { states: vec![full, second], dt: 50.0, clamped: 0 };
        let delay = average_delay_ode(&traj, m).unwrap();
        assert!(delay.abs() < 1e-12, "got {delay}");
    }

    #[test]
    fn unsaturated_trajectory_is_rejected() {
        let cfg = test_config(4, 100);
        let traj = integrate(&cfg, &test_rates(), 10.0, 0.5).unwrap();
        assert!(matches!(
            average_delay_ode(&traj, 100),
            Err(OdeError::NotSaturated { .. })
        ));
    }

    #[test]
    fn hits_time_cap_when_rates_are_tiny() {
        let cfg = test_config(4, 100);
        let rates = MeetingRates { lambda: 1e-12, mu: 1e-12, gamma: 1e-12, eta: 1e-12 };
        let err = integrate_until_saturated(&cfg, &rates, 50.0).unwrap_err();
        assert!(matches!(err, OdeError::NotSaturated { .. }));
    }

    #[test]
    fn oversized_step_is_detected() {
        let cfg = test_config(4, 100);
        let err = integrate(&cfg, &test_rates(), 1e6, 1e5).unwrap_err();
        assert!(matches!(err, OdeError::StepTooLarge { .. }));
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = test_config(4, 100);
        assert!(matches!(
            integrate(&cfg, &test_rates(), 1.0, 0.0),
            Err(OdeError::InvalidStep(_))
        ));
        let tiny = NetworkConfig { m: 2, ..test_config(4, 100) };
        assert!(matches!(
            integrate(&tiny, &test_rates(), 1.0, 0.5),
            Err(OdeError::PopulationTooSmall(2))
        ));
    }

    #[test]
    fn csv_round_trip_shape() {
        let cfg = test_config(3, 10);
        let traj = integrate(&cfg, &test_rates(), 1.0, 0.5).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,I_r,I_l_1,I_l_2,I_l_3,S_l_1,S_l_2,S_l_3,total_infected");
        assert_eq!(csv.lines().count(), 1 + traj.states.len());
        for line in lines {
            assert_eq!(line.split(',').count(), 9);
        }
    }
}
