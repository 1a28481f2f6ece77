//! Zero-reference wrench controllers: PD on the measured wrench, the contact
//! wrench observer (CWDOB) and the dynamic wrench observer (DW-DOB).
//!
//! Sign convention: `f_ext` is the wrench the environment exerts on the tool,
//! so the plant obeys `Λ ẍ + μ = F_c′ + f_ext + d` with `d` any unmodeled
//! input. Both observers estimate `d` and subtract it from the command. The
//! contact observer has no inertia model, so its estimate also absorbs `-Λ ẍ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{
    lowpass_step, AccelerationPath, CompositeFilter, DifferentiatorBank, FilterParams, FilterState,
    PhaseMatchedPath,
};
use crate::rigid_body::Wrench;

/// Diagonal PD gains on the measured wrench.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: Vec<f64>,
    /// Seconds.
    pub kd: Vec<f64>,
}

/// Which of the two gain tables a scenario draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GainSet {
    A,
    B,
}

impl PdGains {
    pub fn new(kp: Vec<f64>, kd: Vec<f64>) -> Result<Self> {
        let gains = Self { kp, kd };
        gains.validate()?;
        Ok(gains)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kp.len() != self.kd.len() {
            return Err(Error::DimensionMismatch {
                expected: self.kp.len(),
                got: self.kd.len(),
            });
        }
        if self.kp.iter().chain(&self.kd).any(|g| !g.is_finite()) {
            return Err(Error::config("gains", "gains must be finite"));
        }
        if self.kd.iter().any(|&g| g < 0.0) {
            return Err(Error::config("gains.kd", "derivative gains must be >= 0"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.kp.len()
    }

    /// True when some proportional gain is above one.
    pub fn exceeds_unity(&self) -> bool {
        self.kp.iter().any(|&k| k > 1.0)
    }

    /// Planar gains `(x, y, θ)`: the lateral axis takes the translational
    /// entry, the rotation takes the rotational entry, and the insertion axis
    /// is left unregulated.
    pub fn planar(set: GainSet) -> Self {
        let (kp_t, kp_r) = match set {
            GainSet::A => (0.10, 0.50),
            GainSet::B => (1.00, 5.00),
        };
        Self {
            kp: vec![kp_t, 0.0, kp_r],
            kd: vec![0.01, 0.0, 0.06],
        }
    }

    /// The four-axis table form `(F_x, F_y, T_x, T_y)`.
    pub fn spatial(set: GainSet) -> Self {
        let (kp_t, kp_r) = match set {
            GainSet::A => (0.10, 0.50),
            GainSet::B => (1.00, 5.00),
        };
        Self {
            kp: vec![kp_t, kp_t, kp_r, kp_r],
            kd: vec![0.01, 0.01, 0.06, 0.06],
        }
    }
}

/// `F_c = -K_P f_ext + K_D ḟ_ext`.
///
/// The derivative term carries the sign that removes energy from a stiff
/// contact: with `f_ext` the wrench on the tool, `ḟ_ext` opposes the
/// penetration velocity.
pub fn pd_wrench(f_ext: &Wrench, f_ext_dot: &Wrench, gains: &PdGains) -> Wrench {
    Wrench(DVector::from_iterator(
        f_ext.dim(),
        (0..f_ext.dim()).map(|i| -gains.kp[i] * f_ext[i] + gains.kd[i] * f_ext_dot[i]),
    ))
}

/// Perturbation of the nominal task inertia used by the observer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MismatchConfig {
    /// `Λ̂ = (1 + scale) Λ (+ offset)`.
    pub lambda_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_offset: Option<Vec<Vec<f64>>>,
}

impl MismatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-0.5..=0.5).contains(&self.lambda_scale) {
            return Err(Error::config(
                "mismatch.lambda_scale",
                "must lie in [-0.5, 0.5]",
            ));
        }
        if let Some(rows) = &self.lambda_offset {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(Error::config("mismatch.lambda_offset", "must be square"));
            }
            for i in 0..n {
                for j in 0..n {
                    if (rows[i][j] - rows[j][i]).abs() > 1e-12 {
                        return Err(Error::config("mismatch.lambda_offset", "must be symmetric"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Nominal inertia from the true one; refuses a result that is not positive definite.
    pub fn apply(&self, lambda: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut hat = lambda * (1.0 + self.lambda_scale);
        if let Some(rows) = &self.lambda_offset {
            let n = lambda.nrows();
            if rows.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: rows.len(),
                });
            }
            hat += DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        }
        if hat.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(hat)
    }
}

/// Filter chains and memory of one observer instance.
#[derive(Clone, Debug)]
pub struct ObserverState {
    pub q_filter: Vec<FilterState>,
    pub wrench_path: PhaseMatchedPath,
    pub command_path: PhaseMatchedPath,
    pub accel_path: AccelerationPath,
    pub d_hat: Wrench,
    /// `F_c′` of the previous tick.
    pub last_commanded: Wrench,
    /// Axes on which the estimate is fed back; others report zero.
    pub active: Vec<bool>,
}

impl ObserverState {
    pub fn new(dim: usize, composite: &CompositeFilter) -> Self {
        Self {
            q_filter: vec![FilterState::zeroed(); dim],
            wrench_path: PhaseMatchedPath::new(composite.clone(), dim),
            command_path: PhaseMatchedPath::new(composite.clone(), dim),
            accel_path: AccelerationPath::new(composite.clone(), dim),
            d_hat: Wrench::zeros(dim),
            last_commanded: Wrench::zeros(dim),
            active: vec![true; dim],
        }
    }

    pub fn with_active_axes(mut self, active: Vec<bool>) -> Self {
        self.active = active;
        self
    }

    pub fn dim(&self) -> usize {
        self.d_hat.dim()
    }

    fn filter_estimate(&mut self, residual: &Wrench, q_params: &FilterParams) -> Wrench {
        let d_hat = Wrench(DVector::from_iterator(
            residual.dim(),
            self.q_filter
                .iter_mut()
                .zip(residual.0.iter())
                .zip(&self.active)
                .map(|((s, &r), &on)| {
                    let y = lowpass_step(s, q_params, r);
                    if on {
                        y
                    } else {
                        0.0
                    }
                }),
        ));
        self.d_hat = d_hat.clone();
        d_hat
    }

    /// Records `F_c′ = F_c − d̂` as next tick's commanded wrench and returns it.
    pub fn commit(&mut self, f_c: &Wrench) -> Wrench {
        let commanded = f_c - &self.d_hat;
        self.last_commanded = commanded.clone();
        commanded
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Contact-wrench observer: `d̂ = Q(−f_ext − F_c′)` with `F_c′` from the previous tick.
pub fn cwdob_step(
    state: &mut ObserverState,
    f_ext: &Wrench,
    q_params: &FilterParams,
) -> Result<Wrench> {
    check_dim(state.dim(), f_ext.dim())?;
    let residual = -(f_ext + &state.last_commanded);
    Ok(state.filter_estimate(&residual, q_params))
}

/// Phase-aligned residual `r̃ = Λ̂ ẍ − L(f_ext) − L(F_c′)`.
pub fn dwdob_residual(
    lambda_hat: &DMatrix<f64>,
    xddot: &DVector<f64>,
    f_ext_l: &Wrench,
    f_c_l: &Wrench,
) -> Result<Wrench> {
    let m = lambda_hat.nrows();
    check_dim(m, lambda_hat.ncols())?;
    check_dim(m, xddot.len())?;
    check_dim(m, f_ext_l.dim())?;
    check_dim(m, f_c_l.dim())?;
    Ok(Wrench(lambda_hat * xddot - &f_ext_l.0 - &f_c_l.0))
}

/// Dynamic-wrench observer tick: differentiate the pose twice through the
/// composite chain, pass both wrenches through its low-pass content, and
/// filter the residual with `Q`.
pub fn dwdob_step(
    state: &mut ObserverState,
    lambda_hat: &DMatrix<f64>,
    pose: &DVector<f64>,
    f_ext: &Wrench,
    q_params: &FilterParams,
) -> Result<Wrench> {
    check_dim(state.dim(), pose.len())?;
    check_dim(state.dim(), f_ext.dim())?;
    let xddot = state.accel_path.step(pose);
    let f_ext_l = state.wrench_path.step(f_ext);
    let f_c_l = state.command_path.step(&state.last_commanded);
    let residual = dwdob_residual(lambda_hat, &xddot, &f_ext_l, &f_c_l)?;
    Ok(state.filter_estimate(&residual, q_params))
}

/// The controllers under comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "PD_l")]
    PdLow,
    #[serde(rename = "PD_h")]
    PdHigh,
    #[serde(rename = "CWDOB")]
    Cwdob,
    #[serde(rename = "DWDOB")]
    Dwdob,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [Self::PdLow, Self::PdHigh, Self::Cwdob, Self::Dwdob];

    pub fn label(self) -> &'static str {
        match self {
            Self::PdLow => "PD_l",
            Self::PdHigh => "PD_h",
            Self::Cwdob => "CWDOB",
            Self::Dwdob => "DWDOB",
        }
    }

    pub fn gain_set(self) -> GainSet {
        match self {
            Self::PdHigh => GainSet::B,
            _ => GainSet::A,
        }
    }

    pub fn uses_observer(self) -> bool {
        matches!(self, Self::Cwdob | Self::Dwdob)
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("controller", format!("unknown controller `{s}`")))
    }
}

/// Filter settings shared by all controllers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverConfig {
    /// Q-filter cutoff in Hz.
    pub q_cutoff_hz: f64,
    /// Cutoff of the differentiator producing `ḟ_ext` for the PD term, in Hz.
    pub wrench_rate_cutoff_hz: f64,
    /// Cutoffs (Hz) of the acceleration-path stages, in order.
    pub composite_hz: Vec<f64>,
    /// Axes on which the estimate is fed back.
    pub active_axes: Vec<bool>,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            q_cutoff_hz: 15.0,
            wrench_rate_cutoff_hz: 15.0,
            composite_hz: vec![100.0, 15.0],
            active_axes: vec![true, false, true],
        }
    }
}

impl ObserverConfig {
    pub fn composite(&self, dt: f64) -> Result<CompositeFilter> {
        let stages = self
            .composite_hz
            .iter()
            .map(|&hz| FilterParams::from_hz(hz, dt))
            .collect::<Result<Vec<_>>>()?;
        let filter = CompositeFilter {
            diff_stages: 2.min(stages.len()),
            stages,
        };
        if filter.diff_stages < 2 {
            return Err(Error::config(
                "observer.composite_hz",
                "two differentiating stages are required",
            ));
        }
        filter.validate()?;
        Ok(filter)
    }
}

/// Inputs sampled at one control tick.
#[derive(Clone, Debug)]
pub struct ControlInput<'a> {
    pub f_ext: &'a Wrench,
    pub pose: &'a DVector<f64>,
    pub lambda_hat: &'a DMatrix<f64>,
    pub feedforward: &'a Wrench,
}

/// Wrenches produced at one control tick.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlOutput {
    /// PD term plus feedforward.
    pub f_c: Wrench,
    /// Applied wrench `F_c − d̂`.
    pub f_c_prime: Wrench,
    pub d_hat: Wrench,
}

/// One controller instance with its filter memory.
#[derive(Clone, Debug)]
pub struct Controller {
    pub kind: ControllerKind,
    pub gains: PdGains,
    q_params: FilterParams,
    rate: DifferentiatorBank,
    observer: ObserverState,
}

impl Controller {
    pub fn new(
        kind: ControllerKind,
        gains: PdGains,
        config: &ObserverConfig,
        dt: f64,
    ) -> Result<Self> {
        gains.validate()?;
        let dim = gains.dim();
        check_dim(dim, config.active_axes.len())?;
        let composite = config.composite(dt)?;
        Ok(Self {
            kind,
            q_params: FilterParams::from_hz(config.q_cutoff_hz, dt)?,
            rate: DifferentiatorBank::new(
                FilterParams::from_hz(config.wrench_rate_cutoff_hz, dt)?,
                dim,
            ),
            observer: ObserverState::new(dim, &composite)
                .with_active_axes(config.active_axes.clone()),
            gains,
        })
    }

    pub fn observer(&self) -> &ObserverState {
        &self.observer
    }

    pub fn step(&mut self, input: &ControlInput<'_>) -> Result<ControlOutput> {
        let f_dot = Wrench(self.rate.step(&input.f_ext.0));
        let f_c = &pd_wrench(input.f_ext, &f_dot, &self.gains) + input.feedforward;
        match self.kind {
            ControllerKind::Cwdob => {
                cwdob_step(&mut self.observer, input.f_ext, &self.q_params)?;
            }
            ControllerKind::Dwdob => {
                dwdob_step(
                    &mut self.observer,
                    input.lambda_hat,
                    input.pose,
                    input.f_ext,
                    &self.q_params,
                )?;
            }
            ControllerKind::PdLow | ControllerKind::PdHigh => {}
        }
        let f_c_prime = self.observer.commit(&f_c);
        Ok(ControlOutput {
            f_c,
            f_c_prime,
            d_hat: self.observer.d_hat.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const DT: f64 = 1e-3;

    fn q15() -> FilterParams {
        FilterParams::from_hz(15.0, DT).unwrap()
    }

    fn composite() -> CompositeFilter {
        CompositeFilter::cascade_hz(100.0, 15.0, DT).unwrap()
    }

    #[test]
    fn pd_zero_at_rest() {
        let g = PdGains::planar(GainSet::A);
        let z = Wrench::zeros(3);
        assert_eq!(pd_wrench(&z, &z, &g), z);
    }

    #[test]
    fn pd_proportional_term() {
        let g = PdGains::planar(GainSet::A);
        let f = Wrench::from_slice(&[10.0, 0.0, 0.0]);
        let out = pd_wrench(&f, &Wrench::zeros(3), &g);
        assert!((out[0] + 1.0).abs() < 1e-12);
        let fd = Wrench::from_slice(&[2.0, 0.0, 0.0]);
        let out = pd_wrench(&f, &fd, &g);
        assert!((out[0] - (-1.0 + 0.01 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn gain_tables() {
        let a = PdGains::spatial(GainSet::A);
        assert_eq!(a.kp, vec![0.10, 0.10, 0.50, 0.50]);
        assert_eq!(a.kd, vec![0.01, 0.01, 0.06, 0.06]);
        let b = PdGains::spatial(GainSet::B);
        assert_eq!(b.kp, vec![1.00, 1.00, 5.00, 5.00]);
        assert_eq!(b.kd, a.kd);
        assert!(!a.exceeds_unity());
        assert!(b.exceeds_unity());
        assert!(PdGains::planar(GainSet::B).exceeds_unity());
        assert!(PdGains::new(vec![0.1], vec![-0.1]).is_err());
    }

    #[test]
    fn cwdob_zero_inputs_stay_zero() {
        let mut s = ObserverState::new(3, &composite());
        for _ in 0..1000 {
            let d = cwdob_step(&mut s, &Wrench::zeros(3), &q15()).unwrap();
            assert_eq!(d, Wrench::zeros(3));
            s.commit(&Wrench::zeros(3));
        }
    }

    #[test]
    fn cwdob_static_fixed_point() {
        // Static plant with the command held: the estimate settles on −F − F_c′.
        let q = q15();
        let mut s = ObserverState::new(2, &composite());
        let f = Wrench::from_slice(&[4.0, -12.0]);
        s.last_commanded = Wrench::from_slice(&[1.0, 3.0]);
        let steps = (5.0 / q.cutoff / DT).ceil() as usize;
        let mut d = Wrench::zeros(2);
        for _ in 0..steps {
            d = cwdob_step(&mut s, &f, &q).unwrap();
        }
        let target = -(&f + &s.last_commanded);
        for i in 0..2 {
            assert!((d[i] / target[i] - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn cwdob_tracks_one_hertz_with_q_gain() {
        let q = q15();
        let mut s = ObserverState::new(1, &composite());
        let omega = 2.0 * PI;
        let mut samples = Vec::new();
        for k in 0..4000 {
            let t = k as f64 * DT;
            let d = cwdob_step(&mut s, &Wrench::from_slice(&[(omega * t).sin()]), &q).unwrap();
            if k >= 2000 {
                samples.push(d[0].abs());
            }
        }
        let peak = samples.iter().cloned().fold(0.0, f64::max);
        let expected = 1.0 / (1.0 + (omega / q.cutoff).powi(2)).sqrt();
        assert!((peak / expected - 1.0).abs() < 0.03, "peak {peak}");
    }

    #[test]
    fn residual_zero_inputs() {
        let lam = DMatrix::identity(3, 3) * 2.0;
        let z = Wrench::zeros(3);
        let r = dwdob_residual(&lam, &DVector::zeros(3), &z, &z).unwrap();
        assert_eq!(r, z);
        assert!(matches!(
            dwdob_residual(&lam, &DVector::zeros(2), &z, &z),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn commanded_plus_estimate_is_command() {
        let mut s = ObserverState::new(2, &composite());
        s.d_hat = Wrench::from_slice(&[0.3, -1.7]);
        let f_c = Wrench::from_slice(&[2.0, 5.0]);
        let out = s.commit(&f_c);
        assert_eq!(&out + &s.d_hat, f_c);
    }

    #[test]
    fn inactive_axes_report_zero() {
        let mut s = ObserverState::new(3, &composite()).with_active_axes(vec![true, false, true]);
        let d = cwdob_step(&mut s, &Wrench::from_slice(&[1.0, 1.0, 1.0]), &q15()).unwrap();
        assert_eq!(d[1], 0.0);
        assert!(d[0] != 0.0 && d[2] != 0.0);
    }

    #[test]
    fn mismatch_bounds() {
        let lam = DMatrix::identity(2, 2);
        assert!(MismatchConfig {
            lambda_scale: 0.6,
            lambda_offset: None
        }
        .validate()
        .is_err());
        let neg = MismatchConfig {
            lambda_scale: 0.0,
            lambda_offset: Some(vec![vec![-2.0, 0.0], vec![0.0, 0.0]]),
        };
        assert!(matches!(neg.apply(&lam), Err(Error::NotPositiveDefinite)));
        let ok = MismatchConfig {
            lambda_scale: 0.2,
            lambda_offset: None,
        };
        assert!((ok.apply(&lam).unwrap()[(0, 0)] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn controller_kind_parses_labels() {
        for k in ControllerKind::ALL {
            assert_eq!(k.label().parse::<ControllerKind>().unwrap(), k);
        }
        assert_eq!(ControllerKind::PdHigh.gain_set(), GainSet::B);
        assert!("nope".parse::<ControllerKind>().is_err());
    }
}
