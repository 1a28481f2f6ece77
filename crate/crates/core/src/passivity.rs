//! Runtime energy bookkeeping at the interaction port and the safety monitor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rigid_body::Wrench;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    #[default]
    None,
    Force,
    Moment,
}

impl StopReason {
    pub fn is_stop(self) -> bool {
        self != StopReason::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::None => "none",
            StopReason::Force => "force",
            StopReason::Moment => "moment",
        }
    }
}

/// Running port energy, storage and passivity residual of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// Integral of `f_extᵀ ẋ`, J.
    pub e_port: f64,
    pub s0: f64,
    pub s_now: f64,
    /// `(s_now − s0) − e_port`; positive means net energy was injected.
    pub rho: f64,
    pub stopped: bool,
    pub stop_reason: StopReason,
    #[serde(skip)]
    prev_power: Option<f64>,
}

impl EnergyLedger {
    pub fn new(s0: f64) -> Self {
        Self {
            s0,
            s_now: s0,
            ..Self::default()
        }
    }

    /// Sets the current storage and refreshes the residual.
    pub fn record_storage(&mut self, s_now: f64) {
        self.s_now = s_now;
        self.rho = passivity_residual(self);
    }

    /// Latches a stop; later calls never clear it.
    pub fn latch(&mut self, reason: StopReason) {
        if !self.stopped && reason.is_stop() {
            self.stopped = true;
            self.stop_reason = reason;
        }
    }
}

/// Trapezoidal update of the port energy. The first sample only seeds the
/// previous power.
pub fn port_energy_step(ledger: &mut EnergyLedger, f_ext: &Wrench, xdot: &DVector<f64>, dt: f64) {
    let power = f_ext.dot(xdot);
    if let Some(prev) = ledger.prev_power {
        ledger.e_port += 0.5 * (prev + power) * dt;
    }
    ledger.prev_power = Some(power);
    ledger.rho = passivity_residual(ledger);
}

/// Kinetic storage `½ ẋᵀ Λ̂ ẋ`.
pub fn storage(lambda_hat: &DMatrix<f64>, xdot: &DVector<f64>) -> Result<f64> {
    if lambda_hat.nrows() != xdot.len() || lambda_hat.ncols() != xdot.len() {
        return Err(Error::DimensionMismatch {
            expected: lambda_hat.nrows(),
            got: xdot.len(),
        });
    }
    let sym_err = (lambda_hat - lambda_hat.transpose()).amax();
    if sym_err > 1e-9 * lambda_hat.amax().max(1.0) || lambda_hat.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(0.5 * xdot.dot(&(lambda_hat * xdot)))
}

/// Optional observer storage `½ Σ wᵢ d̂ᵢ²`.
pub fn observer_storage(weights: &[f64], d_hat: &Wrench) -> f64 {
    weights
        .iter()
        .zip(d_hat.0.iter())
        .map(|(w, d)| 0.5 * w * d * d)
        .sum()
}

pub fn passivity_residual(ledger: &EnergyLedger) -> f64 {
    (ledger.s_now - ledger.s0) - ledger.e_port
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyLimits {
    /// N.
    pub force_max: f64,
    /// N·m.
    pub moment_max: f64,
}

impl Default for SafetyLimits {
    fn default() -> Self {
        Self {
            force_max: 90.0,
            moment_max: 5.0,
        }
    }
}

impl SafetyLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.force_max > 0.0) {
            return Err(Error::config("safety.force_max", "must be > 0"));
        }
        if !(self.moment_max > 0.0) {
            return Err(Error::config("safety.moment_max", "must be > 0"));
        }
        Ok(())
    }
}

/// Strict threshold test on the force and moment norms. Force is checked first.
pub fn safety_check(limits: &SafetyLimits, f_ext: &Wrench) -> StopReason {
    if f_ext.force_norm() > limits.force_max {
        StopReason::Force
    } else if f_ext.moment_norm() > limits.moment_max {
        StopReason::Moment
    } else {
        StopReason::None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn no_motion_no_energy() {
        let mut l = EnergyLedger::new(0.0);
        for _ in 0..100 {
            port_energy_step(
                &mut l,
                &Wrench::from_slice(&[30.0, -4.0, 1.0]),
                &v(&[0.0, 0.0, 0.0]),
                1e-3,
            );
        }
        assert_eq!(l.e_port, 0.0);
        assert_eq!(l.rho, 0.0);
    }

    #[test]
    fn constant_power_integrates_exactly() {
        let mut l = EnergyLedger::new(0.0);
        let dt = 1e-3;
        for _ in 0..=2000 {
            port_energy_step(
                &mut l,
                &Wrench::from_slice(&[2.0, 0.5]),
                &v(&[1.5, 2.0]),
                dt,
            );
        }
        assert!((l.e_port - 4.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_signals_cancel_over_periods() {
        let mut l = EnergyLedger::new(0.0);
        let (dt, period, amp) = (1e-3, 0.5, 3.0);
        let w = 2.0 * PI / period;
        let n = (4.0 * period / dt).round() as usize;
        for k in 0..=n {
            let t = k as f64 * dt;
            port_energy_step(
                &mut l,
                &Wrench::from_slice(&[amp * (w * t).sin()]),
                &v(&[amp * (w * t).cos()]),
                dt,
            );
        }
        assert!(l.e_port.abs() < 1e-6 * amp * period);
    }

    #[test]
    fn storage_values() {
        assert_eq!(
            storage(&DMatrix::identity(2, 2), &v(&[0.0, 0.0])).unwrap(),
            0.0
        );
        let s = storage(&(DMatrix::identity(2, 2) * 2.0), &v(&[1.0, 0.0])).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            storage(&bad, &v(&[1.0, 0.0])),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn ledger_identity() {
        let mut l = EnergyLedger::new(0.7);
        port_energy_step(&mut l, &Wrench::from_slice(&[1.0]), &v(&[0.2]), 1e-3);
        port_energy_step(&mut l, &Wrench::from_slice(&[1.0]), &v(&[0.4]), 1e-3);
        l.record_storage(0.9);
        assert_eq!(l.rho, (l.s_now - l.s0) - l.e_port);
    }

    #[test]
    fn safety_boundaries() {
        let lim = SafetyLimits::default();
        let w = |f: f64, m: f64| Wrench::from_slice(&[f, 0.0, m]);
        assert_eq!(safety_check(&lim, &w(89.9, 4.9)), StopReason::None);
        assert_eq!(safety_check(&lim, &w(90.0, 0.0)), StopReason::None);
        assert_eq!(safety_check(&lim, &w(90.000001, 0.0)), StopReason::Force);
        assert_eq!(safety_check(&lim, &w(0.01, 5.1)), StopReason::Moment);
        assert_eq!(safety_check(&lim, &w(0.0, -5.1)), StopReason::Moment);
    }

    #[test]
    fn latch_holds() {
        let mut l = EnergyLedger::new(0.0);
        l.latch(StopReason::Moment);
        l.latch(StopReason::None);
        l.latch(StopReason::Force);
        assert!(l.stopped);
        assert_eq!(l.stop_reason, StopReason::Moment);
    }
}
