//! First-order discrete filters at a fixed sample period.
//!
//! Every stage is a bilinear (Tustin) realization with the pole prewarped to the
//! cutoff, so the discrete -3 dB point sits exactly at the requested frequency.
//! The filtered differentiator `ωs/(s+ω)` is the low-pass stage multiplied by the
//! bilinear derivative `(2/dt)(1 - z⁻¹)/(1 + z⁻¹)`; the `(1 + z⁻¹)` factor cancels
//! against the low-pass numerator, which leaves the two stages with identical
//! denominators. An acceleration path built from differentiators and a wrench
//! path built from the matching low-pass stages therefore differ by exactly two
//! bilinear derivatives at every frequency.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rigid_body::Wrench;

/// Cutoff (rad/s) and sample period (s) of one first-order stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub cutoff: f64,
    pub dt: f64,
}

impl FilterParams {
    pub fn new(cutoff: f64, dt: f64) -> Result<Self> {
        let params = Self { cutoff, dt };
        params.validate()?;
        Ok(params)
    }

    /// Stage with its cutoff given in Hz.
    pub fn from_hz(hz: f64, dt: f64) -> Result<Self> {
        Self::new(2.0 * std::f64::consts::PI * hz, dt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::config("filter.cutoff", "cutoff must be > 0"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("filter.dt", "sample period must be > 0"));
        }
        if self.cutoff * self.dt >= 2.0 {
            return Err(Error::config(
                "filter.cutoff",
                "cutoff * dt must stay below 2",
            ));
        }
        Ok(())
    }

    /// Pole coefficient `a` and input gain `g` of `y = a y₋₁ + g (u + u₋₁)`.
    fn coefficients(&self) -> (f64, f64) {
        let warp = self.cutoff / (0.5 * self.cutoff * self.dt).tan();
        let g = self.cutoff / (warp + self.cutoff);
        (1.0 - 2.0 * g, g)
    }

    /// Time constant `1/ω` in seconds.
    pub fn time_constant(&self) -> f64 {
        1.0 / self.cutoff
    }
}

/// Internal state of one first-order stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FilterState {
    pub prev_output: f64,
    pub prev_input: f64,
    pub initialized: bool,
}

impl FilterState {
    /// State that has already seen an all-zero history.
    pub fn zeroed() -> Self {
        Self {
            prev_output: 0.0,
            prev_input: 0.0,
            initialized: true,
        }
    }
}

/// Low-pass `ω/(s+ω)`. An uninitialized state passes the first sample through.
pub fn lowpass_step(state: &mut FilterState, params: &FilterParams, u: f64) -> f64 {
    if !state.initialized {
        *state = FilterState {
            prev_output: u,
            prev_input: u,
            initialized: true,
        };
        return u;
    }
    let (a, g) = params.coefficients();
    let y = a * state.prev_output + g * (u + state.prev_input);
    state.prev_output = y;
    state.prev_input = u;
    y
}

/// Filtered differentiator `ωs/(s+ω)`. An uninitialized state outputs zero on
/// the first sample.
pub fn filtered_diff_step(state: &mut FilterState, params: &FilterParams, u: f64) -> f64 {
    if !state.initialized {
        *state = FilterState {
            prev_output: 0.0,
            prev_input: u,
            initialized: true,
        };
        return 0.0;
    }
    let (a, g) = params.coefficients();
    let y = a * state.prev_output + (2.0 / params.dt) * g * (u - state.prev_input);
    state.prev_output = y;
    state.prev_input = u;
    y
}

/// Per-axis bank of identical low-pass stages.
#[derive(Clone, Debug)]
pub struct LowpassBank {
    params: FilterParams,
    states: Vec<FilterState>,
}

impl LowpassBank {
    pub fn new(params: FilterParams, dim: usize) -> Self {
        Self {
            params,
            states: vec![FilterState::default(); dim],
        }
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn step(&mut self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            u.len(),
            self.states
                .iter_mut()
                .zip(u.iter())
                .map(|(s, &v)| lowpass_step(s, &self.params, v)),
        )
    }
}

/// Per-axis bank of filtered differentiators.
#[derive(Clone, Debug)]
pub struct DifferentiatorBank {
    params: FilterParams,
    states: Vec<FilterState>,
}

impl DifferentiatorBank {
    pub fn new(params: FilterParams, dim: usize) -> Self {
        Self {
            params,
            states: vec![FilterState::default(); dim],
        }
    }

    pub fn step(&mut self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            u.len(),
            self.states
                .iter_mut()
                .zip(u.iter())
                .map(|(s, &v)| filtered_diff_step(s, &self.params, v)),
        )
    }
}

/// Composite filter `L(s)`: an ordered cascade of first-order stages, of which
/// the first `diff_stages` act as differentiators on the acceleration path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeFilter {
    pub stages: Vec<FilterParams>,
    pub diff_stages: usize,
}

impl CompositeFilter {
    /// Two-stage cascade with distinct cutoffs (Hz), both differentiating.
    pub fn cascade_hz(first_hz: f64, second_hz: f64, dt: f64) -> Result<Self> {
        Ok(Self {
            stages: vec![
                FilterParams::from_hz(first_hz, dt)?,
                FilterParams::from_hz(second_hz, dt)?,
            ],
            diff_stages: 2,
        })
    }

    /// Two identical differentiating stages, `L(s) = H(s)²` up to the `s²` factor.
    pub fn identical_hz(hz: f64, dt: f64) -> Result<Self> {
        Self::cascade_hz(hz, hz, dt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config(
                "filters.stages",
                "at least one stage is required",
            ));
        }
        if self.diff_stages > self.stages.len() {
            return Err(Error::config(
                "filters.diff_stages",
                "more differentiators than stages",
            ));
        }
        let dt = self.stages[0].dt;
        for stage in &self.stages {
            stage.validate()?;
            if stage.dt != dt {
                return Err(Error::StreamRateMismatch {
                    left: dt,
                    right: stage.dt,
                });
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.stages[0].dt
    }

    /// Longest stage time constant; a transient of five of these is treated as settled.
    pub fn slowest_time_constant(&self) -> f64 {
        self.stages
            .iter()
            .map(FilterParams::time_constant)
            .fold(0.0, f64::max)
    }
}

/// Acceleration path: `ẍ = L(s) s² x` from sampled poses.
#[derive(Clone, Debug)]
pub struct AccelerationPath {
    filter: CompositeFilter,
    states: Vec<Vec<FilterState>>,
}

impl AccelerationPath {
    pub fn new(filter: CompositeFilter, dim: usize) -> Self {
        let stages = filter.stages.len();
        Self {
            filter,
            states: vec![vec![FilterState::default(); stages]; dim],
        }
    }

    pub fn step(&mut self, pose: &DVector<f64>) -> DVector<f64> {
        let filter = &self.filter;
        DVector::from_iterator(
            pose.len(),
            self.states.iter_mut().zip(pose.iter()).map(|(chain, &x)| {
                chain
                    .iter_mut()
                    .zip(&filter.stages)
                    .enumerate()
                    .fold(x, |u, (i, (s, p))| {
                        if i < filter.diff_stages {
                            filtered_diff_step(s, p, u)
                        } else {
                            lowpass_step(s, p, u)
                        }
                    })
            }),
        )
    }
}

/// Wrench path: the low-pass content `L(s)` of the acceleration path.
#[derive(Clone, Debug)]
pub struct PhaseMatchedPath {
    filter: CompositeFilter,
    states: Vec<Vec<FilterState>>,
}

impl PhaseMatchedPath {
    pub fn new(filter: CompositeFilter, dim: usize) -> Self {
        let stages = filter.stages.len();
        Self {
            filter,
            states: vec![vec![FilterState::default(); stages]; dim],
        }
    }

    pub fn step(&mut self, wrench: &Wrench) -> Wrench {
        let filter = &self.filter;
        Wrench(DVector::from_iterator(
            wrench.dim(),
            self.states
                .iter_mut()
                .zip(wrench.0.iter())
                .map(|(chain, &w)| {
                    chain
                        .iter_mut()
                        .zip(&filter.stages)
                        .fold(w, |u, (s, p)| lowpass_step(s, p, u))
                }),
        ))
    }
}

/// Runs the acceleration path over a pose stream.
pub fn composite_accel(
    filter: &CompositeFilter,
    poses: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    filter.validate()?;
    let dim = poses.first().map_or(0, |p| p.len());
    let mut path = AccelerationPath::new(filter.clone(), dim);
    Ok(poses.iter().map(|p| path.step(p)).collect())
}

/// Runs the phase-matched wrench path over a wrench stream.
pub fn apply_l(filter: &CompositeFilter, wrenches: &[Wrench]) -> Result<Vec<Wrench>> {
    filter.validate()?;
    let dim = wrenches.first().map_or(0, Wrench::dim);
    let mut path = PhaseMatchedPath::new(filter.clone(), dim);
    Ok(wrenches.iter().map(|w| path.step(w)).collect())
}

/// Checks that an acceleration path and a wrench path can be phase matched.
pub fn check_matched(accel: &CompositeFilter, wrench: &CompositeFilter) -> Result<()> {
    accel.validate()?;
    wrench.validate()?;
    if accel.dt() != wrench.dt() {
        return Err(Error::StreamRateMismatch {
            left: accel.dt(),
            right: wrench.dt(),
        });
    }
    let same_poles = accel.stages.len() == wrench.stages.len()
        && accel
            .stages
            .iter()
            .zip(&wrench.stages)
            .all(|(a, b)| a.cutoff == b.cutoff);
    if !same_poles {
        return Err(Error::config(
            "filters.stages",
            "wrench path must reuse the acceleration-path stages",
        ));
    }
    Ok(())
}
