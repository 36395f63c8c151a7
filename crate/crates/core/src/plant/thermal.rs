use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::scalar::{c, Real};

/// Ground-truth two-node motor thermal model:
///
/// ```text
/// C_core    ċ₁ = R_w I² - K_ch (c₁ - c₂)
/// C_housing ċ₂ = K_ch (c₁ - c₂) - K_ha (c₂ - ambient)
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalPlant<T> {
    /// `(C_core J/K, C_housing J/K, K_ch W/K, K_ha W/K, R_w Ω)`.
    pub true_params: [T; 5],
    pub ambient: T,
}

impl<T: Real> Default for ThermalPlant<T> {
    fn default() -> Self {
        Self { true_params: [c(15.0), c(150.0), c(0.5), c(0.25), c(1.0)], ambient: c(25.0) }
    }
}

impl<T: Real> ThermalPlant<T> {
    pub fn new(true_params: [T; 5], ambient: T) -> Result<Self> {
        if true_params.iter().any(|&p| !(p > T::zero())) {
            return usage("thermal parameters must be strictly positive");
        }
        Ok(Self { true_params, ambient })
    }

    /// Explicit Euler step, `dt ∈ (0, 1]`.
    pub fn thermal_step(&self, c1: T, c2: T, current: T, dt: T) -> Result<(T, T)> {
        if !(dt > T::zero() && dt <= T::one()) {
            return Err(Error::Domain(format!("dt = {dt} outside (0, 1]")));
        }
        let [cc, ch, kch, kha, rw] = self.true_params;
        let q12 = kch * (c1 - c2);
        let d1 = (rw * current * current - q12) / cc;
        let d2 = (q12 - kha * (c2 - self.ambient)) / ch;
        let (n1, n2) = (c1 + dt * d1, c2 + dt * d2);
        if !(n1.is_finite() && n2.is_finite()) {
            return Err(Error::Integration { time: f64::NAN });
        }
        Ok((n1, n2))
    }

    /// Steady-state `(c₁, c₂)` under constant current.
    pub fn steady_state(&self, current: T) -> (T, T) {
        let [_, _, kch, kha, rw] = self.true_params;
        let heat = rw * current * current;
        let c2 = self.ambient + heat / kha;
        (c2 + heat / kch, c2)
    }
}
