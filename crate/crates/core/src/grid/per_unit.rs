use super::GridError;

/// Power and voltage base of one voltage level.
///
/// Voltages are line-to-line and powers three-phase, so the current base is
/// `S / (sqrt(3) V)` and the impedance base `V^2 / S`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerUnitBase {
    s_base_kva: f64,
    v_base_v: f64,
}

impl PerUnitBase {
    pub fn new(s_base_kva: f64, v_base_v: f64) -> Result<Self, GridError> {
        for base in [s_base_kva, v_base_v] {
            if !(base.is_finite() && base > 0.0) {
                return Err(GridError::InvalidBase(base));
            }
        }
        Ok(Self {
            s_base_kva,
            v_base_v,
        })
    }

    pub fn s_base_kva(&self) -> f64 {
        self.s_base_kva
    }

    pub fn v_base_v(&self) -> f64 {
        self.v_base_v
    }

    pub fn z_base_ohm(&self) -> f64 {
        self.v_base_v * self.v_base_v / (self.s_base_kva * 1e3)
    }

    pub fn i_base_a(&self) -> f64 {
        self.s_base_kva * 1e3 / (3f64.sqrt() * self.v_base_v)
    }

    pub fn power_to_pu(&self, kw: f64) -> f64 {
        kw / self.s_base_kva
    }

    pub fn power_from_pu(&self, pu: f64) -> f64 {
        pu * self.s_base_kva
    }

    pub fn voltage_to_pu(&self, volts: f64) -> f64 {
        volts / self.v_base_v
    }

    pub fn voltage_from_pu(&self, pu: f64) -> f64 {
        pu * self.v_base_v
    }

    pub fn impedance_to_pu(&self, ohm: f64) -> f64 {
        ohm / self.z_base_ohm()
    }

    pub fn impedance_from_pu(&self, pu: f64) -> f64 {
        pu * self.z_base_ohm()
    }

    pub fn current_to_pu(&self, amps: f64) -> f64 {
        amps / self.i_base_a()
    }

    pub fn current_from_pu(&self, pu: f64) -> f64 {
        pu * self.i_base_a()
    }
}
