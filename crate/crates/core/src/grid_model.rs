//! Microgrid description: JSON schema, validation and per-unit conversion.
//!
//! A [`GridSpec`] is the physical description in SI units as read from a grid
//! file. [`to_per_unit`] turns it into a [`PuNetwork`], which is the validated
//! form every downstream analysis works on: line reactances and resistances in
//! per unit, a single R/X ratio shared by all lines, and the droop gains of
//! each inverter.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};

/// Cut-off of the power-measurement filter used when the grid file does not
/// set `omega_c_rad_s`.
pub const DEFAULT_OMEGA_C: f64 = 2.0 * PI * 5.0;
/// Relative tolerance on per-line R/X ratios.
pub const DEFAULT_RHO_TOLERANCE: f64 = 1e-6;
/// Relative tolerance on per-inverter m/n ratios.
pub const DEFAULT_K_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "omega0_rad_s")]
    pub nominal_frequency_rad_s: f64,
    #[serde(
        rename = "omega_c_rad_s",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub filter_cutoff_rad_s: Option<f64>,
    #[serde(rename = "base_voltage_V")]
    pub base_voltage_v: f64,
    #[serde(rename = "base_power_VA")]
    pub base_power_va: f64,
    pub buses: Vec<BusSpec>,
    pub lines: Vec<LineSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverter: Option<InverterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_ohm: Option<LoadImpedance>,
}

/// Droop gains as fractions (0.03 means 3 %).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverterSpec {
    pub m: f64,
    pub n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadImpedance {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub from: String,
    pub to: String,
    pub length_km: f64,
    pub r_ohm_per_km: f64,
    #[serde(rename = "l_H_per_km")]
    pub l_h_per_km: f64,
}

impl GridSpec {
    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Index of the line joining `a` and `b` in either orientation.
    pub fn line_index(&self, a: &str, b: &str) -> Option<usize> {
        self.lines
            .iter()
            .position(|l| (l.from == a && l.to == b) || (l.from == b && l.to == a))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GridError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        parse_grid(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("GridSpec is always serializable")
    }

    /// Checks every invariant that does not involve the per-unit conversion.
    pub fn validate(&self) -> Result<()> {
        positive("omega0_rad_s", self.nominal_frequency_rad_s)?;
        positive("base_voltage_V", self.base_voltage_v)?;
        positive("base_power_VA", self.base_power_va)?;
        if let Some(wc) = self.filter_cutoff_rad_s {
            positive("omega_c_rad_s", wc)?;
        }

        let mut seen = HashMap::new();
        for (i, bus) in self.buses.iter().enumerate() {
            if seen.insert(bus.id.as_str(), i).is_some() {
                return Err(GridError::DuplicateBus(bus.id.clone()));
            }
            if let Some(inv) = bus.inverter {
                positive(&format!("buses[{i}].inverter.m"), inv.m)?;
                positive(&format!("buses[{i}].inverter.n"), inv.n)?;
            }
            if let Some(z) = bus.load_ohm {
                if !(z.re.is_finite() && z.im.is_finite()) || (z.re == 0.0 && z.im == 0.0) {
                    return Err(GridError::InvalidValue {
                        field: format!("buses[{i}].load_ohm"),
                        reason: "load impedance must be finite and non-zero".into(),
                    });
                }
            }
        }
        if !self.buses.iter().any(|b| b.inverter.is_some()) {
            return Err(GridError::Schema("grid has no inverter buses".into()));
        }

        for (i, line) in self.lines.iter().enumerate() {
            for end in [&line.from, &line.to] {
                if !seen.contains_key(end.as_str()) {
                    return Err(GridError::UnknownBus {
                        bus: end.clone(),
                        line: i,
                    });
                }
            }
            if line.from == line.to {
                return Err(GridError::InvalidValue {
                    field: format!("lines[{i}]"),
                    reason: format!("self-loop on bus \"{}\"", line.from),
                });
            }
            positive(&format!("lines[{i}].length_km"), line.length_km)?;
            positive(&format!("lines[{i}].l_H_per_km"), line.l_h_per_km)?;
            if !(line.r_ohm_per_km >= 0.0 && line.r_ohm_per_km.is_finite()) {
                return Err(GridError::InvalidValue {
                    field: format!("lines[{i}].r_ohm_per_km"),
                    reason: format!("must be >= 0, got {}", line.r_ohm_per_km),
                });
            }
        }
        Ok(())
    }
}

fn positive(field: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(GridError::InvalidValue {
            field: field.to_string(),
            reason: format!("must be > 0, got {value}"),
        })
    }
}

/// Parses and validates a grid document.
pub fn parse_grid(document: &str) -> Result<GridSpec> {
    let spec: GridSpec = serde_json::from_str(document).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Syntax | Category::Eof | Category::Io => GridError::Syntax {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
            Category::Data => GridError::Schema(e.to_string()),
        }
    })?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuOptions {
    pub rho_tolerance: f64,
    pub k_tolerance: f64,
    /// Reject grids whose inverters do not share one m/n ratio.
    pub require_proportional_droop: bool,
    /// Overrides the filter cut-off from the document.
    pub omega_c_rad_s: Option<f64>,
}

impl Default for PuOptions {
    fn default() -> Self {
        Self {
            rho_tolerance: DEFAULT_RHO_TOLERANCE,
            k_tolerance: DEFAULT_K_TOLERANCE,
            require_proportional_droop: false,
            omega_c_rad_s: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Droop {
    pub m: f64,
    pub n: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PuBus {
    pub id: String,
    pub droop: Option<Droop>,
    /// Load impedance in per unit.
    pub load_pu: Option<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PuLine {
    pub from: usize,
    pub to: usize,
    pub length_km: f64,
    pub x_pu: f64,
    pub r_pu: f64,
}

impl PuLine {
    pub fn x_pu_per_km(&self) -> f64 {
        self.x_pu / self.length_km
    }

    pub fn rho(&self) -> f64 {
        self.r_pu / self.x_pu
    }

    /// Rescales the length, keeping per-km impedance fixed.
    pub fn set_length(&mut self, length_km: f64) {
        let s = length_km / self.length_km;
        self.x_pu *= s;
        self.r_pu *= s;
        self.length_km = length_km;
    }
}

/// Validated per-unit network with a common R/X ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct PuNetwork {
    pub buses: Vec<PuBus>,
    pub lines: Vec<PuLine>,
    /// Common R/X ratio. Zero for grids without lines.
    pub rho: f64,
    /// Uniform droop ratio m/n, when the inverters share one.
    pub k: Option<f64>,
    pub omega0: f64,
    /// Power-filter time constant 1/ωc.
    pub tau: f64,
    /// Line time constant 1/ω0.
    pub tau0: f64,
    pub z_base: f64,
}

impl PuNetwork {
    /// Bus indices carrying an inverter, in document order.
    pub fn inverter_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.droop.map(|_| i))
            .collect()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn line_index(&self, a: usize, b: usize) -> Option<usize> {
        self.lines
            .iter()
            .position(|l| (l.from == a && l.to == b) || (l.from == b && l.to == a))
    }

    pub fn droop(&self, bus: usize) -> Option<Droop> {
        self.buses.get(bus).and_then(|b| b.droop)
    }

    /// Sets `m` of an inverter. With `keep_ratio` the voltage droop follows so
    /// that m/n is unchanged.
    pub fn set_frequency_droop(&mut self, bus: usize, m: f64, keep_ratio: bool) -> Result<()> {
        let d = self.buses[bus]
            .droop
            .as_mut()
            .ok_or_else(|| GridError::ParameterNotFound(format!("bus {bus} has no inverter")))?;
        if keep_ratio {
            d.n *= m / d.m;
        }
        d.m = m;
        if !keep_ratio {
            self.k = uniform_ratio(&self.buses, DEFAULT_K_TOLERANCE).ok();
        }
        Ok(())
    }

    /// Active power drawn by the load of `bus` at 1 p.u. voltage.
    pub fn load_active_power(&self, bus: usize) -> f64 {
        self.buses[bus]
            .load_pu
            .map(|z| (1.0 / z.conj()).re)
            .unwrap_or(0.0)
    }
}

fn uniform_ratio(buses: &[PuBus], tol: f64) -> std::result::Result<f64, String> {
    let ratios: Vec<(&str, f64)> = buses
        .iter()
        .filter_map(|b| b.droop.map(|d| (b.id.as_str(), d.m / d.n)))
        .collect();
    let mean = ratios.iter().map(|r| r.1).sum::<f64>() / ratios.len() as f64;
    let off: Vec<String> = ratios
        .iter()
        .filter(|(_, k)| (k - mean).abs() > tol * mean)
        .map(|(id, k)| format!("bus {id}: k = {k:.6}"))
        .collect();
    if off.is_empty() {
        Ok(mean)
    } else {
        Err(format!("mean k = {mean:.6}; {}", off.join(", ")))
    }
}

/// Converts a validated grid to per unit on the base `V²/S`.
pub fn to_per_unit(spec: &GridSpec, opts: &PuOptions) -> Result<PuNetwork> {
    spec.validate()?;
    let omega0 = spec.nominal_frequency_rad_s;
    let omega_c = opts
        .omega_c_rad_s
        .or(spec.filter_cutoff_rad_s)
        .unwrap_or(DEFAULT_OMEGA_C);
    positive("omega_c", omega_c)?;
    let z_base = spec.base_voltage_v * spec.base_voltage_v / spec.base_power_va;

    let index: HashMap<&str, usize> = spec
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.as_str(), i))
        .collect();

    let buses: Vec<PuBus> = spec
        .buses
        .iter()
        .map(|b| PuBus {
            id: b.id.clone(),
            droop: b.inverter.map(|d| Droop { m: d.m, n: d.n }),
            load_pu: b.load_ohm.map(|z| Complex64::new(z.re, z.im) / z_base),
        })
        .collect();

    let lines: Vec<PuLine> = spec
        .lines
        .iter()
        .map(|l| PuLine {
            from: index[l.from.as_str()],
            to: index[l.to.as_str()],
            length_km: l.length_km,
            x_pu: omega0 * l.l_h_per_km * l.length_km / z_base,
            r_pu: l.r_ohm_per_km * l.length_km / z_base,
        })
        .collect();

    let rho = if lines.is_empty() {
        0.0
    } else {
        lines.iter().map(PuLine::rho).sum::<f64>() / lines.len() as f64
    };
    let offending: Vec<String> = lines
        .iter()
        .zip(&spec.lines)
        .filter(|(l, _)| (l.rho() - rho).abs() > opts.rho_tolerance * rho.abs().max(f64::MIN_POSITIVE))
        .map(|(l, s)| format!("{}-{} (rho = {:.6})", s.from, s.to, l.rho()))
        .collect();
    if !offending.is_empty() {
        return Err(GridError::HeterogeneousRho {
            rho,
            offending: offending.join(", "),
        });
    }

    let k = match uniform_ratio(&buses, opts.k_tolerance) {
        Ok(k) => Some(k),
        Err(msg) if opts.require_proportional_droop => {
            return Err(GridError::NonUniformDroopRatio(msg))
        }
        Err(_) => None,
    };

    Ok(PuNetwork {
        buses,
        lines,
        rho,
        k,
        omega0,
        tau: 1.0 / omega_c,
        tau0: 1.0 / omega0,
        z_base,
    })
}
