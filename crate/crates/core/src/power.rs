//! Host power curves and energy integration.
//!
//! Two models are provided behind [`PowerModel`]: the measured SPECpower
//! curve interpolated piecewise-linearly between its 10% grid points
//! ([`PowerTable`], the default) and an idle-plus-dynamic linear model
//! ([`LinearPowerModel`]). Both are immutable once built and can be shared
//! between concurrent runs.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of samples in a power table: 0%, 10%, ..., 100%.
pub const TABLE_POINTS: usize = 11;

const GRID_EPS: f64 = 1e-9;

/// Result of inverting a power curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub utilization: f64,
    /// Set when the requested power fell outside the curve's range and the
    /// result was pinned to 0% or 100%.
    pub clamped: bool,
}

pub trait PowerModel: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;

    /// Power drawn by an active host at CPU utilization `u`.
    fn power_at(&self, u: f64) -> Result<f64>;

    /// Inverse of [`PowerModel::power_at`].
    fn utilization_for_power(&self, watts: f64) -> Inversion;

    /// Power at 100% utilization.
    fn max_power(&self) -> f64;

    /// Power of an active host at 0% utilization.
    fn min_power(&self) -> f64;

    /// Wattage the measured curve reports for a sleeping host.
    fn sleep_power(&self) -> f64;
}

/// Measured utilization-to-watts curve at 11 evenly spaced load levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub name: String,
    watts: [f64; TABLE_POINTS],
}

impl PowerTable {
    pub fn new(name: impl Into<String>, watts: &[f64]) -> Result<Self> {
        let name = name.into();
        if watts.len() != TABLE_POINTS {
            return Err(Error::Config(format!(
                "power table `{name}` needs {TABLE_POINTS} samples, got {}",
                watts.len()
            )));
        }
        if let Some(bad) = watts.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Config(format!(
                "power table `{name}` has an invalid sample {bad}"
            )));
        }
        if watts.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!(
                "power table `{name}` must be non-decreasing in utilization"
            )));
        }
        let mut samples = [0.0; TABLE_POINTS];
        samples.copy_from_slice(watts);
        Ok(Self {
            name,
            watts: samples,
        })
    }

    /// IBM x3550 M3 with an Intel Xeon X5670.
    pub fn ibm_x3550_m3_x5670() -> Self {
        Self::new(
            "IBM x3550 M3 (Intel Xeon X5670)",
            &[66.0, 107.0, 120.0, 131.0, 143.0, 156.0, 173.0, 191.0, 211.0, 229.0, 247.0],
        )
        .expect("built-in table is valid")
    }

    /// IBM x3550 M3 with an Intel Xeon X5675.
    pub fn ibm_x3550_m3_x5675() -> Self {
        Self::new(
            "IBM x3550 M3 (Intel Xeon X5675)",
            &[58.4, 98.0, 109.0, 118.0, 128.0, 140.0, 153.0, 170.0, 189.0, 205.0, 222.0],
        )
        .expect("built-in table is valid")
    }

    /// Looks up a built-in table by short key (`x5670`, `x5675`).
    pub fn builtin(key: &str) -> Option<Self> {
        match key.to_ascii_lowercase().as_str() {
            "x5670" => Some(Self::ibm_x3550_m3_x5670()),
            "x5675" => Some(Self::ibm_x3550_m3_x5675()),
            _ => None,
        }
    }

    pub fn watts(&self) -> &[f64; TABLE_POINTS] {
        &self.watts
    }

    /// Parses `name, w0, w10, ..., w100` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse_many(text: &str) -> Result<Vec<Self>> {
        let mut tables = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let name = fields.next().unwrap_or_default();
            let watts = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::Config(format!(
                            "power table line {}: `{f}` is not a number",
                            lineno + 1
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            tables.push(Self::new(name, &watts)?);
        }
        Ok(tables)
    }

    pub fn load(path: &Path) -> Result<Vec<Self>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_many(&text)
    }

    /// Index of `x` on the 0..=10 grid if it sits on a grid point.
    fn grid_index(u: f64) -> Option<usize> {
        let x = u * 10.0;
        let r = x.round();
        ((x - r).abs() < GRID_EPS).then_some(r as usize)
    }
}

impl PowerModel for PowerTable {
    fn name(&self) -> &str {
        &self.name
    }

    fn power_at(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain {
                what: "utilization must lie in [0, 1]",
                value: u,
            });
        }
        if let Some(i) = Self::grid_index(u) {
            return Ok(self.watts[i]);
        }
        let x = u * 10.0;
        let lo = (x.floor() as usize).min(TABLE_POINTS - 2);
        let frac = x - lo as f64;
        Ok(self.watts[lo] + frac * (self.watts[lo + 1] - self.watts[lo]))
    }

    fn utilization_for_power(&self, watts: f64) -> Inversion {
        let w = &self.watts;
        if watts <= w[0] {
            return Inversion {
                utilization: 0.0,
                clamped: watts < w[0],
            };
        }
        if watts >= w[TABLE_POINTS - 1] {
            // Lowest grid point reaching the top value (flat tails resolve low).
            let first = w.iter().position(|&v| v >= w[TABLE_POINTS - 1]).unwrap();
            return Inversion {
                utilization: first as f64 / 10.0,
                clamped: watts > w[TABLE_POINTS - 1],
            };
        }
        if let Some(k) = w.iter().position(|&v| v == watts) {
            return Inversion {
                utilization: k as f64 / 10.0,
                clamped: false,
            };
        }
        let seg = w
            .windows(2)
            .position(|s| s[0] <= watts && watts <= s[1])
            .expect("power lies strictly inside the table range");
        let span = w[seg + 1] - w[seg];
        let frac = if span > 0.0 { (watts - w[seg]) / span } else { 0.0 };
        Inversion {
            utilization: (seg as f64 + frac) / 10.0,
            clamped: false,
        }
    }

    fn max_power(&self) -> f64 {
        self.watts[TABLE_POINTS - 1]
    }

    fn min_power(&self) -> f64 {
        self.watts[0]
    }

    fn sleep_power(&self) -> f64 {
        self.watts[0]
    }
}

/// Which table column supplies the linear model's idle power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearIdle {
    /// The column labelled "(idle)" at 50% load.
    #[default]
    Table50,
    /// The 0% column.
    Table0,
}

/// `P = idle + u * dynamic` for an active host.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPowerModel {
    name: String,
    pub idle_watts: f64,
    pub dynamic_watts: f64,
    sleep_watts: f64,
}

impl LinearPowerModel {
    pub fn new(name: impl Into<String>, idle_watts: f64, dynamic_watts: f64) -> Result<Self> {
        if !(idle_watts >= 0.0) {
            return Err(Error::Domain {
                what: "idle power must be non-negative",
                value: idle_watts,
            });
        }
        if !(dynamic_watts >= 0.0) {
            return Err(Error::Domain {
                what: "dynamic power must be non-negative",
                value: dynamic_watts,
            });
        }
        Ok(Self {
            name: name.into(),
            idle_watts,
            dynamic_watts,
            sleep_watts: idle_watts,
        })
    }

    pub fn from_table(table: &PowerTable, idle: LinearIdle) -> Self {
        let idle_watts = match idle {
            LinearIdle::Table50 => table.watts[5],
            LinearIdle::Table0 => table.watts[0],
        };
        Self {
            name: format!("{} (linear)", table.name),
            idle_watts,
            dynamic_watts: table.max_power() - idle_watts,
            sleep_watts: table.sleep_power(),
        }
    }
}

impl PowerModel for LinearPowerModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn power_at(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain {
                what: "utilization must lie in [0, 1]",
                value: u,
            });
        }
        Ok(self.idle_watts + u * self.dynamic_watts)
    }

    fn utilization_for_power(&self, watts: f64) -> Inversion {
        let max = self.max_power();
        if watts < self.idle_watts {
            return Inversion {
                utilization: 0.0,
                clamped: true,
            };
        }
        if watts > max {
            return Inversion {
                utilization: 1.0,
                clamped: true,
            };
        }
        let utilization = if self.dynamic_watts > 0.0 {
            (watts - self.idle_watts) / self.dynamic_watts
        } else {
            0.0
        };
        Inversion {
            utilization,
            clamped: false,
        }
    }

    fn max_power(&self) -> f64 {
        self.idle_watts + self.dynamic_watts
    }

    fn min_power(&self) -> f64 {
        self.idle_watts
    }

    fn sleep_power(&self) -> f64 {
        self.sleep_watts
    }
}

/// Selects which curve backs a host type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerModelKind {
    #[default]
    Table,
    Linear,
}

impl PowerModelKind {
    pub fn build(self, table: &PowerTable, idle: LinearIdle) -> Arc<dyn PowerModel> {
        match self {
            PowerModelKind::Table => Arc::new(table.clone()),
            PowerModelKind::Linear => Arc::new(LinearPowerModel::from_table(table, idle)),
        }
    }
}

/// What a switched-off host draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SleepPower {
    /// Off hosts draw nothing.
    #[default]
    Zero,
    /// Off hosts draw the table's 0% wattage.
    Table,
}

/// Trapezoidal energy over `dt_seconds`, in kWh.
pub fn energy_of_interval(p_start: f64, p_end: f64, dt_seconds: f64) -> Result<f64> {
    if p_start < 0.0 || p_end < 0.0 {
        return Err(Error::Domain {
            what: "power must be non-negative",
            value: p_start.min(p_end),
        });
    }
    if !(dt_seconds > 0.0) {
        return Err(Error::Domain {
            what: "interval duration must be positive",
            value: dt_seconds,
        });
    }
    Ok((p_start + p_end) / 2.0 * dt_seconds / 3.6e6)
}
