use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Voltage in integer microvolts. All threshold arithmetic is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Microvolts(pub i64);

impl Microvolts {
    pub fn from_volts(v: f64) -> Self {
        Microvolts((v * 1e6).round() as i64)
    }

    pub fn from_mv(mv: f64) -> Self {
        Microvolts((mv * 1e3).round() as i64)
    }

    pub fn volts(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn mv(self) -> f64 {
        self.0 as f64 / 1e3
    }
}

impl Add for Microvolts {
    type Output = Microvolts;
    fn add(self, rhs: Self) -> Self {
        Microvolts(self.0 + rhs.0)
    }
}

impl Sub for Microvolts {
    type Output = Microvolts;
    fn sub(self, rhs: Self) -> Self {
        Microvolts(self.0 - rhs.0)
    }
}

impl fmt::Display for Microvolts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} V", self.volts())
    }
}

/// Processor behaviour bands under decreasing voltage, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoltageRegion {
    Normal,
    CorrectedErrors,
    ExploitWindow,
    Unstable,
}

/// Band edges around one fault-prone voltage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionBands {
    /// Top of the exploit window (already temperature adjusted).
    pub window_top: Microvolts,
    pub window_width: Microvolts,
    pub corrected_band: Microvolts,
}

impl RegionBands {
    pub fn instability_boundary(&self) -> Microvolts {
        self.window_top - self.window_width
    }

    pub fn classify(&self, v: Microvolts) -> VoltageRegion {
        if v > self.window_top + self.corrected_band {
            VoltageRegion::Normal
        } else if v > self.window_top {
            VoltageRegion::CorrectedErrors
        } else if v > self.instability_boundary() {
            VoltageRegion::ExploitWindow
        } else {
            VoltageRegion::Unstable
        }
    }

    /// Normalized depth into the exploit window: 0 at the top, 1 at the
    /// instability boundary.
    pub fn window_depth(&self, v: Microvolts) -> f64 {
        if self.window_width.0 <= 0 {
            return 0.0;
        }
        let d = (self.window_top.0 - v.0) as f64 / self.window_width.0 as f64;
        d.clamp(0.0, 1.0)
    }

    /// Depth below the instability boundary in millivolts (0 above it).
    pub fn unstable_depth_mv(&self, v: Microvolts) -> f64 {
        ((self.instability_boundary().0 - v.0).max(0)) as f64 / 1e3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bands() -> RegionBands {
        RegionBands {
            window_top: Microvolts::from_volts(0.540),
            window_width: Microvolts::from_mv(5.0),
            corrected_band: Microvolts::from_mv(15.0),
        }
    }

    #[test]
    fn band_edges() {
        let b = bands();
        let at = |v: f64| b.classify(Microvolts::from_volts(v));
        assert_eq!(at(0.540), VoltageRegion::ExploitWindow);
        assert_eq!(at(0.5351), VoltageRegion::ExploitWindow);
        assert_eq!(at(0.535), VoltageRegion::Unstable);
        assert_eq!(at(0.555), VoltageRegion::CorrectedErrors);
        assert_eq!(at(0.5551), VoltageRegion::Normal);
        assert_eq!(at(0.700), VoltageRegion::Normal);
        assert_eq!(at(0.530), VoltageRegion::Unstable);
    }

    #[test]
    fn depth_is_normalized() {
        let b = bands();
        assert_eq!(b.window_depth(Microvolts::from_volts(0.540)), 0.0);
        assert_eq!(b.window_depth(Microvolts::from_volts(0.5375)), 0.5);
        assert_eq!(b.window_depth(Microvolts::from_volts(0.520)), 1.0);
        assert_eq!(b.unstable_depth_mv(Microvolts::from_volts(0.530)), 5.0);
    }

    #[test]
    fn region_order() {
        assert!(VoltageRegion::Normal < VoltageRegion::CorrectedErrors);
        assert!(VoltageRegion::CorrectedErrors < VoltageRegion::ExploitWindow);
        assert!(VoltageRegion::ExploitWindow < VoltageRegion::Unstable);
    }
}
