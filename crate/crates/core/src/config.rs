//! Scenario configuration: area geometry, community layout, mobility and
//! population parameters, loaded from a strict TOML file.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

/// Complete description of one network scenario.
///
/// Distances are in meters, speeds in m/s, rates in 1/s. The population
/// `m` counts every node including the one source and one destination.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Number of communities.
    pub n: usize,
    /// Total number of nodes (source and destination included).
    pub m: u32,
    /// Side length of the square common (roaming) area.
    pub l: f64,
    /// Side length of each square community.
    pub l_c: f64,
    /// Transmission range.
    pub r: f64,
    /// Rate of the exponential local travel duration.
    pub alpha: f64,
    /// Rate of the exponential roaming travel duration.
    pub beta: f64,
    /// Probability of switching to roaming at a local travel end.
    pub p_r: f64,
    /// Probability of switching to local at a roaming travel end.
    pub p_l: f64,
    /// Community selection probabilities (sum to 1).
    pub p_sel: Vec<f64>,
    /// Community center coordinates.
    pub community_centers: Vec<(f64, f64)>,
    pub v_min: f64,
    pub v_max: f64,
    /// Speed in transitional mode (straight run toward the chosen
    /// community).
    pub v_trans: f64,
}

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported config version {0} (expected 1)")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    version: u32,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: u32,
    #[serde(rename = "L")]
    l: f64,
    #[serde(rename = "L_c")]
    l_c: f64,
    #[serde(rename = "R")]
    r: f64,
    alpha: f64,
    beta: f64,
    #[serde(rename = "P_r")]
    p_r: f64,
    #[serde(rename = "P_l")]
    p_l: f64,
    v_min: f64,
    v_max: f64,
    v_trans: f64,
    communities: Vec<CommunityFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CommunityFile {
    center: [f64; 2],
    #[serde(rename = "P_sel")]
    p_sel: f64,
}

impl NetworkConfig {
    /// Parses and validates a config, returning non-fatal warnings (e.g. a
    /// transmission range large relative to the community size).
    pub fn from_toml_str(text: &str) -> Result<(Self, Vec<String>), ConfigError> {
        let file: ConfigFile = toml::from_str(text)?;
        if file.version != 1 {
            return Err(ConfigError::Version(file.version));
        }
        let cfg = NetworkConfig {
            n: file.n,
            m: file.m,
            l: file.l,
            l_c: file.l_c,
            r: file.r,
            alpha: file.alpha,
            beta: file.beta,
            p_r: file.p_r,
            p_l: file.p_l,
            p_sel: file.communities.iter().map(|c| c.p_sel).collect(),
            community_centers: file.communities.iter().map(|c| (c.center[0], c.center[1])).collect(),
            v_min: file.v_min,
            v_max: file.v_max,
            v_trans: file.v_trans,
        };
        let warnings = cfg.validate()?;
        Ok((cfg, warnings))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<String>), ConfigError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Axis-aligned bounding box `(x_lo, y_lo, x_hi, y_hi)` of community `i`.
    pub fn community_box(&self, i: usize) -> (f64, f64, f64, f64) {
        let (cx, cy) = self.community_centers[i];
        let h = self.l_c / 2.0;
        (cx - h, cy - h, cx + h, cy + h)
    }

    /// Validates all structural constraints; returns warnings on success.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.n == 0 {
            return fail("at least one community is required".into());
        }
        if self.n != self.p_sel.len() || self.n != self.community_centers.len() {
            return fail(format!(
                "N = {} does not match the {} communities listed",
                self.n,
                self.community_centers.len()
            ));
        }
        if self.m < 2 {
            return fail(format!("M = {} but at least source and destination are needed", self.m));
        }
        for &(name, v) in
            &[("L", self.l), ("L_c", self.l_c), ("R", self.r), ("alpha", self.alpha), ("beta", self.beta)]
        {
            if !(v > 0.0) || !v.is_finite() {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if self.l_c > self.l {
            return fail(format!("L_c = {} exceeds L = {}", self.l_c, self.l));
        }
        for &(name, p) in &[("P_r", self.p_r), ("P_l", self.p_l)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        for (i, &p) in self.p_sel.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("P_sel of community {i} must lie in [0, 1], got {p}"));
            }
        }
        let sum: f64 = self.p_sel.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return fail(format!("community P_sel values sum to {sum}, expected 1"));
        }
        if !(self.v_min > 0.0 && self.v_max > self.v_min) {
            return fail(format!(
                "speed range must satisfy 0 < v_min < v_max, got [{}, {}]",
                self.v_min, self.v_max
            ));
        }
        if !(self.v_trans > 0.0) {
            return fail(format!("v_trans must be positive, got {}", self.v_trans));
        }
        for i in 0..self.n {
            let (xl, yl, xh, yh) = self.community_box(i);
            if xl < 0.0 || yl < 0.0 || xh > self.l || yh > self.l {
                return fail(format!("community {i} extends outside the common area"));
            }
        }
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let (ax, ay) = self.community_centers[i];
                let (bx, by) = self.community_centers[j];
                if (ax - bx).abs() < self.l_c && (ay - by).abs() < self.l_c {
                    return fail(format!("communities {i} and {j} overlap"));
                }
            }
        }
        let mut warnings = Vec::new();
        if self.r > self.l_c / 5.0 {
            warnings.push(format!(
                "transmission range R = {} exceeds L_c/5 = {}; contact events inside a community \
                 will be very frequent",
                self.r,
                self.l_c / 5.0
            ));
        }
        Ok(warnings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
version = 1
N = 3
M = 10
L = 1000.0
L_c = 100.0
R = 10.0
alpha = 0.0125
beta = 0.001923076923076923
P_r = 0.2
P_l = 0.8
v_min = 5.0
v_max = 15.0
v_trans = 20.0

[[communities]]
center = [250.0, 250.0]
P_sel = 0.2

[[communities]]
center = [250.0, 750.0]
P_sel = 0.4

[[communities]]
center = [750.0, 250.0]
P_sel = 0.4
"#;

    #[test]
    fn parses_valid_config() {
        let (cfg, warnings) = NetworkConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.n, 3);
        assert_eq!(cfg.m, 10);
        assert_eq!(cfg.p_sel, vec![0.2, 0.4, 0.4]);
        assert_eq!(cfg.community_centers[1], (250.0, 750.0));
        assert!(warnings.is_empty());
        assert_eq!(cfg.community_box(0), (200.0, 200.0, 300.0, 300.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = SAMPLE.replace("v_trans = 20.0", "v_trans = 20.0\nbogus_key = 3");
        assert!(matches!(NetworkConfig::from_toml_str(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn version_must_be_one() {
        let text = SAMPLE.replace("version = 1", "version = 2");
        assert!(matches!(NetworkConfig::from_toml_str(&text), Err(ConfigError::Version(2))));
    }

    #[test]
    fn p_sel_must_sum_to_one() {
        let text = SAMPLE.replace("P_sel = 0.2", "P_sel = 0.3");
        let err = NetworkConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("sum"));
    }

    #[test]
    fn community_count_must_match_n() {
        let text = SAMPLE.replace("N = 3", "N = 4");
        let err = NetworkConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("does not match"));
    }

    #[test]
    fn overlapping_communities_are_rejected() {
        let text = SAMPLE.replace("center = [250.0, 750.0]", "center = [300.0, 250.0]");
        let err = NetworkConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("overlap"));
    }

    #[test]
    fn communities_must_fit_inside_area() {
        let text = SAMPLE.replace("center = [750.0, 250.0]", "center = [980.0, 250.0]");
        let err = NetworkConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("outside"));
    }

    #[test]
    fn large_range_produces_warning() {
        let text = SAMPLE.replace("R = 10.0", "R = 30.0");
        let (_, warnings) = NetworkConfig::from_toml_str(&text).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("L_c/5"));
    }
}
