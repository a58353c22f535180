//! Experiment configuration: a versioned, diff-friendly TOML document
//! declaring the potential family per coordinate, the level-selection rule,
//! sampler parameters and suite toggles. Unknown keys are rejected.

use crate::conv::ConvMode;
use crate::error::{Error, Result};
use crate::potential::RawPotential;
use crate::profile::GridSpec;
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA: &str = "orlicz-kls/1";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub n: usize,
    /// Level-set threshold exponent (the good-level interval parameter).
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub seed: u64,
    pub family: Vec<FamilySpec>,
    #[serde(default)]
    pub level: LevelSpec,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub profile: ProfileSpec,
    #[serde(default)]
    pub suites: SuiteToggles,
    #[serde(default)]
    pub spectral: SpectralSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_q() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub kind: String,
    /// How many coordinates use this entry; 0 means "fill the rest".
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub p_plus: Option<f64>,
    #[serde(default)]
    pub p_minus: Option<f64>,
    #[serde(default)]
    pub shift: Option<f64>,
    /// Knots `[y, value]` for the piecewise-linear and table kinds.
    #[serde(default)]
    pub knots: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    /// "ev" | "emin" | "emax" | "explicit".
    #[serde(default = "default_rule")]
    pub rule: String,
    #[serde(default)]
    pub value: Option<f64>,
}

fn default_rule() -> String {
    "ev".into()
}

impl Default for LevelSpec {
    fn default() -> Self {
        Self {
            rule: default_rule(),
            value: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default = "default_count")]
    pub count: usize,
    /// Burn-in is `burnin_factor * n^2` steps.
    #[serde(default = "default_burnin")]
    pub burnin_factor: usize,
    /// Thinning stride; 0 selects `n`.
    #[serde(default)]
    pub thin: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
}

fn default_count() -> usize {
    20_000
}

fn default_burnin() -> usize {
    10
}

fn default_chains() -> usize {
    1
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            count: default_count(),
            burnin_factor: default_burnin(),
            thin: 0,
            chains: default_chains(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    #[serde(default = "default_cells")]
    pub cells_per_law: usize,
    /// "auto" | "direct" | "fft".
    #[serde(default = "default_conv")]
    pub conv: String,
}

fn default_cells() -> usize {
    2000
}

fn default_conv() -> String {
    "auto".into()
}

impl Default for ProfileSpec {
    fn default() -> Self {
        Self {
            cells_per_law: default_cells(),
            conv: default_conv(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteToggles {
    #[serde(default = "yes")]
    pub level: bool,
    #[serde(default = "yes")]
    pub radial: bool,
    #[serde(default = "yes")]
    pub tails: bool,
    #[serde(default = "yes")]
    pub density_ratio: bool,
    #[serde(default = "yes")]
    pub coupling: bool,
    #[serde(default = "yes")]
    pub spectral: bool,
    #[serde(default = "yes")]
    pub body: bool,
}

fn yes() -> bool {
    true
}

impl Default for SuiteToggles {
    fn default() -> Self {
        Self {
            level: true,
            radial: true,
            tails: true,
            density_ratio: true,
            coupling: true,
            spectral: true,
            body: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SpectralSpec {
    /// Grid spacing for the cut-cell eigensolver; 0 selects an automatic
    /// spacing from the bounding box.
    #[serde(default)]
    pub grid_h: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory; empty selects `$ORLICZ_OUT_DIR` or the working
    /// directory.
    #[serde(default)]
    pub dir: String,
}

/// Parse and validate a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::ParseError(e.to_string()))?;
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.schema != CONFIG_SCHEMA {
        return Err(Error::ValidationError {
            field: "schema".into(),
            detail: format!("expected {CONFIG_SCHEMA}, got {}", cfg.schema),
        });
    }
    if cfg.n == 0 {
        return Err(Error::ValidationError {
            field: "n".into(),
            detail: "need n >= 1".into(),
        });
    }
    if cfg.q < 0.0 {
        return Err(Error::ValidationError {
            field: "q".into(),
            detail: "need q >= 0".into(),
        });
    }
    if cfg.family.is_empty() {
        return Err(Error::ValidationError {
            field: "family".into(),
            detail: "at least one family entry is required".into(),
        });
    }
    let mut filled = 0usize;
    let mut wildcard = false;
    for f in &cfg.family {
        match f.kind.as_str() {
            "gaussian" | "laplace" => {}
            "power" => {
                for (name, p) in [("p_plus", f.p_plus), ("p_minus", f.p_minus)] {
                    let p = p.unwrap_or(1.0);
                    if !(p >= 1.0) {
                        return Err(Error::ValidationError {
                            field: name.into(),
                            detail: format!("power exponent {p} < 1 is not convex"),
                        });
                    }
                }
            }
            "piecewise_linear" | "table" => {
                if f.knots.as_ref().map_or(true, |k| k.len() < 2) {
                    return Err(Error::ValidationError {
                        field: "knots".into(),
                        detail: "need at least two knots".into(),
                    });
                }
            }
            other => {
                return Err(Error::ValidationError {
                    field: "kind".into(),
                    detail: format!("unknown family kind {other}"),
                });
            }
        }
        if f.count == 0 {
            wildcard = true;
        } else {
            filled += f.count;
        }
    }
    if filled > cfg.n || (!wildcard && filled != cfg.n) {
        return Err(Error::ValidationError {
            field: "family".into(),
            detail: format!("family counts fill {filled} of {} coordinates", cfg.n),
        });
    }
    match cfg.level.rule.as_str() {
        "ev" | "emin" | "emax" => {}
        "explicit" => {
            if cfg.level.value.is_none() {
                return Err(Error::ValidationError {
                    field: "level.value".into(),
                    detail: "explicit rule needs a value".into(),
                });
            }
        }
        other => {
            return Err(Error::ValidationError {
                field: "level.rule".into(),
                detail: format!("unknown rule {other}"),
            });
        }
    }
    match cfg.profile.conv.as_str() {
        "auto" | "direct" | "fft" => {}
        other => {
            return Err(Error::ValidationError {
                field: "profile.conv".into(),
                detail: format!("unknown convolution mode {other}"),
            });
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Materialize the per-coordinate raw potentials.
    pub fn build_raws(&self) -> Result<Vec<RawPotential>> {
        let mut raws = Vec::with_capacity(self.n);
        for f in &self.family {
            let base = match f.kind.as_str() {
                "gaussian" => RawPotential::gaussian(),
                "laplace" => RawPotential::laplace(),
                "power" => {
                    RawPotential::power(f.p_plus.unwrap_or(1.0), f.p_minus.unwrap_or(1.0))?
                }
                "piecewise_linear" => {
                    let knots: Vec<(f64, f64)> = f
                        .knots
                        .as_ref()
                        .unwrap()
                        .iter()
                        .map(|k| (k[0], k[1]))
                        .collect();
                    RawPotential::piecewise_linear(&knots)?
                }
                "table" => {
                    let pts: Vec<(f64, f64)> = f
                        .knots
                        .as_ref()
                        .unwrap()
                        .iter()
                        .map(|k| (k[0], k[1]))
                        .collect();
                    RawPotential::from_table(&pts)?
                }
                _ => unreachable!("validated"),
            };
            let base = match f.shift {
                Some(a) => base.shifted(a),
                None => base,
            };
            let count = if f.count == 0 {
                self.n - raws.len()
            } else {
                f.count
            };
            for _ in 0..count {
                raws.push(base.clone());
            }
        }
        Ok(raws)
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            cells_per_law: self.profile.cells_per_law,
            conv: match self.profile.conv.as_str() {
                "direct" => ConvMode::Direct,
                "fft" => ConvMode::Fft,
                _ => ConvMode::Auto,
            },
            ..GridSpec::default()
        }
    }

    pub fn thin(&self) -> usize {
        if self.sampler.thin == 0 {
            self.n
        } else {
            self.sampler.thin
        }
    }

    pub fn burnin(&self) -> usize {
        self.sampler.burnin_factor * self.n * self.n
    }

    /// Output directory: config value, else `$ORLICZ_OUT_DIR`, else ".".
    pub fn out_dir(&self) -> std::path::PathBuf {
        if !self.output.dir.is_empty() {
            return self.output.dir.clone().into();
        }
        match std::env::var("ORLICZ_OUT_DIR") {
            Ok(d) if !d.is_empty() => d.into(),
            _ => ".".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(
            r#"
schema = "orlicz-kls/1"
n = 2
[[family]]
kind = "laplace"
"#,
        )
        .unwrap();
        assert_eq!(cfg.q, 1.0);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.level.rule, "ev");
        assert_eq!(cfg.sampler.count, 20_000);
        let raws = cfg.build_raws().unwrap();
        assert_eq!(raws.len(), 2);
    }

    #[test]
    fn invalid_power_exponent_is_rejected() {
        let err = parse_config(
            r#"
schema = "orlicz-kls/1"
n = 2
[[family]]
kind = "power"
p_plus = 1.0
p_minus = 0.5
"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ValidationError { .. }), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config(
            r#"
schema = "orlicz-kls/1"
n = 2
frobnicate = true
[[family]]
kind = "laplace"
"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ParseError(_)), "{err}");
    }

    #[test]
    fn non_convex_table_surfaces_potential_error() {
        let cfg = parse_config(
            r#"
schema = "orlicz-kls/1"
n = 1
[[family]]
kind = "table"
knots = [[-1.0, 1.0], [0.0, 0.0], [0.5, 0.9], [1.0, 1.0]]
"#,
        )
        .unwrap();
        assert!(matches!(
            cfg.build_raws(),
            Err(Error::NonConvex { .. })
        ));
    }

    #[test]
    fn mixed_counts_must_fill_n() {
        let err = parse_config(
            r#"
schema = "orlicz-kls/1"
n = 4
[[family]]
kind = "laplace"
count = 2
[[family]]
kind = "gaussian"
count = 1
"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ValidationError { .. }));
    }
}
