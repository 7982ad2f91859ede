use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::window_count;
use crate::optim::LrSchedule;
use crate::spdcore::tril_len;

/// Which submanifold scales the multi-scale block uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Holistic: the global window only.
    H,
    /// Every proper scale `2..d−1`.
    PS,
    /// Every scale `2..=d`, global included.
    AS,
    /// The configured scales without the global one.
    S,
    /// The configured scales as given.
    MS,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::H,
        Variant::PS,
        Variant::AS,
        Variant::S,
        Variant::MS,
    ];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::H => "H",
            Variant::PS => "PS",
            Variant::AS => "AS",
            Variant::S => "S",
            Variant::MS => "MS",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().trim_start_matches("MSNET-") {
            "H" => Ok(Variant::H),
            "PS" => Ok(Variant::PS),
            "AS" => Ok(Variant::AS),
            "S" => Ok(Variant::S),
            "MS" => Ok(Variant::MS),
            other => Err(Error::Config {
                field: "variant",
                msg: format!("unknown variant `{other}` (expected H, PS, AS, S or MS)"),
            }),
        }
    }
}

fn default_step() -> usize {
    1
}

fn default_batch_size() -> usize {
    30
}

fn default_lambda() -> f64 {
    crate::spdcore::DEFAULT_LAMBDA
}

/// Architecture and training hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsNetConfig {
    /// Consecutive BiMap sizes before the multi-scale block; the first entry is the
    /// input dimension.
    pub backbone_dims: Vec<usize>,
    /// Output dimension of each branch BiMap; must be a perfect square `d²`.
    pub branch_dim: usize,
    /// Window sides `k` on the `d x d` grid.
    pub scales: Vec<usize>,
    #[serde(default = "default_step")]
    pub step: usize,
    pub variant: Variant,
    pub epsilon: f64,
    pub num_classes: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: LrSchedule,
}

fn config_err(field: &'static str, msg: impl Into<String>) -> Error {
    Error::Config {
        field,
        msg: msg.into(),
    }
}

fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

impl MsNetConfig {
    pub fn input_dim(&self) -> usize {
        self.backbone_dims[0]
    }

    pub fn last_backbone_dim(&self) -> usize {
        *self.backbone_dims.last().unwrap()
    }

    /// Side `d` of the grid, `√branch_dim`.
    pub fn grid_side(&self) -> Result<usize> {
        exact_sqrt(self.branch_dim)
            .filter(|&d| d > 0)
            .ok_or_else(|| {
                config_err(
                    "branch_dim",
                    format!("{} is not a perfect square", self.branch_dim),
                )
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone_dims.is_empty() {
            return Err(config_err(
                "backbone_dims",
                "at least the input dimension is required",
            ));
        }
        if self.backbone_dims.contains(&0) {
            return Err(config_err("backbone_dims", "dimensions must be positive"));
        }
        if self.backbone_dims.windows(2).any(|w| w[1] >= w[0]) {
            return Err(config_err(
                "backbone_dims",
                format!("{:?} is not strictly decreasing", self.backbone_dims),
            ));
        }
        // Square branch maps are allowed: they are rotations on the last backbone space.
        if self.branch_dim > self.last_backbone_dim() {
            return Err(config_err(
                "branch_dim",
                format!(
                    "{} exceeds the last backbone dimension {}",
                    self.branch_dim,
                    self.last_backbone_dim()
                ),
            ));
        }
        self.grid_side()?;
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(config_err(
                "epsilon",
                format!("must be > 0, got {}", self.epsilon),
            ));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(config_err(
                "lambda",
                format!("must be >= 0, got {}", self.lambda),
            ));
        }
        if self.num_classes < 2 {
            return Err(config_err("num_classes", "at least 2 classes are required"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size", "must be >= 1"));
        }
        if self.step == 0 {
            return Err(config_err("step", "must be >= 1"));
        }
        self.schedule.validate()?;
        self.effective_scales().map(|_| ())
    }

    /// Scale set actually used by the variant, ascending, each validated against the grid.
    pub fn effective_scales(&self) -> Result<Vec<usize>> {
        let d = self.grid_side()?;
        let scales = resolve_scales(self.variant, &self.scales, d)?;
        for &k in &scales {
            window_count(d, k, self.step)?;
        }
        Ok(scales)
    }

    /// Length of the fused feature vector fed to the FC layer.
    pub fn feature_dim(&self) -> Result<usize> {
        let d = self.grid_side()?;
        let mut total = 0;
        for k in self.effective_scales()? {
            total += window_count(d, k, self.step)? * tril_len(k * k);
        }
        Ok(total)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Malformed(format!("config: {e}")))
    }

    /// Multi-line summary used by the CLI before running.
    pub fn echo(&self) -> String {
        let dims: Vec<String> = self
            .backbone_dims
            .iter()
            .chain(std::iter::once(&self.branch_dim))
            .map(|d| d.to_string())
            .collect();
        let scales = match self.effective_scales() {
            Ok(s) => s
                .iter()
                .map(|k| format!("{k}^2"))
                .collect::<Vec<_>>()
                .join(","),
            Err(e) => format!("<invalid: {e}>"),
        };
        let feature = self
            .feature_dim()
            .map(|f| f.to_string())
            .unwrap_or_else(|e| format!("<invalid: {e}>"));
        format!(
            "variant: MSNet-{}\nbimap: {{{}}}\nsubmanifolds: {{{}}}\nstep: {}\nepsilon: {:e}\nlambda: {:e}\nclasses: {}\nfeature_dim: {}\nepochs: {}\nbatch_size: {}\nseed: {}\nlr: initial {:e}, x{} every {} epochs, floor {:e}",
            self.variant,
            dims.join(","),
            scales,
            self.step,
            self.epsilon,
            self.lambda,
            self.num_classes,
            feature,
            self.epochs,
            self.batch_size,
            self.seed,
            self.schedule.initial,
            self.schedule.decay,
            self.schedule.period,
            self.schedule.floor,
        )
    }

    /// Named presets of the published configurations: `cg`, `fpha`, `ucf-sub`.
    pub fn preset(name: &str) -> Result<Self> {
        let base = |backbone_dims: Vec<usize>,
                    branch_dim,
                    scales: Vec<usize>,
                    epsilon,
                    epochs,
                    num_classes| MsNetConfig {
            backbone_dims,
            branch_dim,
            scales,
            step: 1,
            variant: Variant::MS,
            epsilon,
            num_classes,
            lambda: default_lambda(),
            epochs,
            batch_size: 30,
            seed: 0,
            schedule: LrSchedule::default(),
        };
        match name.to_ascii_lowercase().as_str() {
            "cg" => Ok(base(vec![100, 80, 50], 25, vec![2, 3, 4, 5], 1e-5, 500, 9)),
            "fpha" => Ok(base(vec![63, 56, 46], 36, vec![5, 6], 1e-4, 3500, 45)),
            "ucf-sub" | "ucf_sub" | "ucfsub" => {
                Ok(base(vec![100, 80], 49, vec![2, 6, 7], 1e-5, 500, 50))
            }
            other => Err(config_err(
                "preset",
                format!("unknown preset `{other}` (cg, fpha, ucf-sub)"),
            )),
        }
    }

    pub const PRESETS: [&'static str; 3] = ["cg", "fpha", "ucf-sub"];
}

/// Effective scale set of a variant on a `d x d` grid, ascending and deduplicated.
pub fn resolve_scales(variant: Variant, configured: &[usize], d: usize) -> Result<Vec<usize>> {
    let mut scales: Vec<usize> = match variant {
        Variant::H => vec![d],
        Variant::PS => (2..d).collect(),
        Variant::AS => (2..=d).collect(),
        Variant::S => configured.iter().copied().filter(|&k| k != d).collect(),
        Variant::MS => configured.to_vec(),
    };
    scales.sort_unstable();
    scales.dedup();
    if scales.is_empty() {
        return Err(config_err(
            "scales",
            format!(
                "variant {variant} leaves no scales on a {d}x{d} grid (configured {configured:?})"
            ),
        ));
    }
    if let Some(&bad) = scales.iter().find(|&&k| k == 0 || k > d) {
        return Err(config_err(
            "scales",
            format!("window side {bad} must be in 1..={d}"),
        ));
    }
    Ok(scales)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_scale_sets() {
        assert_eq!(resolve_scales(Variant::H, &[2, 3], 5).unwrap(), vec![5]);
        let cg = MsNetConfig::preset("cg").unwrap();
        assert_eq!(cg.effective_scales().unwrap(), vec![2, 3, 4, 5]);
        let s = MsNetConfig {
            variant: Variant::S,
            ..cg.clone()
        };
        assert_eq!(s.effective_scales().unwrap(), vec![2, 3, 4]);
        assert_eq!(resolve_scales(Variant::PS, &[], 5).unwrap(), vec![2, 3, 4]);
        assert_eq!(
            resolve_scales(Variant::AS, &[], 5).unwrap(),
            vec![2, 3, 4, 5]
        );
        assert!(matches!(
            resolve_scales(Variant::S, &[5], 5),
            Err(Error::Config { .. })
        ));
        assert!(resolve_scales(Variant::PS, &[], 2).is_err());
    }

    #[test]
    fn preset_feature_dims() {
        assert_eq!(
            MsNetConfig::preset("cg").unwrap().feature_dim().unwrap(),
            1434
        );
        assert_eq!(
            MsNetConfig::preset("fpha").unwrap().feature_dim().unwrap(),
            1966
        );
        assert_eq!(
            MsNetConfig::preset("ucf-sub")
                .unwrap()
                .feature_dim()
                .unwrap(),
            4249
        );
        let h = MsNetConfig {
            variant: Variant::H,
            ..MsNetConfig::preset("cg").unwrap()
        };
        assert_eq!(h.feature_dim().unwrap(), 325);
        let two = MsNetConfig {
            scales: vec![2],
            ..MsNetConfig::preset("cg").unwrap()
        };
        assert_eq!(two.feature_dim().unwrap(), 160);
        for name in MsNetConfig::PRESETS {
            MsNetConfig::preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let cg = MsNetConfig::preset("cg").unwrap();
        let field = |c: MsNetConfig| match c.validate() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(
            field(MsNetConfig {
                backbone_dims: vec![100, 100],
                ..cg.clone()
            }),
            "backbone_dims"
        );
        assert_eq!(
            field(MsNetConfig {
                branch_dim: 24,
                ..cg.clone()
            }),
            "branch_dim"
        );
        assert_eq!(
            field(MsNetConfig {
                branch_dim: 64,
                ..cg.clone()
            }),
            "branch_dim"
        );
        assert_eq!(
            field(MsNetConfig {
                scales: vec![6],
                ..cg.clone()
            }),
            "scales"
        );
        assert_eq!(
            field(MsNetConfig {
                step: 2,
                ..cg.clone()
            }),
            "step"
        );
        assert_eq!(
            field(MsNetConfig {
                epsilon: 0.0,
                ..cg.clone()
            }),
            "epsilon"
        );
    }

    #[test]
    fn toml_round_trip() {
        let cg = MsNetConfig::preset("fpha").unwrap();
        let text = cg.to_toml();
        assert_eq!(MsNetConfig::from_toml(&text).unwrap(), cg);
        assert!("ms".parse::<Variant>().unwrap() == Variant::MS);
        assert!("MSNet-H".parse::<Variant>().unwrap() == Variant::H);
        assert!("X".parse::<Variant>().is_err());
    }

    #[test]
    fn echo_shows_table_row() {
        let echo = MsNetConfig::preset("cg").unwrap().echo();
        assert!(echo.contains("bimap: {100,80,50,25}"));
        assert!(echo.contains("submanifolds: {2^2,3^2,4^2,5^2}"));
        assert!(echo.contains("epsilon: 1e-5"));
        assert!(echo.contains("epochs: 500"));
    }
}
