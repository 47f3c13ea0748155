//! Architecture descriptor and its key=value text form.

use std::fmt;
use std::str::FromStr;

use crate::channelrep::{Domain, REP_PLANES};
use crate::filterbank::PadMode;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// 3x3 conv, BN, ReLU around an identity shortcut.
    Type1,
    /// Stride-2 3x3 conv + BN, summed with a stride-2 1x1 conv + BN shortcut.
    Type2,
    /// Grouped 3x3 conv, BN, ReLU around an identity shortcut.
    Type3,
}

impl LayerKind {
    fn tag(self) -> &'static str {
        match self {
            LayerKind::Type1 => "T1",
            LayerKind::Type2 => "T2",
            LayerKind::Type3 => "T3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub width_in: usize,
    pub width_out: usize,
    pub groups: usize,
}

impl LayerSpec {
    pub fn type1(width: usize) -> Self {
        Self {
            kind: LayerKind::Type1,
            width_in: width,
            width_out: width,
            groups: 1,
        }
    }

    pub fn type2(width_in: usize, width_out: usize) -> Self {
        Self {
            kind: LayerKind::Type2,
            width_in,
            width_out,
            groups: 1,
        }
    }

    pub fn type3(width: usize, groups: usize) -> Self {
        Self {
            kind: LayerKind::Type3,
            width_in: width,
            width_out: width,
            groups,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.width_in == 0 || self.width_out == 0 {
            return bad(format!("{self}: zero width"));
        }
        match self.kind {
            LayerKind::Type1 | LayerKind::Type3 if self.width_in != self.width_out => {
                bad(format!("{self}: identity shortcut needs width_in == width_out"))
            }
            LayerKind::Type1 | LayerKind::Type2 if self.groups != 1 => {
                bad(format!("{self}: only TYPE3 layers are grouped"))
            }
            LayerKind::Type3 if self.groups == 0 || self.width_in % self.groups != 0 => {
                bad(format!("{self}: groups must divide the width"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.kind.tag(),
            self.width_in,
            self.width_out,
            self.groups
        )
    }
}

impl FromStr for LayerSpec {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidConfig(format!("bad layer spec {s:?}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let kind = match parts[0] {
            "T1" => LayerKind::Type1,
            "T2" => LayerKind::Type2,
            "T3" => LayerKind::Type3,
            _ => return Err(bad()),
        };
        let num = |p: &str| p.parse::<usize>().map_err(|_| bad());
        Ok(Self {
            kind,
            width_in: num(parts[1])?,
            width_out: num(parts[2])?,
            groups: num(parts[3])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UcnetConfig {
    pub stem_width: usize,
    pub stages: Vec<LayerSpec>,
    pub truncation_t: f64,
    pub pad_mode: PadMode,
    pub domain: Domain,
    pub classes: usize,
}

impl UcnetConfig {
    /// Desk-scale network: 7 layers, 32 -> 64 -> 128 channels.
    pub fn desk(domain: Domain) -> Self {
        Self {
            stem_width: 32,
            stages: vec![
                LayerSpec::type3(32, 4),
                LayerSpec::type1(32),
                LayerSpec::type2(32, 64),
                LayerSpec::type3(64, 4),
                LayerSpec::type1(64),
                LayerSpec::type2(64, 128),
                LayerSpec::type1(128),
            ],
            truncation_t: 3.0,
            pad_mode: PadMode::Zero,
            domain,
            classes: 2,
        }
    }

    /// One layer of each type on an 8-wide stem; used for gradient checks.
    pub fn tiny(domain: Domain) -> Self {
        Self {
            stem_width: 8,
            stages: vec![
                LayerSpec::type1(8),
                LayerSpec::type2(8, 16),
                LayerSpec::type3(16, 4),
            ],
            truncation_t: 3.0,
            pad_mode: PadMode::Zero,
            domain,
            classes: 2,
        }
    }

    pub fn input_planes(&self) -> usize {
        REP_PLANES
    }

    pub fn final_width(&self) -> usize {
        self.stages.last().map_or(self.stem_width, |s| s.width_out)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.stem_width == 0 {
            return Err(ModelError::InvalidConfig("stem_width is zero".into()));
        }
        if self.classes < 2 {
            return Err(ModelError::InvalidConfig("need at least two classes".into()));
        }
        if !(self.truncation_t > 0.0) || !self.truncation_t.is_finite() {
            return Err(ModelError::InvalidConfig("truncation_t must be positive".into()));
        }
        let mut width = self.stem_width;
        for (i, s) in self.stages.iter().enumerate() {
            s.validate()?;
            if s.width_in != width {
                return Err(ModelError::InvalidConfig(format!(
                    "stage {i} ({s}) expects {} channels but receives {width}",
                    s.width_in
                )));
            }
            width = s.width_out;
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let stages = self
            .stages
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("input_planes".into(), self.input_planes().to_string()),
            ("stem_width".into(), self.stem_width.to_string()),
            ("stages".into(), stages),
            ("truncation_t".into(), format!("{:?}", self.truncation_t)),
            (
                "pad_mode".into(),
                match self.pad_mode {
                    PadMode::Zero => "zero",
                    PadMode::Reflect => "reflect",
                }
                .into(),
            ),
            ("domain".into(), self.domain.to_string()),
            ("classes".into(), self.classes.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, ModelError> {
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| ModelError::InvalidConfig(format!("missing key {k}")))
        };
        let bad = |k: &str| ModelError::InvalidConfig(format!("bad value for {k}"));
        let planes: usize = get("input_planes")?.parse().map_err(|_| bad("input_planes"))?;
        if planes != REP_PLANES {
            return Err(ModelError::ConfigMismatch {
                field: "input_planes".into(),
                expected: REP_PLANES.to_string(),
                found: planes.to_string(),
            });
        }
        let stages_txt = get("stages")?;
        let stages = if stages_txt.is_empty() {
            Vec::new()
        } else {
            stages_txt
                .split(',')
                .map(str::parse)
                .collect::<Result<Vec<LayerSpec>, _>>()?
        };
        let cfg = Self {
            stem_width: get("stem_width")?.parse().map_err(|_| bad("stem_width"))?,
            stages,
            truncation_t: get("truncation_t")?.parse().map_err(|_| bad("truncation_t"))?,
            pad_mode: match get("pad_mode")? {
                "zero" => PadMode::Zero,
                "reflect" => PadMode::Reflect,
                _ => return Err(bad("pad_mode")),
            },
            domain: get("domain")?.parse().map_err(|_| bad("domain"))?,
            classes: get("classes")?.parse().map_err(|_| bad("classes"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// First field that differs from `expected`, if any.
    pub fn diff(&self, expected: &UcnetConfig) -> Option<ModelError> {
        let mine = self.to_pairs();
        let theirs = expected.to_pairs();
        mine.into_iter()
            .zip(theirs)
            .find(|(a, b)| a.1 != b.1)
            .map(|(found, exp)| ModelError::ConfigMismatch {
                field: found.0,
                expected: exp.1,
                found: found.1,
            })
    }
}
