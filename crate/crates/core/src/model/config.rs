use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Streams {
    Single,
    Triple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    Early,
    Late,
}

/// Which region codes feed the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StreamInputs {
    pub subject: bool,
    pub object: bool,
    pub union: bool,
    /// Geometry: appended to the union code when `union` is set, otherwise
    /// fed as its own encoded vector.
    pub coord: bool,
}

/// Baseline / model rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    DirectUnion,
    Union,
    UnionCoord,
    SubjObj,
    SubjObjCoord,
    SubjObjUnion,
    Tsnet,
    Mttsnet,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::DirectUnion,
        Variant::Union,
        Variant::UnionCoord,
        Variant::SubjObj,
        Variant::SubjObjCoord,
        Variant::SubjObjUnion,
        Variant::Tsnet,
        Variant::Mttsnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DirectUnion => "direct-union",
            Variant::Union => "union",
            Variant::UnionCoord => "union-coord",
            Variant::SubjObj => "subj-obj",
            Variant::SubjObjCoord => "subj-obj-coord",
            Variant::SubjObjUnion => "subj-obj-union",
            Variant::Tsnet => "tsnet",
            Variant::Mttsnet => "mttsnet",
        }
    }

    pub fn streams(self) -> Streams {
        match self {
            Variant::Tsnet | Variant::Mttsnet => Streams::Triple,
            _ => Streams::Single,
        }
    }

    pub fn inputs(self) -> StreamInputs {
        let (subject, object, union, coord) = match self {
            Variant::DirectUnion | Variant::Union => (false, false, true, false),
            Variant::UnionCoord => (false, false, true, true),
            Variant::SubjObj => (true, true, false, false),
            Variant::SubjObjCoord => (true, true, false, true),
            Variant::SubjObjUnion => (true, true, true, false),
            Variant::Tsnet | Variant::Mttsnet => (true, true, true, true),
        };
        StreamInputs {
            subject,
            object,
            union,
            coord,
        }
    }
}

/// A `--model` value: variant plus optional `mtl` / `rem` flags,
/// e.g. `mttsnet,mtl,rem` or `union,mtl`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub mtl: bool,
    pub rem: bool,
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(',').map(str::trim);
        let head = parts.next().unwrap_or_default();
        let variant = Variant::ALL
            .into_iter()
            .find(|v| v.name() == head)
            .ok_or_else(|| Error::config(format!("unknown model `{head}`")))?;
        let mut spec = ModelSpec {
            variant,
            mtl: variant == Variant::Mttsnet,
            rem: false,
        };
        for flag in parts {
            match flag {
                "mtl" => spec.mtl = true,
                "rem" => spec.rem = true,
                other => return Err(Error::config(format!("unknown model flag `{other}`"))),
            }
        }
        if variant == Variant::Tsnet && spec.mtl {
            return Err(Error::config("tsnet with mtl is mttsnet"));
        }
        Ok(spec)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.variant.name())?;
        if self.mtl && self.variant != Variant::Mttsnet {
            f.write_str(",mtl")?;
        }
        if self.rem {
            f.write_str(",rem")?;
        }
        Ok(())
    }
}

/// Layer widths. Full-scale values are `subject_dim = 4096`,
/// `union_dim = 512`, `code_dim = hidden = rem_dim = 512`, `geo_dim = 64`;
/// `proposal_dim` is the hidden width of the proposal (detection) branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input_dim: usize,
    pub subject_dim: usize,
    pub union_dim: usize,
    pub code_dim: usize,
    pub hidden: usize,
    pub geo_dim: usize,
    pub rem_dim: usize,
    pub proposal_dim: usize,
}

impl Dims {
    pub fn toy(input_dim: usize) -> Self {
        Self {
            input_dim,
            subject_dim: 64,
            union_dim: 32,
            code_dim: 48,
            hidden: 48,
            geo_dim: 64,
            rem_dim: 32,
            proposal_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub spec: ModelSpec,
    pub dims: Dims,
    pub vocab_size: usize,
    pub max_len: usize,
    pub streams: Streams,
    pub inputs: StreamInputs,
    pub fusion: Fusion,
    pub dropout: f64,
}

pub const POS_CLASSES: usize = 3;

impl ModelConfig {
    pub fn new(spec: ModelSpec, dims: Dims, vocab_size: usize, max_len: usize) -> Result<Self> {
        let streams = spec.variant.streams();
        let cfg = Self {
            spec,
            dims,
            vocab_size,
            max_len,
            streams,
            inputs: spec.variant.inputs(),
            fusion: match streams {
                Streams::Single => Fusion::Early,
                Streams::Triple => Fusion::Late,
            },
            dropout: 0.5,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mtl(&self) -> bool {
        self.spec.mtl
    }

    pub fn rem(&self) -> bool {
        self.spec.rem
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let widths = [
            d.input_dim,
            d.subject_dim,
            d.union_dim,
            d.code_dim,
            d.hidden,
            d.geo_dim,
            d.rem_dim,
            d.proposal_dim,
        ];
        if widths.contains(&0) {
            return Err(Error::config(format!("zero layer width in {d:?}")));
        }
        if self.vocab_size <= crate::dataset::vocab::RESERVED.len() {
            return Err(Error::config("vocabulary has no words"));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        let i = self.inputs;
        if !(i.subject || i.object || i.union || i.coord) {
            return Err(Error::config("no decoder inputs selected"));
        }
        if self.spec.rem && !(i.subject && i.object) {
            return Err(Error::config("the relational embedding refines subject/object codes; this variant has none"));
        }
        match (self.streams, self.fusion) {
            (Streams::Triple, Fusion::Late) => {
                if !(i.subject && i.object && i.union) {
                    return Err(Error::config("triple streams need subject, object and union codes"));
                }
                if d.code_dim != d.hidden {
                    return Err(Error::config(
                        "triple streams feed region codes straight into the LSTMs: code_dim must equal hidden",
                    ));
                }
            }
            (Streams::Single, Fusion::Early) => {}
            (s, f) => return Err(Error::config(format!("{s:?} streams cannot use {f:?} fusion"))),
        }
        Ok(())
    }

    /// Width of the early-fused decoder input before projection.
    pub fn fused_width(&self) -> usize {
        let i = self.inputs;
        let d = &self.dims;
        let mut w = 0;
        if i.subject {
            w += d.code_dim;
        }
        if i.object {
            w += d.code_dim;
        }
        if i.union {
            w += d.code_dim;
        }
        if i.coord && !i.union {
            w += d.geo_dim;
        }
        w
    }

    pub fn stream_count(&self) -> usize {
        match self.streams {
            Streams::Single => 1,
            Streams::Triple => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_model_flags() {
        let s: ModelSpec = "mttsnet,mtl,rem".parse().unwrap();
        assert_eq!(s.variant, Variant::Mttsnet);
        assert!(s.mtl && s.rem);
        let s: ModelSpec = "mttsnet".parse().unwrap();
        assert!(s.mtl && !s.rem);
        let s: ModelSpec = "union,mtl".parse().unwrap();
        assert!(s.mtl && s.variant == Variant::Union);
        assert_eq!(s.to_string(), "union,mtl");
        assert!("bogus".parse::<ModelSpec>().is_err());
        assert!("union,fast".parse::<ModelSpec>().is_err());
        for v in Variant::ALL {
            let s: ModelSpec = v.name().parse().unwrap();
            assert_eq!(s.variant, v);
        }
    }

    #[test]
    fn table_rows() {
        let t = Variant::Tsnet.inputs();
        assert!(t.subject && t.object && t.union && t.coord);
        assert_eq!(Variant::Tsnet.streams(), Streams::Triple);
        let u = Variant::Union.inputs();
        assert!(u.union && !u.coord && !u.subject);
        let soc = Variant::SubjObjCoord.inputs();
        assert!(soc.subject && soc.object && soc.coord && !soc.union);
    }

    #[test]
    fn fused_width_counts_selected_codes() {
        let dims = Dims::toy(19);
        let cfg = ModelConfig::new("subj-obj-coord".parse().unwrap(), dims, 20, 10).unwrap();
        assert_eq!(cfg.fused_width(), 2 * dims.code_dim + dims.geo_dim);
        let cfg = ModelConfig::new("union-coord".parse().unwrap(), dims, 20, 10).unwrap();
        assert_eq!(cfg.fused_width(), dims.code_dim);
    }

    #[test]
    fn triple_requires_late_fusion() {
        let mut cfg = ModelConfig::new("mttsnet".parse().unwrap(), Dims::toy(19), 20, 10).unwrap();
        cfg.fusion = Fusion::Early;
        assert!(cfg.validate().is_err());
        let mut dims = Dims::toy(19);
        dims.code_dim = 7;
        assert!(ModelConfig::new("tsnet".parse().unwrap(), dims, 20, 10).is_err());
        assert!(ModelConfig::new("union,rem".parse().unwrap(), Dims::toy(19), 20, 10).is_err());
    }
}
