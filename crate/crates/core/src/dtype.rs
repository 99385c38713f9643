//! Storage element types and their byte accounting.
//!
//! The textual form is `fp32 | bf16 | int8[:g] | int4[:g]`. A missing
//! group size means one scale per whole vector.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes used to store one scale factor.
pub const SCALE_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    Fp32,
    Bf16,
    Int8,
    Int4,
}

impl Kind {
    pub fn bits(self) -> u32 {
        match self {
            Kind::Fp32 => 32,
            Kind::Bf16 => 16,
            Kind::Int8 => 8,
            Kind::Int4 => 4,
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, Kind::Int8 | Kind::Int4)
    }
}

/// How many consecutive elements share one scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupSize {
    WholeVector,
    Elements(u32),
}

impl GroupSize {
    /// Effective group length for a vector of `dim` elements.
    pub fn effective(self, dim: usize) -> usize {
        match self {
            GroupSize::WholeVector => dim,
            GroupSize::Elements(g) => g as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DType {
    kind: Kind,
    group: GroupSize,
}

impl DType {
    pub const FP32: DType = DType { kind: Kind::Fp32, group: GroupSize::WholeVector };
    pub const BF16: DType = DType { kind: Kind::Bf16, group: GroupSize::WholeVector };

    pub fn int8(group: GroupSize) -> Result<DType> {
        Self::integer(Kind::Int8, group)
    }

    pub fn int4(group: GroupSize) -> Result<DType> {
        Self::integer(Kind::Int4, group)
    }

    /// Builds a dtype from its parts, checking that float kinds carry no group.
    pub fn new(kind: Kind, group: GroupSize) -> Result<DType> {
        if kind.is_integer() {
            Self::integer(kind, group)
        } else if group != GroupSize::WholeVector {
            Err(Error::InvalidConfig(format!("{kind:?} does not take a group size")))
        } else {
            Ok(DType { kind, group })
        }
    }

    fn integer(kind: Kind, group: GroupSize) -> Result<DType> {
        if group == GroupSize::Elements(0) {
            return Err(Error::InvalidGroup(0));
        }
        Ok(DType { kind, group })
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn bits(&self) -> u32 {
        self.kind.bits()
    }

    pub fn group(&self) -> GroupSize {
        self.group
    }

    /// Number of scale factors per vector; zero for float kinds.
    pub fn groups_per_vector(&self, dim: usize) -> usize {
        if !self.kind.is_integer() || dim == 0 {
            return 0;
        }
        dim.div_ceil(self.group.effective(dim))
    }

    /// Fails with `IndivisibleGroup` if `dim` cannot be split evenly.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if let GroupSize::Elements(g) = self.group {
            if self.kind.is_integer() && !dim.is_multiple_of(g as usize) {
                return Err(Error::IndivisibleGroup { dim, group: g as usize });
            }
        }
        Ok(())
    }

    /// Bytes of integer or float codes for one vector, excluding scales.
    pub fn code_bytes_per_vector(&self, dim: usize) -> usize {
        match self.kind {
            Kind::Fp32 => 4 * dim,
            Kind::Bf16 => 2 * dim,
            Kind::Int8 => dim,
            Kind::Int4 => dim.div_ceil(2),
        }
    }

    pub fn scale_bytes_per_vector(&self, dim: usize) -> usize {
        SCALE_BYTES * self.groups_per_vector(dim)
    }

    /// Code bytes plus scale bytes for one vector.
    pub fn bytes_per_vector(&self, dim: usize) -> usize {
        self.code_bytes_per_vector(dim) + self.scale_bytes_per_vector(dim)
    }

    /// Total code+scale payload for `count` vectors, computed without allocation.
    pub fn payload_bytes(&self, dim: usize, count: u64) -> u64 {
        self.bytes_per_vector(dim) as u64 * count
    }

    /// Label used in report tables, e.g. `Int4`.
    pub fn table_label(&self) -> &'static str {
        match self.kind {
            Kind::Fp32 => "Fp32",
            Kind::Bf16 => "Bf16",
            Kind::Int8 => "Int8",
            Kind::Int4 => "Int4",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.kind {
            Kind::Fp32 => "fp32",
            Kind::Bf16 => "bf16",
            Kind::Int8 => "int8",
            Kind::Int4 => "int4",
        };
        match self.group {
            GroupSize::WholeVector => f.write_str(base),
            GroupSize::Elements(g) => write!(f, "{base}:{g}"),
        }
    }
}

impl FromStr for DType {
    type Err = Error;

    fn from_str(text: &str) -> Result<DType> {
        let malformed = || Error::MalformedDType(text.to_string());
        let trimmed = text.trim();
        let (head, group) = match trimmed.split_once(':') {
            Some((h, g)) => (h, Some(g)),
            None => (trimmed, None),
        };
        let kind = match head.to_ascii_lowercase().as_str() {
            "fp32" => Kind::Fp32,
            "bf16" => Kind::Bf16,
            "int8" => Kind::Int8,
            "int4" => Kind::Int4,
            _ => return Err(malformed()),
        };
        let group = match group {
            None => GroupSize::WholeVector,
            Some(_) if !kind.is_integer() => return Err(malformed()),
            Some(g) => {
                let value: i64 = g.parse().map_err(|_| malformed())?;
                if value <= 0 {
                    return Err(Error::InvalidGroup(value));
                }
                let value = u32::try_from(value).map_err(|_| Error::InvalidGroup(value))?;
                GroupSize::Elements(value)
            }
        };
        DType::new(kind, group)
    }
}

impl Serialize for DType {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DType {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses the dtype grammar. Equivalent to `text.parse::<DType>()`.
pub fn dtype_parse(text: &str) -> Result<DType> {
    text.parse()
}
