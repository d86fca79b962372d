use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::spec::SystemSpec;

/// Address of one scalar inside a [`SystemSpec`], written as
/// `branch:2-3:x`, `load:2:p` or `sg:SG1:h`.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamPath {
    Branch { from: u32, to: u32, field: char },
    Load { bus: u32, field: char },
    SgInertia(String),
}

impl FromStr for ParamPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse parameter path `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let field = parts[2].to_ascii_lowercase();
        match parts[0] {
            "branch" => {
                let (f, t) = parts[1].split_once('-').ok_or_else(bad)?;
                let c = match field.as_str() {
                    "x" => 'x',
                    "r" => 'r',
                    "b" => 'b',
                    _ => return Err(bad()),
                };
                Ok(Self::Branch {
                    from: f.parse().map_err(|_| bad())?,
                    to: t.parse().map_err(|_| bad())?,
                    field: c,
                })
            }
            "load" => {
                let c = match field.as_str() {
                    "p" => 'p',
                    "q" => 'q',
                    _ => return Err(bad()),
                };
                Ok(Self::Load {
                    bus: parts[1].parse().map_err(|_| bad())?,
                    field: c,
                })
            }
            "sg" if field == "h" => Ok(Self::SgInertia(parts[1].to_string())),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ParamPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Branch { from, to, field } => write!(f, "branch:{from}-{to}:{field}"),
            Self::Load { bus, field } => write!(f, "load:{bus}:{field}"),
            Self::SgInertia(n) => write!(f, "sg:{n}:h"),
        }
    }
}

impl ParamPath {
    pub fn get(&self, spec: &SystemSpec) -> Result<f64> {
        let mut copy = spec.clone();
        Ok(*self.slot(&mut copy)?)
    }

    pub fn set(&self, spec: &mut SystemSpec, value: f64) -> Result<()> {
        *self.slot(spec)? = value;
        Ok(())
    }

    fn slot<'a>(&self, spec: &'a mut SystemSpec) -> Result<&'a mut f64> {
        let missing = || Error::InvalidParameter(format!("`{self}` does not exist in the spec"));
        match self {
            Self::Branch { from, to, field } => {
                let br = spec
                    .branches
                    .iter_mut()
                    .find(|b| (b.from, b.to) == (*from, *to) || (b.from, b.to) == (*to, *from))
                    .ok_or_else(missing)?;
                Ok(match field {
                    'r' => &mut br.r,
                    'b' => &mut br.b,
                    _ => &mut br.x,
                })
            }
            Self::Load { bus, field } => {
                let l = spec.loads.iter_mut().find(|l| l.bus == *bus).ok_or_else(missing)?;
                Ok(if *field == 'q' { &mut l.q } else { &mut l.p })
            }
            Self::SgInertia(name) => {
                let s = spec.sg.iter_mut().find(|s| &s.name == name).ok_or_else(missing)?;
                Ok(&mut s.params.h)
            }
        }
    }
}
