//! Text checkpoint format.
//!
//! ```text
//! # checkpoint v1
//! config_hash <hex>
//! dims q=<q> d=<d> hidden=<H> cr_branch=<b> cr_fusion=<f>
//! param <name> <shape as comma list, '-' for scalars>
//! <values separated by single spaces>
//! ...
//! adam step=<n>          (optional)
//! m <name> / v <name>    (one block per parameter, same layout as `param`)
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ModelDims, ModelError, ModelParams, ParamId};
use crate::numerics::Tensor;

const MAGIC: &str = "# checkpoint v1";

/// Adam moments stored alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub params: ModelParams,
    pub moments: Option<Moments>,
}

fn shape_str(t: &Tensor) -> String {
    if t.shape().is_empty() {
        "-".into()
    } else {
        t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

fn write_block(out: &mut String, tag: &str, name: &str, t: &Tensor) {
    let _ = writeln!(out, "{tag} {name} {}", shape_str(t));
    let vals: Vec<String> = t.data().iter().map(|v| format!("{v}")).collect();
    out.push_str(&vals.join(" "));
    out.push('\n');
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let d = &self.params.dims;
        let mut out = format!("{MAGIC}\nconfig_hash {}\ndims {}\n", self.config_hash, d.canonical());
        for (&id, t) in ParamId::ALL.iter().zip(self.params.tensors()) {
            write_block(&mut out, "param", id.name(), t);
        }
        if let Some(m) = &self.moments {
            let _ = writeln!(out, "adam step={}", m.step);
            for (tag, set) in [("m", &m.first), ("v", &m.second)] {
                for (&id, t) in ParamId::ALL.iter().zip(set) {
                    write_block(&mut out, tag, id.name(), t);
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let bad = |line: usize, msg: &str| ModelError::Checkpoint(format!("line {line}: {msg}"));
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&MAGIC) {
            return Err(bad(1, "not a v1 checkpoint"));
        }
        let config_hash = lines
            .get(1)
            .and_then(|l| l.strip_prefix("config_hash "))
            .ok_or_else(|| bad(2, "missing config_hash"))?
            .trim()
            .to_string();
        let dims_line = lines
            .get(2)
            .and_then(|l| l.strip_prefix("dims "))
            .ok_or_else(|| bad(3, "missing dims"))?;
        let dim = |key: &str| -> Result<usize, ModelError> {
            dims_line
                .split_whitespace()
                .find_map(|tok| tok.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(3, &format!("missing or invalid dims {key}")))
        };
        let dims = ModelDims {
            q: dim("q")?,
            d: dim("d")?,
            hidden: dim("hidden")?,
            cr_branch: dim("cr_branch")?,
            cr_fusion: dim("cr_fusion")?,
        };

        let mut idx = 3;
        let read_set =|tag: &str, idx: &mut usize| -> Result<Vec<Tensor>, ModelError> {
            let mut set = Vec::with_capacity(ParamId::ALL.len());
            for &id in ParamId::ALL {
                let head = lines.get(*idx).ok_or_else(|| bad(*idx + 1, "truncated checkpoint"))?;
                let parts: Vec<&str> = head.split_whitespace().collect();
                if parts.len() != 3 || parts[0] != tag || parts[1] != id.name() {
                    return Err(bad(*idx + 1, &format!("expected '{tag} {}'", id.name())));
                }
                let shape: Vec<usize> = if parts[2] == "-" {
                    Vec::new()
                } else {
                    parts[2]
                        .split(',')
                        .map(|s| s.parse().map_err(|_| bad(*idx + 1, "invalid shape")))
                        .collect::<Result<_, _>>()?
                };
                let body = lines.get(*idx + 1).ok_or_else(|| bad(*idx + 2, "missing values"))?;
                let vals: Vec<f64> = body
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| bad(*idx + 2, "invalid value")))
                    .collect::<Result<_, _>>()?;
                let t = Tensor::new(shape, vals).map_err(|e| bad(*idx + 2, &e.to_string()))?;
                set.push(t);
                *idx += 2;
            }
            Ok(set)
        };
        let tensors = read_set("param", &mut idx)?;
        let params = ModelParams::from_tensors(dims, tensors)?;
        let moments = match lines.get(idx) {
            None => None,
            Some(l) if l.trim().is_empty() => None,
            Some(l) => {
                let step = l
                    .strip_prefix("adam step=")
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| bad(idx + 1, "expected 'adam step=<n>'"))?;
                idx += 1;
                let first = read_set("m", &mut idx)?;
                let second = read_set("v", &mut idx)?;
                Some(Moments { step, first, second })
            }
        };
        Ok(Self {
            config_hash,
            params,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_text()).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dims = ModelDims { q: 3, d: 2, hidden: 2, cr_branch: 3, cr_fusion: 2 };
        let params = ModelParams::init(dims, 5).unwrap();
        let moments = Moments {
            step: 17,
            first: params.tensors().iter().map(|t| t.map(|x| x / 3.0)).collect(),
            second: params.tensors().iter().map(|t| t.map(|x| x * x)).collect(),
        };
        for m in [None, Some(moments)] {
            let ck = Checkpoint {
                config_hash: dims.hash(),
                params: params.clone(),
                moments: m,
            };
            let back = Checkpoint::from_text(&ck.to_text()).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.params.checksum(), params.checksum());
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_text("hello").is_err());
        let dims = ModelDims { q: 1, d: 1, hidden: 1, cr_branch: 1, cr_fusion: 1 };
        let ck = Checkpoint {
            config_hash: "x".into(),
            params: ModelParams::zeros(dims).unwrap(),
            moments: None,
        };
        let text = ck.to_text().replace("param van.key", "param van.kez");
        assert!(Checkpoint::from_text(&text).is_err());
    }
}
