//! Versioned text checkpoints for fitted models.
//!
//! ```text
//! GRACE-CHECKPOINT 1
//! # grace config_hash=... seed=...
//! method = grace
//! target = tau_0.020000
//! seed = 7
//! kind = ftgcn
//! dims = 20 5 3 10 8 16
//! param w_x 10 64
//! <one line of values per row>
//! end
//! ```
//! Values use the shortest round-trip decimal form, so a save/load cycle is exact.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use crate::baselines::LinearParams;
use crate::error::{Error, Result};
use crate::ftgcn::{Dims, ModelTheta, PARAM_NAMES};
use crate::io::Provenance;
use crate::math::Tensor;
use crate::pipeline::Method;
use crate::training::Target;

pub const MAGIC: &str = "GRACE-CHECKPOINT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Network(ModelTheta),
    Linear(LinearParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub method: Method,
    pub target: Target,
    pub seed: u64,
    pub params: ModelParams,
}

/// `model_tau_<level>.ckpt` or `model_mean.ckpt`.
pub fn checkpoint_name(target: Target) -> String {
    format!("model_{}.ckpt", target.tag())
}

fn parse_target(s: &str) -> Option<Target> {
    if s == "mean" {
        return Some(Target::Mean);
    }
    let tau: f64 = s.strip_prefix("tau_")?.parse().ok()?;
    (tau > 0.0 && tau < 1.0).then_some(Target::Quantile(tau))
}

fn write_matrix(s: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    let _ = writeln!(s, "param {name} {rows} {cols}");
    for r in 0..rows {
        let line: Vec<String> = data[r * cols..(r + 1) * cols].iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
}

impl Checkpoint {
    pub fn to_text(&self, prov: &Provenance) -> String {
        let mut s = format!("{MAGIC} {VERSION}\n");
        s.push_str(&prov.header());
        let _ = writeln!(s, "method = {}", self.method);
        let _ = writeln!(s, "target = {}", self.target.tag());
        let _ = writeln!(s, "seed = {}", self.seed);
        match &self.params {
            ModelParams::Network(theta) => {
                let d = theta.dims;
                s.push_str("kind = ftgcn\n");
                let _ = writeln!(
                    s,
                    "dims = {} {} {} {} {} {}",
                    d.n_stocks, d.n_factors, d.n_relations, d.n_features, d.lags, d.hidden
                );
                for (name, t) in PARAM_NAMES.iter().zip(&theta.params) {
                    let sh = t.shape();
                    write_matrix(&mut s, name, sh[0], sh[1], t.data());
                }
            }
            ModelParams::Linear(p) => {
                s.push_str("kind = linear\n");
                let _ = writeln!(s, "dims = {} {}", p.zeta.len(), p.varsigma.len());
                write_matrix(&mut s, "alpha", 1, 1, &[p.alpha]);
                write_matrix(&mut s, "gamma", 1, 1, &[p.gamma]);
                write_matrix(&mut s, "zeta", 1, p.zeta.len(), &p.zeta);
                write_matrix(&mut s, "varsigma", 1, p.varsigma.len(), &p.varsigma);
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let magic = lines.next().ok_or("empty file")?;
        let version = magic
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| format!("missing magic header `{MAGIC}`"))?;
        if version != VERSION.to_string() {
            return Err(format!("unsupported version `{version}` (expected {VERSION})"));
        }
        let mut field = |key: &str| -> std::result::Result<String, String> {
            let line = lines.next().ok_or_else(|| format!("missing `{key}`"))?;
            match line.split_once('=') {
                Some((k, v)) if k.trim() == key => Ok(v.trim().to_string()),
                _ => Err(format!("expected `{key} = ...`, found `{line}`")),
            }
        };
        let method: Method = field("method")?.parse().map_err(|e: Error| e.to_string())?;
        let tag = field("target")?;
        let target = parse_target(&tag).ok_or_else(|| format!("bad target `{tag}`"))?;
        let seed: u64 = field("seed")?.parse().map_err(|_| "bad seed".to_string())?;
        let kind = field("kind")?;
        let dims: Vec<usize> = field("dims")?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| format!("bad dimension `{v}`")))
            .collect::<std::result::Result<_, _>>()?;

        let mut read_param = |name: &str| -> std::result::Result<(Vec<usize>, Vec<f64>), String> {
            let head = lines.next().ok_or_else(|| format!("missing parameter `{name}`"))?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "param" || parts[1] != name {
                return Err(format!("expected `param {name} <rows> <cols>`, found `{head}`"));
            }
            let rows: usize = parts[2].parse().map_err(|_| format!("bad row count for {name}"))?;
            let cols: usize = parts[3].parse().map_err(|_| format!("bad column count for {name}"))?;
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let line = lines.next().ok_or_else(|| format!("{name}: missing row {r}"))?;
                for v in line.split_whitespace() {
                    let x: f64 = v.parse().map_err(|_| format!("{name}: bad value `{v}`"))?;
                    if !x.is_finite() {
                        return Err(format!("{name}: non-finite value"));
                    }
                    data.push(x);
                }
                if data.len() != (r + 1) * cols {
                    return Err(format!("{name}: row {r} has the wrong length"));
                }
            }
            Ok((vec![rows, cols], data))
        };

        let params = match (kind.as_str(), dims.as_slice()) {
            ("ftgcn", &[n_stocks, n_factors, n_relations, n_features, lags, hidden]) => {
                let d = Dims { n_stocks, n_factors, n_relations, n_features, lags, hidden };
                let mut params = Vec::with_capacity(PARAM_NAMES.len());
                for (id, name) in PARAM_NAMES.iter().enumerate() {
                    let (shape, data) = read_param(name)?;
                    if shape != d.param_shape(id) {
                        return Err(format!("{name}: shape {shape:?}, expected {:?}", d.param_shape(id)));
                    }
                    params.push(Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?);
                }
                ModelParams::Network(ModelTheta { dims: d, params })
            }
            ("linear", &[n_features, n_factors]) => {
                let mut v = Vec::new();
                for (name, len) in [("alpha", 1), ("gamma", 1), ("zeta", n_features), ("varsigma", n_factors)] {
                    let (shape, data) = read_param(name)?;
                    if shape != [1, len] {
                        return Err(format!("{name}: shape {shape:?}, expected [1, {len}]"));
                    }
                    v.extend(data);
                }
                ModelParams::Linear(LinearParams::from_vec(&v, n_features, n_factors).map_err(|e| e.to_string())?)
            }
            (k, d) => return Err(format!("unknown model kind `{k}` with dims {d:?}")),
        };
        match lines.next() {
            Some("end") => {}
            other => return Err(format!("expected `end`, found {other:?}")),
        }
        if (method == Method::Grace2) != matches!(params, ModelParams::Linear(_)) {
            return Err(format!("method {method} does not match model kind `{kind}`"));
        }
        Ok(Checkpoint { method, target, seed, params })
    }

    /// Writes to `dir/<checkpoint_name>` and returns the path.
    pub fn save(&self, dir: &Path, prov: &Provenance) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(checkpoint_name(self.target));
        fs::write(&path, self.to_text(prov))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint { path: path.to_path_buf(), msg: e.to_string() })?;
        Checkpoint::parse(&text).map_err(|msg| Error::Checkpoint { path: path.to_path_buf(), msg })
    }
}
