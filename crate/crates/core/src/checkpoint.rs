//! Model checkpoints: one JSON header line followed by the parameters as raw
//! little-endian `f64`s in the order listed by the header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::ScorerParams;
use crate::error::{Error, Result};
use crate::nn::{Arch, ParamSet, Trunk};
use crate::orbnet::OrbNetParams;
use crate::ranking::EncodingConfig;
use crate::train::{Method, TrainConfig, TrainedModel};

pub const CHECKPOINT_FORMAT: &str = "rankforge-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub method: Method,
    pub feature_dim: usize,
    pub hidden: [usize; 2],
    pub dropout_p: f64,
    /// ORBNet only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    /// Group names and lengths in payload order.
    pub param_order: Vec<(String, usize)>,
}

fn header_for(model: &TrainedModel, config: Option<&TrainConfig>) -> CheckpointHeader {
    let (arch, dropout_p, groups) = match model {
        TrainedModel::OrbNet(p) => (p.trunk.arch(), p.dropout_p, p.groups()),
        TrainedModel::Scorer { params, .. } => (params.trunk.arch(), params.dropout_p, params.groups()),
    };
    let (m, n_train, tau, margin) = match model {
        TrainedModel::OrbNet(p) => (Some(p.enc.m()), Some(p.enc.n()), Some(p.enc.tau()), None),
        TrainedModel::Scorer { params, .. } => (None, None, None, Some(params.margin)),
    };
    CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        method: model.method(),
        feature_dim: arch.feature_dim,
        hidden: arch.hidden,
        dropout_p,
        m,
        n_train,
        tau,
        margin,
        config: config.cloned(),
        param_order: groups.iter().map(|(n, g)| (n.to_string(), g.len())).collect(),
    }
}

pub fn to_bytes(model: &TrainedModel, config: Option<&TrainConfig>) -> Vec<u8> {
    let header = header_for(model, config);
    let flat = match model {
        TrainedModel::OrbNet(p) => p.flatten(),
        TrainedModel::Scorer { params, .. } => params.flatten(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serialises");
    out.push(b'\n');
    out.reserve(flat.len() * 8);
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<(TrainedModel, CheckpointHeader)> {
    let fmt = |message: String| Error::Format { path: origin.to_path_buf(), message };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fmt("missing header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| fmt(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(fmt(format!("not a checkpoint (format {:?})", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(fmt(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let arch = Arch::with_hidden(header.feature_dim, header.hidden);
    let mut model = match header.method {
        Method::OrbNet => {
            let (Some(n), Some(m)) = (header.n_train, header.m) else {
                return Err(fmt("orbnet checkpoint lacks n_train or m".into()));
            };
            let enc = EncodingConfig::new(n, m).map_err(|e| fmt(e.to_string()))?;
            TrainedModel::OrbNet(OrbNetParams::zeros(arch, enc, header.dropout_p))
        }
        method => {
            let params = ScorerParams {
                trunk: Trunk::zeros(arch),
                out_w: vec![0.0; arch.hidden[1]],
                out_b: vec![0.0],
                dropout_p: header.dropout_p,
                method,
                margin: header.margin.unwrap_or(1.0),
            };
            TrainedModel::Scorer { method, params }
        }
    };
    let expected = header_for(&model, None).param_order;
    if expected != header.param_order {
        return Err(fmt(format!("parameter layout {:?} does not match {:?}", header.param_order, expected)));
    }
    let payload = &bytes[nl + 1..];
    let count: usize = expected.iter().map(|(_, n)| n).sum();
    if payload.len() != count * 8 {
        return Err(fmt(format!("expected {} payload bytes, found {}", count * 8, payload.len())));
    }
    let flat: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    match &mut model {
        TrainedModel::OrbNet(p) => p.assign_flat(&flat),
        TrainedModel::Scorer { params, .. } => params.assign_flat(&flat),
    }
    Ok((model, header))
}

pub fn save(model: &TrainedModel, config: Option<&TrainConfig>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    crate::annotation::write_atomic(path, &to_bytes(model, config))
}

pub fn load(path: impl AsRef<Path>) -> Result<(TrainedModel, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn orb() -> TrainedModel {
        let mut rng = RngStream::new(5, 0);
        let enc = EncodingConfig::new(40, 5).unwrap();
        TrainedModel::OrbNet(OrbNetParams::init(Arch::with_hidden(3, [6, 4]), enc, 0.3, &mut rng))
    }

    fn scorer() -> TrainedModel {
        let mut rng = RngStream::new(6, 0);
        let params = ScorerParams::init(Arch::with_hidden(3, [6, 4]), Method::Hinge, 0.5, 0.5, &mut rng).unwrap();
        TrainedModel::Scorer { method: Method::Hinge, params }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for model in [orb(), scorer()] {
            let p = dir.path().join("m.ckpt");
            save(&model, Some(&TrainConfig::default()), &p).unwrap();
            let (back, header) = load(&p).unwrap();
            assert_eq!(back, model);
            assert_eq!(header.method, model.method());
            assert_eq!(header.config, Some(TrainConfig::default()));
        }
    }

    #[test]
    fn rejects_bad_version_and_truncation() {
        let bytes = to_bytes(&orb(), None);
        let origin = Path::new("x.ckpt");
        let text = String::from_utf8_lossy(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()]).to_string();
        let mut bumped = text.replace("\"version\":1", "\"version\":2").into_bytes();
        bumped.extend_from_slice(&bytes[text.len()..]);
        assert!(from_bytes(&bumped, origin).unwrap_err().to_string().contains("version 2"));
        assert!(from_bytes(&bytes[..bytes.len() - 3], origin).is_err());
        assert!(from_bytes(b"garbage", origin).is_err());
    }
}
