//! Binary checkpoint container.
//!
//! Layout: `PFCK`, format version (u32 LE), metadata length (u32 LE),
//! UTF-8 `key=value` lines, parameter count (u64 LE), then the parameters
//! as f64 LE.

use std::collections::BTreeMap;
use std::path::Path;

use crate::demography::Domain;
use crate::networks::{Architecture, Model, ModelKind};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PFCK";
const VERSION: u32 = 1;

/// A trained (or freshly initialized) surrogate with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub domain: Domain,
    pub scenario: String,
    pub seed: u64,
    pub epoch: usize,
    pub dropout: f64,
    /// File name of the loss log written alongside, if any.
    pub loss_history: Option<String>,
}

fn encode_architecture(arch: &Architecture) -> String {
    match arch {
        Architecture::Mlp { widths } => {
            let w: Vec<String> = widths.iter().map(|w| w.to_string()).collect();
            format!("mlp:{}", w.join("-"))
        }
        Architecture::Lstm { layers, hidden } => format!("lstm:{layers}x{hidden}"),
    }
}

fn decode_architecture(s: &str) -> Result<Architecture> {
    let bad = || Error::Checkpoint(format!("bad architecture '{s}'"));
    let (kind, shape) = s.split_once(':').ok_or_else(bad)?;
    match kind {
        "mlp" => {
            let widths = shape
                .split('-')
                .map(|w| w.parse().map_err(|_| bad()))
                .collect::<Result<Vec<usize>>>()?;
            Ok(Architecture::Mlp { widths })
        }
        "lstm" => {
            let (l, h) = shape.split_once('x').ok_or_else(bad)?;
            Ok(Architecture::Lstm {
                layers: l.parse().map_err(|_| bad())?,
                hidden: h.parse().map_err(|_| bad())?,
            })
        }
        _ => Err(bad()),
    }
}

impl Checkpoint {
    fn metadata(&self) -> String {
        let d = &self.domain;
        let mut lines = vec![
            format!("kind={}", self.model.kind()),
            format!("architecture={}", encode_architecture(&self.model.architecture())),
            format!("a0={}", d.a0),
            format!("t_min={}", d.t_min),
            format!("t_max={}", d.t_max),
            format!("alpha={}", d.alpha),
            format!("scenario={}", self.scenario),
            format!("seed={}", self.seed),
            format!("epoch={}", self.epoch),
            format!("dropout={}", self.dropout),
        ];
        if let Some(h) = &self.loss_history {
            lines.push(format!("loss_history={h}"));
        }
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.metadata();
        let params = self.model.params();
        let mut out = Vec::with_capacity(20 + meta.len() + 8 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(cur.array()?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
        }
        let meta_len = u32::from_le_bytes(cur.array()?) as usize;
        let meta = std::str::from_utf8(cur.take(meta_len)?)
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        let mut fields = BTreeMap::new();
        for line in meta.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad metadata line '{line}'")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata '{k}'")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Checkpoint(format!("bad metadata {k}={v}")))
        }
        let kind: ModelKind = get("kind")?.parse().map_err(|_| Error::Checkpoint("bad model kind".into()))?;
        let arch = decode_architecture(get("architecture")?)?;
        if arch.kind() != kind {
            return Err(Error::Checkpoint("architecture does not match model kind".into()));
        }
        let mut domain = Domain::new(
            num("a0", get("a0")?)?,
            num("t_min", get("t_min")?)?,
            num("t_max", get("t_max")?)?,
        )
        .map_err(|e| Error::Checkpoint(format!("bad domain: {e}")))?;
        domain.alpha = num("alpha", get("alpha")?)?;

        let count = u64::from_le_bytes(cur.array()?) as usize;
        let expected = arch.param_count().map_err(|e| Error::Checkpoint(e.to_string()))?;
        if count != expected {
            return Err(Error::Checkpoint(format!(
                "parameter count {count} does not match architecture ({expected})"
            )));
        }
        if cur.remaining() != 8 * count {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                8 * count,
                cur.remaining()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(f64::from_le_bytes(cur.array()?));
        }
        Ok(Checkpoint {
            model: Model::unflatten(&arch, params)?,
            domain,
            scenario: get("scenario")?.to_string(),
            seed: num("seed", get("seed")?)?,
            epoch: num("epoch", get("epoch")?)?,
            dropout: num("dropout", get("dropout")?)?,
            loss_history: fields.get("loss_history").map(|s| s.to_string()),
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    std::fs::write(path, cp.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

/// Loads a checkpoint, rejecting it unless it holds a model of `kind`.
pub fn load_checkpoint_as(path: &Path, kind: ModelKind) -> Result<Checkpoint> {
    let cp = load_checkpoint(path)?;
    if cp.model.kind() != kind {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds a {} model, expected {kind}",
            cp.model.kind()
        )));
    }
    Ok(cp)
}
