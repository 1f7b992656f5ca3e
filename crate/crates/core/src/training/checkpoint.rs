//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `"DDFU"`, version `u32`, config digest `[u8; 32]`, config JSON (`u32`
//! length + bytes), stage-1 step `u64`, stage-2 step `u64`, optimizer step
//! `u64`, segment count `u32`, then per segment: name (`u16` length + UTF-8),
//! rank `u8`, dims `u32` each, `f32` values. A SHA-256 of everything before it
//! closes the file.
//!
//! Segment names are `<group>/<param>` for parameters and `adam/m/<param>`,
//! `adam/v/<param>` for optimizer moments.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ProjectConfig;
use crate::error::{ensure, Error, Result};
use crate::model::FusionModel;
use crate::params::Group;
use crate::tensor::Tensor;
use crate::training::optim::Adam;

pub const MAGIC: &[u8; 4] = b"DDFU";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Segment {
    fn from_tensor(name: String, t: &Tensor) -> Self {
        Segment {
            name,
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    fn tensor(&self) -> Tensor {
        Tensor::from_vec(
            self.shape.clone(),
            self.data.iter().map(|&v| v as f64).collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ProjectConfig,
    pub stage1_step: u64,
    pub stage2_step: u64,
    pub optimizer_step: u64,
    pub segments: Vec<Segment>,
}

fn param_segment_name(group: Group, name: &str) -> String {
    format!("{}/{name}", group.name())
}

impl Checkpoint {
    pub fn capture(
        config: &ProjectConfig,
        model: &FusionModel,
        optimizer: Option<&Adam>,
        steps: [u64; 2],
    ) -> Self {
        let entries = model.params.entries();
        let mut segments: Vec<Segment> = entries
            .iter()
            .map(|e| Segment::from_tensor(param_segment_name(e.group, &e.name), &e.value))
            .collect();
        if let Some(opt) = optimizer {
            for (kind, moments) in [("m", &opt.m), ("v", &opt.v)] {
                for (e, t) in entries.iter().zip(moments) {
                    if e.group == opt.group {
                        segments.push(Segment::from_tensor(format!("adam/{kind}/{}", e.name), t));
                    }
                }
            }
        }
        Checkpoint {
            config: config.clone(),
            stage1_step: steps[0],
            stage2_step: steps[1],
            optimizer_step: optimizer.map_or(0, |o| o.t),
            segments,
        }
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Digest of the DDON parameter segments, equal to
    /// [`FusionModel::ddon_digest`] of the restored model.
    pub fn ddon_digest(&self) -> Result<[u8; 32]> {
        Ok(self.restore_model()?.ddon_digest())
    }

    /// Rebuilds the model from the config snapshot and loads every parameter.
    pub fn restore_model(&self) -> Result<FusionModel> {
        let mut model = FusionModel::new(&self.config.model(), self.config.seed)?;
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let e = model.params.entry(id);
            let name = param_segment_name(e.group, &e.name);
            let seg = self
                .segment(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing segment {name}")))?;
            ensure!(
                seg.shape == e.value.shape(),
                Checkpoint,
                "segment {name} has shape {:?}, model expects {:?}",
                seg.shape,
                e.value.shape()
            );
            model.params.set(id, seg.tensor());
        }
        let expected = model.params.len();
        let stored = self
            .segments
            .iter()
            .filter(|s| !s.name.starts_with("adam/"))
            .count();
        ensure!(
            stored == expected,
            Checkpoint,
            "checkpoint holds {stored} parameter segments, model has {expected}"
        );
        Ok(model)
    }

    /// Optimizer state, if the checkpoint carries one.
    pub fn restore_optimizer(&self, model: &FusionModel) -> Result<Option<Adam>> {
        let Some(first) = self
            .segments
            .iter()
            .find_map(|s| s.name.strip_prefix("adam/m/"))
        else {
            return Ok(None);
        };
        let id = model.params.find(first).ok_or_else(|| {
            Error::Checkpoint(format!("optimizer state for unknown parameter {first}"))
        })?;
        let group = model.params.entry(id).group;
        let mut opt = Adam::new(&model.params, group, self.config.train.learning_rate);
        opt.t = self.optimizer_step;
        for id in model.params.ids_in(group) {
            let e = model.params.entry(id);
            for (kind, slot) in [("m", &mut opt.m), ("v", &mut opt.v)] {
                let name = format!("adam/{kind}/{}", e.name);
                let seg = self
                    .segment(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing segment {name}")))?;
                ensure!(
                    seg.shape == e.value.shape(),
                    Checkpoint,
                    "segment {name} has the wrong shape"
                );
                slot[id.index()] = seg.tensor();
            }
        }
        Ok(Some(opt))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config.digest());
        let json = serde_json::to_vec(&self.config).expect("config serialises");
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in [self.stage1_step, self.stage2_step, self.optimizer_step] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.segments.len() as u32).to_le_bytes());
        for s in &self.segments {
            out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.push(s.shape.len() as u8);
            for &d in &s.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(
            bytes.len() >= 4 + 4 + 32 + 32,
            Checkpoint,
            "file too short ({} bytes)",
            bytes.len()
        );
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        ensure!(
            Sha256::digest(body).as_slice() == trailer,
            Checkpoint,
            "content digest mismatch; file is corrupt"
        );
        let mut r = Reader { buf: body, pos: 0 };
        ensure!(
            r.take(4)? == MAGIC,
            Checkpoint,
            "not a checkpoint (bad magic)"
        );
        let version = r.u32()?;
        ensure!(
            version == FORMAT_VERSION,
            Checkpoint,
            "unsupported format version {version}"
        );
        let config_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let json_len = r.u32()? as usize;
        let config: ProjectConfig = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        ensure!(
            config.digest() == config_digest,
            Checkpoint,
            "config digest mismatch"
        );
        let (stage1_step, stage2_step, optimizer_step) = (r.u64()?, r.u64()?, r.u64()?);
        let count = r.u32()? as usize;
        let mut segments = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("segment name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            segments.push(Segment { name, shape, data });
        }
        ensure!(
            r.pos == body.len(),
            Checkpoint,
            "{} trailing bytes",
            body.len() - r.pos
        );
        Ok(Checkpoint {
            config,
            stage1_step,
            stage2_step,
            optimizer_step,
            segments,
        })
    }

    /// Writes via a temporary sibling and a rename, so a failed write never
    /// leaves a truncated checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("ddfu.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(
            self.pos + n <= self.buf.len(),
            Checkpoint,
            "unexpected end of file"
        );
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
