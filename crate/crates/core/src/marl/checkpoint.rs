//! Binary checkpoints of a [`PolicyBundle`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "MODE0CKP"
//! version  u32      currently 1
//! hlen     u64      byte length of the JSON header
//! header   hlen     UTF-8 JSON: mode, n, train config, and per network
//!                   its shape, slice, optimizer step and tensor length
//! tensors  f64 LE   for each actor then the critic: params, adam m, adam v
//! ```
//!
//! Every `f64` is stored by bit pattern, so loading reproduces the bundle
//! exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nn::{Mlp, MlpShape};
use super::policy::{Actor, ActorMode, Adam, PolicyBundle};
use super::ppo::TrainConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MODE0CKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetHeader {
    shape: MlpShape,
    slice_start: usize,
    slice_len: usize,
    adam_step: u64,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    mode: ActorMode,
    n: usize,
    train: TrainConfig,
    actors: Vec<NetHeader>,
    critic: NetHeader,
}

fn net_header(net: &Mlp, opt: &Adam, slice_start: usize, slice_len: usize) -> NetHeader {
    NetHeader {
        shape: net.shape(),
        slice_start,
        slice_len,
        adam_step: opt.step,
        len: net.params().len(),
    }
}

fn put(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn to_bytes(bundle: &PolicyBundle, train: &TrainConfig) -> Vec<u8> {
    let header = Header {
        mode: bundle.mode,
        n: bundle.n,
        train: *train,
        actors: bundle
            .actors
            .iter()
            .zip(&bundle.actor_opt)
            .map(|(a, o)| net_header(&a.net, o, a.slice_start, a.slice_len))
            .collect(),
        critic: net_header(&bundle.critic, &bundle.critic_opt, 0, 0),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (a, o) in bundle.actors.iter().zip(&bundle.actor_opt) {
        put(&mut out, a.net.params());
        put(&mut out, &o.m);
        put(&mut out, &o.v);
    }
    put(&mut out, bundle.critic.params());
    put(&mut out, &bundle.critic_opt.m);
    put(&mut out, &bundle.critic_opt.v);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(k)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Parse(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, k: usize) -> Result<Vec<f64>> {
        let bytes = self.take(k.checked_mul(8).ok_or_else(|| Error::Parse("tensor too large".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

fn restore(h: &NetHeader, c: &mut Cursor<'_>, lr: f64, t: &TrainConfig) -> Result<(Mlp, Adam)> {
    if h.shape.param_count() != h.len {
        return Err(Error::Parse(format!(
            "tensor length {} does not match shape {:?}",
            h.len, h.shape
        )));
    }
    let net = Mlp::from_params(h.shape, c.floats(h.len)?)?;
    let mut opt = Adam::new(h.len, lr, t.adam_beta1, t.adam_beta2, t.adam_eps);
    opt.m = c.floats(h.len)?;
    opt.v = c.floats(h.len)?;
    opt.step = h.adam_step;
    Ok((net, opt))
}

pub fn from_bytes(buf: &[u8]) -> Result<(PolicyBundle, TrainConfig)> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Parse("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes"));
    let header: Header = serde_json::from_slice(c.take(hlen as usize)?)
        .map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
    let t = header.train;
    let mut actors = Vec::with_capacity(header.actors.len());
    let mut actor_opt = Vec::with_capacity(header.actors.len());
    for h in &header.actors {
        let (net, opt) = restore(h, &mut c, t.actor_lr, &t)?;
        actors.push(Actor {
            net,
            slice_start: h.slice_start,
            slice_len: h.slice_len,
        });
        actor_opt.push(opt);
    }
    let (critic, critic_opt) = restore(&header.critic, &mut c, t.critic_lr, &t)?;
    if c.pos != buf.len() {
        return Err(Error::Parse(format!(
            "{} trailing bytes after checkpoint tensors",
            buf.len() - c.pos
        )));
    }
    let bundle = PolicyBundle {
        mode: header.mode,
        n: header.n,
        actors,
        critic,
        actor_opt,
        critic_opt,
    };
    Ok((bundle, t))
}

pub fn save(path: &Path, bundle: &PolicyBundle, train: &TrainConfig) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&to_bytes(bundle, train))
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(PolicyBundle, TrainConfig)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
