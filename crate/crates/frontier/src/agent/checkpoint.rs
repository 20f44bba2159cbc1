//! Bit-exact agent checkpoints.
//!
//! Layout: 8-byte magic, u32 format version, length-prefixed JSON metadata
//! (dims plus the full training config and optimizer step counters), then
//! length-prefixed named f64 little-endian tensors covering every parameter
//! and both Adam moment vectors. Restoring a checkpoint and continuing
//! training reproduces the uninterrupted run bit for bit.

use std::collections::BTreeMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::adam::Adam;
use crate::agent::{SacAgent, TrainConfig};
use crate::sampling::{stream, stream_rng};
use crate::{Error, Result};

pub const MAGIC: [u8; 8] = *b"FRONTCK1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptSteps {
    actor: Vec<u64>,
    q1: u64,
    q2: u64,
    alpha: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    obs_dim: usize,
    act_dim: usize,
    train: TrainConfig,
    updates_done: u64,
    opt_steps: OptSteps,
    /// Caller-supplied provenance, e.g. the run's config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, data: &[f64]) {
    out.extend_from_slice(&(name.len() as u64).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}, only {} available",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn collect_tensors(agent: &SacAgent) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    for (i, net) in agent.policy.nets().iter().enumerate() {
        out.push((format!("policy.{i}"), net.params().to_vec()));
    }
    out.push(("q1".into(), agent.q1.params().to_vec()));
    out.push(("q2".into(), agent.q2.params().to_vec()));
    out.push(("t1".into(), agent.t1.params().to_vec()));
    out.push(("t2".into(), agent.t2.params().to_vec()));
    for (i, opt) in agent.opt_actor.iter().enumerate() {
        out.push((format!("opt_actor.{i}.m"), opt.m.clone()));
        out.push((format!("opt_actor.{i}.v"), opt.v.clone()));
    }
    for (name, opt) in [
        ("opt_q1", &agent.opt_q1),
        ("opt_q2", &agent.opt_q2),
        ("opt_alpha", &agent.opt_alpha),
    ] {
        out.push((format!("{name}.m"), opt.m.clone()));
        out.push((format!("{name}.v"), opt.v.clone()));
    }
    out.push(("log_alpha".into(), vec![agent.log_alpha]));
    out
}

/// Encode the full trainable state to bytes.
pub fn serialize(agent: &SacAgent, provenance: Option<&str>) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        obs_dim: agent.obs_dim,
        act_dim: agent.act_dim,
        train: agent.cfg.clone(),
        updates_done: agent.updates_done,
        opt_steps: OptSteps {
            actor: agent.opt_actor.iter().map(|o| o.t).collect(),
            q1: agent.opt_q1.t,
            q2: agent.opt_q2.t,
            alpha: agent.opt_alpha.t,
        },
        provenance: provenance.map(str::to_string),
    };
    let meta_json = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_json);
    let tensors = collect_tensors(agent);
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, data) in &tensors {
        put_tensor(&mut out, name, data);
    }
    Ok(out)
}

fn load_into(dst: &mut [f64], tensors: &BTreeMap<String, Vec<f64>>, name: &str) -> Result<()> {
    let src = tensors
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
    if src.len() != dst.len() {
        return Err(Error::Checkpoint(format!(
            "tensor {name:?} has {} values, expected {}",
            src.len(),
            dst.len()
        )));
    }
    dst.copy_from_slice(src);
    Ok(())
}

fn load_opt(opt: &mut Adam, tensors: &BTreeMap<String, Vec<f64>>, prefix: &str, t: u64) -> Result<()> {
    load_into(&mut opt.m, tensors, &format!("{prefix}.m"))?;
    load_into(&mut opt.v, tensors, &format!("{prefix}.v"))?;
    opt.t = t;
    Ok(())
}

/// Rebuild an agent from bytes produced by [`serialize`].
pub fn deserialize(bytes: &[u8]) -> Result<SacAgent> {
    deserialize_full(bytes).map(|(agent, _)| agent)
}

pub fn deserialize_full(bytes: &[u8]) -> Result<(SacAgent, Option<String>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (supported: {VERSION})"
        )));
    }
    let meta_len = r.u64()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
    let n_tensors = r.u64()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..n_tensors {
        let name_len = r.u64()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("tensor name is not utf-8: {e}")))?
            .to_string();
        let data_len = r.u64()? as usize;
        tensors.insert(name, r.f64s(data_len)?);
    }

    // The init rng only shapes throwaway values; every parameter and moment
    // is overwritten below.
    let mut agent = SacAgent::new(
        meta.obs_dim,
        meta.act_dim,
        meta.train.clone(),
        &mut stream_rng(0, stream::INIT),
    )?;
    if meta.opt_steps.actor.len() != agent.opt_actor.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} actor optimizers, config implies {}",
            meta.opt_steps.actor.len(),
            agent.opt_actor.len()
        )));
    }
    for (i, net) in agent.policy.nets_mut().into_iter().enumerate() {
        load_into(net.params_mut(), &tensors, &format!("policy.{i}"))?;
    }
    load_into(agent.q1.params_mut(), &tensors, "q1")?;
    load_into(agent.q2.params_mut(), &tensors, "q2")?;
    load_into(agent.t1.params_mut(), &tensors, "t1")?;
    load_into(agent.t2.params_mut(), &tensors, "t2")?;
    for (i, t) in meta.opt_steps.actor.iter().enumerate() {
        load_opt(&mut agent.opt_actor[i], &tensors, &format!("opt_actor.{i}"), *t)?;
    }
    load_opt(&mut agent.opt_q1, &tensors, "opt_q1", meta.opt_steps.q1)?;
    load_opt(&mut agent.opt_q2, &tensors, "opt_q2", meta.opt_steps.q2)?;
    load_opt(&mut agent.opt_alpha, &tensors, "opt_alpha", meta.opt_steps.alpha)?;
    let la = tensors
        .get("log_alpha")
        .ok_or_else(|| Error::Checkpoint("missing tensor \"log_alpha\"".into()))?;
    if la.len() != 1 {
        return Err(Error::Checkpoint("log_alpha must hold exactly one value".into()));
    }
    agent.log_alpha = la[0];
    agent.updates_done = meta.updates_done;
    Ok((agent, meta.provenance))
}

pub fn save(agent: &SacAgent, path: &Path, provenance: Option<&str>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&serialize(agent, provenance)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SacAgent> {
    load_full(path).map(|(agent, _)| agent)
}

pub fn load_full(path: &Path) -> Result<(SacAgent, Option<String>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    deserialize_full(&bytes)
}
