//! Binary stack snapshots.
//!
//! Layout (little-endian): 8-byte magic, `u32` version, `u64` length of a
//! JSON stack descriptor, the descriptor, then a sequence of blocks, each a
//! `u64` element count followed by `f64` values. Blocks follow layer order:
//! every parameter value, then for batch-statistics norms the running mean,
//! running variance and a one-element block holding the batch counter.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Layer, Stack, StackDescriptor};
use crate::tensor::Rng;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NORMLAB1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn blocks(stack: &Stack) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for layer in stack.layers() {
        for p in layer.params() {
            out.push(p.value.data().to_vec());
        }
        if let Layer::Norm(n) = layer {
            if let (Some(m), Some(v)) = (&n.state.running_mean, &n.state.running_var) {
                out.push(m.data().to_vec());
                out.push(v.data().to_vec());
                out.push(vec![n.state.batches_tracked as f64]);
            }
        }
    }
    out
}

fn restore(stack: &mut Stack, blocks: Vec<Vec<f64>>, path: &Path) -> Result<()> {
    let mut it = blocks.into_iter();
    let mut index = 0usize;
    let mut next = |want: usize| -> Result<Vec<f64>> {
        index += 1;
        let b = it
            .next()
            .ok_or_else(|| Error::format(path, format!("missing tensor block {index}")))?;
        if b.len() != want {
            return Err(Error::format(
                path,
                format!("tensor block {index} has {} values, expected {want}", b.len()),
            ));
        }
        Ok(b)
    };
    for layer in stack.layers_mut() {
        for p in layer.params_mut() {
            let b = next(p.numel())?;
            p.value.data_mut().copy_from_slice(&b);
            p.velocity.fill(0.0);
            p.grad.fill(0.0);
        }
        if let Layer::Norm(n) = layer {
            let s = &mut n.state;
            if let (Some(m), Some(v)) = (&mut s.running_mean, &mut s.running_var) {
                let bm = next(m.len())?;
                m.data_mut().copy_from_slice(&bm);
                let bv = next(v.len())?;
                v.data_mut().copy_from_slice(&bv);
                s.batches_tracked = next(1)?[0] as u64;
            }
        }
    }
    if it.next().is_some() {
        return Err(Error::format(path, "trailing tensor blocks"));
    }
    Ok(())
}

pub fn save_checkpoint(stack: &Stack, path: &Path) -> Result<()> {
    let desc = serde_json::to_vec(stack.descriptor()).map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(desc.len() as u64).to_le_bytes());
    buf.extend_from_slice(&desc);
    for b in blocks(stack) {
        buf.extend_from_slice(&(b.len() as u64).to_le_bytes());
        for v in b {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(self.path, format!("truncated checkpoint at byte offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read(path: &Path) -> Result<(StackDescriptor, Vec<Vec<f64>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let len = r.u64()? as usize;
    let desc: StackDescriptor =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::format(path, format!("descriptor: {e}")))?;
    let mut blocks = Vec::new();
    while r.pos < bytes.len() {
        let n = r.u64()? as usize;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::format(path, "block too large"))?)?;
        blocks.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
    }
    Ok((desc, blocks))
}

/// Rebuilds a stack from a checkpoint. Momentum buffers are not stored.
pub fn load_checkpoint(path: &Path) -> Result<Stack> {
    let (desc, blocks) = read(path)?;
    let mut stack = Stack::build(desc, &mut Rng::new(0))?;
    restore(&mut stack, blocks, path)?;
    Ok(stack)
}

/// Loads into an existing stack, which must have the same descriptor.
pub fn load_checkpoint_into(path: &Path, stack: &mut Stack) -> Result<()> {
    let (desc, blocks) = read(path)?;
    if &desc != stack.descriptor() {
        return Err(Error::format(path, "checkpoint descriptor does not match the stack"));
    }
    restore(stack, blocks, path)
}

