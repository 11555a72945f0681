//! Network checkpoint format.
//!
//! Layout: magic `SNET`, u32 format version, u32 input side, u32 block
//! count, then per block the batchnorm record followed by the convolution
//! record (record = layer kind u8, dims u32 x 4, f32 little-endian parameter
//! blocks in schedule order), then optional optimizer state, then a metadata
//! block (seed, serialized train config, per-layer parameter counts). The
//! schedule itself is reconstructed from the input side; records are
//! verified against it on load.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::*;
use crate::nn::adam::Adam;
use crate::nn::layers::ConvOp;
use crate::nn::Network;

const NET_MAGIC: &[u8; 4] = b"SNET";
const VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_CONVT: u8 = 1;
const KIND_BATCHNORM: u8 = 2;

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Canonical TOML of the training configuration, if any.
    pub config_toml: String,
    /// Per-layer parameter counts (batchnorm + convolution per block).
    pub layer_params: Vec<u64>,
}

fn write_record<W: Write>(w: &mut W, kind: u8, dims: [u32; 4], blocks: &[&[f32]]) -> Result<()> {
    w.write_all(&[kind])?;
    for d in dims {
        write_u32(w, d)?;
    }
    for block in blocks {
        for &v in *block {
            write_f32(w, v)?;
        }
    }
    Ok(())
}

fn read_record_header<R: Read>(r: &mut R, expect_kind: u8, expect_dims: [u32; 4]) -> Result<()> {
    let kind = read_u8(r)?;
    if kind != expect_kind {
        return Err(Error::Format(format!(
            "checkpoint layer kind {kind} does not match schedule kind {expect_kind}"
        )));
    }
    for expect in expect_dims {
        let got = read_u32(r)?;
        if got != expect {
            return Err(Error::Format(format!(
                "checkpoint layer dims {got} do not match schedule dims {expect}"
            )));
        }
    }
    Ok(())
}

fn read_f32_into<R: Read>(r: &mut R, dst: &mut [f32]) -> Result<()> {
    for v in dst {
        *v = read_f32(r)?;
    }
    Ok(())
}

/// Save a trained network, optionally with optimizer state.
pub fn save_checkpoint(
    net: &Network<f32>,
    adam: Option<&Adam<f32>>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(NET_MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u32(&mut w, net.input_side as u32)?;
    write_u32(&mut w, net.blocks.len() as u32)?;
    for block in &net.blocks {
        let bn = &block.bn;
        write_record(
            &mut w,
            KIND_BATCHNORM,
            [bn.ch as u32, 0, 0, 0],
            &[&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var],
        )?;
        match &block.op {
            ConvOp::Conv(c) => write_record(
                &mut w,
                KIND_CONV,
                [c.out_ch as u32, c.in_ch as u32, c.k as u32, c.k as u32],
                &[&c.weight],
            )?,
            ConvOp::ConvT(c) => write_record(
                &mut w,
                KIND_CONVT,
                [c.in_ch as u32, c.out_ch as u32, c.k as u32, c.k as u32],
                &[&c.weight],
            )?,
        }
    }
    match adam {
        Some(a) => {
            w.write_all(&[1u8])?;
            write_f64(&mut w, a.lr)?;
            write_u64(&mut w, a.step)?;
            for &v in &a.m {
                write_f32(&mut w, v)?;
            }
            for &v in &a.v {
                write_f32(&mut w, v)?;
            }
        }
        None => w.write_all(&[0u8])?,
    }
    write_u64(&mut w, meta.seed)?;
    write_block(&mut w, meta.config_toml.as_bytes())?;
    write_u32(&mut w, meta.layer_params.len() as u32)?;
    for &p in &meta.layer_params {
        write_u64(&mut w, p)?;
    }
    Ok(())
}

/// Load a checkpoint saved by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(Network<f32>, Option<Adam<f32>>, CheckpointMeta)> {
    let mut r = BufReader::new(fs::File::open(path)?);
    expect_magic(&mut r, NET_MAGIC)?;
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let input_side = read_u32(&mut r)? as usize;
    let n_blocks = read_u32(&mut r)? as usize;
    let mut net = Network::<f32>::build(input_side, 0)?;
    if net.blocks.len() != n_blocks {
        return Err(Error::Format(format!(
            "checkpoint has {n_blocks} blocks, schedule for side {input_side} has {}",
            net.blocks.len()
        )));
    }
    for block in &mut net.blocks {
        let bn = &mut block.bn;
        read_record_header(&mut r, KIND_BATCHNORM, [bn.ch as u32, 0, 0, 0])?;
        read_f32_into(&mut r, &mut bn.gamma)?;
        read_f32_into(&mut r, &mut bn.beta)?;
        read_f32_into(&mut r, &mut bn.running_mean)?;
        read_f32_into(&mut r, &mut bn.running_var)?;
        match &mut block.op {
            ConvOp::Conv(c) => {
                read_record_header(
                    &mut r,
                    KIND_CONV,
                    [c.out_ch as u32, c.in_ch as u32, c.k as u32, c.k as u32],
                )?;
                read_f32_into(&mut r, &mut c.weight)?;
            }
            ConvOp::ConvT(c) => {
                read_record_header(
                    &mut r,
                    KIND_CONVT,
                    [c.in_ch as u32, c.out_ch as u32, c.k as u32, c.k as u32],
                )?;
                read_f32_into(&mut r, &mut c.weight)?;
            }
        }
    }
    let adam = match read_u8(&mut r)? {
        0 => None,
        1 => {
            let lr = read_f64(&mut r)?;
            let step = read_u64(&mut r)?;
            let mut a = Adam::new(net.total_params, lr);
            a.step = step;
            read_f32_into(&mut r, &mut a.m)?;
            read_f32_into(&mut r, &mut a.v)?;
            Some(a)
        }
        k => return Err(Error::Format(format!("bad optimizer flag {k}"))),
    };
    let seed = read_u64(&mut r)?;
    let config_toml = String::from_utf8(read_block(&mut r)?)
        .map_err(|_| Error::Format("metadata config is not UTF-8".into()))?;
    let n_layers = read_u32(&mut r)? as usize;
    let mut layer_params = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layer_params.push(read_u64(&mut r)?);
    }
    Ok((net, adam, CheckpointMeta { seed, config_toml, layer_params }))
}

/// Metadata for a freshly trained network.
pub fn meta_for(net: &Network<f32>, seed: u64, config_toml: String) -> CheckpointMeta {
    CheckpointMeta {
        seed,
        config_toml,
        layer_params: net.layer_summaries().iter().map(|l| l.params as u64).collect(),
    }
}
