//! Text checkpoints that round-trip every parameter bit for bit.
//!
//! ```text
//! tricond-controlnet v1
//! activation silu
//! param locked.conv1.weight locked 4 4 3 3
//! 3fb999999999999a bfd3333333333333 ...
//! ```
//!
//! Values are the IEEE-754 bit patterns in lowercase hex, one parameter per
//! pair of lines, in [`ControlNetBlock::params`] order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::controlnet::ControlNetBlock;
use super::layers::{Conv2d, NetBlock, Nonlinearity, Param, ZeroConv};
use super::{Tensor, ZeroConvError};

const MAGIC: &str = "tricond-controlnet v1";

pub fn write_checkpoint(cb: &ControlNetBlock) -> String {
    let mut out = format!("{MAGIC}\nactivation {}\n", cb.locked.activation.name());
    for (name, p) in cb.params() {
        let dims: Vec<String> = p.value.shape().iter().map(ToString::to_string).collect();
        let flag = if p.locked { "locked" } else { "trainable" };
        let _ = writeln!(out, "param {name} {flag} {}", dims.join(" "));
        let vals: Vec<String> = p.value.data().iter().map(|v| format!("{:016x}", v.to_bits())).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

pub fn save_checkpoint(cb: &ControlNetBlock, path: &Path) -> Result<(), ZeroConvError> {
    fs::write(path, write_checkpoint(cb))?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> ZeroConvError {
    ZeroConvError::Checkpoint(msg.into())
}

fn parse_param(header: &str, values: &str, expected: &str) -> Result<Param, ZeroConvError> {
    let mut parts = header.split_whitespace();
    if parts.next() != Some("param") {
        return Err(bad(format!("expected a param header, got {header:?}")));
    }
    let name = parts.next().ok_or_else(|| bad("param header without a name"))?;
    if name != expected {
        return Err(bad(format!("expected parameter {expected}, found {name}")));
    }
    let locked = match parts.next() {
        Some("locked") => true,
        Some("trainable") => false,
        other => return Err(bad(format!("{name}: bad lock flag {other:?}"))),
    };
    let shape = parts
        .map(|d| d.parse::<usize>().map_err(|e| bad(format!("{name}: bad extent {d:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let data = values
        .split_whitespace()
        .map(|h| {
            u64::from_str_radix(h, 16)
                .map(f64::from_bits)
                .map_err(|e| bad(format!("{name}: bad value {h:?}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut p = Param::new(Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?);
    p.locked = locked;
    Ok(p)
}

pub fn read_checkpoint(text: &str) -> Result<ControlNetBlock, ZeroConvError> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing checkpoint header"));
    }
    let activation = lines
        .next()
        .and_then(|l| l.strip_prefix("activation "))
        .and_then(Nonlinearity::from_name)
        .ok_or_else(|| bad("missing or unknown activation"))?;

    let mut next_param = |name: &str| -> Result<Param, ZeroConvError> {
        let header = lines.next().ok_or_else(|| bad(format!("truncated before {name}")))?;
        let values = lines.next().ok_or_else(|| bad(format!("{name}: missing values")))?;
        parse_param(header, values, name)
    };
    let mut conv = |prefix: &str| -> Result<Conv2d, ZeroConvError> {
        let weight = next_param(&format!("{prefix}.weight"))?;
        let bias = next_param(&format!("{prefix}.bias"))?;
        let mut c = Conv2d::from_tensors(weight.value, bias.value)?;
        c.weight.locked = weight.locked;
        c.bias.locked = bias.locked;
        Ok(c)
    };
    let mut block = |prefix: &str| -> Result<NetBlock, ZeroConvError> {
        let c1 = conv(&format!("{prefix}.conv1"))?;
        let c2 = conv(&format!("{prefix}.conv2"))?;
        NetBlock::new(c1, activation, c2)
    };
    let locked = block("locked")?;
    let copy = block("copy")?;
    let z1 = ZeroConv { conv: conv("z1")? };
    let z2 = ZeroConv { conv: conv("z2")? };
    if z1.conv.kernel() != 1 || z2.conv.kernel() != 1 {
        return Err(bad("zero convolutions must be 1x1"));
    }
    let cb = ControlNetBlock { locked, copy, z1, z2 };
    if cb.z1.conv.out_channels() != cb.channels()
        || cb.z2.conv.in_channels() != cb.channels()
        || cb.z2.conv.out_channels() != cb.channels()
        || cb.copy.channels() != cb.channels()
    {
        return Err(bad("inconsistent channel counts"));
    }
    Ok(cb)
}

pub fn load_checkpoint(path: &Path) -> Result<ControlNetBlock, ZeroConvError> {
    read_checkpoint(&fs::read_to_string(path)?)
}
