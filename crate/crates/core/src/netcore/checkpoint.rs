//! Versioned text checkpoint for networks.
//!
//! ```text
//! INVERCL-NET-v1
//! layers <L>
//! dense <out> <in> <activation>
//! w <out*in values>
//! b <out values>
//! identity <dim> <activation>
//! head linear|anchor <classes> <dim> <scale>
//! w <classes*dim values>
//! b <classes values>
//! stats <level> <dim> <count>
//! mean <dim values>
//! var <dim values>
//! end
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a reload is
//! bit-identical.

use std::fmt::Write as _;
use std::path::Path;

use super::layer::{Activation, Backbone, Dense, Layer, LayerKind};
use super::network::{ClassificationHead, HeadMode, Network};
use super::stats::LayerStats;
use super::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &str = "INVERCL-NET-v1";

fn push_values(out: &mut String, tag: &str, values: &[f64]) {
    out.push_str(tag);
    for v in values {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

impl Network {
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "layers {}", self.depth());
        for layer in &self.backbone.layers {
            match &layer.kind {
                LayerKind::Dense(d) => {
                    let _ = writeln!(
                        out,
                        "dense {} {} {}",
                        d.out_dim(),
                        d.in_dim(),
                        layer.activation.name()
                    );
                    push_values(&mut out, "w", d.weight.data());
                    push_values(&mut out, "b", d.bias.data());
                }
                LayerKind::Identity { dim } => {
                    let _ = writeln!(out, "identity {dim} {}", layer.activation.name());
                }
            }
        }
        let h = &self.head;
        let _ = writeln!(
            out,
            "head {} {} {} {}",
            h.mode().name(),
            h.classes(),
            h.dim(),
            h.scale()
        );
        push_values(&mut out, "w", h.weight());
        push_values(&mut out, "b", h.bias());
        for (l, s) in self.stats().iter().enumerate() {
            let _ = writeln!(out, "stats {l} {} {}", s.dim(), s.count());
            push_values(&mut out, "mean", s.mean());
            push_values(&mut out, "var", s.var());
        }
        out.push_str("end\n");
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Network> {
        let mut lines = text.lines();
        let mut next = |what: &str| -> Result<Vec<&str>> {
            lines
                .next()
                .map(|l| l.split_ascii_whitespace().collect())
                .ok_or_else(|| Error::Checkpoint(format!("unexpected end of file, wanted {what}")))
        };
        let magic = next("magic header")?;
        if magic.as_slice() != [MAGIC] {
            return Err(Error::Checkpoint(format!("missing `{MAGIC}` header")));
        }
        let head_line = next("layer count")?;
        let depth = match head_line.as_slice() {
            ["layers", n] => parse_usize(n)?,
            _ => return Err(Error::Checkpoint("expected `layers <n>`".into())),
        };
        let mut layers = Vec::with_capacity(depth);
        for _ in 0..depth {
            let spec = next("layer")?;
            match spec.as_slice() {
                ["dense", out, inp, act] => {
                    let (o, i) = (parse_usize(out)?, parse_usize(inp)?);
                    let w = values(&next("weights")?, "w", o * i)?;
                    let b = values(&next("bias")?, "b", o)?;
                    let dense = Dense::new(Tensor::matrix(o, i, w)?, Tensor::vector(b)?)?;
                    layers.push(Layer::dense(dense, Activation::parse(act)?));
                }
                ["identity", dim, act] => {
                    layers.push(Layer::activation_only(
                        parse_usize(dim)?,
                        Activation::parse(act)?,
                    ));
                }
                other => return Err(Error::Checkpoint(format!("bad layer line {other:?}"))),
            }
        }
        let backbone = Backbone::new(layers)?;
        let head = next("head")?;
        let (mode, classes, dim, scale) = match head.as_slice() {
            ["head", mode, k, d, s] => (
                HeadMode::parse(mode)?,
                parse_usize(k)?,
                parse_usize(d)?,
                parse_f64(s)?,
            ),
            _ => return Err(Error::Checkpoint("expected head line".into())),
        };
        let w = values(&next("head weights")?, "w", classes * dim)?;
        let b = values(&next("head bias")?, "b", classes)?;
        let head = ClassificationHead::from_parts(mode, dim, classes, w, b, scale)?;
        let mut net = Network::new(backbone, head)?;
        let mut stats = Vec::with_capacity(depth + 1);
        for l in 0..=depth {
            let line = next("stats")?;
            let (dim, count) = match line.as_slice() {
                ["stats", lv, d, c] if parse_usize(lv)? == l => (parse_usize(d)?, parse_usize(c)?),
                _ => return Err(Error::Checkpoint(format!("expected stats for level {l}"))),
            };
            let mean = values(&next("mean")?, "mean", dim)?;
            let var = values(&next("var")?, "var", dim)?;
            stats.push(LayerStats::from_raw(mean, var, count));
        }
        net.set_stats(stats)?;
        match next("end")?.as_slice() {
            ["end"] => Ok(net),
            _ => Err(Error::Checkpoint("missing `end`".into())),
        }
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("`{s}` is not a count")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("`{s}` is not a number")))
}

fn values(tokens: &[&str], tag: &str, len: usize) -> Result<Vec<f64>> {
    match tokens.split_first() {
        Some((t, rest)) if *t == tag && rest.len() == len => {
            rest.iter().map(|s| parse_f64(s)).collect()
        }
        _ => Err(Error::Checkpoint(format!(
            "expected `{tag}` with {len} values"
        ))),
    }
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, net.to_checkpoint())?;
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    Network::from_checkpoint(&std::fs::read_to_string(path)?)
}
