//! Binary container for named tensors plus a small key=value header.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::params::{ModelConfig, ModelParams, ParamId};

const MAGIC: &str = "imtforge-ckpt-v1";
const MODEL_PREFIX: &str = "model.";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(format!("checkpoint: {}", msg.into()))
}

fn read_line<R: BufRead>(input: &mut R) -> Result<String> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Err(parse_err("unexpected end of file"));
    }
    Ok(line.trim_end_matches('\n').to_string())
}

impl Checkpoint {
    pub fn from_model(params: &ModelParams) -> Self {
        let c = params.config();
        let mut meta = BTreeMap::new();
        for (k, v) in [
            ("src_vocab", c.src_vocab),
            ("trg_vocab", c.trg_vocab),
            ("embed_dim", c.embed_dim),
            ("hidden_dim", c.hidden_dim),
            ("output_dim", c.output_dim),
        ] {
            meta.insert(k.to_string(), v.to_string());
        }
        meta.insert("standard_lstm_output".into(), c.standard_lstm_output.to_string());
        let tensors = params
            .iter()
            .map(|(id, t)| (format!("{MODEL_PREFIX}{}", id.name()), t.clone()))
            .collect();
        Self { meta, tensors }
    }

    fn meta_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta.get(key).ok_or_else(|| parse_err(format!("missing meta key {key}")))?;
        raw.parse().map_err(|_| parse_err(format!("bad value for {key}: {raw:?}")))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            src_vocab: self.meta_value("src_vocab")?,
            trg_vocab: self.meta_value("trg_vocab")?,
            embed_dim: self.meta_value("embed_dim")?,
            hidden_dim: self.meta_value("hidden_dim")?,
            output_dim: self.meta_value("output_dim")?,
            standard_lstm_output: self.meta_value("standard_lstm_output")?,
        })
    }

    /// Rebuilds the model, validating every shape against the stored config.
    pub fn to_model(&self) -> Result<ModelParams> {
        let config = self.model_config()?;
        let tensors = ParamId::ALL
            .iter()
            .map(|id| {
                let name = format!("{MODEL_PREFIX}{}", id.name());
                self.tensor(&name).cloned().ok_or_else(|| parse_err(format!("missing tensor {name}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ModelParams::from_tensors(config, tensors)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.tensors.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.tensors.push((name, tensor)),
        }
    }

    /// Tensors whose name starts with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.tensors
            .iter()
            .filter_map(move |(n, t)| n.strip_prefix(prefix).map(|rest| (rest, t)))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        let mut meta = String::from("meta");
        for (k, v) in &self.meta {
            if k.contains([' ', '=', '\n']) || v.contains([' ', '\n']) {
                return Err(Error::Invalid(format!("meta entry {k:?}={v:?} contains a separator")));
            }
            meta.push_str(&format!(" {k}={v}"));
        }
        writeln!(out, "{meta}")?;
        writeln!(out, "tensors {}", self.tensors.len())?;
        for (name, t) in &self.tensors {
            if name.is_empty() || name.contains([' ', '\n']) {
                return Err(Error::Invalid(format!("tensor name {name:?}")));
            }
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(out, "{name} {} {}", t.shape().len(), dims.join(" "))?;
            let mut bytes = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&bytes)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut input: R) -> Result<Self> {
        if read_line(&mut input)? != MAGIC {
            return Err(parse_err("bad header"));
        }
        let meta_line = read_line(&mut input)?;
        let mut fields = meta_line.split(' ');
        if fields.next() != Some("meta") {
            return Err(parse_err("expected meta line"));
        }
        let mut meta = BTreeMap::new();
        for kv in fields.filter(|f| !f.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| parse_err(format!("bad meta entry {kv:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count_line = read_line(&mut input)?;
        let count: usize = count_line
            .strip_prefix("tensors ")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| parse_err("expected tensor count"))?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let line = read_line(&mut input)?;
            let mut parts = line.split(' ');
            let name = parts.next().filter(|n| !n.is_empty()).ok_or_else(|| parse_err("missing tensor name"))?;
            let nums: Vec<usize> = parts
                .filter(|p| !p.is_empty())
                .map(|p| p.parse().map_err(|_| parse_err(format!("bad dimension {p:?} for {name}"))))
                .collect::<Result<_>>()?;
            let (&ndim, dims) = nums.split_first().ok_or_else(|| parse_err(format!("missing rank for {name}")))?;
            if dims.len() != ndim {
                return Err(parse_err(format!("{name}: rank {ndim} but {} dims", dims.len())));
            }
            let n: usize = dims.iter().product();
            let mut bytes = vec![0u8; n * 8];
            input.read_exact(&mut bytes).map_err(|_| parse_err(format!("truncated data for {name}")))?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(dims.to_vec(), data).map_err(|e| parse_err(format!("{name}: {e}")))?;
            tensors.push((name.to_string(), t));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        self.write_to(BufWriter::new(File::create(&tmp)?))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
