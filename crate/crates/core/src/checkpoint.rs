//! Parameter checkpoints: a text manifest followed by raw little-endian f64
//! values.
//!
//! ```text
//! GLGNN-CHECKPOINT 1
//! config model.backbone=gcn
//! ...
//! dims 1433 7
//! param embed.weight 1433 64
//! ...
//! data
//! <binary payload>
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::DenseMatrix;

const MAGIC: &str = "GLGNN-CHECKPOINT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = format!("{MAGIC}\n");
        for (k, v) in self.config.to_pairs() {
            text.push_str(&format!("config {k}={v}\n"));
        }
        text.push_str(&format!("dims {} {}\n", self.input_dim, self.num_classes));
        let tensors = self.params.tensors();
        for (name, _, m) in &tensors {
            text.push_str(&format!("param {name} {} {}\n", m.rows(), m.cols()));
        }
        text.push_str("data\n");
        let mut bytes = text.into_bytes();
        for (_, _, m) in &tensors {
            for v in m.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut pos = 0;
        let mut line_no = 0;
        let mut next_line = || -> Result<(usize, String)> {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| err(line_no + 1, "truncated manifest".into()))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end])
                .map_err(|_| err(line_no + 1, "manifest is not UTF-8".into()))?
                .to_string();
            pos += end + 1;
            line_no += 1;
            Ok((line_no, line))
        };
        let (_, magic) = next_line()?;
        if magic != MAGIC {
            return Err(err(1, format!("expected {MAGIC:?}")));
        }
        let mut config = TrainConfig::default();
        let mut dims = None;
        let mut shapes = Vec::new();
        loop {
            let (no, line) = next_line()?;
            if line == "data" {
                break;
            }
            let (kind, rest) = line.split_once(' ').ok_or_else(|| err(no, format!("bad line {line:?}")))?;
            match kind {
                "config" => config.apply_assignment(rest)?,
                "dims" | "param" => {
                    let toks: Vec<&str> = rest.split(' ').collect();
                    let num = |t: &str| t.parse::<usize>().map_err(|_| err(no, format!("bad count {t:?}")));
                    match (kind, toks.as_slice()) {
                        ("dims", [a, b]) => dims = Some((num(a)?, num(b)?)),
                        ("param", [name, r, c]) => shapes.push((name.to_string(), num(r)?, num(c)?)),
                        _ => return Err(err(no, format!("bad line {line:?}"))),
                    }
                }
                _ => return Err(err(no, format!("unknown record {kind:?}"))),
            }
        }
        drop(next_line);
        let (input_dim, num_classes) = dims.ok_or_else(|| err(line_no, "missing dims record".into()))?;
        config.validate()?;
        let expected: usize = shapes.iter().map(|(_, r, c)| r * c).sum();
        let payload = &bytes[pos..];
        if payload.len() != expected * 8 {
            return Err(Error::Integrity(format!(
                "{}: payload holds {} bytes, manifest needs {}",
                origin.display(),
                payload.len(),
                expected * 8
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let named = shapes
            .into_iter()
            .map(|(name, r, c)| {
                let m = DenseMatrix::new(r, c, values.by_ref().take(r * c).collect())?;
                Ok((name, m))
            })
            .collect::<Result<Vec<_>>>()?;
        let template = ModelParams::init(&config, input_dim, num_classes, &mut ChaCha8Rng::seed_from_u64(0));
        let params = ModelParams::from_named(&template, named)?;
        Ok(Self {
            config,
            input_dim,
            num_classes,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
