//! Hyper-parameter records and dot-keyed overrides (`loss.r=10`).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackboneKind {
    Gcn,
    Gat,
    Gcnii,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 3] = [BackboneKind::Gcn, BackboneKind::Gat, BackboneKind::Gcnii];

    pub fn default_layers(self) -> usize {
        match self {
            BackboneKind::Gcn | BackboneKind::Gat => 2,
            BackboneKind::Gcnii => 8,
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneKind::Gcn => "gcn",
            BackboneKind::Gat => "gat",
            BackboneKind::Gcnii => "gcnii",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(BackboneKind::Gcn),
            "gat" => Ok(BackboneKind::Gat),
            "gcnii" => Ok(BackboneKind::Gcnii),
            other => Err(Error::Config(format!("unknown backbone {other:?} (gcn, gat, gcnii)"))),
        }
    }
}

/// Output head on top of the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// Learned label features, node-label correspondence and softmax.
    GlobalLocal,
    /// Plain affine classifier over the final node features.
    Linear,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::GlobalLocal => "global-local",
            HeadKind::Linear => "linear",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global-local" | "glgnn" => Ok(HeadKind::GlobalLocal),
            "linear" => Ok(HeadKind::Linear),
            other => Err(Error::Config(format!("unknown head {other:?} (global-local, linear)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub layers: usize,
    pub hidden: usize,
    /// Attention heads for GAT; only a single head is implemented.
    pub heads: usize,
    /// GCNII initial-residual weight, constant across layers.
    pub gcnii_alpha: f64,
    /// GCNII identity-mapping strength: `beta_l = ln(lambda / l + 1)`.
    pub gcnii_lambda: f64,
}

impl BackboneConfig {
    /// `beta` for 1-based layer `l`.
    pub fn gcnii_beta(&self, l: usize) -> f64 {
        (self.gcnii_lambda / l as f64 + 1.0).ln()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub expansion: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub cutoff: f64,
}

/// Learning rate and weight decay for the two parameter groups: the
/// embedding plus head, and the backbone layers.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub wd: f64,
    pub lr_gnn: f64,
    pub wd_gnn: f64,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    layers_explicit: bool,
}

/// Equality over the hyper-parameters; how `model.layers` was set does not
/// matter.
impl PartialEq for TrainConfig {
    fn eq(&self, o: &Self) -> bool {
        self.backbone == o.backbone
            && self.head == o.head
            && self.loss == o.loss
            && self.optim == o.optim
            && self.dropout == o.dropout
            && self.max_epochs == o.max_epochs
            && self.patience == o.patience
            && self.seed == o.seed
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig {
                kind: BackboneKind::Gcn,
                layers: 2,
                hidden: 64,
                heads: 1,
                gcnii_alpha: 0.1,
                gcnii_lambda: 0.5,
            },
            head: HeadConfig {
                kind: HeadKind::GlobalLocal,
                expansion: 12,
            },
            loss: LossConfig {
                gamma: 0.1,
                cutoff: 10.0,
            },
            optim: OptimConfig {
                lr: 0.01,
                wd: 5e-4,
                lr_gnn: 0.01,
                wd_gnn: 5e-4,
            },
            dropout: 0.5,
            max_epochs: 1500,
            patience: 100,
            seed: 0,
            layers_explicit: false,
        }
    }
}

/// Every key accepted by [`TrainConfig::set`].
pub const KEYS: &[&str] = &[
    "model.backbone",
    "model.layers",
    "model.hidden",
    "model.heads",
    "model.gcnii_alpha",
    "model.gcnii_lambda",
    "model.head",
    "head.expansion",
    "loss.gamma",
    "loss.r",
    "optim.lr",
    "optim.wd",
    "optim.lr_gnn",
    "optim.wd_gnn",
    "train.dropout",
    "train.max_epochs",
    "train.patience",
    "train.seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn with_backbone(mut self, kind: BackboneKind) -> Self {
        self.set_backbone(kind);
        self
    }

    fn set_backbone(&mut self, kind: BackboneKind) {
        self.backbone.kind = kind;
        if !self.layers_explicit {
            self.backbone.layers = kind.default_layers();
        }
    }

    /// Applies one `key=value` override. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.backbone" => self.set_backbone(value.trim().parse()?),
            "model.layers" => {
                self.backbone.layers = parse(key, value)?;
                self.layers_explicit = true;
            }
            "model.hidden" => self.backbone.hidden = parse(key, value)?,
            "model.heads" => self.backbone.heads = parse(key, value)?,
            "model.gcnii_alpha" => self.backbone.gcnii_alpha = parse(key, value)?,
            "model.gcnii_lambda" => self.backbone.gcnii_lambda = parse(key, value)?,
            "model.head" => self.head.kind = value.trim().parse()?,
            "head.expansion" => self.head.expansion = parse(key, value)?,
            "loss.gamma" => self.loss.gamma = parse(key, value)?,
            "loss.r" => self.loss.cutoff = parse(key, value)?,
            "optim.lr" => self.optim.lr = parse(key, value)?,
            "optim.wd" => self.optim.wd = parse(key, value)?,
            "optim.lr_gnn" => self.optim.lr_gnn = parse(key, value)?,
            "optim.wd_gnn" => self.optim.wd_gnn = parse(key, value)?,
            "train.dropout" => self.dropout = parse(key, value)?,
            "train.max_epochs" => self.max_epochs = parse(key, value)?,
            "train.patience" => self.patience = parse(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` string.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.to_pairs().into_iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// All settings as `(key, value)` strings, in [`KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let b = &self.backbone;
        let values = [
            b.kind.to_string(),
            b.layers.to_string(),
            b.hidden.to_string(),
            b.heads.to_string(),
            b.gcnii_alpha.to_string(),
            b.gcnii_lambda.to_string(),
            self.head.kind.to_string(),
            self.head.expansion.to_string(),
            self.loss.gamma.to_string(),
            self.loss.cutoff.to_string(),
            self.optim.lr.to_string(),
            self.optim.wd.to_string(),
            self.optim.lr_gnn.to_string(),
            self.optim.wd_gnn.to_string(),
            self.dropout.to_string(),
            self.max_epochs.to_string(),
            self.patience.to_string(),
            self.seed.to_string(),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let b = &self.backbone;
        if b.hidden == 0 {
            return bad("model.hidden must be positive".into());
        }
        if b.heads != 1 {
            return bad(format!("model.heads={}: only single-head attention is implemented", b.heads));
        }
        if !(0.0..=1.0).contains(&b.gcnii_alpha) {
            return bad(format!("model.gcnii_alpha={} outside [0, 1]", b.gcnii_alpha));
        }
        if b.kind == BackboneKind::Gcnii {
            for l in 1..=b.layers {
                let beta = b.gcnii_beta(l);
                if !(0.0..=1.0).contains(&beta) {
                    return bad(format!("gcnii beta for layer {l} is {beta}, outside [0, 1]"));
                }
            }
        }
        if self.head.expansion == 0 {
            return bad("head.expansion must be >= 1".into());
        }
        if !(self.loss.gamma >= 0.0 && self.loss.gamma.is_finite()) {
            return bad(format!("loss.gamma={} must be a finite value >= 0", self.loss.gamma));
        }
        if !(self.loss.cutoff > 0.0 && self.loss.cutoff.is_finite()) {
            return bad(format!("loss.r={} must be positive", self.loss.cutoff));
        }
        let o = &self.optim;
        for (name, lr) in [("optim.lr", o.lr), ("optim.lr_gnn", o.lr_gnn)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("{name}={lr} must be >= 0"));
            }
        }
        for (name, wd) in [("optim.wd", o.wd), ("optim.wd_gnn", o.wd_gnn)] {
            if !(wd >= 0.0 && wd.is_finite()) {
                return bad(format!("{name}={wd} must be >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("train.dropout={} outside [0, 1)", self.dropout));
        }
        if self.patience > self.max_epochs {
            return bad(format!(
                "train.patience={} exceeds train.max_epochs={}",
                self.patience, self.max_epochs
            ));
        }
        Ok(())
    }
}

/// Reads `key: value` lines (blank lines and `#` comments ignored).
pub fn parse_config_text(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once(':').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: no + 1,
            message: format!("expected `key: value`, got {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.backbone.layers, 2);
        assert_eq!(c.head.expansion, 12);
        assert_eq!(c.loss.cutoff, 10.0);
        assert_eq!(c.backbone.hidden, 64);
    }

    #[test]
    fn gcnii_layer_default_follows_backbone_unless_explicit() {
        let mut c = TrainConfig::default();
        c.set("model.backbone", "gcnii").unwrap();
        assert_eq!(c.backbone.layers, 8);
        let mut c = TrainConfig::default();
        c.set("model.layers", "4").unwrap();
        c.set("model.backbone", "gcnii").unwrap();
        assert_eq!(c.backbone.layers, 4);
    }

    #[test]
    fn gcnii_beta_schedule() {
        let c = TrainConfig::default();
        assert!((c.backbone.gcnii_beta(1) - 1.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_unknown_key_and_bad_values() {
        let mut c = TrainConfig::default();
        assert!(matches!(c.set("loss.rr", "1"), Err(Error::Config(_))));
        assert!(matches!(c.set("loss.r", "abc"), Err(Error::Config(_))));
        c.set("loss.r", "-1").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn patience_bound() {
        let mut c = TrainConfig::default();
        c.set("train.max_epochs", "10").unwrap();
        assert!(c.validate().is_err());
        c.set("train.patience", "10").unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn pairs_round_trip() {
        let mut c = TrainConfig::default().with_backbone(BackboneKind::Gat);
        c.set("optim.lr", "0.1").unwrap();
        let mut d = TrainConfig::default();
        for (k, v) in c.to_pairs() {
            d.set(&k, &v).unwrap();
        }
        assert_eq!(c.to_pairs(), d.to_pairs());
    }

    #[test]
    fn config_text() {
        let pairs = parse_config_text("# c\nloss.r: 5\n\noptim.lr : 0.1\n", Path::new("x")).unwrap();
        assert_eq!(pairs, vec![("loss.r".into(), "5".into()), ("optim.lr".into(), "0.1".into())]);
        assert!(parse_config_text("oops", Path::new("x")).is_err());
    }
}
