//! Model and training configuration, loaded from TOML.
//!
//! Architecture sizes default per backbone: the LSTM stack uses 100-d
//! embeddings, a 2-layer BiLSTM with 100 units per direction, a 200-unit
//! decoder and 200-d graph encoders; the Transformer stack uses d=512,
//! feed-forward 2048, 6 encoder and 6 decoder layers, 512-d graph encoders.
//! Any size can be overridden in the file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::wordgraph::EdgeTypeSet;

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $($name::$variant => $text),+
                })
            }
        }

        impl FromStr for $name {
            type Err = CoreError;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(CoreError::Config(format!(
                        concat!("unknown ", stringify!($name), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Variant { Lstm => "lstm", Transformer => "transformer" });
keyword_enum!(Gnn { Gcn => "gcn", Gat => "gat", Off => "off" });
keyword_enum!(GuidanceKey { Cell => "cell", Hidden => "hidden" });
keyword_enum!(UpdateRule { Gated => "gated", Product => "product" });

/// Resolved architecture. Everything here feeds the config hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub gnn: Gnn,
    pub copy: bool,
    pub edge_types: EdgeTypeSet,
    /// Token embedding width (equals `d_model` for the Transformer).
    pub emb_dim: usize,
    /// BiLSTM units per direction.
    pub enc_hidden: usize,
    pub enc_layers: usize,
    /// LSTM decoder width; must be `2 * enc_hidden`.
    pub dec_hidden: usize,
    pub d_model: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub dec_layers: usize,
    pub graph_hidden: usize,
    pub gnn_layers: usize,
    /// LSTM guidance query: the cell state or the pre-update hidden state.
    pub guidance_key: GuidanceKey,
    /// How guidance enters the hidden state: gated (`sigmoid(f_g) * tanh(f_u)`)
    /// or the bare product `f_g * f_u`.
    pub update_rule: UpdateRule,
    /// Divide Transformer guidance scores by `sqrt(d)`.
    pub scale_guidance: bool,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn lstm() -> Self {
        Self {
            variant: Variant::Lstm,
            gnn: Gnn::Gat,
            copy: true,
            edge_types: EdgeTypeSet::all(),
            emb_dim: 100,
            enc_hidden: 100,
            enc_layers: 2,
            dec_hidden: 200,
            d_model: 512,
            ff_dim: 2048,
            heads: 8,
            dec_layers: 1,
            graph_hidden: 200,
            gnn_layers: 2,
            guidance_key: GuidanceKey::Cell,
            update_rule: UpdateRule::Gated,
            scale_guidance: false,
            dropout: 0.5,
        }
    }

    pub fn transformer() -> Self {
        Self {
            variant: Variant::Transformer,
            emb_dim: 512,
            enc_layers: 6,
            dec_layers: 6,
            graph_hidden: 512,
            ..Self::lstm()
        }
    }

    pub fn preset(variant: Variant) -> Self {
        match variant {
            Variant::Lstm => Self::lstm(),
            Variant::Transformer => Self::transformer(),
        }
    }

    /// Same architecture with every width cut down to a few units and no
    /// dropout; used for finite-difference checks.
    pub fn shrunk(&self) -> Self {
        let (emb, gh) = match self.variant {
            Variant::Lstm => (6, 6),
            Variant::Transformer => (8, 8),
        };
        Self {
            emb_dim: emb,
            enc_hidden: 3,
            enc_layers: 2,
            dec_hidden: 6,
            d_model: 8,
            ff_dim: 12,
            heads: 2,
            dec_layers: if self.variant == Variant::Transformer { 2 } else { self.dec_layers },
            graph_hidden: gh,
            dropout: 0.0,
            ..self.clone()
        }
    }

    pub fn graph_enabled(&self) -> bool {
        self.gnn != Gnn::Off
    }

    /// Width of the sequence encoder's per-token states.
    pub fn enc_dim(&self) -> usize {
        match self.variant {
            Variant::Lstm => 2 * self.enc_hidden,
            Variant::Transformer => self.d_model,
        }
    }

    /// Width of the decoder hidden state.
    pub fn dec_dim(&self) -> usize {
        match self.variant {
            Variant::Lstm => self.dec_hidden,
            Variant::Transformer => self.d_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if [self.emb_dim, self.enc_layers, self.graph_hidden, self.gnn_layers].contains(&0) {
            return bad("sizes and layer counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match self.variant {
            Variant::Lstm => {
                if self.enc_hidden == 0 || self.dec_hidden != 2 * self.enc_hidden {
                    return bad(format!(
                        "LSTM decoder width {} must be twice the encoder width {}",
                        self.dec_hidden, self.enc_hidden
                    ));
                }
            }
            Variant::Transformer => {
                if self.heads == 0 || self.d_model % self.heads != 0 {
                    return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
                }
                if self.emb_dim != self.d_model {
                    return bad("Transformer emb_dim must equal d_model".into());
                }
                if self.dec_layers < 2 {
                    return bad("Transformer guidance needs at least 2 decoder layers".into());
                }
                if self.graph_enabled() && self.graph_hidden != self.d_model {
                    return bad("Transformer guidance needs graph_hidden == d_model".into());
                }
                if self.ff_dim == 0 {
                    return bad("ff_dim must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 over the architecture and the vocabulary it was built with.
    pub fn hash(&self, vocab_text: &str) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update([0u8]);
        h.update(vocab_text.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::lstm()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub min_count: usize,
    pub max_decode_len: usize,
    /// Worker threads for per-example gradients and evaluation; 1 keeps
    /// everything on the calling thread.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 8,
            epochs: 30,
            seed: 1,
            clip_norm: 2.0,
            min_count: 1,
            max_decode_len: 50,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(CoreError::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.batch_size == 0 || self.threads == 0 || self.min_count == 0 {
            return Err(CoreError::Config(
                "batch_size, threads and min_count must be positive".into(),
            ));
        }
        if self.clip_norm <= 0.0 {
            return Err(CoreError::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

/// Model section as written in the file: unset sizes come from the
/// variant's preset.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelSection {
    variant: Option<Variant>,
    gnn: Option<Gnn>,
    copy: Option<bool>,
    edge_types: Option<EdgeTypeSet>,
    emb_dim: Option<usize>,
    enc_hidden: Option<usize>,
    enc_layers: Option<usize>,
    dec_hidden: Option<usize>,
    d_model: Option<usize>,
    ff_dim: Option<usize>,
    heads: Option<usize>,
    dec_layers: Option<usize>,
    graph_hidden: Option<usize>,
    gnn_layers: Option<usize>,
    guidance_key: Option<GuidanceKey>,
    update_rule: Option<UpdateRule>,
    scale_guidance: Option<bool>,
    dropout: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileLayout {
    model: ModelSection,
    train: TrainConfig,
    data: DataConfig,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

/// Command-line overrides; set fields win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub variant: Option<Variant>,
    pub gnn: Option<Gnn>,
    pub copy: Option<bool>,
    pub edge_types: Option<EdgeTypeSet>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &Overrides::default())
    }

    pub fn from_toml_with(text: &str, ov: &Overrides) -> Result<Self> {
        let file: FileLayout =
            toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        let m = file.model;
        let variant = ov.variant.or(m.variant).unwrap_or(Variant::Lstm);
        let p = ModelConfig::preset(variant);
        let model = ModelConfig {
            variant,
            gnn: ov.gnn.or(m.gnn).unwrap_or(p.gnn),
            copy: ov.copy.or(m.copy).unwrap_or(p.copy),
            edge_types: ov.edge_types.or(m.edge_types).unwrap_or(p.edge_types),
            emb_dim: m.emb_dim.unwrap_or(p.emb_dim),
            enc_hidden: m.enc_hidden.unwrap_or(p.enc_hidden),
            enc_layers: m.enc_layers.unwrap_or(p.enc_layers),
            dec_hidden: m.dec_hidden.unwrap_or(p.dec_hidden),
            d_model: m.d_model.unwrap_or(p.d_model),
            ff_dim: m.ff_dim.unwrap_or(p.ff_dim),
            heads: m.heads.unwrap_or(p.heads),
            dec_layers: m.dec_layers.unwrap_or(p.dec_layers),
            graph_hidden: m.graph_hidden.unwrap_or(p.graph_hidden),
            gnn_layers: m.gnn_layers.unwrap_or(p.gnn_layers),
            guidance_key: m.guidance_key.unwrap_or(p.guidance_key),
            update_rule: m.update_rule.unwrap_or(p.update_rule),
            scale_guidance: m.scale_guidance.unwrap_or(p.scale_guidance),
            dropout: m.dropout.unwrap_or(p.dropout),
        };
        let mut train = file.train;
        if let Some(seed) = ov.seed {
            train.seed = seed;
        }
        if let Some(epochs) = ov.epochs {
            train.epochs = epochs;
        }
        model.validate()?;
        train.validate()?;
        Ok(Self {
            model,
            train,
            data: file.data,
        })
    }

    /// Load a config file; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>, ov: &Overrides) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let mut cfg = Self::from_toml_with(&text, ov)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.train, &mut cfg.data.valid, &mut cfg.data.test]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn defaults_with(ov: &Overrides) -> Result<Self> {
        Self::from_toml_with("", ov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_follow_variant() {
        let c = Config::from_toml("[model]\nvariant = \"transformer\"\n").unwrap();
        assert_eq!(c.model.d_model, 512);
        assert_eq!(c.model.ff_dim, 2048);
        assert_eq!(c.model.dec_layers, 6);
        let c = Config::from_toml("").unwrap();
        assert_eq!(c.model.enc_dim(), 200);
        assert_eq!(c.model.dec_dim(), 200);
        assert_eq!(c.train.lr, 1e-3);
    }

    #[test]
    fn overrides_win() {
        let ov = Overrides {
            gnn: Some(Gnn::Gcn),
            seed: Some(9),
            edge_types: Some("I".parse().unwrap()),
            ..Default::default()
        };
        let c = Config::from_toml_with("[model]\ngnn = \"gat\"\n[train]\nseed = 3\n", &ov).unwrap();
        assert_eq!(c.model.gnn, Gnn::Gcn);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.model.edge_types.to_string(), "I");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::from_toml("[model]\nwidth = 3\n").is_err());
        assert!(Config::from_toml("[train]\nlr = -1.0\n").is_err());
        assert!("lstm2".parse::<Variant>().is_err());
    }

    #[test]
    fn hash_separates_variants() {
        let a = ModelConfig::lstm().hash("v");
        let b = ModelConfig::transformer().hash("v");
        assert_ne!(a, b);
        assert_eq!(a, ModelConfig::lstm().hash("v"));
        assert_ne!(a, ModelConfig::lstm().hash("w"));
    }
}
