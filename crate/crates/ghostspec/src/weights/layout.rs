//! Model layout: how attention/MLP projection tensors are named per layer,
//! and the head geometry needed to form invariant products.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

use super::Checkpoint;

/// Attention and MLP projection kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Q,
    K,
    V,
    O,
    Up,
    Down,
}

impl Projection {
    pub const ATTENTION: [Projection; 4] = [Projection::Q, Projection::K, Projection::V, Projection::O];
    pub const MLP: [Projection; 2] = [Projection::Up, Projection::Down];

    fn token(self) -> &'static str {
        match self {
            Projection::Q => "q",
            Projection::K => "k",
            Projection::V => "v",
            Projection::O => "o",
            Projection::Up => "up",
            Projection::Down => "down",
        }
    }
}

/// Tensor-name patterns with `{layer}` and `{proj}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameTemplate {
    pub attention: String,
    pub mlp: String,
}

impl Default for NameTemplate {
    fn default() -> Self {
        Self {
            attention: "model.layers.{layer}.self_attn.{proj}_proj.weight".into(),
            mlp: "model.layers.{layer}.mlp.{proj}_proj.weight".into(),
        }
    }
}

impl NameTemplate {
    pub fn resolve(&self, layer: usize, proj: Projection) -> String {
        let pattern = match proj {
            Projection::Up | Projection::Down => &self.mlp,
            _ => &self.attention,
        };
        pattern
            .replace("{layer}", &layer.to_string())
            .replace("{proj}", proj.token())
    }
}

/// Discovered or declared model geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelLayout {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub head_dim: usize,
    pub num_q_heads: usize,
    pub num_kv_heads: usize,
    pub template: NameTemplate,
}

impl ModelLayout {
    /// Query heads per key/value head.
    pub fn group_size(&self) -> usize {
        self.num_q_heads / self.num_kv_heads
    }

    pub fn tensor_name(&self, layer: usize, proj: Projection) -> String {
        self.template.resolve(layer, proj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::InvalidLayout("zero layers".into()));
        }
        if self.hidden_dim == 0 || self.head_dim == 0 {
            return Err(Error::InvalidLayout("zero dimension".into()));
        }
        if self.num_kv_heads == 0 || self.num_q_heads % self.num_kv_heads != 0 {
            return Err(Error::InvalidLayout(format!(
                "num_q_heads {} is not a multiple of num_kv_heads {}",
                self.num_q_heads, self.num_kv_heads
            )));
        }
        Ok(())
    }
}

/// Caller-supplied layout knowledge; anything absent is inferred.
#[derive(Debug, Clone, Default)]
pub struct LayoutOverrides {
    pub num_layers: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub head_dim: Option<usize>,
    pub num_q_heads: Option<usize>,
    pub num_kv_heads: Option<usize>,
    pub template: Option<NameTemplate>,
}

/// The subset of a model-config sidecar we understand.
#[derive(Debug, Deserialize)]
struct ConfigSidecar {
    #[serde(alias = "num_hidden_layers")]
    num_layers: Option<usize>,
    hidden_size: Option<usize>,
    num_attention_heads: Option<usize>,
    num_key_value_heads: Option<usize>,
    head_dim: Option<usize>,
}

impl LayoutOverrides {
    /// Read overrides from a JSON config sidecar (e.g. a `config.json`
    /// shipped next to the weights).
    pub fn from_config_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ConfigSidecar = serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("config sidecar is not valid JSON: {e}"),
        })?;
        Ok(Self {
            num_layers: cfg.num_layers,
            hidden_dim: cfg.hidden_size,
            head_dim: cfg.head_dim,
            num_q_heads: cfg.num_attention_heads,
            num_kv_heads: cfg.num_key_value_heads,
            template: None,
        })
    }

    /// Fill unset fields from another override set (flags beat config file).
    pub fn or(mut self, fallback: LayoutOverrides) -> Self {
        self.num_layers = self.num_layers.or(fallback.num_layers);
        self.hidden_dim = self.hidden_dim.or(fallback.hidden_dim);
        self.head_dim = self.head_dim.or(fallback.head_dim);
        self.num_q_heads = self.num_q_heads.or(fallback.num_q_heads);
        self.num_kv_heads = self.num_kv_heads.or(fallback.num_kv_heads);
        self.template = self.template.or(fallback.template);
        self
    }
}

/// Layout plus any non-fatal findings from discovery.
#[derive(Debug, Clone)]
pub struct DiscoveredLayout {
    pub layout: ModelLayout,
    pub warnings: Vec<String>,
}

/// Default head width assumed when neither overrides nor a config sidecar
/// supply head counts.
pub const DEFAULT_HEAD_DIM: usize = 128;

/// Work out the model layout from tensor names and shapes.
///
/// The layer count is the longest run of consecutive indices from 0 for
/// which all four attention projections resolve (an explicit
/// `overrides.num_layers` must resolve fully or discovery fails). Head
/// counts come from overrides when given, otherwise from the projection row
/// counts divided by `head_dim` (default 128).
pub fn discover_layout(ckpt: &Checkpoint, overrides: &LayoutOverrides) -> Result<DiscoveredLayout> {
    let template = overrides.template.clone().unwrap_or_default();
    let mut warnings = Vec::new();

    let resolves = |layer: usize| -> Option<Projection> {
        Projection::ATTENTION
            .iter()
            .find(|&&p| !ckpt.contains(&template.resolve(layer, p)))
            .copied()
    };

    let num_layers = match overrides.num_layers {
        Some(expected) => {
            for layer in 0..expected {
                if let Some(missing) = resolves(layer) {
                    return Err(Error::InvalidLayout(format!(
                        "declared {expected} layers but layer {layer} is missing its {}-projection",
                        missing.token()
                    )));
                }
            }
            expected
        }
        None => {
            let mut count = 0;
            while resolves(count).is_none() {
                count += 1;
            }
            if count == 0 {
                return Err(Error::NoLayers {
                    template: template.attention.clone(),
                });
            }
            if let Some(missing) = resolves(count) {
                // Only warn when the break point is a partial layer; a clean
                // end of the run is the normal case.
                let partial = Projection::ATTENTION
                    .iter()
                    .any(|&p| ckpt.contains(&template.resolve(count, p)));
                if partial {
                    warnings.push(format!(
                        "layer {count} is incomplete (missing {}-projection); using layers 0..{count}",
                        missing.token()
                    ));
                }
            }
            count
        }
    };

    // Shapes from layer 0, consistency-checked across layers below.
    let q0 = ckpt
        .record(&template.resolve(0, Projection::Q))
        .expect("layer 0 resolved above");
    if q0.shape.len() != 2 {
        return Err(Error::NonTwoDimensional {
            name: q0.name.clone(),
            shape: q0.shape.clone(),
        });
    }
    let q_rows = q0.shape[0];
    let hidden_dim = q0.shape[1];
    if let Some(h) = overrides.hidden_dim {
        if h != hidden_dim {
            return Err(Error::InvalidLayout(format!(
                "declared hidden_size {h} but q-projection has {hidden_dim} columns"
            )));
        }
    }
    let k0 = ckpt
        .record(&template.resolve(0, Projection::K))
        .expect("layer 0 resolved above");
    let kv_rows = k0.shape.first().copied().unwrap_or(0);

    for layer in 0..num_layers {
        let name = template.resolve(layer, Projection::Q);
        let rec = ckpt.record(&name).expect("resolved above");
        if rec.shape.len() != 2 || rec.shape[1] != hidden_dim {
            return Err(Error::InconsistentHiddenDim {
                layer,
                found: rec.shape.get(1).copied().unwrap_or(0),
                expected: hidden_dim,
            });
        }
    }

    let (num_q_heads, num_kv_heads, head_dim) = match (overrides.num_q_heads, overrides.num_kv_heads)
    {
        (Some(q_heads), kv) => {
            let kv_heads = kv.unwrap_or(q_heads);
            if q_heads == 0 || q_rows % q_heads != 0 {
                return Err(Error::InvalidLayout(format!(
                    "q-projection rows {q_rows} not divisible by num_attention_heads {q_heads}"
                )));
            }
            let head_dim = q_rows / q_heads;
            if kv_heads * head_dim != kv_rows {
                return Err(Error::InvalidLayout(format!(
                    "num_key_value_heads {kv_heads} x head_dim {head_dim} != k-projection rows {kv_rows}"
                )));
            }
            (q_heads, kv_heads, head_dim)
        }
        (None, _) => {
            let head_dim = overrides.head_dim.unwrap_or(DEFAULT_HEAD_DIM);
            if head_dim == 0 || q_rows % head_dim != 0 || kv_rows % head_dim != 0 {
                return Err(Error::InvalidLayout(format!(
                    "head_dim {head_dim} does not divide projection rows ({q_rows} q, {kv_rows} kv); \
                     supply head counts or a config sidecar"
                )));
            }
            (q_rows / head_dim, kv_rows / head_dim, head_dim)
        }
    };

    let layout = ModelLayout {
        num_layers,
        hidden_dim,
        head_dim,
        num_q_heads,
        num_kv_heads,
        template,
    };
    layout.validate()?;
    Ok(DiscoveredLayout { layout, warnings })
}
