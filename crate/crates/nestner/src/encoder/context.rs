//! Contextual-embedding layers and their trainable mixing.
//!
//! A provider supplies, per sentence, L+1 fixed-width vectors per token
//! (the hidden states of an external language model, one set per layer).
//! The mix is `γ · Σ_l softmax(u)_l · h_{k,l}` with both the layer weights
//! `u` and the scale `γ` trainable. Providers: "none", or a file of
//! precomputed vectors keyed by sentence id.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::params::{Graph, ParamId, ParamSet};
use crate::numeric::tape::TensorId;
use crate::numeric::tensor::Tensor;

/// Per-sentence language-model states: `layers[l][k]` is the width-sized
/// vector for token k at layer l.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextLayers {
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl ContextLayers {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.layers.first().map_or(0, |l| l.len())
    }

    pub fn width(&self) -> usize {
        self.layers
            .first()
            .and_then(|l| l.first())
            .map_or(0, |v| v.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Contract("context must have at least one layer".into()));
        }
        let n = self.n_tokens();
        let w = self.width();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.len() != n {
                return Err(Error::Contract(format!(
                    "context layer {l} has {} tokens, layer 0 has {n}",
                    layer.len()
                )));
            }
            for (k, v) in layer.iter().enumerate() {
                if v.len() != w {
                    return Err(Error::Shape {
                        op: "context_layers",
                        lhs: vec![1, w],
                        rhs: vec![k, v.len()],
                    });
                }
            }
        }
        Ok(())
    }
}

/// Trainable mixing parameters: raw layer weights and the scale.
#[derive(Debug, Clone, Copy)]
pub struct MixParams {
    pub u: ParamId,
    pub gamma: ParamId,
    pub n_layers: usize,
}

impl MixParams {
    /// `gamma_init` is stage-specific (the detector and classifier tune it
    /// separately); `u` starts at zero, a uniform layer mix.
    pub fn init(ps: &mut ParamSet, prefix: &str, n_layers: usize, gamma_init: f64) -> Result<Self> {
        let u = ps.add(
            &format!("{prefix}.mix_u"),
            Tensor::new(vec![1, n_layers], vec![0.0; n_layers])?,
            true,
        )?;
        let gamma = ps.add(&format!("{prefix}.mix_gamma"), Tensor::scalar(gamma_init), true)?;
        Ok(MixParams { u, gamma, n_layers })
    }

    /// Mixed context vector per token, each `1×width`.
    pub fn mix_context(&self, g: &mut Graph, ctx: &ContextLayers) -> Result<Vec<TensorId>> {
        ctx.validate()?;
        if ctx.n_layers() != self.n_layers {
            return Err(Error::Contract(format!(
                "context has {} layers, mix expects {}",
                ctx.n_layers(),
                self.n_layers
            )));
        }
        let u = g.param(self.u)?;
        let gamma = g.param(self.gamma)?;
        let w = g.tape.softmax_rows(u)?;
        let width = ctx.width();
        let mut out = Vec::with_capacity(ctx.n_tokens());
        for k in 0..ctx.n_tokens() {
            // stack the token's layer vectors into an (L+1)×width matrix
            let mut vals = Vec::with_capacity(self.n_layers * width);
            for layer in &ctx.layers {
                vals.extend_from_slice(&layer[k]);
            }
            let stack = g
                .tape
                .constant(Tensor::new(vec![self.n_layers, width], vals)?);
            let mixed = g.tape.matmul(w, stack)?;
            out.push(g.tape.mul(mixed, gamma)?);
        }
        Ok(out)
    }
}

/// Source of context layers for sentences.
#[derive(Debug, Clone, Default)]
pub enum ContextProvider {
    #[default]
    None,
    File {
        by_id: HashMap<usize, ContextLayers>,
        n_layers: usize,
        width: usize,
    },
}

impl ContextProvider {
    pub fn is_none(&self) -> bool {
        matches!(self, ContextProvider::None)
    }

    pub fn n_layers(&self) -> usize {
        match self {
            ContextProvider::None => 0,
            ContextProvider::File { n_layers, .. } => *n_layers,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            ContextProvider::None => 0,
            ContextProvider::File { width, .. } => *width,
        }
    }

    /// Context for one sentence; an error if the provider has none for it.
    pub fn get(&self, sentence_id: usize, n_tokens: usize) -> Result<Option<&ContextLayers>> {
        match self {
            ContextProvider::None => Ok(None),
            ContextProvider::File { by_id, .. } => match by_id.get(&sentence_id) {
                Some(c) if c.n_tokens() == n_tokens => Ok(Some(c)),
                Some(c) => Err(Error::Contract(format!(
                    "context for sentence {sentence_id} has {} tokens, sentence has {n_tokens}",
                    c.n_tokens()
                ))),
                None => Err(Error::Contract(format!(
                    "no context vectors for sentence {sentence_id}"
                ))),
            },
        }
    }
}

/// Parse a context-vector file.
///
/// Format: header `L width` (so L+1 layers per token), then per sentence a
/// line `#id N` followed by `N·(L+1)` rows of `width` floats, layer-major
/// then token-major.
pub fn load_context_file(path: &Path) -> Result<ContextProvider> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| perr(1, "empty context file".into()))?;
    let hp: Vec<&str> = header.split_whitespace().collect();
    if hp.len() != 2 {
        return Err(perr(1, format!("expected header \"L width\", got {header:?}")));
    }
    let l_max: usize = hp[0]
        .parse()
        .map_err(|_| perr(1, format!("bad layer count {:?}", hp[0])))?;
    let width: usize = hp[1]
        .parse()
        .map_err(|_| perr(1, format!("bad width {:?}", hp[1])))?;
    let n_layers = l_max + 1;

    let mut by_id = HashMap::new();
    let mut pending = lines.peekable();
    while let Some((i, line)) = pending.next() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let sp: Vec<&str> = line.split_whitespace().collect();
        if sp.len() != 2 || !sp[0].starts_with('#') {
            return Err(perr(line_no, format!("expected \"#id N\", got {line:?}")));
        }
        let id: usize = sp[0][1..]
            .parse()
            .map_err(|_| perr(line_no, format!("bad sentence id {:?}", sp[0])))?;
        let n: usize = sp[1]
            .parse()
            .map_err(|_| perr(line_no, format!("bad token count {:?}", sp[1])))?;
        let mut layers = vec![vec![Vec::new(); n]; n_layers];
        for layer in &mut layers {
            for slot in layer.iter_mut() {
                let (j, row) = pending.next().ok_or_else(|| {
                    perr(line_no, format!("sentence {id}: file ended inside vector block"))
                })?;
                let vals: std::result::Result<Vec<f64>, _> =
                    row.split_whitespace().map(str::parse::<f64>).collect();
                let vals = vals.map_err(|e| perr(j + 1, format!("bad float: {e}")))?;
                if vals.len() != width {
                    return Err(perr(
                        j + 1,
                        format!("expected {width} floats, found {}", vals.len()),
                    ));
                }
                *slot = vals;
            }
        }
        let ctx = ContextLayers { layers };
        ctx.validate().map_err(|e| perr(line_no, e.to_string()))?;
        if by_id.insert(id, ctx).is_some() {
            return Err(perr(line_no, format!("duplicate sentence id {id}")));
        }
    }
    Ok(ContextProvider::File { by_id, n_layers, width })
}
