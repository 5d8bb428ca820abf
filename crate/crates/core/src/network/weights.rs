use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::hash64;
use super::{ModelConfig, NetworkError};
use crate::autodiff::Tensor;
use crate::entropy::{prior_init, prior_shapes};

const WEIGHT_MAGIC: [u8; 4] = *b"NLW1";

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `U(−b, b)`.
    Uniform(f64),
    Zeros,
    /// Output-layer bias of a parameter head: zero logits and means, scale
    /// logits at `raw` over the channels `[2·KC, 3·KC)`.
    HeadBias {
        kc: usize,
        raw: f64,
    },
    /// Component `0..3` of the factorized prior initializer.
    Prior(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub key: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, key: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { key, shape, init });
    }

    /// Conv weight `[cout, cin, k, k]` plus bias.
    fn conv(&mut self, prefix: &str, cout: usize, cin: usize, k: usize) {
        let bound = (3.0 / (cin * k * k) as f64).sqrt();
        self.push(format!("{prefix}.weight"), vec![cout, cin, k, k], Init::Uniform(bound));
        self.push(format!("{prefix}.bias"), vec![cout], Init::Zeros);
    }

    fn zero_conv(&mut self, prefix: &str, cout: usize, cin: usize, k: usize) {
        self.push(format!("{prefix}.weight"), vec![cout, cin, k, k], Init::Zeros);
        self.push(format!("{prefix}.bias"), vec![cout], Init::Zeros);
    }

    /// Stride-2 transposed conv, weight `[cin, cout, 4, 4]`.
    fn up(&mut self, prefix: &str, n: usize) {
        let bound = (3.0 / (n * 4) as f64).sqrt();
        self.push(format!("{prefix}.weight"), vec![n, n, 4, 4], Init::Uniform(bound));
        self.push(format!("{prefix}.bias"), vec![n], Init::Zeros);
    }

    fn resblock(&mut self, prefix: &str, n: usize) {
        self.conv(&format!("{prefix}.conv1"), n, n, 3);
        self.conv(&format!("{prefix}.conv2"), n, n, 3);
    }

    fn attention(&mut self, prefix: &str, n: usize) {
        for i in 0..3 {
            self.resblock(&format!("{prefix}.trunk.res{i}"), n);
        }
        self.zero_conv(&format!("{prefix}.trunk.out"), n, n, 1);
        for i in 0..3 {
            self.resblock(&format!("{prefix}.mask.res{i}"), n);
        }
        self.conv(&format!("{prefix}.mask.out"), n, n, 1);
    }

    fn head_out(&mut self, prefix: &str, kc: usize, cin: usize, floor: f64) {
        let bound = 0.01 / (cin as f64).sqrt();
        self.push(
            format!("{prefix}.weight"),
            vec![3 * kc, cin, 1, 1],
            Init::Uniform(bound),
        );
        // softplus(raw) + floor = 1
        let raw = libm::log(libm::expm1(1.0 - floor));
        self.push(format!("{prefix}.bias"), vec![3 * kc], Init::HeadBias { kc, raw });
    }
}

/// Every learnable tensor of the model, in canonical order. The key set and
/// shapes are a pure function of `cfg`.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let n = cfg.filters_n;
    let k = cfg.mixtures_k;
    let mut s = Specs(Vec::new());

    let down = cfg.down_stages();
    for i in 0..down {
        s.conv(&format!("analysis.down{i}"), n, if i == 0 { 3 } else { n }, 5);
        if i + 1 < down {
            s.resblock(&format!("analysis.res{i}"), n);
        }
    }
    if cfg.use_attention {
        s.attention("analysis.attn", n);
    }
    s.conv("analysis.out", n, n, 3);

    s.conv("hyper_analysis.in", n, n, 3);
    for i in 0..cfg.hyper_stages() {
        s.conv(&format!("hyper_analysis.down{i}"), n, n, 5);
    }
    for i in 0..cfg.hyper_stages() {
        s.up(&format!("hyper_synthesis.up{i}"), n);
    }
    s.conv("hyper_synthesis.out", 2 * n, n, 3);

    s.conv("synthesis.in", n, n, 3);
    if cfg.use_attention {
        s.attention("synthesis.attn", n);
    }
    for i in 0..down {
        s.up(&format!("synthesis.up{i}"), n);
        if i + 1 < down {
            s.resblock(&format!("synthesis.res{i}"), n);
        }
    }
    s.conv("synthesis.out", n, n, 3);

    if cfg.use_context_y {
        s.conv("context_y", 2 * n, n, 5);
    }
    s.conv("params_y.fc1", 2 * n, 4 * n, 1);
    s.head_out("params_y.fc2", k * n, 2 * n, cfg.scale_floor);

    if cfg.use_context_x {
        s.conv("context_x", n, 3, cfg.mask_kernel_x);
    }
    s.conv("params_x.fc1", 2 * n, 2 * n, 1);
    s.head_out("params_x.fc2", k * 3, 2 * n, cfg.scale_floor);

    let [ms, bs, gs] = prior_shapes(n);
    s.push("prior.matrix".into(), ms, Init::Prior(0));
    s.push("prior.bias".into(), bs, Init::Prior(1));
    s.push("prior.gate".into(), gs, Init::Prior(2));
    s.0
}

fn fnv1a(key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Named parameter map plus the config it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    params: BTreeMap<String, Tensor>,
}

impl ModelWeights {
    /// Deterministic initialization. Each tensor draws from its own stream
    /// seeded by `(seed, key)`, so configs that share a key share its
    /// initial value.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut params = BTreeMap::new();
        for spec in param_specs(config) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&spec.key));
            let tensor = match spec.init {
                Init::Uniform(b) => Tensor::from_fn(&spec.shape, |_| rng.gen_range(-b..b)),
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::HeadBias { kc, raw } => Tensor::from_fn(&spec.shape, |i| if i >= 2 * kc { raw } else { 0.0 }),
                Init::Prior(which) => {
                    let mut prior_rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a("prior"));
                    prior_init(config.filters_n, &mut prior_rng)[which].clone()
                }
            };
            params.insert(spec.key, tensor);
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    /// Builds weights from an explicit map, checking keys and shapes.
    pub fn from_params(config: &ModelConfig, params: BTreeMap<String, Tensor>) -> Result<Self, NetworkError> {
        config.validate()?;
        let specs = param_specs(config);
        if specs.len() != params.len() {
            return Err(NetworkError::Keys(format!(
                "expected {} tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for spec in &specs {
            let t = params
                .get(&spec.key)
                .ok_or_else(|| NetworkError::Keys(format!("missing {}", spec.key)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(NetworkError::Keys(format!(
                    "{} has shape {:?}, expected {:?}",
                    spec.key,
                    t.shape(),
                    spec.shape
                )));
            }
            if !t.is_finite() {
                return Err(NetworkError::Keys(format!("{} holds non-finite values", spec.key)));
            }
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.params.get(key)
    }

    /// Panics on unknown keys; callers only ask for keys of their own config.
    pub(crate) fn tensor(&self, key: &str) -> &Tensor {
        self.params
            .get(key)
            .unwrap_or_else(|| panic!("weight {key} not present for this config"))
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Replaces every tensor, e.g. after an optimizer step. Shapes must match.
    pub fn update(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        for (k, t) in self.params.iter_mut() {
            let shape = t.shape().to_vec();
            f(k, t);
            assert_eq!(t.shape(), shape.as_slice(), "update changed the shape of {k}");
        }
    }

    /// Serialized form:
    ///
    /// ```text
    /// "NLW1"
    /// u32 config length, canonical config text
    /// u32 tensor count, then per tensor (key order):
    ///     u16 key length, key, u8 rank, u32 dims, u64 byte offset
    /// u64 data length, f64 values
    /// ```
    ///
    /// All integers and floats are little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&WEIGHT_MAGIC);
        let cfg = self.config.canonical_text();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (key, t) in &self.params {
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * t.numel() as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for t in self.params.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetworkError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != WEIGHT_MAGIC {
            return Err(NetworkError::Format("missing NLW1 magic".into()));
        }
        let cfg_len = r.u32()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| NetworkError::Format("config block is not UTF-8".into()))?;
        let config = ModelConfig::from_text(cfg_text)?;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let key_len = r.u16()? as usize;
            let key = std::str::from_utf8(r.take(key_len)?)
                .map_err(|_| NetworkError::Format("key is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let offset = r.u64()?;
            manifest.push((key, shape, offset));
        }
        let data_len = r.u64()? as usize;
        let data = r.take(data_len)?;
        if r.pos != bytes.len() {
            return Err(NetworkError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut params = BTreeMap::new();
        let mut expected = 0usize;
        for (key, shape, offset) in manifest {
            let numel: usize = shape.iter().product();
            if offset as usize != expected || expected + 8 * numel > data.len() {
                return Err(NetworkError::Format(format!("bad offset for {key}")));
            }
            let values = data[expected..expected + 8 * numel]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            expected += 8 * numel;
            let t = Tensor::new(shape, values).map_err(|e| NetworkError::Format(e.to_string()))?;
            params.insert(key, t);
        }
        if expected != data.len() {
            return Err(NetworkError::Format("data section length mismatch".into()));
        }
        Self::from_params(&config, params)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| NetworkError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let bytes = std::fs::read(path).map_err(|e| NetworkError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// First 8 bytes (little-endian) of the SHA-256 of the serialized form.
    pub fn hash(&self) -> u64 {
        hash64(&self.to_bytes())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetworkError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NetworkError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, NetworkError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, NetworkError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NetworkError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
