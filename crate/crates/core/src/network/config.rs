use sha2::{Digest, Sha256};

use super::NetworkError;

/// Architecture switches and sizes. Everything here is part of the
/// bitstream's config hash.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub filters_n: usize,
    pub mixtures_k: usize,
    pub mask_kernel_x: usize,
    pub use_attention: bool,
    pub use_context_y: bool,
    pub use_context_x: bool,
    /// Total spatial stride of the analysis transform.
    pub downsample_factor: usize,
    /// Additional stride of the hyper-analysis transform.
    pub hyper_downsample: usize,
    /// Lower bound on every emitted mixture scale, in the coded grid's units.
    pub scale_floor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            filters_n: 32,
            mixtures_k: 3,
            mask_kernel_x: 7,
            use_attention: true,
            use_context_y: true,
            use_context_x: true,
            downsample_factor: 4,
            hyper_downsample: 4,
            scale_floor: 0.002,
        }
    }
}

/// Keys accepted by [`ModelConfig::set`], in canonical order.
pub const MODEL_KEYS: [&str; 9] = [
    "filters_n",
    "mixtures_k",
    "mask_kernel_x",
    "use_attention",
    "use_context_y",
    "use_context_x",
    "downsample_factor",
    "hyper_downsample",
    "scale_floor",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, NetworkError> {
    value
        .trim()
        .parse()
        .map_err(|_| NetworkError::Config(format!("{key}: cannot parse {value:?}")))
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let fail = |msg: String| Err(NetworkError::Config(msg));
        if self.filters_n < 4 {
            return fail(format!("filters_n must be >= 4, got {}", self.filters_n));
        }
        if self.mixtures_k == 0 {
            return fail("mixtures_k must be >= 1".into());
        }
        if ![5, 7].contains(&self.mask_kernel_x) {
            return fail(format!("mask_kernel_x must be 5 or 7, got {}", self.mask_kernel_x));
        }
        for (name, v) in [
            ("downsample_factor", self.downsample_factor),
            ("hyper_downsample", self.hyper_downsample),
        ] {
            if v < 2 || !v.is_power_of_two() || v > 64 {
                return fail(format!("{name} must be a power of two in 2..=64, got {v}"));
            }
        }
        if !(self.scale_floor > 0.0 && self.scale_floor < 1.0) {
            return fail(format!("scale_floor must lie in (0, 1), got {}", self.scale_floor));
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for keys that do
    /// not belong to the model.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, NetworkError> {
        match key {
            "filters_n" => self.filters_n = parse(key, value)?,
            "mixtures_k" => self.mixtures_k = parse(key, value)?,
            "mask_kernel_x" => self.mask_kernel_x = parse(key, value)?,
            "use_attention" => self.use_attention = parse(key, value)?,
            "use_context_y" => self.use_context_y = parse(key, value)?,
            "use_context_x" => self.use_context_x = parse(key, value)?,
            "downsample_factor" => self.downsample_factor = parse(key, value)?,
            "hyper_downsample" => self.hyper_downsample = parse(key, value)?,
            "scale_floor" => self.scale_floor = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// One `key=value` line per field in [`MODEL_KEYS`] order.
    pub fn canonical_text(&self) -> String {
        let values = [
            self.filters_n.to_string(),
            self.mixtures_k.to_string(),
            self.mask_kernel_x.to_string(),
            self.use_attention.to_string(),
            self.use_context_y.to_string(),
            self.use_context_x.to_string(),
            self.downsample_factor.to_string(),
            self.hyper_downsample.to_string(),
            format!("{:?}", self.scale_floor),
        ];
        MODEL_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Parses `key=value` lines; `#` starts a comment. Every key must be a
    /// model key; missing keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self, NetworkError> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NetworkError::Config(format!("line {}: expected key=value", lineno + 1)))?;
            if !cfg.set(k.trim(), v)? {
                return Err(NetworkError::Config(format!(
                    "line {}: unknown key {:?}",
                    lineno + 1,
                    k.trim()
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// First 8 bytes (little-endian) of the SHA-256 of the canonical text.
    pub fn hash(&self) -> u64 {
        hash64(self.canonical_text().as_bytes())
    }

    /// Spatial multiple an image must be padded to.
    pub fn pad_multiple(&self) -> usize {
        self.downsample_factor * self.hyper_downsample
    }

    pub(crate) fn down_stages(&self) -> usize {
        self.downsample_factor.trailing_zeros() as usize
    }

    pub(crate) fn hyper_stages(&self) -> usize {
        self.hyper_downsample.trailing_zeros() as usize
    }
}

pub(crate) fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
