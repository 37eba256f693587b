//! Trained-model container.
//!
//! Layout, little-endian: 16-byte header (`HZGNCKPT`, `u32` version 1,
//! `u32` zero); `u64` context width K, `u64` hidden width, `u64`
//! activation code, `u64` velocity-input code; `u64` seed; `f64` time
//! scale; `u64` horizon count and that many `u64` horizons; 32-byte SHA-256
//! of the normalization statistics text; `u64` matrix count, then per
//! matrix `u64` rows, `u64` cols and rows·cols `f64` in row-major order, in
//! the order W0..W4, velocity weight, velocity bias, thickness weight,
//! thickness bias.

use std::io::{Read, Write};
use std::path::Path;

use crate::binio;
use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::horizon::HorizonSet;
use crate::model::{ModelConfig, ModelParams, VelocityInput, PARAM_MATRICES};
use crate::numeric::{Activation, DenseMatrix};

const MAGIC: &[u8; 8] = b"HZGNCKPT";
const VERSION: u32 = 1;
const KIND: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub t_scale: f64,
    pub horizons: HorizonSet,
    /// SHA-256 of the statistics the model was trained against.
    pub stats_hash: [u8; 32],
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(
        config: ModelConfig,
        seed: u64,
        t_scale: f64,
        horizons: HorizonSet,
        stats: &NormStats,
        params: ModelParams,
    ) -> Result<Self> {
        Self::from_parts(config, seed, t_scale, horizons, stats.content_hash(), params)
    }

    fn from_parts(
        config: ModelConfig,
        seed: u64,
        t_scale: f64,
        horizons: HorizonSet,
        stats_hash: [u8; 32],
        params: ModelParams,
    ) -> Result<Self> {
        params.validate()?;
        if params.input_width() != config.input_width() || params.hidden() != config.hidden {
            return Err(Error::dims(
                "checkpoint params",
                format!("{}x{}", config.input_width(), config.hidden),
                format!("{}x{}", params.input_width(), params.hidden()),
            ));
        }
        Ok(Self {
            config,
            seed,
            t_scale,
            horizons,
            stats_hash,
            params,
        })
    }

    /// Fails unless `stats` is the statistics record this model was
    /// trained with.
    pub fn check_stats(&self, stats: &NormStats) -> Result<()> {
        if stats.content_hash() != self.stats_hash {
            return Err(Error::InvalidData(
                "normalization statistics do not match the checkpoint".into(),
            ));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, MAGIC, VERSION)?;
        binio::write_u64(w, self.config.context_width as u64)?;
        binio::write_u64(w, self.config.hidden as u64)?;
        binio::write_u64(w, self.config.activation.code())?;
        binio::write_u64(w, self.config.velocity_input.code())?;
        binio::write_u64(w, self.seed)?;
        binio::write_f64(w, self.t_scale)?;
        binio::write_u64(w, self.horizons.len() as u64)?;
        for h in self.horizons.iter() {
            binio::write_u64(w, h as u64)?;
        }
        w.write_all(&self.stats_hash)?;
        let matrices = self.params.matrices();
        binio::write_u64(w, matrices.len() as u64)?;
        for m in matrices {
            binio::write_u64(w, m.rows() as u64)?;
            binio::write_u64(w, m.cols() as u64)?;
            binio::write_f64s(w, m.data())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, KIND, MAGIC, VERSION)?;
        let context_width = binio::read_len(r, KIND, 1 << 16)?;
        let hidden = binio::read_len(r, KIND, 1 << 16)?;
        let activation = binio::read_u64(r, KIND)?;
        let activation = Activation::from_code(activation)
            .ok_or_else(|| Error::format(KIND, format!("unknown activation code {activation}")))?;
        let velocity = binio::read_u64(r, KIND)?;
        let velocity_input = VelocityInput::from_code(velocity)
            .ok_or_else(|| Error::format(KIND, format!("unknown velocity input code {velocity}")))?;
        let seed = binio::read_u64(r, KIND)?;
        let t_scale = binio::read_f64(r, KIND)?;
        let hc = binio::read_len(r, KIND, 1 << 16)?;
        let horizons = (0..hc)
            .map(|_| binio::read_len(r, KIND, u32::MAX as u64))
            .collect::<Result<Vec<_>>>()?;
        let horizons = HorizonSet::new(horizons).map_err(|e| Error::format(KIND, e.to_string()))?;
        let stats_hash: [u8; 32] = binio::read_bytes(r, KIND)?;
        let count = binio::read_len(r, KIND, 64)?;
        if count != PARAM_MATRICES {
            return Err(Error::format(KIND, format!("expected {PARAM_MATRICES} matrices, found {count}")));
        }
        let mut matrices = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = binio::read_len(r, KIND, 1 << 20)?;
            let cols = binio::read_len(r, KIND, 1 << 20)?;
            let data = binio::read_f64s(r, KIND, rows * cols)?;
            matrices.push(DenseMatrix::new(rows, cols, data).map_err(|e| Error::format(KIND, e.to_string()))?);
        }
        binio::expect_end(r, KIND)?;
        let config = ModelConfig {
            context_width,
            hidden,
            activation,
            velocity_input,
        };
        let params = ModelParams::from_matrices(matrices).map_err(|e| Error::format(KIND, e.to_string()))?;
        if !(t_scale > 0.0) {
            return Err(Error::format(KIND, format!("time scale {t_scale} not positive")));
        }
        Self::from_parts(config, seed, t_scale, horizons, stats_hash, params).map_err(|e| Error::format(KIND, e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
