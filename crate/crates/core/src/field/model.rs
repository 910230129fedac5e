//! The hybrid field: triplane color branch and reference-conditioned density
//! branch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Aabb, Camera, Vec3};
use crate::error::{Error, Result};
use crate::field::encoding::{positional_dim, positional_encode_into, sh_basis, SH_COEFFS};
use crate::field::features::{aggregate_reference_into, extract_reference_features, ReferenceFeatureMaps};
use crate::field::mlp::Mlp;
use crate::field::triplane::Triplane;
use crate::math::{softplus, ParamStore, Tape, Tensor, Var};
use crate::scene::{Image, SceneDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub plane_resolution: usize,
    pub plane_channels: usize,
    /// Half width of the uniform plane initialization.
    pub plane_init: f64,
    pub pe_frequencies: usize,
    pub density_depth: usize,
    pub density_width: usize,
    /// Size of the auxiliary feature emitted next to the density.
    pub density_feature_dim: usize,
    pub base_depth: usize,
    pub base_width: usize,
    pub base_feature_dim: usize,
    pub color_depth: usize,
    pub color_width: usize,
    pub reference_channels: usize,
    pub feature_seed: u64,
    /// Initial value of the raw density bias; density is `softplus(raw)`.
    pub sigma_bias_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            plane_resolution: 64,
            plane_channels: 8,
            plane_init: 0.1,
            pe_frequencies: 6,
            density_depth: 4,
            density_width: 128,
            density_feature_dim: 15,
            base_depth: 2,
            base_width: 128,
            base_feature_dim: 16,
            color_depth: 4,
            color_width: 128,
            reference_channels: 64,
            feature_seed: 0,
            sigma_bias_init: -1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("plane_resolution", self.plane_resolution.saturating_sub(1)),
            ("plane_channels", self.plane_channels),
            ("density_width", self.density_width),
            ("density_feature_dim", self.density_feature_dim),
            ("base_width", self.base_width),
            ("base_feature_dim", self.base_feature_dim),
            ("color_width", self.color_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("model.{name} is too small")));
            }
        }
        if self.reference_channels < crate::field::features::RAW_CHANNELS {
            return Err(Error::invalid(format!(
                "model.reference_channels must be at least {}",
                crate::field::features::RAW_CHANNELS
            )));
        }
        if !(self.plane_init >= 0.0 && self.sigma_bias_init.is_finite()) {
            return Err(Error::invalid("model.plane_init / sigma_bias_init out of range"));
        }
        Ok(())
    }
}

/// Model parameters plus the frozen reference views they are conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct TriDF {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub triplane: Triplane,
    pub density: Mlp,
    pub base: Mlp,
    pub color: Mlp,
    pub bbox: Aabb,
    pub background: [f64; 3],
    pub ref_cameras: Vec<Camera>,
    pub ref_images: Vec<Image>,
    pub features: ReferenceFeatureMaps,
}

/// Per-sample constant inputs of the density branch.
#[derive(Clone, Debug)]
pub struct DensityInputs {
    /// `[n, pe_dim + views * channels]`: encoded position then reference features.
    pub encoded: Tensor,
    pub x_norm: Vec<[f64; 3]>,
}

impl TriDF {
    /// Fresh model conditioned on the training views of `scene`.
    pub fn new(config: ModelConfig, scene: &SceneDataset, seed: u64) -> Result<Self> {
        Self::from_parts(
            config,
            scene.bbox,
            scene.background,
            scene.train_cameras(),
            scene.train_images(),
            seed,
        )
    }

    pub fn from_parts(
        config: ModelConfig,
        bbox: Aabb,
        background: [f64; 3],
        ref_cameras: Vec<Camera>,
        ref_images: Vec<Image>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if ref_cameras.len() != ref_images.len() || ref_cameras.is_empty() {
            return Err(Error::invalid("need one image per reference camera"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let triplane = Triplane::new(
            &mut params,
            config.plane_resolution,
            config.plane_channels,
            config.plane_init,
            &mut rng,
        );
        let views = ref_cameras.len();
        let density_in = positional_dim(config.pe_frequencies) + views * config.reference_channels;
        let density = Mlp::new(
            &mut params,
            "density",
            density_in,
            config.density_width,
            config.density_depth,
            1 + config.density_feature_dim,
            &mut rng,
        );
        // Density starts position independent at softplus(sigma_bias_init).
        let last = *density.layers.last().expect("non-empty");
        let outs = last.outputs;
        for row in params.get_mut(last.weight).data_mut().chunks_mut(outs) {
            row[0] = 0.0;
        }
        params.get_mut(last.bias).data_mut()[0] = config.sigma_bias_init;

        let base = Mlp::new(
            &mut params,
            "base",
            triplane.feature_dim() + config.density_feature_dim,
            config.base_width,
            config.base_depth,
            config.base_feature_dim,
            &mut rng,
        );
        let color = Mlp::new(
            &mut params,
            "color",
            config.base_feature_dim + SH_COEFFS,
            config.color_width,
            config.color_depth,
            3,
            &mut rng,
        );
        let features = extract_reference_features(&ref_images, config.feature_seed, config.reference_channels);
        Ok(Self {
            config,
            params,
            triplane,
            density,
            base,
            color,
            bbox,
            background,
            ref_cameras,
            ref_images,
            features,
        })
    }

    pub fn num_views(&self) -> usize {
        self.ref_cameras.len()
    }

    pub fn reference_dim(&self) -> usize {
        self.num_views() * self.config.reference_channels
    }

    /// Registers every parameter on `tape`; the result is indexed by
    /// `ParamId.0`.
    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.params.ids().map(|id| tape.param_from(&self.params, id)).collect()
    }

    /// Maps world points into `[-1, 1]^3` over the bbox, clamping round-off.
    pub fn normalize(&self, x: &Vec3) -> [f64; 3] {
        let n = self.bbox.normalize(x);
        [n.x.clamp(-1.0, 1.0), n.y.clamp(-1.0, 1.0), n.z.clamp(-1.0, 1.0)]
    }

    /// Positional encoding of the normalized position followed by the
    /// aggregated reference features, for each point.
    pub fn density_inputs(&self, x_world: &[Vec3]) -> Result<DensityInputs> {
        let pe = positional_dim(self.config.pe_frequencies);
        let width = pe + self.reference_dim();
        let mut data = Vec::with_capacity(x_world.len() * width);
        let mut x_norm = Vec::with_capacity(x_world.len());
        let mut refs = vec![0.0; self.reference_dim()];
        for x in x_world {
            let n = self.normalize(x);
            positional_encode_into(&Vec3::from(n), self.config.pe_frequencies, &mut data);
            aggregate_reference_into(x, &self.features, &self.ref_cameras, &mut refs);
            data.extend_from_slice(&refs);
            x_norm.push(n);
        }
        Ok(DensityInputs {
            encoded: Tensor::matrix(x_world.len(), width, data)?,
            x_norm,
        })
    }

    /// Density `[n, 1]` and auxiliary features `[n, density_feature_dim]`.
    pub fn density_field(&self, tape: &mut Tape, bound: &[Var], encoded: Var) -> Result<(Var, Var)> {
        let out = self.density.forward(tape, bound, encoded)?;
        let raw = tape.slice_cols(out, 0, 1)?;
        let sigma = tape.softplus(raw)?;
        let fm = tape.slice_cols(out, 1, 1 + self.config.density_feature_dim)?;
        Ok((sigma, fm))
    }

    /// RGB in `(0, 1)` from triplane features, density features and the
    /// spherical-harmonic encoding of the view direction.
    pub fn color_head(&self, tape: &mut Tape, bound: &[Var], f_tri: Var, f_m: Var, sh: Var) -> Result<Var> {
        let x = tape.concat_cols(&[f_tri, f_m])?;
        let f_base = self.base.forward(tape, bound, x)?;
        let x = tape.concat_cols(&[f_base, sh])?;
        let raw = self.color.forward(tape, bound, x)?;
        tape.sigmoid(raw)
    }

    /// Full field at world points `x_world` seen along unit directions
    /// `dirs`: density `[n, 1]` and color `[n, 3]`.
    pub fn field(&self, tape: &mut Tape, bound: &[Var], x_world: &[Vec3], dirs: &[Vec3]) -> Result<(Var, Var)> {
        if x_world.len() != dirs.len() {
            return Err(Error::shape("field", "points and directions differ in count"));
        }
        let inputs = self.density_inputs(x_world)?;
        let enc = tape.constant(inputs.encoded)?;
        let (sigma, fm) = self.density_field(tape, bound, enc)?;
        let f_tri = self.triplane.sample_points(tape, bound, &inputs.x_norm)?;
        let sh = tape.constant(sh_matrix(dirs))?;
        let rgb = self.color_head(tape, bound, f_tri, fm, sh)?;
        Ok((sigma, rgb))
    }

    /// Density at world points without recording gradients.
    pub fn density_values(&self, x_world: &[Vec3]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind_density(&mut tape)?;
        let inputs = self.density_inputs(x_world)?;
        let enc = tape.constant(inputs.encoded)?;
        let (sigma, _) = self.density_field(&mut tape, &bound, enc)?;
        Ok(tape.value(sigma).data().to_vec())
    }

    /// Like [`TriDF::bind`] but only for the density network; other slots
    /// hold a placeholder.
    pub fn bind_density(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        let placeholder = tape.constant(Tensor::scalar(0.0))?;
        let mut bound = vec![placeholder; self.params.len()];
        for l in &self.density.layers {
            for id in [l.weight, l.bias] {
                bound[id.0] = tape.param_from(&self.params, id)?;
            }
        }
        Ok(bound)
    }

    /// Density the fresh model outputs everywhere.
    pub fn initial_sigma(&self) -> f64 {
        softplus(self.config.sigma_bias_init)
    }
}

/// `[n, 16]` spherical-harmonic encodings of unit directions.
pub fn sh_matrix(dirs: &[Vec3]) -> Tensor {
    let data = dirs.iter().flat_map(sh_basis).collect();
    Tensor::matrix(dirs.len(), SH_COEFFS, data).expect("sized")
}
