//! Mask head forward pass.
//!
//! Pixel features are built from the encoder's stride-8/16/32 pyramid:
//! per-level 1×1 projection + GroupNorm, bilinear fusion onto the finest grid,
//! a 3×3 conv + GroupNorm + ReLU smoothing stage, then a bilinear upsample to
//! the 1/4 grid followed by another 3×3 conv + GroupNorm + ReLU. Decoder
//! hidden states go through a 3-layer MLP and each query's embedding is dotted
//! with the pixel features, i.e. a per-query dynamic 1×1 convolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor, GROUP_NORM_EPS};

pub const DEFAULT_EMBED_DIM: usize = 256;
pub const DEFAULT_STRIDES: [usize; 3] = [8, 16, 32];
pub const DEFAULT_NORM_GROUPS: usize = 32;
pub const MLP_DEPTH: usize = 3;

/// Logits live on a grid `OUTPUT_STRIDE` times coarser than the input.
pub const OUTPUT_STRIDE: usize = 4;

const INIT_RANGE: f64 = 0.1;

#[cfg(test)]
thread_local! {
    static PIXEL_FEATURE_CALLS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskHeadConfig {
    pub embed_dim: usize,
    pub strides: Vec<usize>,
    pub level_channels: Vec<usize>,
    pub hidden_dim: usize,
    pub norm_groups: usize,
}

impl MaskHeadConfig {
    /// Default strides; norm groups are 32 or `gcd(32, embed_dim)`.
    pub fn new(embed_dim: usize, level_channels: Vec<usize>, hidden_dim: usize) -> Result<Self> {
        let cfg = Self {
            embed_dim,
            strides: DEFAULT_STRIDES.to_vec(),
            level_channels,
            hidden_dim,
            norm_groups: gcd(DEFAULT_NORM_GROUPS, embed_dim.max(1)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid("embed_dim and hidden_dim must be positive"));
        }
        if self.norm_groups == 0 || !self.embed_dim.is_multiple_of(self.norm_groups) {
            return Err(Error::invalid(format!(
                "norm_groups {} does not divide embed_dim {}",
                self.norm_groups, self.embed_dim
            )));
        }
        if self.strides.is_empty() || self.strides.len() != self.level_channels.len() {
            return Err(Error::invalid(format!(
                "{} strides but {} level channel counts",
                self.strides.len(),
                self.level_channels.len()
            )));
        }
        if self.level_channels.contains(&0) {
            return Err(Error::invalid("level channel counts must be positive"));
        }
        let finest = self.strides[0];
        if finest == 0 || self.strides.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::invalid(format!(
                "strides must be positive and strictly increasing: {:?}",
                self.strides
            )));
        }
        if self.strides.iter().any(|s| s % finest != 0) {
            return Err(Error::invalid(format!(
                "finest stride {finest} must divide every stride in {:?}",
                self.strides
            )));
        }
        Ok(())
    }

    /// Dot-product scale, `1/sqrt(C)`.
    pub fn logit_scale(&self) -> f64 {
        1.0 / (self.embed_dim as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
    pub input_size: (usize, usize),
}

impl FeaturePyramid {
    pub fn validate(&self, config: &MaskHeadConfig) -> Result<()> {
        let (h, w) = self.input_size;
        if self.levels.len() != config.strides.len() {
            return Err(Error::invalid(format!(
                "pyramid has {} levels, config expects {}",
                self.levels.len(),
                config.strides.len()
            )));
        }
        if h % OUTPUT_STRIDE != 0 || w % OUTPUT_STRIDE != 0 {
            return Err(Error::invalid(format!(
                "input size {h}×{w} is not divisible by {OUTPUT_STRIDE}"
            )));
        }
        for (i, (level, &s)) in self.levels.iter().zip(&config.strides).enumerate() {
            if h % s != 0 || w % s != 0 {
                return Err(Error::invalid(format!(
                    "stride {s} of level {i} does not divide input size {h}×{w}"
                )));
            }
            let want = [config.level_channels[i], h / s, w / s];
            if level.dims() != want {
                return Err(Error::shape("feature pyramid level", &want, level.dims()));
            }
        }
        Ok(())
    }

    /// Uniform random pyramid in `[-1, 1]`, for fixtures.
    pub fn seeded(config: &MaskHeadConfig, input_size: (usize, usize), seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = input_size;
        let levels = config
            .strides
            .iter()
            .zip(&config.level_channels)
            .map(|(&s, &c)| Tensor::from_fn(&[c, (h / s).max(1), (w / s).max(1)], |_| rng.gen_range(-1.0..=1.0)))
            .collect();
        let pyramid = Self { levels, input_size };
        pyramid.validate(config)?;
        Ok(pyramid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    /// `L × Q × D` decoder hidden states.
    pub hidden: Tensor,
    /// Leading queries that are denoising queries.
    pub denoising_count: usize,
}

impl QuerySet {
    pub fn new(hidden: Tensor, denoising_count: usize) -> Result<Self> {
        let q = match *hidden.dims() {
            [_, q, _] => q,
            _ => {
                return Err(Error::invalid(format!(
                    "query hidden states must be L×Q×D, got {:?}",
                    hidden.dims()
                )))
            }
        };
        if denoising_count > q {
            return Err(Error::invalid(format!(
                "denoising_count {denoising_count} exceeds query count {q}"
            )));
        }
        Ok(Self {
            hidden,
            denoising_count,
        })
    }

    pub fn seeded(layers: usize, queries: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = Tensor::from_fn(&[layers, queries, hidden_dim], |_| rng.gen_range(-1.0..=1.0));
        Self::new(hidden, 0)
    }

    pub fn layers(&self) -> usize {
        self.hidden.dims()[0]
    }

    pub fn queries(&self) -> usize {
        self.hidden.dims()[1]
    }
}

/// Convolution followed by GroupNorm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNorm {
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ConvNorm {
    fn seeded(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize, k: usize) -> Self {
        Self {
            weight: Tensor::from_fn(&[out_c, in_c, k, k], |_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)),
            bias: (0..out_c).map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)).collect(),
            gamma: vec![1.0; out_c],
            beta: vec![0.0; out_c],
        }
    }

    pub fn apply(&self, input: &Tensor, groups: usize) -> Result<Tensor> {
        let y = tensor::conv2d(input, &self.weight, &self.bias)?;
        tensor::group_norm(&y, groups, &self.gamma, &self.beta, GROUP_NORM_EPS)
    }

    fn check(&self, out_c: usize, in_c: usize, k: usize) -> Result<()> {
        let want = [out_c, in_c, k, k];
        if self.weight.dims() != want {
            return Err(Error::shape("conv weight", &want, self.weight.dims()));
        }
        for v in [&self.bias, &self.gamma, &self.beta] {
            if v.len() != out_c {
                return Err(Error::shape("conv affine", &[out_c], &[v.len()]));
            }
        }
        Ok(())
    }
}

/// Fully connected layer, `weight` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl Linear {
    fn seeded(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::from_fn(&[input, output], |_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)),
            bias: (0..output).map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)).collect(),
        }
    }

    pub fn apply(&self, rows: &Tensor) -> Result<Tensor> {
        let mut y = tensor::matmul(rows, &self.weight)?;
        let n = self.bias.len();
        for row in y.data_mut().chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    fn check(&self, input: usize, output: usize) -> Result<()> {
        if self.weight.dims() != [input, output] || self.bias.len() != output {
            return Err(Error::shape("linear weight", &[input, output], self.weight.dims()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskHeadParams {
    pub projections: Vec<ConvNorm>,
    pub fuse: ConvNorm,
    pub upsample: ConvNorm,
    pub mlp: [Linear; MLP_DEPTH],
}

impl MaskHeadParams {
    /// Weights and biases uniform in `[-0.1, 0.1]`; norms start at identity.
    pub fn seeded(config: &MaskHeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.embed_dim;
        let projections = config
            .level_channels
            .iter()
            .map(|&lc| ConvNorm::seeded(&mut rng, c, lc, 1))
            .collect();
        let fuse = ConvNorm::seeded(&mut rng, c, c, 3);
        let upsample = ConvNorm::seeded(&mut rng, c, c, 3);
        let mlp = [
            Linear::seeded(&mut rng, config.hidden_dim, c),
            Linear::seeded(&mut rng, c, c),
            Linear::seeded(&mut rng, c, c),
        ];
        Ok(Self {
            projections,
            fuse,
            upsample,
            mlp,
        })
    }

    pub fn validate(&self, config: &MaskHeadConfig) -> Result<()> {
        let c = config.embed_dim;
        if self.projections.len() != config.level_channels.len() {
            return Err(Error::invalid(format!(
                "{} projections for {} levels",
                self.projections.len(),
                config.level_channels.len()
            )));
        }
        for (p, &lc) in self.projections.iter().zip(&config.level_channels) {
            p.check(c, lc, 1)?;
        }
        self.fuse.check(c, c, 3)?;
        self.upsample.check(c, c, 3)?;
        self.mlp[0].check(config.hidden_dim, c)?;
        self.mlp[1].check(c, c)?;
        self.mlp[2].check(c, c)
    }

    /// Zeroes every conv/linear bias and every norm shift.
    pub fn zero_biases(&mut self) {
        let convs = self.projections.iter_mut().chain([&mut self.fuse, &mut self.upsample]);
        for cn in convs {
            cn.bias.iter_mut().for_each(|b| *b = 0.0);
            cn.beta.iter_mut().for_each(|b| *b = 0.0);
        }
        for l in &mut self.mlp {
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// Flattens into a fixed tensor order: per level (weight, bias, gamma,
    /// beta), then the fuse and upsample stages likewise, then the MLP
    /// (weight, bias) × 3. Vectors become rank-1 tensors.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let vec_t = |v: &[f64]| Tensor::new(vec![v.len()], v.to_vec()).expect("nonempty");
        let mut out = Vec::new();
        for cn in self.projections.iter().chain([&self.fuse, &self.upsample]) {
            out.push(cn.weight.clone());
            out.push(vec_t(&cn.bias));
            out.push(vec_t(&cn.gamma));
            out.push(vec_t(&cn.beta));
        }
        for l in &self.mlp {
            out.push(l.weight.clone());
            out.push(vec_t(&l.bias));
        }
        out
    }

    pub fn from_tensors(config: &MaskHeadConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let levels = config.level_channels.len();
        let want = (levels + 2) * 4 + MLP_DEPTH * 2;
        if tensors.len() != want {
            return Err(Error::invalid(format!(
                "parameter bundle has {} tensors, expected {want}",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut conv = || ConvNorm {
            weight: it.next().unwrap(),
            bias: it.next().unwrap().into_data(),
            gamma: it.next().unwrap().into_data(),
            beta: it.next().unwrap().into_data(),
        };
        let projections = (0..levels).map(|_| conv()).collect();
        let fuse = conv();
        let upsample = conv();
        let mut lin = || Linear {
            weight: it.next().unwrap(),
            bias: it.next().unwrap().into_data(),
        };
        let mlp = [lin(), lin(), lin()];
        let params = Self {
            projections,
            fuse,
            upsample,
            mlp,
        };
        params.validate(config)?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskOutput {
    /// `C × H/4 × W/4`.
    pub pixel_features: Tensor,
    /// `L × Q × H/4 × W/4`.
    pub logits: Tensor,
}

impl MaskOutput {
    /// Logits of one decoder layer, `Q × h × w`.
    pub fn layer(&self, l: usize) -> Result<Tensor> {
        self.logits.select(l)
    }
}

pub fn build_pixel_features(
    pyramid: &FeaturePyramid,
    params: &MaskHeadParams,
    config: &MaskHeadConfig,
) -> Result<Tensor> {
    #[cfg(test)]
    PIXEL_FEATURE_CALLS.with(|c| c.set(c.get() + 1));

    config.validate()?;
    pyramid.validate(config)?;
    params.validate(config)?;
    let groups = config.norm_groups;
    let (h, w) = pyramid.input_size;
    let fine = (h / config.strides[0], w / config.strides[0]);

    let mut fused: Option<Tensor> = None;
    for (level, proj) in pyramid.levels.iter().zip(&params.projections) {
        let p = proj.apply(level, groups)?;
        let p = tensor::bilinear_resize(&p, fine.0, fine.1)?;
        fused = Some(match fused {
            None => p,
            Some(acc) => tensor::add(&acc, &p)?,
        });
    }
    let fused = fused.expect("validated pyramid has at least one level");
    let smoothed = tensor::relu(&params.fuse.apply(&fused, groups)?);
    let up = tensor::bilinear_resize(&smoothed, h / OUTPUT_STRIDE, w / OUTPUT_STRIDE)?;
    Ok(tensor::relu(&params.upsample.apply(&up, groups)?))
}

/// Runs the shared 3-layer MLP over every layer and query: `L×Q×D → L×Q×C`.
pub fn embed_queries(queries: &QuerySet, params: &MaskHeadParams) -> Result<Tensor> {
    let (l, q, d) = match *queries.hidden.dims() {
        [l, q, d] => (l, q, d),
        _ => return Err(Error::invalid("query hidden states must be L×Q×D")),
    };
    let expected = params.mlp[0].weight.dims()[0];
    if d != expected {
        return Err(Error::shape("embed_queries", &[expected], &[d]));
    }
    let rows = queries.hidden.clone().reshape(vec![l * q, d])?;
    let h1 = tensor::relu(&params.mlp[0].apply(&rows)?);
    let h2 = tensor::relu(&params.mlp[1].apply(&h1)?);
    let out = params.mlp[2].apply(&h2)?;
    let c = out.dims()[1];
    out.reshape(vec![l, q, c])
}

/// `logits[q, y, x] = scale · Σ_c emb[q, c] · feat[c, y, x]`.
pub fn mask_logits(embeddings: &Tensor, pixel_features: &Tensor, scale: f64) -> Result<Tensor> {
    let (c, h, w) = pixel_features.chw()?;
    let (q, ec) = match *embeddings.dims() {
        [q, ec] => (q, ec),
        _ => return Err(Error::shape("mask_logits", embeddings.dims(), pixel_features.dims())),
    };
    if ec != c {
        return Err(Error::shape("mask_logits", embeddings.dims(), pixel_features.dims()));
    }
    let flat = pixel_features.clone().reshape(vec![c, h * w])?;
    tensor::matmul(embeddings, &flat)?.scale(scale).reshape(vec![q, h, w])
}

/// Full mask-head pass over every decoder layer, denoising queries included.
pub fn forward(
    pyramid: &FeaturePyramid,
    queries: &QuerySet,
    params: &MaskHeadParams,
    config: &MaskHeadConfig,
) -> Result<MaskOutput> {
    let pixel_features = build_pixel_features(pyramid, params, config)?;
    let embeddings = embed_queries(queries, params)?;
    let scale = config.logit_scale();
    let layers = (0..queries.layers())
        .map(|l| mask_logits(&embeddings.select(l)?, &pixel_features, scale))
        .collect::<Result<Vec<_>>>()?;
    Ok(MaskOutput {
        pixel_features,
        logits: Tensor::stack(&layers)?,
    })
}
