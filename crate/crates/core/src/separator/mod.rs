//! Speaker-conditioned time-domain masking separator.
//!
//! Encoder `e = ReLU(x U)`, AdaptNet `d = ReLU([e, z_1..z_N] W)`, a
//! non-causal dilated TCN estimating `N` sigmoid masks over the directional
//! features, and a linear decoder `s_j = (d * m_j) V` followed by raw
//! overlap-add. The unconditioned variant (USS) skips AdaptNet and masks the
//! encoder features directly.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{num_frames, segment_samples, ChunkPlan, SegmentMatrix, Waveform};
use crate::autodiff::{Graph, ParamStore, Real, Tensor, Var};
use crate::discovery::{discover, Discovery, DiscoveryConfig, SpeakerProfiles};
use crate::embedder::EmbedderConfig;
use crate::error::{Error, Result};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcnConfig {
    pub blocks_per_repeat: usize,
    pub repeats: usize,
    pub kernel_size: usize,
    pub hidden_channels: usize,
    pub dilation_base: usize,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self {
            blocks_per_repeat: 4,
            repeats: 2,
            kernel_size: 3,
            hidden_channels: 32,
            dilation_base: 2,
        }
    }
}

impl TcnConfig {
    /// Frames of input visible to one output frame.
    pub fn receptive_field(&self) -> usize {
        let per_repeat: usize = (0..self.blocks_per_repeat)
            .map(|b| (self.kernel_size - 1) * self.dilation_base.pow(b as u32))
            .sum();
        1 + per_repeat * self.repeats
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparatorConfig {
    /// Encoder frame length L in samples.
    pub frame_len: usize,
    /// Frame hop in samples.
    pub hop: usize,
    pub encoder_dim: usize,
    pub adapt_dim: usize,
    pub embed_dim: usize,
    pub num_speakers: usize,
    pub tcn: TcnConfig,
    /// DSS when true, USS otherwise.
    pub conditioned: bool,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            frame_len: 16,
            hop: 8,
            encoder_dim: 64,
            adapt_dim: 64,
            embed_dim: 16,
            num_speakers: 2,
            tcn: TcnConfig::default(),
            conditioned: true,
        }
    }
}

impl SeparatorConfig {
    pub fn uss() -> Self {
        Self {
            conditioned: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.frame_len,
            self.hop,
            self.encoder_dim,
            self.adapt_dim,
            self.embed_dim,
            self.num_speakers,
            self.tcn.blocks_per_repeat,
            self.tcn.repeats,
            self.tcn.hidden_channels,
            self.tcn.dilation_base,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("separator dimensions must all be at least 1"));
        }
        if self.hop > self.frame_len {
            return Err(Error::invalid("hop may not exceed the frame length"));
        }
        if self.tcn.kernel_size % 2 == 0 {
            return Err(Error::invalid("TCN kernel size must be odd"));
        }
        Ok(())
    }

    /// AdaptNet input width `A = E + N*K`.
    pub fn adapt_input_dim(&self) -> usize {
        self.encoder_dim + self.num_speakers * self.embed_dim
    }

    /// Width of the features the masks act on (D for DSS, E for USS).
    pub fn feature_dim(&self) -> usize {
        if self.conditioned {
            self.adapt_dim
        } else {
            self.encoder_dim
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.tcn.blocks_per_repeat * self.tcn.repeats
    }

    fn dilation(&self, block: usize) -> usize {
        self.tcn
            .dilation_base
            .pow((block % self.tcn.blocks_per_repeat) as u32)
    }

    /// Parameter names and shapes in store order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (l, e, c, h) = (
            self.frame_len,
            self.encoder_dim,
            self.feature_dim(),
            self.tcn.hidden_channels,
        );
        let mut out = vec![("encoder.U".to_string(), vec![l, e])];
        if self.conditioned {
            out.push(("adapt.W".into(), vec![self.adapt_input_dim(), self.adapt_dim]));
        }
        for b in 0..self.num_blocks() {
            let p = |s: &str| format!("tcn.{b}.{s}");
            out.push((p("in.W"), vec![c, h]));
            out.push((p("in.b"), vec![h]));
            out.push((p("norm1.g"), vec![h]));
            out.push((p("norm1.b"), vec![h]));
            out.push((p("dconv.W"), vec![self.tcn.kernel_size, h, h]));
            out.push((p("dconv.b"), vec![h]));
            out.push((p("norm2.g"), vec![h]));
            out.push((p("norm2.b"), vec![h]));
            out.push((p("out.W"), vec![h, c]));
            out.push((p("out.b"), vec![c]));
        }
        out.push(("mask.W".into(), vec![c, self.num_speakers * c]));
        out.push(("mask.b".into(), vec![self.num_speakers * c]));
        out.push(("decoder.V".into(), vec![c, l]));
        out
    }
}

/// Store indices of one residual block's parameters.
#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    in_w: usize,
    in_b: usize,
    n1_g: usize,
    n1_b: usize,
    dconv_w: usize,
    dconv_b: usize,
    n2_g: usize,
    n2_b: usize,
    out_w: usize,
    out_b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: usize,
    adapt: Option<usize>,
    blocks: Vec<BlockIdx>,
    mask_w: usize,
    mask_b: usize,
    decoder: usize,
}

impl Layout {
    fn new(config: &SeparatorConfig) -> Self {
        let mut i = 0;
        let mut next = || {
            i += 1;
            i - 1
        };
        let encoder = next();
        let adapt = config.conditioned.then(&mut next);
        let blocks = (0..config.num_blocks())
            .map(|_| BlockIdx {
                in_w: next(),
                in_b: next(),
                n1_g: next(),
                n1_b: next(),
                dconv_w: next(),
                dconv_b: next(),
                n2_g: next(),
                n2_b: next(),
                out_w: next(),
                out_b: next(),
            })
            .collect();
        Self {
            encoder,
            adapt,
            blocks,
            mask_w: next(),
            mask_b: next(),
            decoder: next(),
        }
    }
}

/// A separator: configuration plus its named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatorModel {
    pub config: SeparatorConfig,
    pub params: ParamStore,
}

/// Row-major matrix of `rows x cols` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix from {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `N` masks of `T x C`, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub masks: Vec<Matrix>,
}

impl SeparatorModel {
    /// Freshly initialized model; deterministic in `seed`.
    pub fn new(config: SeparatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in config.param_layout() {
            let n: usize = shape.iter().product();
            let values: Vec<f32> = if name.ends_with(".g") {
                vec![1.0; n]
            } else if name.ends_with(".b") {
                vec![0.0; n]
            } else {
                // fan-in scaled normal init
                let fan_in: usize = shape[..shape.len() - 1].iter().product();
                let gain = if name == "decoder.V" || name == "mask.W" { 1.0 } else { 2.0 };
                let std = (gain / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).unwrap();
                (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
            };
            params.push(name, Tensor::new(shape, values)?.with_grad());
        }
        Ok(Self { config, params })
    }

    pub fn from_parts(config: SeparatorConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout();
        if layout.len() != params.len() {
            return Err(Error::shape(format!(
                "config expects {} tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for (i, (name, shape)) in layout.iter().enumerate() {
            let t = params.get(i);
            if params.name(i) != name || t.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "tensor {i}: expected {name} {shape:?}, found {} {:?}",
                    params.name(i),
                    t.shape()
                )));
            }
            if t.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("tensor {name} holds non-finite values")));
            }
        }
        Ok(Self { config, params })
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    fn check_segments(&self, segments: &SegmentMatrix) -> Result<()> {
        if segments.frame_len() != self.config.frame_len {
            return Err(Error::shape(format!(
                "segments of {} samples for a model with L={}",
                segments.frame_len(),
                self.config.frame_len
            )));
        }
        Ok(())
    }

    fn profile_row(&self, profiles: &SpeakerProfiles) -> Result<Vec<f32>> {
        let c = &self.config;
        if profiles.len() != c.num_speakers || profiles.dim() != c.embed_dim {
            return Err(Error::shape(format!(
                "model expects {} profiles of dim {}, got {} of dim {}",
                c.num_speakers,
                c.embed_dim,
                profiles.len(),
                profiles.dim()
            )));
        }
        Ok(profiles.normalized().as_flat().to_vec())
    }

    /// `e_k = ReLU(x_k U)`.
    pub fn encode(&self, segments: &SegmentMatrix) -> Result<Matrix> {
        self.check_segments(segments)?;
        let mut g = Graph::<f32>::inference();
        let p = g.bind(&self.params);
        let x = g.input_f32(vec![segments.frames(), segments.frame_len()], segments.data())?;
        let e = encode_graph(&mut g, &p, &self.layout(), x)?;
        to_matrix(&g, e)
    }

    /// `d_k = ReLU([e_k, z_1, .., z_N] W)`; profiles are unit-normalized first.
    pub fn adapt(&self, features: &Matrix, profiles: &SpeakerProfiles) -> Result<Matrix> {
        if !self.config.conditioned {
            return Err(Error::invalid("the unconditioned model has no AdaptNet"));
        }
        let z = self.profile_row(profiles)?;
        let mut g = Graph::<f32>::inference();
        let p = g.bind(&self.params);
        let e = g.input_f32(vec![features.rows, features.cols], &features.data)?;
        let z = g.input_f32(vec![z.len()], &z)?;
        let d = adapt_graph(&mut g, &p, &self.layout(), e, z)?;
        to_matrix(&g, d)
    }

    pub fn estimate_masks(&self, features: &Matrix) -> Result<MaskSet> {
        if features.cols != self.config.feature_dim() {
            return Err(Error::shape(format!(
                "features of width {} for a mask estimator of width {}",
                features.cols,
                self.config.feature_dim()
            )));
        }
        let mut g = Graph::<f32>::inference();
        let p = g.bind(&self.params);
        let d = g.input_f32(vec![features.rows, features.cols], &features.data)?;
        let masks = masks_graph(&mut g, &p, &self.config, &self.layout(), d)?;
        Ok(MaskSet {
            masks: masks.into_iter().map(|m| to_matrix(&g, m)).collect::<Result<_>>()?,
        })
    }

    /// Masked features decoded to `N` segment matrices of `T x L`.
    pub fn apply_and_decode(&self, features: &Matrix, masks: &MaskSet) -> Result<Vec<Matrix>> {
        if masks.masks.len() != self.config.num_speakers
            || masks
                .masks
                .iter()
                .any(|m| m.rows != features.rows || m.cols != features.cols)
        {
            return Err(Error::shape("mask set does not match the features"));
        }
        let mut g = Graph::<f32>::inference();
        let p = g.bind(&self.params);
        let d = g.input_f32(vec![features.rows, features.cols], &features.data)?;
        let ms = masks
            .masks
            .iter()
            .map(|m| g.input_f32(vec![m.rows, m.cols], &m.data))
            .collect::<Result<Vec<_>>>()?;
        let outs = decode_graph(&mut g, &p, &self.layout(), d, &ms)?;
        outs.into_iter().map(|o| to_matrix(&g, o)).collect()
    }

    /// Separate one chunk into `N` waveforms of the chunk's length.
    pub fn forward_chunk(&self, chunk: &Waveform, profiles: Option<&SpeakerProfiles>) -> Result<Vec<Waveform>> {
        let mut g = Graph::<f32>::inference();
        let p = g.bind(&self.params);
        let outs = self.forward_graph(&mut g, &p, chunk.samples(), profiles)?;
        outs.into_iter()
            .map(|o| Waveform::new(g.value(o).to_vec(), chunk.sample_rate()))
            .collect()
    }

    /// Record the full forward pass for `samples` on `g`, with `params` the
    /// store tensors bound in order. Returns one signal variable per output
    /// channel, each exactly `samples.len()` long.
    pub fn forward_graph<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        samples: &[f32],
        profiles: Option<&SpeakerProfiles>,
    ) -> Result<Vec<Var>> {
        let c = &self.config;
        let z = if c.conditioned {
            let profiles = profiles
                .ok_or_else(|| Error::invalid("the conditioned model needs speaker profiles"))?;
            Some(self.profile_row(profiles)?)
        } else {
            None
        };
        let seg = segment_samples(samples, c.frame_len, c.hop)?;
        let layout = self.layout();
        let x = g.input_f32(vec![seg.frames(), c.frame_len], seg.data())?;
        let e = encode_graph(g, params, &layout, x)?;
        let d = match z {
            Some(z) => {
                let zv = g.input_f32(vec![z.len()], &z)?;
                adapt_graph(g, params, &layout, e, zv)?
            }
            None => e,
        };
        let masks = masks_graph(g, params, c, &layout, d)?;
        let segs = decode_graph(g, params, &layout, d, &masks)?;
        segs.into_iter()
            .map(|s| g.overlap_add(s, c.hop, samples.len()))
            .collect()
    }

    /// Frames the encoder produces for a chunk of `samples` samples.
    pub fn frames_for(&self, samples: usize) -> usize {
        num_frames(samples, self.config.frame_len, self.config.hop)
    }

    /// Separate a recording chunk by chunk with fixed profiles; channel `j`
    /// of every chunk follows profile `j`.
    pub fn separate_with_profiles(
        &self,
        recording: &Waveform,
        profiles: Option<&SpeakerProfiles>,
        plan: &ChunkPlan,
    ) -> Result<Vec<Waveform>> {
        let total = recording.len();
        if plan.total_samples != total {
            return Err(Error::invalid("chunk plan does not match the recording length"));
        }
        let mut out = vec![vec![0.0f32; total]; self.config.num_speakers];
        let mut written = 0usize;
        for &(start, end) in &plan.boundaries {
            let chunk = recording.slice(start, end);
            let sep = self.forward_chunk(&chunk, profiles)?;
            // with overlapping plans each chunk contributes only its new part
            let from = written.max(start);
            for (ch, w) in out.iter_mut().zip(&sep) {
                ch[from..end].copy_from_slice(&w.samples()[from - start..]);
            }
            written = end;
        }
        out.into_iter()
            .map(|s| Waveform::new(s, recording.sample_rate()))
            .collect()
    }

    /// Discover profiles once for the whole recording, then separate every
    /// chunk with them.
    pub fn separate_recording(
        &self,
        recording: &Waveform,
        embedder: &EmbedderConfig,
        discovery: &DiscoveryConfig,
        plan: &ChunkPlan,
        seed: u64,
    ) -> Result<(Vec<Waveform>, Discovery)> {
        if !self.config.conditioned {
            return Err(Error::invalid("recording-level separation with profiles needs a DSS model"));
        }
        let found = discover(recording, embedder, self.config.num_speakers, discovery, seed)?;
        let out = self.separate_with_profiles(recording, Some(&found.profiles), plan)?;
        Ok((out, found))
    }
}

fn to_matrix<T: Real>(g: &Graph<T>, v: Var) -> Result<Matrix> {
    let (r, c) = match g.shape(v) {
        [r, c] => (*r, *c),
        s => return Err(Error::shape(format!("expected a matrix, got {s:?}"))),
    };
    Matrix::new(r, c, g.value(v).iter().map(|x| x.as_f64() as f32).collect())
}

fn encode_graph<T: Real>(g: &mut Graph<T>, p: &[Var], l: &Layout, x: Var) -> Result<Var> {
    let h = g.matmul(x, p[l.encoder])?;
    Ok(g.relu(h))
}

fn adapt_graph<T: Real>(g: &mut Graph<T>, p: &[Var], l: &Layout, e: Var, z: Var) -> Result<Var> {
    let w = l
        .adapt
        .ok_or_else(|| Error::invalid("the unconditioned model has no AdaptNet"))?;
    let a = g.concat_row(e, z)?;
    let h = g.matmul(a, p[w])?;
    Ok(g.relu(h))
}

fn masks_graph<T: Real>(
    g: &mut Graph<T>,
    p: &[Var],
    c: &SeparatorConfig,
    l: &Layout,
    d: Var,
) -> Result<Vec<Var>> {
    let mut x = d;
    for (b, bi) in l.blocks.iter().enumerate() {
        let h = g.matmul(x, p[bi.in_w])?;
        let h = g.add_bias(h, p[bi.in_b])?;
        let h = g.relu(h);
        let h = g.layer_norm(h, p[bi.n1_g], p[bi.n1_b])?;
        let h = g.conv1d(h, p[bi.dconv_w], c.dilation(b))?;
        let h = g.add_bias(h, p[bi.dconv_b])?;
        let h = g.relu(h);
        let h = g.layer_norm(h, p[bi.n2_g], p[bi.n2_b])?;
        let o = g.matmul(h, p[bi.out_w])?;
        let o = g.add_bias(o, p[bi.out_b])?;
        x = g.add(x, o)?;
    }
    let m = g.matmul(x, p[l.mask_w])?;
    let m = g.add_bias(m, p[l.mask_b])?;
    let m = g.sigmoid(m);
    let width = c.feature_dim();
    (0..c.num_speakers)
        .map(|j| g.slice_cols(m, j * width, width))
        .collect()
}

fn decode_graph<T: Real>(g: &mut Graph<T>, p: &[Var], l: &Layout, d: Var, masks: &[Var]) -> Result<Vec<Var>> {
    masks
        .iter()
        .map(|&m| {
            let t = g.mul(d, m)?;
            g.matmul(t, p[l.decoder])
        })
        .collect()
}
