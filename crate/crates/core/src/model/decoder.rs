use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::LatteConfig;
use crate::autodiff::{Graph, Parameter, Tensor, Var, GATHER_ZERO};
use crate::error::{LatteError, Result};
use crate::geometry::Curvature;
use crate::layers::{hyper, init, Module};

const CONV_T: usize = 3;
const CONV_C: usize = 5;

/// Euclidean decoder from encoder tokens back to the `T × C` signal:
/// origin log map, two-layer MLP, reshape to one image channel, a
/// `3 × 5` convolution with ReLU, then a `1 × 1` convolution.
#[derive(Clone, Debug)]
pub struct PretrainDecoder {
    pub fc1_w: Parameter,
    pub fc1_b: Parameter,
    pub fc2_w: Parameter,
    pub fc2_b: Parameter,
    pub conv1_w: Parameter,
    pub conv1_b: Parameter,
    pub conv2_w: Parameter,
    pub conv2_b: Parameter,
    pub timesteps: usize,
    pub channels: usize,
}

fn dense<R: rand::Rng>(name: &str, out: usize, inp: usize, rng: &mut R) -> (Parameter, Parameter) {
    (
        Parameter::new(
            format!("{name}.w"),
            init::uniform(rng, out, inp, init::fan_in_bound(inp)),
        ),
        Parameter::new(format!("{name}.b"), Tensor::zeros(1, out)),
    )
}

impl PretrainDecoder {
    pub fn new(config: &LatteConfig, seed: u64) -> Result<Self> {
        let patches = super::patch_layout(config.filtered_len(), config.windows)?;
        let tokens = config.windows * patches.len;
        let in_dim = tokens * config.token_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fc1_w, fc1_b) = dense("decoder.fc1", config.decoder_hidden, in_dim, &mut rng);
        let (fc2_w, fc2_b) = dense(
            "decoder.fc2",
            config.timesteps * config.channels,
            config.decoder_hidden,
            &mut rng,
        );
        let (conv1_w, conv1_b) = dense(
            "decoder.conv1",
            config.decoder_conv_channels,
            CONV_T * CONV_C,
            &mut rng,
        );
        let (conv2_w, conv2_b) = dense("decoder.conv2", 1, config.decoder_conv_channels, &mut rng);
        Ok(Self {
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            timesteps: config.timesteps,
            channels: config.channels,
        })
    }

    /// Gather table of `3 × 5` zero-padded neighbourhoods of every cell of
    /// `b` images of shape `T × C`.
    fn neighbourhoods(&self, b: usize) -> Vec<u32> {
        let (t_len, c_len) = (self.timesteps, self.channels);
        let (pt, pc) = ((CONV_T / 2) as isize, (CONV_C / 2) as isize);
        let mut idx = Vec::with_capacity(b * t_len * c_len * CONV_T * CONV_C);
        for n in 0..b {
            for t in 0..t_len {
                for c in 0..c_len {
                    for dt in 0..CONV_T as isize {
                        for dc in 0..CONV_C as isize {
                            let tt = t as isize + dt - pt;
                            let cc = c as isize + dc - pc;
                            if tt >= 0 && (tt as usize) < t_len && cc >= 0 && (cc as usize) < c_len
                            {
                                idx.push(((n * t_len + tt as usize) * c_len + cc as usize) as u32);
                            } else {
                                idx.push(GATHER_ZERO);
                            }
                        }
                    }
                }
            }
        }
        idx
    }

    /// Reconstruction `[B·T, C]` from tokens `[B·n, 1 + d]`.
    pub fn forward(&self, g: &Graph, tokens: Var, trials: usize, k: Curvature) -> Result<Var> {
        let z = hyper::log_origin(g, tokens, k);
        let (rows, d) = g.shape(z);
        let per_trial = rows / trials.max(1);
        if trials == 0 || per_trial * trials != rows || per_trial * d != self.fc1_w.value.cols() {
            return Err(LatteError::Dimension(format!(
                "decoder expects {} features per trial, got {rows}x{d} for {trials} trials",
                self.fc1_w.value.cols()
            )));
        }
        let flat = g.reshape(z, trials, per_trial * d);
        let h = g.relu(g.add(g.linear(flat, g.param(&self.fc1_w)), g.param(&self.fc1_b)));
        let y = g.add(g.linear(h, g.param(&self.fc2_w)), g.param(&self.fc2_b));
        let image = g.reshape(y, trials * self.timesteps, self.channels);
        let cells = trials * self.timesteps * self.channels;
        let patches = g.gather(
            image,
            cells,
            CONV_T * CONV_C,
            Rc::new(self.neighbourhoods(trials)),
        );
        let h = g.relu(g.add(
            g.linear(patches, g.param(&self.conv1_w)),
            g.param(&self.conv1_b),
        ));
        let out = g.add(g.linear(h, g.param(&self.conv2_w)), g.param(&self.conv2_b));
        Ok(g.reshape(out, trials * self.timesteps, self.channels))
    }
}

impl Module for PretrainDecoder {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for p in [
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
        ] {
            f(p);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for p in [
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
        ] {
            f(p);
        }
    }
}
