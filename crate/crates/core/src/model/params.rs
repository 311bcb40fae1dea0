//! Parameter containers. Every tensor is a 2-D array; biases and norm
//! gains are single-row matrices so they broadcast over sequence rows.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`
    pub w: Array2<f64>,
    /// `1 × out`
    pub b: Array2<f64>,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: uniform(rng, fan_in, fan_out, fan_in),
            b: uniform(rng, 1, fan_out, fan_in),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gain: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Norm {
    fn init(d: usize) -> Self {
        Norm {
            gain: Array2::ones((1, d)),
            bias: Array2::zeros((1, d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: Norm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub ln_f: Norm,
}

impl Encoder {
    fn init(rng: &mut ChaCha8Rng, n_layers: usize, d: usize, ffn: usize) -> Self {
        let layers = (0..n_layers)
            .map(|_| EncoderLayer {
                ln1: Norm::init(d),
                wq: Linear::init(rng, d, d),
                wk: Linear::init(rng, d, d),
                wv: Linear::init(rng, d, d),
                wo: Linear::init(rng, d, d),
                ln2: Norm::init(d),
                ff1: Linear::init(rng, d, ffn),
                ff2: Linear::init(rng, ffn, d),
            })
            .collect();
        Encoder { layers, ln_f: Norm::init(d) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// `vocab × d`
    pub embed: Array2<f64>,
    /// `L × d`
    pub p_local: Array2<f64>,
    /// `N × d`
    pub p_chunk: Array2<f64>,
    pub local: Encoder,
    pub global: Encoder,
    pub rec1: Linear,
    pub rec2: Linear,
    pub head1: Linear,
    pub head2: Linear,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let a = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..a))
}

impl Parameters {
    /// Uniform `±1/√fan_in` for weights, biases and tables; norms start at
    /// unit gain and zero bias. Tables use `d_model` as fan-in.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.d_model;
        let k = cfg.k_features;
        let embed = uniform(&mut rng, cfg.vocab, d, d);
        let p_local = uniform(&mut rng, cfg.seg_len, d, d);
        let p_chunk = uniform(&mut rng, cfg.n_segments, d, d);
        let local = Encoder::init(&mut rng, cfg.n_layers_local, d, cfg.ffn_dim);
        let global = Encoder::init(&mut rng, cfg.n_layers_global, d, cfg.ffn_dim);
        Parameters {
            embed,
            p_local,
            p_chunk,
            local,
            global,
            rec1: Linear::init(&mut rng, d, d),
            rec2: Linear::init(&mut rng, d, k),
            head1: Linear::init(&mut rng, d + k + 1, d),
            head2: Linear::init(&mut rng, d, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.named_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn named(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("embed".into(), &self.embed),
            ("p_local".into(), &self.p_local),
            ("p_chunk".into(), &self.p_chunk),
        ];
        for (prefix, enc) in [("local", &self.local), ("global", &self.global)] {
            for (i, l) in enc.layers.iter().enumerate() {
                let p = format!("{prefix}.{i}");
                out.push((format!("{p}.ln1.gain"), &l.ln1.gain));
                out.push((format!("{p}.ln1.bias"), &l.ln1.bias));
                for (n, lin) in [("wq", &l.wq), ("wk", &l.wk), ("wv", &l.wv), ("wo", &l.wo)] {
                    out.push((format!("{p}.{n}.w"), &lin.w));
                    out.push((format!("{p}.{n}.b"), &lin.b));
                }
                out.push((format!("{p}.ln2.gain"), &l.ln2.gain));
                out.push((format!("{p}.ln2.bias"), &l.ln2.bias));
                for (n, lin) in [("ff1", &l.ff1), ("ff2", &l.ff2)] {
                    out.push((format!("{p}.{n}.w"), &lin.w));
                    out.push((format!("{p}.{n}.b"), &lin.b));
                }
            }
            out.push((format!("{prefix}.ln_f.gain"), &enc.ln_f.gain));
            out.push((format!("{prefix}.ln_f.bias"), &enc.ln_f.bias));
        }
        for (n, lin) in [
            ("rec1", &self.rec1),
            ("rec2", &self.rec2),
            ("head1", &self.head1),
            ("head2", &self.head2),
        ] {
            out.push((format!("{n}.w"), &lin.w));
            out.push((format!("{n}.b"), &lin.b));
        }
        out
    }

    /// Same order and names as [`Parameters::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = vec![
            ("embed".into(), &mut self.embed),
            ("p_local".into(), &mut self.p_local),
            ("p_chunk".into(), &mut self.p_chunk),
        ];
        for (prefix, enc) in [("local", &mut self.local), ("global", &mut self.global)] {
            for (i, l) in enc.layers.iter_mut().enumerate() {
                let p = format!("{prefix}.{i}");
                out.push((format!("{p}.ln1.gain"), &mut l.ln1.gain));
                out.push((format!("{p}.ln1.bias"), &mut l.ln1.bias));
                for (n, lin) in [("wq", &mut l.wq), ("wk", &mut l.wk), ("wv", &mut l.wv), ("wo", &mut l.wo)] {
                    out.push((format!("{p}.{n}.w"), &mut lin.w));
                    out.push((format!("{p}.{n}.b"), &mut lin.b));
                }
                out.push((format!("{p}.ln2.gain"), &mut l.ln2.gain));
                out.push((format!("{p}.ln2.bias"), &mut l.ln2.bias));
                for (n, lin) in [("ff1", &mut l.ff1), ("ff2", &mut l.ff2)] {
                    out.push((format!("{p}.{n}.w"), &mut lin.w));
                    out.push((format!("{p}.{n}.b"), &mut lin.b));
                }
            }
            out.push((format!("{prefix}.ln_f.gain"), &mut enc.ln_f.gain));
            out.push((format!("{prefix}.ln_f.bias"), &mut enc.ln_f.bias));
        }
        for (n, lin) in [
            ("rec1", &mut self.rec1),
            ("rec2", &mut self.rec2),
            ("head1", &mut self.head1),
            ("head2", &mut self.head2),
        ] {
            out.push((format!("{n}.w"), &mut lin.w));
            out.push((format!("{n}.b"), &mut lin.b));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.named().iter().map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>()).sum()
    }

    pub fn scale(&mut self, a: f64) {
        for (_, t) in self.named_mut() {
            t.mapv_inplace(|x| x * a);
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Parameters) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            *a += b;
        }
    }

    /// Expected tensor shapes for a config, in [`Parameters::named`] order.
    pub fn shapes(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
        Parameters::init(&ModelConfig { seed: 0, ..cfg.clone() })
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.dim()))
            .collect()
    }
}
