//! Protein features: embedding files, the hashed 3-mer stub embedder, mean
//! pooling and the feature-axis 1-D CNN.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{kaiming_uniform, Fwd};
use crate::tensor::Tensor;

/// Residue-level (`L × d`) or pre-pooled (`1 × d`) protein features.
#[derive(Debug, Clone, PartialEq)]
pub struct ProteinEmbedding {
    pub id: String,
    pub features: Tensor,
}

impl ProteinEmbedding {
    pub fn pooled(id: impl Into<String>, v: Vec<f64>) -> Result<Self> {
        let d = v.len();
        Ok(Self {
            id: id.into(),
            features: Tensor::new(vec![1, d], v)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Column mean of an `L × d` matrix.
pub fn pool(x: &Tensor) -> Result<Vec<f64>> {
    if x.shape().len() != 2 {
        return Err(Error::Data(format!("expected residue matrix, got shape {:?}", x.shape())));
    }
    let (l, d) = (x.rows(), x.cols());
    let mut out = vec![0.0; d];
    for r in 0..l {
        for (o, v) in out.iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= l as f64;
    }
    Ok(out)
}

const RESIDUES: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";
const ALPHABET: u64 = 21;

fn residue_code(c: u8) -> u64 {
    RESIDUES.iter().position(|&r| r == c).unwrap_or(20) as u64
}

/// splitmix64 finalizer; pinned so embeddings are identical on every
/// platform.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self { dim: 64, seed: 0 }
    }
}

impl StubEmbedder {
    /// Integer bucket counts before normalization.
    pub fn counts(&self, sequence: &str) -> Result<Vec<u64>> {
        if self.dim == 0 {
            return Err(Error::Config("stub embedding width must be positive".into()));
        }
        let codes: Vec<u64> = sequence.bytes().map(residue_code).collect();
        if codes.is_empty() {
            return Err(Error::Data("empty protein sequence".into()));
        }
        let mut counts = vec![0u64; self.dim];
        let salt = mix64(self.seed);
        let mut bump = |kmer: u64| {
            let b = mix64(kmer ^ salt) % self.dim as u64;
            counts[b as usize] += 1;
        };
        if codes.len() < 3 {
            // pad short sequences with the catch-all residue
            let mut k = 0;
            for i in 0..3 {
                k = k * ALPHABET + codes.get(i).copied().unwrap_or(20);
            }
            bump(k);
        } else {
            for w in codes.windows(3) {
                bump((w[0] * ALPHABET + w[1]) * ALPHABET + w[2]);
            }
        }
        Ok(counts)
    }

    pub fn embed_vector(&self, sequence: &str) -> Result<Vec<f64>> {
        let counts = self.counts(sequence)?;
        let norm = counts.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
        Ok(counts.iter().map(|&c| c as f64 / norm).collect())
    }

    pub fn embed(&self, sequence: &str) -> Result<ProteinEmbedding> {
        ProteinEmbedding::pooled(sequence, self.embed_vector(sequence)?)
    }
}

pub fn stub_embed(sequence: &str, cfg: &StubEmbedder) -> Result<ProteinEmbedding> {
    cfg.embed(sequence)
}

/// Reads `#dim=d` followed by `id<TAB>f1<TAB>...` rows.
pub fn load_embeddings(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text)
}

pub fn parse_embeddings(text: &str) -> Result<HashMap<String, Vec<f64>>> {
    let mut map = HashMap::new();
    let mut dim: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() {
            continue;
        }
        if let Some(h) = row.strip_prefix("#dim=") {
            let d: usize = h.trim().parse().map_err(|_| Error::Ingest {
                line,
                reason: format!("bad dimension header {row:?}"),
            })?;
            if d == 0 || dim.is_some() {
                return Err(Error::Ingest {
                    line,
                    reason: "dimension header must appear once with d > 0".into(),
                });
            }
            dim = Some(d);
            continue;
        }
        if row.starts_with('#') {
            continue;
        }
        let d = dim.ok_or_else(|| Error::Ingest {
            line,
            reason: "data row before the #dim= header".into(),
        })?;
        let mut fields = row.split('\t');
        let id = fields.next().unwrap_or_default().trim();
        if id.is_empty() {
            return Err(Error::Ingest {
                line,
                reason: "missing protein id".into(),
            });
        }
        let values = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Ingest {
                line,
                reason: format!("bad value: {e}"),
            })?;
        if values.len() != d {
            return Err(Error::Ingest {
                line,
                reason: format!("id {id:?} has width {}, header says {d}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Ingest {
                line,
                reason: format!("id {id:?} has a non-finite value"),
            });
        }
        if map.insert(id.to_string(), values).is_some() {
            return Err(Error::Ingest {
                line,
                reason: format!("duplicate id {id:?}"),
            });
        }
    }
    Ok(map)
}

/// Writes the format read by [`load_embeddings`]; `{:?}` on f64 round-trips
/// exactly.
pub fn format_embeddings<'a>(dim: usize, rows: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> String {
    let mut out = format!("#dim={dim}\n");
    for (id, v) in rows {
        out.push_str(id);
        for x in v {
            out.push('\t');
            out.push_str(&format!("{x:?}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
}

/// Scale of the random part of the conv initialization.
pub const INIT_NOISE: f64 = 0.1;

/// Three same-padded convolutions along the feature axis, channels
/// 1 → c → c → 1, each followed by ReLU and dropout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProteinEncoder {
    pub convs: Vec<Conv>,
    pub dim: usize,
    pub channels: usize,
    pub kernel_size: usize,
}

impl ProteinEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        channels: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || channels == 0 || kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "protein encoder needs positive width and channels and an odd kernel, got d={dim} c={channels} k={kernel_size}"
            )));
        }
        let plan = [(1, channels), (channels, channels), (channels, 1)];
        let convs = plan
            .iter()
            .enumerate()
            .map(|(l, &(cin, cout))| {
                let fan_in = cin * kernel_size;
                // Near-identity start: every output channel averages the input
                // channels through the centre tap, plus small Kaiming noise.
                // A purely random single-channel last layer often starts
                // negative everywhere on non-negative embeddings and its ReLU
                // never recovers.
                let mut k = kaiming_uniform(&[cout, cin, kernel_size], fan_in, rng)
                    .map(|v| v * INIT_NOISE);
                let centre = kernel_size / 2;
                for o in 0..cout {
                    for i in 0..cin {
                        k.data_mut()[(o * cin + i) * kernel_size + centre] += 1.0 / cin as f64;
                    }
                }
                Conv {
                    kernel: store.add(format!("protein.{l}.kernel"), k, true),
                    bias: store.add(format!("protein.{l}.bias"), Tensor::zeros(&[cout]), false),
                }
            })
            .collect();
        Ok(Self {
            convs,
            dim,
            channels,
            kernel_size,
        })
    }

    /// `[B × d]` pooled embeddings to `[B × d]` protein vectors.
    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let shape = f.tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::Config(format!(
                "protein encoder expects [batch, {}], got {shape:?}",
                self.dim
            )));
        }
        let b = shape[0];
        let mut h = f.tape.reshape(x, &[b, 1, self.dim])?;
        for c in &self.convs {
            let (k, bias) = (f.p(c.kernel), f.p(c.bias));
            h = f.tape.conv1d(h, k)?;
            h = f.tape.add_channel_bias(h, bias)?;
            h = f.tape.relu(h);
            h = f.dropout(h)?;
        }
        f.tape.reshape(h, &[b, self.dim])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::nn::Dropout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pool_examples() {
        let one = Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(pool(&one).unwrap(), vec![1.0, -2.0, 3.0]);
        let sym = Tensor::from_rows(&[vec![1.5, -2.0], vec![-1.5, 2.0]]).unwrap();
        assert_eq!(pool(&sym).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn stub_is_deterministic_and_normalized() {
        let cfg = StubEmbedder::default();
        let a = cfg.embed_vector("MKTAYIAKQRQISFVKSHFSRQ").unwrap();
        assert_eq!(a, cfg.embed_vector("MKTAYIAKQRQISFVKSHFSRQ").unwrap());
        let n: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert_ne!(cfg.embed_vector("MKT").unwrap(), cfg.embed_vector("MKV").unwrap());
        assert!(cfg.embed_vector("").is_err());
        // short sequences still embed
        assert_eq!(cfg.counts("MK").unwrap().iter().sum::<u64>(), 1);
    }

    #[test]
    fn stub_unknown_residues_share_a_bucket() {
        let cfg = StubEmbedder { dim: 32, seed: 9 };
        assert_eq!(cfg.counts("MKB").unwrap(), cfg.counts("MKZ").unwrap());
        assert_ne!(
            StubEmbedder { dim: 32, seed: 1 }.counts("ACDEFGHIK").unwrap(),
            cfg.counts("ACDEFGHIK").unwrap()
        );
    }

    #[test]
    fn embedding_file_parsing() {
        assert!(parse_embeddings("").unwrap().is_empty());
        let m = parse_embeddings("#dim=2\nP1\t0.5\t-1\nP2\t1e-3\t2\n").unwrap();
        assert_eq!(m["P1"], vec![0.5, -1.0]);
        assert!(matches!(
            parse_embeddings("#dim=2\nP1\t0.5\n"),
            Err(Error::Ingest { line: 2, .. })
        ));
        assert!(matches!(
            parse_embeddings("#dim=1\nP1\t1\nP1\t2\n"),
            Err(Error::Ingest { line: 3, .. })
        ));
        assert!(matches!(parse_embeddings("P1\t1\n"), Err(Error::Ingest { line: 1, .. })));
        assert!(matches!(
            parse_embeddings("#dim=1\nP1\tabc\n"),
            Err(Error::Ingest { line: 2, .. })
        ));
    }

    #[test]
    fn mixed_widths_are_rejected() {
        let a = vec![0.1; 64];
        let b = vec![0.1; 63];
        let mut text = format_embeddings(64, [("A", &a[..])]);
        text.push_str(&format_embeddings(64, [("B", &b[..])]).lines().nth(1).unwrap().to_string());
        assert!(matches!(parse_embeddings(&text), Err(Error::Ingest { line: 3, .. })));
    }

    fn identity_encoder(store: &mut ParamStore, d: usize, c: usize) -> ProteinEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = ProteinEncoder::new(store, d, c, 3, &mut rng).unwrap();
        // pass-through: channel 0 copies its input via the centre tap
        for conv in &enc.convs {
            let shape = store.value(conv.kernel).shape().to_vec();
            let mut k = Tensor::zeros(&shape);
            k.data_mut()[1] = 1.0; // [0, 0, 1]
            store.set_value(conv.kernel, k).unwrap();
        }
        enc
    }

    #[test]
    fn identity_kernels_pass_through() {
        let mut store = ParamStore::new();
        let enc = identity_encoder(&mut store, 6, 4);
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = Fwd::new(&mut tape, &store, Dropout::OFF, &mut rng);
        let input = vec![0.0, 1.0, 2.5, 0.25, 3.0, 0.5, 4.0, 0.0, 1.0, 1.0, 2.0, 7.0];
        let x = f.tape.input(Tensor::new(vec![2, 6], input.clone()).unwrap());
        let y = enc.forward(&mut f, x).unwrap();
        assert_eq!(f.tape.value(y).data(), &input[..]);
        assert_eq!(f.tape.value(y).shape(), &[2, 6]);
    }

    #[test]
    fn zero_input_gives_bias_determined_constant() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = ProteinEncoder::new(&mut store, 5, 2, 3, &mut rng).unwrap();
        for c in &enc.convs {
            let n = store.value(c.bias).len();
            store.set_value(c.bias, Tensor::vector(vec![0.7; n])).unwrap();
            let shape = store.value(c.kernel).shape().to_vec();
            store.set_value(c.kernel, Tensor::zeros(&shape)).unwrap();
        }
        let mut tape = Tape::new();
        let mut f = Fwd::new(&mut tape, &store, Dropout::OFF, &mut rng);
        let x = f.tape.input(Tensor::zeros(&[1, 5]));
        let y = enc.forward(&mut f, x).unwrap();
        assert_eq!(f.tape.value(y).data(), &[0.7; 5]);
    }

    #[test]
    fn wrong_width_is_config_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = ProteinEncoder::new(&mut store, 5, 2, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut f = Fwd::new(&mut tape, &store, Dropout::OFF, &mut rng);
        let x = f.tape.input(Tensor::zeros(&[1, 4]));
        assert!(matches!(enc.forward(&mut f, x), Err(Error::Config(_))));
    }
}
