use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::patch::PatchedSequence;
use crate::error::{Error, Result};
use crate::numeric::nn::{sinusoidal_table, EncoderBlock, Linear};
use crate::numeric::{Archive, Graph, ParamSet, Scalar, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Intra-patch block, patch pooling, inter-patch block.
    Hierarchical,
    /// Stacked blocks over the full point sequence.
    Flat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_in: usize,
    pub d_h: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub patch: usize,
    pub max_len: usize,
    pub mode: AttentionMode,
    pub flat_layers: usize,
}

impl EncoderConfig {
    pub fn new(d_in: usize, d_h: usize, patch: usize) -> Self {
        EncoderConfig {
            d_in,
            d_h,
            heads: 4,
            ffn_dim: 4 * d_h,
            patch,
            max_len: 200,
            mode: AttentionMode::Hierarchical,
            flat_layers: 2,
        }
    }

    pub fn with_mode(mut self, mode: AttentionMode) -> Self {
        self.mode = mode;
        self
    }

    /// Rows of the global position table.
    pub fn m_max(&self) -> usize {
        self.max_len.div_ceil(self.patch.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("encoder: {m}")));
        if self.d_in == 0 || self.d_h == 0 || self.ffn_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.heads == 0 || self.d_h % self.heads != 0 {
            return bad(&format!("d_h {} not divisible by {} heads", self.d_h, self.heads));
        }
        if self.patch == 0 || self.max_len == 0 {
            return bad("patch and max_len must be positive");
        }
        if self.mode == AttentionMode::Flat && self.flat_layers == 0 {
            return bad("flat mode needs at least one layer");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Layout {
    input: Linear,
    blocks: Vec<EncoderBlock>,
}

/// Trajectory encoder producing one `d_h` embedding per sequence.
#[derive(Clone, Debug)]
pub struct Encoder<T: Scalar = f32> {
    config: EncoderConfig,
    pub params: ParamSet<T>,
    layout: Layout,
    pe_local: Vec<T>,
    pe_global: Vec<T>,
    pe_flat: Vec<T>,
}

fn cast_vec<T: Scalar>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x as f64)).collect()
}

impl<T: Scalar> Encoder<T> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = config.d_h;
        let input = Linear::new(&mut params, &mut rng, "input", config.d_in, d);
        let names: Vec<String> = match config.mode {
            AttentionMode::Hierarchical => vec!["intra".into(), "inter".into()],
            AttentionMode::Flat => (0..config.flat_layers).map(|i| format!("flat{i}")).collect(),
        };
        let blocks = names
            .iter()
            .map(|n| EncoderBlock::new(&mut params, &mut rng, n, d, config.heads, config.ffn_dim))
            .collect();
        let m_max = config.m_max();
        Ok(Encoder {
            pe_local: cast_vec(&sinusoidal_table(config.patch, d)),
            pe_global: cast_vec(&sinusoidal_table(m_max, d)),
            pe_flat: cast_vec(&sinusoidal_table(m_max * config.patch, d)),
            layout: Layout { input, blocks },
            params,
            config,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.d_h
    }

    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::lit(x.as_f64())).collect();
        Encoder {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
            pe_local: conv(&self.pe_local),
            pe_global: conv(&self.pe_global),
            pe_flat: conv(&self.pe_flat),
        }
    }

    fn check(&self, i: usize, item: &PatchedSequence) -> Result<()> {
        let c = &self.config;
        if item.dim != c.d_in {
            return Err(Error::Domain(format!("item {i}: feature dim {} but encoder expects {}", item.dim, c.d_in)));
        }
        if item.patch != c.patch {
            return Err(Error::Domain(format!("item {i}: patch length {} but encoder uses {}", item.patch, c.patch)));
        }
        if item.is_empty() {
            return Err(Error::Domain(format!("item {i}: all positions are padding")));
        }
        Ok(())
    }

    /// Builds the forward pass for `batch` on `g`, given `vars` from
    /// binding [`Encoder::params`]. Returns the `[B, d_h]` embedding node.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], batch: &[&PatchedSequence]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        for (i, item) in batch.iter().enumerate() {
            self.check(i, item)?;
        }
        match self.config.mode {
            AttentionMode::Hierarchical => self.forward_hier(g, vars, batch),
            AttentionMode::Flat => self.forward_flat(g, vars, batch),
        }
    }

    fn forward_hier(&self, g: &mut Graph<T>, vars: &[Var], batch: &[&PatchedSequence]) -> Result<Var> {
        let c = &self.config;
        let (p, d_in, d) = (c.patch, c.d_in, c.d_h);
        let m = batch.iter().map(|s| s.num_patches()).max().unwrap_or(0);
        if m > c.m_max() {
            return Err(Error::Domain(format!("{m} patches exceed the position table ({})", c.m_max())));
        }
        let b = batch.len();
        let rows = b * m * p;
        let mut x = vec![T::zero(); rows * d_in];
        let mut intra = vec![true; rows];
        let mut inter = vec![true; b * m];
        for (i, s) in batch.iter().enumerate() {
            let base = i * m * p;
            for (k, &v) in s.values.iter().enumerate() {
                x[base * d_in + k] = T::lit(v as f64);
            }
            intra[base..base + s.intra_mask.len()].copy_from_slice(&s.intra_mask);
            inter[i * m..i * m + s.inter_mask.len()].copy_from_slice(&s.inter_mask);
        }
        let x = g.constant(x, rows, d_in)?;
        let pe_local = g.constant(self.pe_local.clone(), p, d)?;
        let pe_global = g.constant(self.pe_global[..m * d].to_vec(), m, d)?;

        let h = self.layout.input.forward(g, vars, x)?;
        let h = g.add_tiled(h, pe_local, p)?;
        let h = self.layout.blocks[0].forward(g, vars, h, &intra, b * m, p)?;
        let h = g.masked_mean(h, &intra, p)?;
        let h = g.add_tiled(h, pe_global, m)?;
        let h = self.layout.blocks[1].forward(g, vars, h, &inter, b, m)?;
        g.masked_mean(h, &inter, m)
    }

    fn forward_flat(&self, g: &mut Graph<T>, vars: &[Var], batch: &[&PatchedSequence]) -> Result<Var> {
        let c = &self.config;
        let (d_in, d) = (c.d_in, c.d_h);
        let l = batch.iter().map(|s| s.len()).max().unwrap_or(0);
        if l * d > self.pe_flat.len() {
            return Err(Error::Domain(format!("length {l} exceeds the position table")));
        }
        let b = batch.len();
        let mut x = vec![T::zero(); b * l * d_in];
        let mut pad = vec![true; b * l];
        for (i, s) in batch.iter().enumerate() {
            for (r, row) in s.valid_rows().enumerate() {
                let at = (i * l + r) * d_in;
                for (o, &v) in x[at..at + d_in].iter_mut().zip(row) {
                    *o = T::lit(v as f64);
                }
                pad[i * l + r] = false;
            }
        }
        let x = g.constant(x, b * l, d_in)?;
        let pe = g.constant(self.pe_flat[..l * d].to_vec(), l, d)?;
        let h = self.layout.input.forward(g, vars, x)?;
        let mut h = g.add_tiled(h, pe, l)?;
        for block in &self.layout.blocks {
            h = block.forward(g, vars, h, &pad, b, l)?;
        }
        g.masked_mean(h, &pad, l)
    }

    /// Embeds one batch without recording gradients.
    pub fn encode_batch(&self, batch: &[&PatchedSequence]) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g)?;
        let z = self.forward(&mut g, &vars, batch)?;
        Ok(g.value(z).to_vec())
    }

    pub fn encode(&self, item: &PatchedSequence) -> Result<Vec<T>> {
        self.encode_batch(&[item])
    }

    /// Embeds any number of sequences as `[n, d_h]`, in chunks of
    /// `batch_size` grouped by length. Row order follows `items`.
    pub fn embed_all(&self, items: &[PatchedSequence], batch_size: usize) -> Result<Vec<T>> {
        for (i, item) in items.iter().enumerate() {
            self.check(i, item)?;
        }
        let d = self.config.d_h;
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by_key(|&i| (items[i].len(), i));
        let chunks: Vec<Vec<T>> = order
            .par_chunks(batch_size.max(1))
            .map(|idx| {
                let batch: Vec<&PatchedSequence> = idx.iter().map(|&i| &items[i]).collect();
                self.encode_batch(&batch)
            })
            .collect::<Result<_>>()?;
        let mut out = vec![T::zero(); items.len() * d];
        for (idx, vals) in order.chunks(batch_size.max(1)).zip(chunks) {
            for (k, &i) in idx.iter().enumerate() {
                out[i * d..(i + 1) * d].copy_from_slice(&vals[k * d..(k + 1) * d]);
            }
        }
        Ok(out)
    }
}

impl Encoder<f32> {
    pub fn to_archive(&self) -> Archive {
        let meta = serde_json::json!({ "encoder": self.config }).to_string();
        Archive::from_params(&self.params, meta)
    }

    pub fn from_archive(archive: Archive) -> Result<Self> {
        let meta: serde_json::Value = serde_json::from_str(&archive.metadata)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let config: EncoderConfig = serde_json::from_value(meta["encoder"].clone())
            .map_err(|e| Error::Format(format!("checkpoint encoder config: {e}")))?;
        let mut enc = Encoder::new(config, 0)?;
        if archive.tensors.len() != enc.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, encoder expects {}",
                archive.tensors.len(),
                enc.params.len()
            )));
        }
        for (p, t) in enc.params.params.iter_mut().zip(archive.tensors) {
            if p.name != t.name || p.shape != t.shape {
                return Err(Error::Format(format!(
                    "checkpoint tensor {} {:?} does not match {} {:?}",
                    t.name, t.shape, p.name, p.shape
                )));
            }
            p.value = t.values;
        }
        Ok(enc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(Archive::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::make_patches;
    use crate::movsem::FeatureSequence;
    use crate::numeric::gradcheck::max_rel_error;
    use rand::Rng;

    fn random_seq(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> FeatureSequence {
        FeatureSequence {
            dim,
            values: (0..len * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn max_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
        a.iter().zip(b).map(|(&x, &y)| (x - y).abs().as_f64()).fold(0.0, f64::max)
    }

    #[test]
    fn padding_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mode in [AttentionMode::Hierarchical, AttentionMode::Flat] {
            let enc = Encoder::<f32>::new(EncoderConfig::new(5, 16, 4).with_mode(mode), 1).unwrap();
            for _ in 0..20 {
                let len = rng.random_range(1..40);
                let p = make_patches(&random_seq(&mut rng, len, 5), 4).unwrap();
                let z = enc.encode(&p).unwrap();
                let z2 = enc.encode(&p.clone().with_extra_padding(rng.random_range(1..13))).unwrap();
                assert!(max_diff(&z, &z2) < 1e-6, "{mode:?} len {len}");
            }
        }
    }

    #[test]
    fn batch_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = Encoder::<f32>::new(EncoderConfig::new(5, 16, 4), 2).unwrap();
        let a = make_patches(&random_seq(&mut rng, 10, 5), 4).unwrap();
        let b = make_patches(&random_seq(&mut rng, 33, 5), 4).unwrap();
        let c = make_patches(&random_seq(&mut rng, 3, 5), 4).unwrap();
        let ab = enc.encode_batch(&[&a, &b]).unwrap();
        let ca = enc.encode_batch(&[&c, &a]).unwrap();
        assert!(max_diff(&ab[..16], &ca[16..]) < 1e-6);
        let same = enc.encode_batch(&[&a, &a, &a]).unwrap();
        assert_eq!(&same[..16], &same[16..32]);
        assert_eq!(&same[..16], &same[32..]);
    }

    #[test]
    fn batch_of_128_matches_per_item() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = Encoder::<f32>::new(EncoderConfig::new(4, 16, 4), 3).unwrap();
        let items: Vec<_> = (0..128)
            .map(|_| make_patches(&random_seq(&mut rng, 48, 4), 4).unwrap())
            .collect();
        let all = enc.embed_all(&items, 128).unwrap();
        for (i, it) in items.iter().enumerate().step_by(9) {
            let z = enc.encode(it).unwrap();
            assert!(max_diff(&z, &all[i * 16..(i + 1) * 16]) < 1e-6);
        }
    }

    #[test]
    fn embed_all_restores_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let enc = Encoder::<f32>::new(EncoderConfig::new(3, 8, 2), 3).unwrap();
        let items: Vec<_> = (0..11)
            .map(|_| {
                let len = rng.random_range(1..30);
                make_patches(&random_seq(&mut rng, len, 3), 2).unwrap()
            })
            .collect();
        let all = enc.embed_all(&items, 4).unwrap();
        for (i, it) in items.iter().enumerate() {
            assert!(max_diff(&enc.encode(it).unwrap(), &all[i * 8..(i + 1) * 8]) < 1e-6);
        }
    }

    #[test]
    fn single_patch_equals_inter_block_on_one_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let enc = Encoder::<f64>::new(EncoderConfig::new(3, 8, 6), 4).unwrap();
        let p = make_patches(&random_seq(&mut rng, 5, 3), 6).unwrap();
        let z = enc.encode(&p).unwrap();

        let mut g = Graph::new();
        let vars = enc.params.bind_frozen(&mut g).unwrap();
        let rows: Vec<f64> = p.values.iter().map(|&v| v as f64).collect();
        let x = g.constant(rows, 6, 3).unwrap();
        let pe = g.constant(enc.pe_local.clone(), 6, 8).unwrap();
        let h = enc.layout.input.forward(&mut g, &vars, x).unwrap();
        let h = g.add_tiled(h, pe, 6).unwrap();
        let h = enc.layout.blocks[0].forward(&mut g, &vars, h, &p.intra_mask, 1, 6).unwrap();
        let h1 = g.masked_mean(h, &p.intra_mask, 6).unwrap();
        let pe0 = g.constant(enc.pe_global[..8].to_vec(), 1, 8).unwrap();
        let h1 = g.add(h1, pe0).unwrap();
        let want = enc.layout.blocks[1].forward(&mut g, &vars, h1, &[false], 1, 1).unwrap();
        assert!(max_diff(&z, g.value(want)) < 1e-12);
    }

    #[test]
    fn errors() {
        let enc = Encoder::<f32>::new(EncoderConfig::new(3, 8, 4), 0).unwrap();
        let empty = make_patches(&FeatureSequence { dim: 3, values: vec![] }, 4).unwrap();
        let good = make_patches(&FeatureSequence { dim: 3, values: vec![0.5; 6] }, 4).unwrap();
        let e = enc.encode_batch(&[&good, &empty]).unwrap_err().to_string();
        assert!(e.contains("item 1"), "{e}");
        let e = enc.embed_all(&[good.clone(), good.clone(), empty], 2).unwrap_err().to_string();
        assert!(e.contains("item 2"), "{e}");
        let wrong = make_patches(&FeatureSequence { dim: 2, values: vec![0.5; 6] }, 4).unwrap();
        assert!(enc.encode(&wrong).is_err());
        let long = make_patches(&FeatureSequence { dim: 3, values: vec![0.5; 3 * 260] }, 4).unwrap();
        assert!(enc.encode(&long).is_err());
        assert!(Encoder::<f32>::new(EncoderConfig::new(3, 10, 4), 0).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.tsna");
        let enc = Encoder::<f32>::new(EncoderConfig::new(3, 8, 4).with_mode(AttentionMode::Flat), 9).unwrap();
        enc.save(&path).unwrap();
        let back = Encoder::load(&path).unwrap();
        assert_eq!(back.config(), enc.config());
        let p = make_patches(&FeatureSequence { dim: 3, values: vec![0.25; 21] }, 4).unwrap();
        assert_eq!(enc.encode(&p).unwrap(), back.encode(&p).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = Encoder::<f64>::new(EncoderConfig::new(3, 8, 4), 12).unwrap();
        let items: Vec<_> = [12, 7]
            .iter()
            .map(|&l| make_patches(&random_seq(&mut rng, l, 3), 4).unwrap())
            .collect();
        let weights: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let inputs: Vec<_> = enc
            .params
            .params
            .iter()
            .map(|p| {
                let (r, c) = p.matrix_shape();
                (p.value.clone(), r, c)
            })
            .collect();
        let build = |g: &mut Graph<f64>, vars: &[Var]| {
            let refs: Vec<&PatchedSequence> = items.iter().collect();
            let z = enc.forward(g, vars, &refs).unwrap();
            let w = g.constant(weights.clone(), 2, 8).unwrap();
            let s = g.row_dot(z, w).unwrap();
            g.sum(s)
        };
        let err = max_rel_error(&inputs, 1e-5, &build);
        assert!(err < 1e-4, "max relative error {err}");
    }
}
