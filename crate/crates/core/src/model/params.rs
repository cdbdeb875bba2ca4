use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::numerics::Tensor;

/// Layer widths. `q` is fixed by the embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub q: usize,
    /// Query/key width of the visit attention.
    pub d: usize,
    /// GRU hidden size per direction.
    pub hidden: usize,
    pub cr_branch: usize,
    pub cr_fusion: usize,
}

impl ModelDims {
    pub fn with_q(q: usize) -> Self {
        Self {
            q,
            d: 64,
            hidden: 128,
            cr_branch: 64,
            cr_fusion: 32,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if [self.q, self.d, self.hidden, self.cr_branch, self.cr_fusion].contains(&0) {
            return Err(ModelError::Config(format!("all model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        format!(
            "q={} d={} hidden={} cr_branch={} cr_fusion={}",
            self.q, self.d, self.hidden, self.cr_branch, self.cr_fusion
        )
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

macro_rules! param_ids {
    ($($id:ident => $name:literal),* $(,)?) => {
        /// Index of each trainable tensor inside [`ModelParams`].
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum ParamId { $($id),* }

        impl ParamId {
            pub const ALL: &'static [ParamId] = &[$(ParamId::$id),*];

            pub fn name(self) -> &'static str {
                match self { $(ParamId::$id => $name),* }
            }

            pub fn from_name(name: &str) -> Option<Self> {
                match name { $($name => Some(ParamId::$id),)* _ => None }
            }
        }
    };
}

param_ids! {
    CrFeatureW => "cr.feature.w",
    CrFeatureB => "cr.feature.b",
    CrSurrogateW => "cr.surrogate.w",
    CrSurrogateB => "cr.surrogate.b",
    CrFusionW => "cr.fusion.w",
    CrFusionB => "cr.fusion.b",
    CrOutW => "cr.out.w",
    CrOutB => "cr.out.b",
    VanQuery => "van.query",
    VanKey => "van.key",
    GruFwdWih => "gru.fwd.w_ih",
    GruFwdWhh => "gru.fwd.w_hh",
    GruFwdBih => "gru.fwd.b_ih",
    GruFwdBhh => "gru.fwd.b_hh",
    GruBwdWih => "gru.bwd.w_ih",
    GruBwdWhh => "gru.bwd.w_hh",
    GruBwdBih => "gru.bwd.b_ih",
    GruBwdBhh => "gru.bwd.b_hh",
    ProjW => "proj.w",
    ProjB => "proj.b",
    HeadY0 => "head.y0",
    HeadY => "head.y",
    HeadS0 => "head.s0",
    HeadS => "head.s",
}

impl ParamId {
    /// Parameters of the gold-label head, frozen during pre-training.
    pub fn is_gold_head(self) -> bool {
        matches!(self, ParamId::HeadY0 | ParamId::HeadY)
    }

    /// `(shape, fan_in)` for the given dimensions.
    pub fn layout(self, d: &ModelDims) -> (Vec<usize>, usize) {
        use ParamId::*;
        let h3 = 3 * d.hidden;
        match self {
            CrFeatureW | CrSurrogateW => (vec![d.cr_branch, d.q], d.q),
            CrFeatureB | CrSurrogateB => (vec![d.cr_branch], d.q),
            CrFusionW => (vec![d.cr_fusion, 2 * d.cr_branch], 2 * d.cr_branch),
            CrFusionB => (vec![d.cr_fusion], 2 * d.cr_branch),
            CrOutW => (vec![d.cr_fusion], d.cr_fusion),
            CrOutB => (vec![], d.cr_fusion),
            VanQuery | VanKey => (vec![d.d, d.q], d.q),
            GruFwdWih | GruBwdWih => (vec![h3, d.q], d.hidden),
            GruFwdWhh | GruBwdWhh => (vec![h3, d.hidden], d.hidden),
            GruFwdBih | GruBwdBih | GruFwdBhh | GruBwdBhh => (vec![h3], d.hidden),
            ProjW => (vec![d.q, 2 * d.hidden], 2 * d.hidden),
            ProjB => (vec![d.q], 2 * d.hidden),
            HeadY0 | HeadS0 => (vec![], d.q),
            HeadY | HeadS => (vec![d.q], d.q),
        }
    }
}

/// All trainable tensors, stored in [`ParamId::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self, ModelError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = ParamId::ALL
            .iter()
            .map(|id| {
                let (shape, fan_in) = id.layout(&dims);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect())
                    .expect("layout shape")
            })
            .collect();
        Ok(Self { dims, tensors })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self, ModelError> {
        dims.validate()?;
        let tensors = ParamId::ALL
            .iter()
            .map(|id| Tensor::zeros(&id.layout(&dims).0))
            .collect();
        Ok(Self { dims, tensors })
    }

    pub fn from_tensors(dims: ModelDims, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        dims.validate()?;
        if tensors.len() != ParamId::ALL.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, got {}",
                ParamId::ALL.len(),
                tensors.len()
            )));
        }
        for (id, t) in ParamId::ALL.iter().zip(&tensors) {
            let shape = id.layout(&dims).0;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Shape {
                    param: id.name(),
                    expected: shape,
                    found: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(ModelError::Config(format!("{} has non-finite values", id.name())));
            }
        }
        Ok(Self { dims, tensors })
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id as usize]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id as usize]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_values(), "flat parameter length");
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// SHA-256 over the bit patterns of every value, in storage order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for &id in ParamId::ALL {
            assert_eq!(ParamId::from_name(id.name()), Some(id));
        }
        assert_eq!(ParamId::from_name("nope"), None);
    }

    #[test]
    fn init_respects_fan_in_bounds_and_seed() {
        let dims = ModelDims { q: 3, d: 2, hidden: 4, cr_branch: 5, cr_fusion: 3 };
        let a = ModelParams::init(dims, 11).unwrap();
        let b = ModelParams::init(dims, 11).unwrap();
        let c = ModelParams::init(dims, 12).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
        for &id in ParamId::ALL {
            let (shape, fan_in) = id.layout(&dims);
            assert_eq!(a.get(id).shape(), shape.as_slice());
            let bound = 1.0 / (fan_in as f64).sqrt();
            assert!(a.get(id).data().iter().all(|x| x.abs() <= bound));
        }
    }

    #[test]
    fn flatten_roundtrip() {
        let dims = ModelDims { q: 2, d: 2, hidden: 2, cr_branch: 2, cr_fusion: 2 };
        let a = ModelParams::init(dims, 1).unwrap();
        let mut b = ModelParams::zeros(dims).unwrap();
        b.set_flat(&a.flatten());
        assert_eq!(a, b);
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let dims = ModelDims { q: 2, d: 2, hidden: 2, cr_branch: 2, cr_fusion: 2 };
        let mut t = ModelParams::zeros(dims).unwrap().tensors().to_vec();
        assert!(ModelParams::from_tensors(dims, t.clone()).is_ok());
        t[0] = Tensor::zeros(&[1]);
        assert!(matches!(
            ModelParams::from_tensors(dims, t),
            Err(ModelError::Shape { param: "cr.feature.w", .. })
        ));
    }
}
