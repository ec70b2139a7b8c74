use sha2::{Digest, Sha256};

use super::{Architecture, NetError};
use crate::rng::SeededRng;
use crate::Scalar;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"FGFW";
pub const WEIGHTS_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            values: vec![T::zero(); shape.iter().product()],
        }
    }
}

/// Ordered parameter tensors of one model. The order is fixed by the
/// architecture; see [`Architecture::tensor_layers`] for the owning layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> WeightSet<T> {
    pub fn new(tensors: Vec<Tensor<T>>) -> Result<Self, NetError> {
        for (i, t) in tensors.iter().enumerate() {
            let expected: usize = t.shape.iter().product();
            if expected != t.values.len() {
                return Err(NetError::TensorSize {
                    tensor: i,
                    expected,
                    found: t.values.len(),
                });
            }
        }
        Ok(Self { tensors })
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            tensors: arch
                .tensor_shapes()
                .iter()
                .map(|s| Tensor::zeros(s))
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn same_shapes(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape == b.shape)
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.tensors.len() == arch.tensor_shapes().len()
            && self
                .tensors
                .iter()
                .zip(arch.tensor_shapes())
                .all(|(t, s)| &t.shape == s)
    }

    pub(crate) fn check(&self, arch: &Architecture) -> Result<(), NetError> {
        if self.matches(arch) {
            Ok(())
        } else {
            Err(NetError::WeightShape)
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.tensors.iter().flat_map(|t| t.values.iter())
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> WeightSet<U> {
        WeightSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    shape: t.shape.clone(),
                    values: t
                        .values
                        .iter()
                        .map(|v| U::of(v.to_f64().unwrap_or(f64::NAN)))
                        .collect(),
                })
                .collect(),
        }
    }
}

/// He-uniform kernels (bound `sqrt(6 / fan_in)`) and zero biases, drawn in
/// tensor order from one seeded stream.
pub fn init_weights<T: Scalar>(arch: &Architecture, seed: u64) -> WeightSet<T> {
    let mut rng = SeededRng::new(seed);
    let tensors = arch
        .tensor_shapes()
        .iter()
        .enumerate()
        .map(|(i, shape)| match arch.fan_in(i) {
            Some(fan_in) => {
                let bound = (6.0 / fan_in as f64).sqrt();
                let n = shape.iter().product();
                Tensor {
                    shape: shape.clone(),
                    values: (0..n).map(|_| T::of(rng.symmetric(bound))).collect(),
                }
            }
            None => Tensor::zeros(shape),
        })
        .collect();
    WeightSet { tensors }
}

/// Little-endian wire layout:
///
/// ```text
/// "FGFW" | version u8 = 1 | tensor count u32
/// per tensor: rank u32 | dims u32 * rank | values f32 * prod(dims)
/// ```
pub fn serialize_weights(weights: &WeightSet<f32>) -> Vec<u8> {
    let payload: usize = weights
        .tensors
        .iter()
        .map(|t| 4 + 4 * t.shape.len() + 4 * t.values.len())
        .sum();
    let mut out = Vec::with_capacity(9 + payload);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.push(WEIGHTS_VERSION);
    out.extend_from_slice(&(weights.tensors.len() as u32).to_le_bytes());
    for t in &weights.tensors {
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(NetError::Truncated { offset: self.pos }),
        }
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn deserialize_weights(bytes: &[u8]) -> Result<WeightSet<f32>, NetError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| NetError::BadMagic)? != WEIGHTS_MAGIC {
        return Err(NetError::BadMagic);
    }
    let version = r.take(1)?[0];
    if version != WEIGHTS_VERSION {
        return Err(NetError::BadVersion(version));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let rank = r.u32()? as usize;
        // each dim needs 4 bytes; reject absurd ranks before allocating
        if rank > (bytes.len() - r.pos) / 4 {
            return Err(NetError::Truncated { offset: r.pos });
        }
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or(NetError::Truncated { offset: r.pos })?;
        let raw = r.take(n)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor { shape, values });
    }
    if r.pos != bytes.len() {
        return Err(NetError::TrailingBytes {
            extra: bytes.len() - r.pos,
        });
    }
    Ok(WeightSet { tensors })
}

/// SHA-256 of the canonical serialization.
pub fn weight_digest(weights: &WeightSet<f32>) -> [u8; 32] {
    Sha256::digest(serialize_weights(weights)).into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::default_arch;
    use proptest::prelude::*;

    fn bits(w: &WeightSet<f32>) -> Vec<(Vec<usize>, Vec<u32>)> {
        w.tensors()
            .iter()
            .map(|t| {
                (
                    t.shape.clone(),
                    t.values.iter().map(|v| v.to_bits()).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = default_arch(40, 6).unwrap();
        let a = init_weights::<f32>(&arch, 3);
        let b = init_weights::<f32>(&arch, 3);
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&init_weights::<f32>(&arch, 4)));
        assert!(a.matches(&arch));
        for (i, t) in a.tensors().iter().enumerate() {
            match arch.fan_in(i) {
                Some(fan_in) => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    assert!(t
                        .values
                        .iter()
                        .all(|v| (*v as f64).abs() <= bound * (1.0 + 1e-6)));
                    assert!(t.values.iter().any(|v| *v != 0.0));
                }
                None => assert!(t.values.iter().all(|v| v.to_bits() == 0)),
            }
        }
    }

    #[test]
    fn empty_set_is_header_only() {
        let w = WeightSet::<f32>::new(vec![]).unwrap();
        let bytes = serialize_weights(&w);
        assert_eq!(bytes, b"FGFW\x01\x00\x00\x00\x00");
        assert_eq!(deserialize_weights(&bytes).unwrap(), w);
    }

    #[test]
    fn golden_layout() {
        let w = WeightSet::new(vec![Tensor {
            shape: vec![2],
            values: vec![1.0f32, -2.0],
        }])
        .unwrap();
        let expected: Vec<u8> = [
            &b"FGFW\x01"[..],
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &2u32.to_le_bytes(),
            &1.0f32.to_le_bytes(),
            &(-2.0f32).to_le_bytes(),
        ]
        .concat();
        assert_eq!(serialize_weights(&w), expected);
    }

    #[test]
    fn decode_errors() {
        let arch = default_arch(20, 3).unwrap();
        let bytes = serialize_weights(&init_weights(&arch, 1));
        assert!(matches!(
            deserialize_weights(b"FGF"),
            Err(NetError::BadMagic)
        ));
        assert!(matches!(
            deserialize_weights(b"XGFW\x01\0\0\0\0"),
            Err(NetError::BadMagic)
        ));
        assert!(matches!(
            deserialize_weights(b"FGFW\x02\0\0\0\0"),
            Err(NetError::BadVersion(2))
        ));
        assert!(matches!(
            deserialize_weights(&bytes[..bytes.len() - 1]),
            Err(NetError::Truncated { .. })
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            deserialize_weights(&longer),
            Err(NetError::TrailingBytes { extra: 1 })
        ));
        // a dim that promises more values than are present
        let mut huge = b"FGFW\x01".to_vec();
        huge.extend_from_slice(&1u32.to_le_bytes());
        huge.extend_from_slice(&2u32.to_le_bytes());
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(deserialize_weights(&huge).is_err());
    }

    #[test]
    fn new_rejects_size_mismatch() {
        let t = Tensor {
            shape: vec![2, 2],
            values: vec![0.0f32; 3],
        };
        assert!(matches!(
            WeightSet::new(vec![t]),
            Err(NetError::TensorSize { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            tensors in prop::collection::vec(
                (prop::collection::vec(0usize..4, 0..3), any::<u32>()),
                0..5,
            )
        ) {
            let tensors: Vec<Tensor<f32>> = tensors
                .into_iter()
                .map(|(shape, seed)| {
                    let n: usize = shape.iter().product();
                    let mut rng = SeededRng::new(seed as u64);
                    let values = (0..n).map(|_| f32::from_bits(rng.next_u64() as u32)).collect();
                    Tensor { shape, values }
                })
                .collect();
            let w = WeightSet::new(tensors).unwrap();
            let back = deserialize_weights(&serialize_weights(&w)).unwrap();
            prop_assert_eq!(bits(&back), bits(&w));
        }

        #[test]
        fn any_flipped_byte_is_caught(pos in 0usize..10_000, flip in 1u8..=255) {
            let arch = crate::neuralnet::Architecture::new(
                6,
                vec![crate::LayerSpec::Dense { units: 4 }, crate::LayerSpec::Softmax],
            ).unwrap();
            let w = init_weights::<f32>(&arch, 2);
            let bytes = serialize_weights(&w);
            let pos = pos % bytes.len();
            let mut bad = bytes.clone();
            bad[pos] ^= flip;
            match deserialize_weights(&bad) {
                Err(_) => {}
                Ok(decoded) => prop_assert_ne!(weight_digest(&decoded), weight_digest(&w)),
            }
        }
    }
}
