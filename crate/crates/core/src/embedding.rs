//! Embedding vectors, identifiers and the similarity primitive.
//!
//! Similarity is the inner product of L2-normalized vectors, accumulated in
//! `f64` and rounded to `f32` so that rankings are reproducible across
//! platforms.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{HasError, Result};

/// Vectors with norm at or below this are rejected by [`normalize`].
pub const MIN_NORM: f64 = 1e-12;

/// Allowed deviation from unit norm for a vector flagged as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-5;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<u64> for $name {
            fn from(v: u64) -> Self {
                $name(v)
            }
        }
    };
}

id_type!(
    /// Document identifier, stable across index rebuilds.
    DocId
);
id_type!(QueryId);
id_type!(EntityId);
id_type!(AttrId);

/// Similarity score. For normalized inputs it lies in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimScore(pub f32);

impl SimScore {
    pub fn value(self) -> f32 {
        self.0
    }

    /// Total order used for ranking (higher first is the caller's business).
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// A dense embedding with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
    normalized: bool,
}

impl Embedding {
    /// Wraps raw values. Fails on an empty vector or any non-finite component.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(HasError::Data("embedding must have dim >= 1".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(HasError::NonFinite(pos));
        }
        Ok(Embedding {
            values,
            normalized: false,
        })
    }

    /// Wraps values that are already unit norm, checking the norm.
    pub fn new_normalized(values: Vec<f32>) -> Result<Self> {
        let mut e = Self::new(values)?;
        let norm = e.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(HasError::Data(format!(
                "embedding flagged normalized has norm {norm}"
            )));
        }
        e.normalized = true;
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// Flags the vector as normalized if it already has unit norm, otherwise
    /// rescales it.
    pub fn ensure_normalized(self) -> Result<Embedding> {
        if self.normalized {
            return Ok(self);
        }
        let norm = self.norm();
        if (norm - 1.0).abs() <= UNIT_NORM_TOL {
            return Ok(Embedding {
                normalized: true,
                ..self
            });
        }
        normalize(&self)
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Dot product accumulated in `f64`, rounded to `f32`.
pub fn inner_product(a: &Embedding, b: &Embedding) -> Result<SimScore> {
    if a.dim() != b.dim() {
        return Err(HasError::Dim {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(SimScore(dot(a.values(), b.values())))
}

/// Unchecked kernel behind [`inner_product`]. Slices must have equal length.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let (tail_a, tail_b) = (chunks_a.remainder(), chunks_b.remainder());
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..4 {
            lanes[i] += f64::from(ca[i]) * f64::from(cb[i]);
        }
    }
    let mut acc = (lanes[0] + lanes[2]) + (lanes[1] + lanes[3]);
    for (x, y) in tail_a.iter().zip(tail_b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc as f32
}

/// Scales `v` to unit Euclidean norm.
pub fn normalize(v: &Embedding) -> Result<Embedding> {
    let norm = v.norm();
    if norm <= MIN_NORM {
        return Err(HasError::DegenerateVector { norm });
    }
    let values = v
        .values()
        .iter()
        .map(|&x| (f64::from(x) / norm) as f32)
        .collect();
    Ok(Embedding {
        values,
        normalized: true,
    })
}

pub(crate) fn check_dim(expected: usize, e: &Embedding) -> Result<()> {
    if e.dim() != expected {
        return Err(HasError::Dim {
            expected,
            actual: e.dim(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// HSEM container: "HSEM", u32 version, u32 dim, u64 count, count*dim f32 LE.

pub const HSEM_MAGIC: &[u8; 4] = b"HSEM";
pub const HSEM_VERSION: u32 = 1;

/// Writes embeddings in the HSEM container. All rows must share `dim`.
pub fn write_hsem<W: Write>(mut w: W, dim: usize, rows: &[Embedding]) -> Result<()> {
    w.write_all(HSEM_MAGIC)?;
    w.write_u32::<LittleEndian>(HSEM_VERSION)?;
    w.write_u32::<LittleEndian>(dim as u32)?;
    w.write_u64::<LittleEndian>(rows.len() as u64)?;
    for row in rows {
        check_dim(dim, row)?;
        for &v in row.values() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an HSEM container, returning `(dim, rows)`.
pub fn read_hsem<R: Read>(mut r: R) -> Result<(usize, Vec<Embedding>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != HSEM_MAGIC {
        return Err(HasError::Data("bad HSEM magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != HSEM_VERSION {
        return Err(HasError::Data(format!(
            "unsupported HSEM version {version}"
        )));
    }
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let count = r.read_u64::<LittleEndian>()?;
    if dim == 0 {
        return Err(HasError::Data("HSEM dim is zero".into()));
    }
    let mut rows = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut buf = vec![0f32; dim];
    for _ in 0..count {
        r.read_f32_into::<LittleEndian>(&mut buf)?;
        rows.push(Embedding::new(buf.clone())?);
    }
    Ok((dim, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;

    fn basis(dim: usize, i: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Embedding::new_normalized(v).unwrap()
    }

    fn random_unit(rng: &mut RngStream, dim: usize) -> Embedding {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        normalize(&Embedding::new(v).unwrap()).unwrap()
    }

    #[test]
    fn basis_identity_and_orthogonality() {
        let e1 = basis(4, 0);
        let e2 = basis(4, 1);
        assert_eq!(inner_product(&e1, &e1).unwrap().value(), 1.0);
        assert_eq!(inner_product(&e1, &e2).unwrap().value(), 0.0);
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let err = inner_product(&basis(4, 0), &basis(3, 0)).unwrap_err();
        assert!(matches!(
            err,
            HasError::Dim {
                expected: 4,
                actual: 3
            }
        ));
    }

    #[test]
    fn random_pairs_match_scalar_oracle() {
        let mut rng = RngStream::new(7);
        for _ in 0..100 {
            let a = random_unit(&mut rng, 32);
            let b = random_unit(&mut rng, 32);
            // plain f32 loop, independent of the f64 kernel
            let mut oracle = 0.0f32;
            for i in 0..32 {
                oracle += a.values()[i] * b.values()[i];
            }
            let got = inner_product(&a, &b).unwrap().value();
            assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
            assert_eq!(got, inner_product(&b, &a).unwrap().value());
            assert!(got.abs() <= 1.0 + 1e-5);
        }
    }

    #[test]
    fn normalize_three_four_five() {
        let v = normalize(&Embedding::new(vec![3.0, 4.0]).unwrap()).unwrap();
        assert!((v.values()[0] - 0.6).abs() < 1e-7);
        assert!((v.values()[1] - 0.8).abs() < 1e-7);
        assert!(v.is_normalized());
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = RngStream::new(11);
        for _ in 0..100 {
            let v = random_unit(&mut rng, 16);
            assert!((v.norm() - 1.0).abs() < 1e-5);
            let again = normalize(&v).unwrap();
            for (a, b) in v.values().iter().zip(again.values()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normalize_rejects_zero() {
        let z = Embedding::new(vec![0.0; 8]).unwrap();
        assert!(matches!(
            normalize(&z),
            Err(HasError::DegenerateVector { .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            Embedding::new(vec![1.0, f32::NAN]),
            Err(HasError::NonFinite(1))
        ));
        assert!(Embedding::new(vec![f32::INFINITY]).is_err());
        assert!(Embedding::new_normalized(vec![2.0, 0.0]).is_err());
    }

    #[test]
    fn hsem_layout_is_little_endian() {
        let rows = vec![Embedding::new(vec![1.0, -2.0]).unwrap()];
        let mut buf = Vec::new();
        write_hsem(&mut buf, 2, &rows).unwrap();
        assert_eq!(&buf[0..4], b"HSEM");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..20], &1u64.to_le_bytes());
        assert_eq!(&buf[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&buf[24..28], &(-2.0f32).to_le_bytes());
        assert_eq!(buf.len(), 28);
        let (dim, back) = read_hsem(&buf[..]).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(back, rows);
    }

    #[test]
    fn hsem_rejects_bad_magic() {
        let mut buf = Vec::new();
        write_hsem(&mut buf, 1, &[]).unwrap();
        buf[0] = b'X';
        assert!(read_hsem(&buf[..]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn inner_product_symmetric(a in proptest::collection::vec(-10.0f32..10.0, 1..48), seed in 0u64..1000) {
            let mut rng = RngStream::new(seed);
            let b: Vec<f32> = (0..a.len()).map(|_| rng.random_range(-10.0f32..10.0)).collect();
            let ea = Embedding::new(a).unwrap();
            let eb = Embedding::new(b).unwrap();
            proptest::prop_assert_eq!(
                inner_product(&ea, &eb).unwrap().value().to_bits(),
                inner_product(&eb, &ea).unwrap().value().to_bits()
            );
        }
    }
}
