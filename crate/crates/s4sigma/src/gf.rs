//! Exact arithmetic over the prime field GF(q) and the dense linear algebra
//! built on it: matrix products, Gauss-Jordan inverses, nilpotency checks and
//! rejection sampling of structured random matrices.
//!
//! All values are plain integers reduced mod q; there is no floating point
//! anywhere in this module. Containers carry their modulus and every binary
//! operation checks that both sides agree on it.

use crate::rng::DeterministicRng;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GfError {
    NotPrime(u64),
    DimensionMismatch { left: (usize, usize), right: (usize, usize) },
    ModulusMismatch { left: u64, right: u64 },
    NotInvertible,
    SamplingFailed,
}

impl fmt::Display for GfError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GfError::NotPrime(q) => write!(f, "{q} is not prime"),
            GfError::DimensionMismatch { left, right } => {
                write!(f, "dimension mismatch: {}x{} vs {}x{}", left.0, left.1, right.0, right.1)
            }
            GfError::ModulusMismatch { left, right } => {
                write!(f, "modulus mismatch: {left} vs {right}")
            }
            GfError::NotInvertible => write!(f, "matrix is not invertible"),
            GfError::SamplingFailed => write!(f, "rejection sampling exceeded its retry cap"),
        }
    }
}

impl std::error::Error for GfError {}

pub fn is_prime(q: u64) -> bool {
    if q < 2 {
        return false;
    }
    if q.is_multiple_of(2) {
        return q == 2;
    }
    let mut d = 3u64;
    while d.saturating_mul(d) <= q {
        if q.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

pub fn check_prime(q: u64) -> Result<(), GfError> {
    if is_prime(q) {
        Ok(())
    } else {
        Err(GfError::NotPrime(q))
    }
}

#[inline]
pub fn add_mod(a: u64, b: u64, q: u64) -> u64 {
    let s = a + b;
    if s >= q {
        s - q
    } else {
        s
    }
}

#[inline]
pub fn sub_mod(a: u64, b: u64, q: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + q - b
    }
}

#[inline]
pub fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

#[inline]
pub fn neg_mod(a: u64, q: u64) -> u64 {
    if a == 0 {
        0
    } else {
        q - a
    }
}

/// Inverse by Fermat: a^(q-2) mod q. Zero has no inverse.
pub fn inv_mod(a: u64, q: u64) -> Result<u64, GfError> {
    if a.is_multiple_of(q) {
        return Err(GfError::NotInvertible);
    }
    let mut base = a % q;
    let mut exp = q - 2;
    let mut acc = 1u64;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        exp >>= 1;
    }
    Ok(acc)
}

/// A single element of GF(q). Containers below store raw values for
/// compactness; this wrapper is the checked scalar used at API seams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldElement {
    pub value: u64,
    pub q: u64,
}

impl FieldElement {
    pub fn new(value: u64, q: u64) -> Result<Self, GfError> {
        check_prime(q)?;
        Ok(Self { value: value % q, q })
    }

    fn check(self, other: Self) -> Result<(), GfError> {
        if self.q != other.q {
            return Err(GfError::ModulusMismatch { left: self.q, right: other.q });
        }
        Ok(())
    }

    pub fn add(self, other: Self) -> Result<Self, GfError> {
        self.check(other)?;
        Ok(Self { value: add_mod(self.value, other.value, self.q), q: self.q })
    }

    pub fn mul(self, other: Self) -> Result<Self, GfError> {
        self.check(other)?;
        Ok(Self { value: mul_mod(self.value, other.value, self.q), q: self.q })
    }

    pub fn neg(self) -> Self {
        Self { value: neg_mod(self.value, self.q), q: self.q }
    }

    pub fn inv(self) -> Result<Self, GfError> {
        Ok(Self { value: inv_mod(self.value, self.q)?, q: self.q })
    }
}

/// Column vector over GF(q).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldVector {
    q: u64,
    entries: Vec<u64>,
}

impl FieldVector {
    pub fn new(q: u64, entries: Vec<u64>) -> Self {
        debug_assert!(entries.iter().all(|&e| e < q));
        Self { q, entries }
    }

    pub fn from_values(q: u64, values: &[u64]) -> Self {
        Self { q, entries: values.iter().map(|&v| v % q).collect() }
    }

    pub fn zero(q: u64, dim: usize) -> Self {
        Self { q, entries: vec![0; dim] }
    }

    pub fn random(q: u64, dim: usize, rng: &mut DeterministicRng) -> Self {
        Self { q, entries: (0..dim).map(|_| rng.next_below(q)).collect() }
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[u64] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> u64 {
        self.entries[i]
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&e| e == 0)
    }

    fn check(&self, other: &Self) -> Result<(), GfError> {
        if self.q != other.q {
            return Err(GfError::ModulusMismatch { left: self.q, right: other.q });
        }
        if self.dim() != other.dim() {
            return Err(GfError::DimensionMismatch {
                left: (self.dim(), 1),
                right: (other.dim(), 1),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, GfError> {
        self.check(other)?;
        Ok(Self {
            q: self.q,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(&a, &b)| add_mod(a, b, self.q))
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, GfError> {
        self.check(other)?;
        Ok(Self {
            q: self.q,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(&a, &b)| sub_mod(a, b, self.q))
                .collect(),
        })
    }
}

/// Dense row-major matrix over GF(q).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMatrix {
    q: u64,
    rows: usize,
    cols: usize,
    entries: Vec<u64>,
}

impl FieldMatrix {
    pub fn new(q: u64, rows: usize, cols: usize, entries: Vec<u64>) -> Self {
        assert_eq!(entries.len(), rows * cols, "entry count must equal rows*cols");
        debug_assert!(entries.iter().all(|&e| e < q));
        Self { q, rows, cols, entries }
    }

    pub fn from_rows(q: u64, rows: &[&[u64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut entries = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            entries.extend(row.iter().map(|&v| v % q));
        }
        Self { q, rows: r, cols: c, entries }
    }

    pub fn zero(q: u64, n: usize) -> Self {
        Self { q, rows: n, cols: n, entries: vec![0; n * n] }
    }

    pub fn identity(q: u64, n: usize) -> Self {
        let mut m = Self::zero(q, n);
        for i in 0..n {
            m.entries[i * n + i] = 1;
        }
        m
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.entries[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u64) {
        self.entries[r * self.cols + c] = v % self.q;
    }

    pub fn entries(&self) -> &[u64] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&e| e == 0)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Zeros on and below the diagonal.
    pub fn is_strictly_upper_triangular(&self) -> bool {
        if !self.is_square() {
            return false;
        }
        for r in 0..self.rows {
            for c in 0..=r.min(self.cols - 1) {
                if self.get(r, c) != 0 {
                    return false;
                }
            }
        }
        true
    }

    pub fn add(&self, other: &Self) -> Result<Self, GfError> {
        self.check_same_shape(other)?;
        Ok(Self {
            q: self.q,
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(&a, &b)| add_mod(a, b, self.q))
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, GfError> {
        self.check_same_shape(other)?;
        Ok(Self {
            q: self.q,
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(&a, &b)| sub_mod(a, b, self.q))
                .collect(),
        })
    }

    fn check_same_shape(&self, other: &Self) -> Result<(), GfError> {
        if self.q != other.q {
            return Err(GfError::ModulusMismatch { left: self.q, right: other.q });
        }
        if self.rows != other.rows || self.cols != other.cols {
            return Err(GfError::DimensionMismatch {
                left: (self.rows, self.cols),
                right: (other.rows, other.cols),
            });
        }
        Ok(())
    }
}

/// Exact product mod q.
pub fn mat_mul(a: &FieldMatrix, b: &FieldMatrix) -> Result<FieldMatrix, GfError> {
    if a.q != b.q {
        return Err(GfError::ModulusMismatch { left: a.q, right: b.q });
    }
    if a.cols != b.rows {
        return Err(GfError::DimensionMismatch {
            left: (a.rows, a.cols),
            right: (b.rows, b.cols),
        });
    }
    let q = a.q as u128;
    let mut entries = vec![0u64; a.rows * b.cols];
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.get(i, k) as u128;
            if aik == 0 {
                continue;
            }
            for j in 0..b.cols {
                let cur = entries[i * b.cols + j] as u128;
                entries[i * b.cols + j] = ((cur + aik * b.get(k, j) as u128) % q) as u64;
            }
        }
    }
    Ok(FieldMatrix { q: a.q, rows: a.rows, cols: b.cols, entries })
}

pub fn mat_vec(a: &FieldMatrix, v: &FieldVector) -> Result<FieldVector, GfError> {
    if a.q != v.q {
        return Err(GfError::ModulusMismatch { left: a.q, right: v.q });
    }
    if a.cols != v.dim() {
        return Err(GfError::DimensionMismatch {
            left: (a.rows, a.cols),
            right: (v.dim(), 1),
        });
    }
    let q = a.q as u128;
    let entries = (0..a.rows)
        .map(|i| {
            let mut acc = 0u128;
            for k in 0..a.cols {
                acc = (acc + a.get(i, k) as u128 * v.entries[k] as u128) % q;
            }
            acc as u64
        })
        .collect();
    Ok(FieldVector { q: a.q, entries })
}

/// Gauss-Jordan elimination with first-nonzero pivot selection. Exact field
/// arithmetic needs pivoting only for singularity detection.
pub fn mat_inv(a: &FieldMatrix) -> Result<FieldMatrix, GfError> {
    if !a.is_square() {
        return Err(GfError::DimensionMismatch {
            left: (a.rows, a.cols),
            right: (a.cols, a.rows),
        });
    }
    let n = a.rows;
    let q = a.q;
    let mut work = a.entries.clone();
    let mut inv = FieldMatrix::identity(q, n).entries;
    for col in 0..n {
        let pivot_row = (col..n)
            .find(|&r| work[r * n + col] != 0)
            .ok_or(GfError::NotInvertible)?;
        if pivot_row != col {
            for j in 0..n {
                work.swap(col * n + j, pivot_row * n + j);
                inv.swap(col * n + j, pivot_row * n + j);
            }
        }
        let pinv = inv_mod(work[col * n + col], q)?;
        for j in 0..n {
            work[col * n + j] = mul_mod(work[col * n + j], pinv, q);
            inv[col * n + j] = mul_mod(inv[col * n + j], pinv, q);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = work[r * n + col];
            if factor == 0 {
                continue;
            }
            for j in 0..n {
                let w = mul_mod(factor, work[col * n + j], q);
                work[r * n + j] = sub_mod(work[r * n + j], w, q);
                let v = mul_mod(factor, inv[col * n + j], q);
                inv[r * n + j] = sub_mod(inv[r * n + j], v, q);
            }
        }
    }
    Ok(FieldMatrix { q, rows: n, cols: n, entries: inv })
}

/// Result of a semigroup nilpotency scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NilpotencyIndex {
    /// Smallest m such that every length-m product of family members is zero.
    Index(usize),
    NotNilpotentWithin(usize),
}

/// Smallest m <= max_len such that every length-m product (with repetition,
/// all orderings) of the family vanishes. Exhaustive over distinct products,
/// which stays tiny at desk scale.
pub fn semigroup_nilpotency_index(
    family: &[FieldMatrix],
    max_len: usize,
) -> Result<NilpotencyIndex, GfError> {
    assert!(!family.is_empty(), "family must be nonempty");
    assert!(max_len >= 1, "max_len must be at least 1");
    let n = family[0].rows;
    let q = family[0].q;
    for m in family {
        if !m.is_square() || m.rows != n {
            return Err(GfError::DimensionMismatch {
                left: (n, n),
                right: (m.rows, m.cols),
            });
        }
        if m.q != q {
            return Err(GfError::ModulusMismatch { left: q, right: m.q });
        }
    }
    // products[m-1] holds the distinct length-m products.
    let mut current: Vec<FieldMatrix> = family.to_vec();
    current.dedup();
    for length in 1..=max_len {
        if current.iter().all(FieldMatrix::is_zero) {
            return Ok(NilpotencyIndex::Index(length));
        }
        let mut next: Vec<FieldMatrix> = Vec::new();
        for g in family {
            for p in &current {
                let prod = mat_mul(g, p)?;
                if !next.contains(&prod) {
                    next.push(prod);
                }
            }
        }
        current = next;
    }
    Ok(NilpotencyIndex::NotNilpotentWithin(max_len))
}

const SAMPLE_RETRY_CAP: usize = 1000;

/// Uniform invertible matrix by rejection.
pub fn sample_invertible(
    q: u64,
    n: usize,
    rng: &mut DeterministicRng,
) -> Result<FieldMatrix, GfError> {
    check_prime(q)?;
    assert!(n >= 1);
    for _ in 0..SAMPLE_RETRY_CAP {
        let entries = (0..n * n).map(|_| rng.next_below(q)).collect();
        let candidate = FieldMatrix { q, rows: n, cols: n, entries };
        if mat_inv(&candidate).is_ok() {
            return Ok(candidate);
        }
    }
    Err(GfError::SamplingFailed)
}

/// Random matrix with zeros on and below the diagonal.
pub fn sample_strictly_upper(q: u64, n: usize, rng: &mut DeterministicRng) -> FieldMatrix {
    let mut m = FieldMatrix::zero(q, n);
    for r in 0..n {
        for c in (r + 1)..n {
            m.set(r, c, rng.next_below(q));
        }
    }
    m
}

/// Family {Q_j = P N_j P^-1} with one shared invertible P and strictly upper
/// triangular N_j. Any length-n product of the family vanishes because
/// conjugation preserves products and n strictly upper triangular factors
/// multiply to zero.
pub fn sample_nilpotent_family(
    q: u64,
    n: usize,
    ell: usize,
    rng: &mut DeterministicRng,
) -> Result<Vec<FieldMatrix>, GfError> {
    assert!(n >= 1 && ell >= 1);
    let p = sample_invertible(q, n, rng)?;
    let p_inv = mat_inv(&p)?;
    let mut family = Vec::with_capacity(ell);
    for _ in 0..ell {
        let upper = sample_strictly_upper(q, n, rng);
        family.push(mat_mul(&mat_mul(&p, &upper)?, &p_inv)?);
    }
    Ok(family)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f7(rows: &[&[u64]]) -> FieldMatrix {
        FieldMatrix::from_rows(7, rows)
    }

    // Matrices from the worked 3-dimensional example over F_7.
    fn q1() -> FieldMatrix {
        f7(&[&[6, 1, 0], &[6, 1, 0], &[0, 0, 0]])
    }

    fn q2() -> FieldMatrix {
        f7(&[&[2, 5, 0], &[2, 5, 0], &[0, 0, 0]])
    }

    #[test]
    fn identity_is_neutral() {
        let a = f7(&[&[1, 2, 3], &[4, 5, 6], &[0, 1, 2]]);
        let id = FieldMatrix::identity(7, 3);
        assert_eq!(mat_mul(&id, &a).unwrap(), a);
        assert_eq!(mat_mul(&a, &id).unwrap(), a);
    }

    #[test]
    fn example_q_products_vanish() {
        let zero = FieldMatrix::zero(7, 3);
        assert_eq!(mat_mul(&q1(), &q1()).unwrap(), zero);
        assert_eq!(mat_mul(&q1(), &q2()).unwrap(), zero);
        assert_eq!(mat_mul(&q2(), &q1()).unwrap(), zero);
        assert_eq!(mat_mul(&q2(), &q2()).unwrap(), zero);
    }

    #[test]
    fn inverse_of_identity() {
        let id = FieldMatrix::identity(7, 3);
        assert_eq!(mat_inv(&id).unwrap(), id);
    }

    #[test]
    fn inverse_of_example_output_matrix() {
        // det = 3 mod 7, so this must invert cleanly.
        let f1 = f7(&[&[0, 1, 0], &[0, 2, 1], &[3, 0, 4]]);
        let g = mat_inv(&f1).unwrap();
        assert_eq!(mat_mul(&f1, &g).unwrap(), FieldMatrix::identity(7, 3));
        assert_eq!(mat_mul(&g, &f1).unwrap(), FieldMatrix::identity(7, 3));
    }

    #[test]
    fn rank_deficient_matrix_not_invertible() {
        assert_eq!(mat_inv(&q1()).unwrap_err(), GfError::NotInvertible);
    }

    #[test]
    fn nilpotency_of_zero_matrix() {
        let fam = vec![FieldMatrix::zero(7, 3)];
        assert_eq!(
            semigroup_nilpotency_index(&fam, 3).unwrap(),
            NilpotencyIndex::Index(1)
        );
    }

    #[test]
    fn nilpotency_of_example_family_is_two() {
        let fam = vec![q1(), q2()];
        assert_eq!(
            semigroup_nilpotency_index(&fam, 3).unwrap(),
            NilpotencyIndex::Index(2)
        );
    }

    #[test]
    fn identity_never_nilpotent() {
        let fam = vec![FieldMatrix::identity(7, 3)];
        assert_eq!(
            semigroup_nilpotency_index(&fam, 5).unwrap(),
            NilpotencyIndex::NotNilpotentWithin(5)
        );
    }

    #[test]
    fn sampled_invertible_inverts() {
        let mut rng = DeterministicRng::new(99);
        let m = sample_invertible(7, 3, &mut rng).unwrap();
        assert!(mat_inv(&m).is_ok());
    }

    #[test]
    fn only_invertible_one_by_one_over_f2() {
        let mut rng = DeterministicRng::new(5);
        let m = sample_invertible(2, 1, &mut rng).unwrap();
        assert_eq!(m.entries(), &[1]);
    }

    #[test]
    fn sample_invertible_deterministic() {
        let a = sample_invertible(257, 4, &mut DeterministicRng::new(123)).unwrap();
        let b = sample_invertible(257, 4, &mut DeterministicRng::new(123)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nilpotent_family_passes_index_check() {
        let mut rng = DeterministicRng::new(71);
        let fam = sample_nilpotent_family(7, 3, 2, &mut rng).unwrap();
        match semigroup_nilpotency_index(&fam, 3).unwrap() {
            NilpotencyIndex::Index(m) => assert!(m <= 3),
            other => panic!("expected nilpotent family, got {other:?}"),
        }
    }

    #[test]
    fn nilpotent_family_dim_one() {
        let mut rng = DeterministicRng::new(4);
        let fam = sample_nilpotent_family(7, 1, 1, &mut rng).unwrap();
        assert_eq!(fam[0].entries(), &[0]);
    }

    #[test]
    fn all_length_four_products_vanish_at_dim_four() {
        // 3^4 = 81 orderings, checked exhaustively.
        let mut rng = DeterministicRng::new(2024);
        let fam = sample_nilpotent_family(257, 4, 3, &mut rng).unwrap();
        let mut ok = true;
        let idx = [0usize, 1, 2];
        for a in idx {
            for b in idx {
                for c in idx {
                    for d in idx {
                        let p = mat_mul(
                            &mat_mul(&fam[a], &fam[b]).unwrap(),
                            &mat_mul(&fam[c], &fam[d]).unwrap(),
                        )
                        .unwrap();
                        ok &= p.is_zero();
                    }
                }
            }
        }
        assert!(ok);
    }

    #[test]
    fn modulus_mismatch_rejected() {
        let a = FieldMatrix::identity(7, 2);
        let b = FieldMatrix::identity(5, 2);
        assert!(matches!(mat_mul(&a, &b), Err(GfError::ModulusMismatch { .. })));
    }

    #[test]
    fn field_element_ops() {
        let a = FieldElement::new(5, 7).unwrap();
        let b = FieldElement::new(4, 7).unwrap();
        assert_eq!(a.add(b).unwrap().value, 2);
        assert_eq!(a.mul(b).unwrap().value, 6);
        assert_eq!(a.neg().value, 2);
        assert_eq!(a.inv().unwrap().mul(a).unwrap().value, 1);
        assert!(FieldElement::new(1, 6).is_err());
    }

    proptest! {
        #[test]
        fn matrix_product_associative(seed in any::<u64>()) {
            let mut rng = DeterministicRng::new(seed);
            let q = 7;
            let rand = |rng: &mut DeterministicRng| {
                FieldMatrix::new(q, 3, 3, (0..9).map(|_| rng.next_below(q)).collect())
            };
            let a = rand(&mut rng);
            let b = rand(&mut rng);
            let c = rand(&mut rng);
            let left = mat_mul(&mat_mul(&a, &b).unwrap(), &c).unwrap();
            let right = mat_mul(&a, &mat_mul(&b, &c).unwrap()).unwrap();
            prop_assert_eq!(left, right);
        }

        #[test]
        fn inverse_times_self_is_identity(seed in any::<u64>()) {
            let mut rng = DeterministicRng::new(seed);
            let m = sample_invertible(257, 4, &mut rng).unwrap();
            let mi = mat_inv(&m).unwrap();
            prop_assert_eq!(mat_mul(&mi, &m).unwrap(), FieldMatrix::identity(257, 4));
        }

        #[test]
        fn scalar_ops_match_wide_integer_oracle(a in 0u64..65521, b in 0u64..65521) {
            let q = 65521u64;
            prop_assert_eq!(add_mod(a, b, q), ((a as u128 + b as u128) % q as u128) as u64);
            prop_assert_eq!(mul_mod(a, b, q), ((a as u128 * b as u128) % q as u128) as u64);
        }

        #[test]
        fn sampled_families_always_nilpotent(seed in any::<u64>(), ell in 1usize..4) {
            let mut rng = DeterministicRng::new(seed);
            let fam = sample_nilpotent_family(7, 3, ell, &mut rng).unwrap();
            prop_assert!(matches!(
                semigroup_nilpotency_index(&fam, 3).unwrap(),
                NilpotencyIndex::Index(_)
            ));
        }
    }
}
