//! Prime field arithmetic over F_q for scalars and long vectors.
//!
//! The default modulus is the Mersenne prime q = 2^31 - 1, which admits a
//! shift-and-add reduction (2^31 ≡ 1 mod q). Any other prime q ≥ 2^16 can be
//! configured per experiment; those go through a u128 widening multiply.
//!
//! Elements are canonical residues in [0, q) stored as u64. All operations
//! are pure; values are immutable after construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The Mersenne prime 2^31 - 1.
pub const MERSENNE31: u64 = (1 << 31) - 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} is below the minimum 2^16")]
    ModulusTooSmall(u64),
    #[error("inversion of zero")]
    InversionOfZero,
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("matrix dimension mismatch: {rows}x{cols} vs vector length {len}")]
    DimensionMismatch { rows: usize, cols: usize, len: usize },
    #[error("fields differ: q={0} vs q={1}")]
    FieldMismatch(u64, u64),
}

/// A prime field F_q. Cheap to copy; carries only the modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    q: u64,
}

impl Default for Field {
    fn default() -> Self {
        Field { q: MERSENNE31 }
    }
}

impl Field {
    /// Field with the default Mersenne modulus 2^31 - 1.
    pub fn mersenne31() -> Self {
        Field { q: MERSENNE31 }
    }

    /// Construct a field with modulus `q`. Rejects composites and moduli
    /// below 2^16 (sums of bounded inputs across many clients must not wrap).
    pub fn new(q: u64) -> Result<Self, FieldError> {
        if q < 1 << 16 {
            return Err(FieldError::ModulusTooSmall(q));
        }
        if !is_prime(q) {
            return Err(FieldError::NotPrime(q));
        }
        Ok(Field { q })
    }

    /// Small-field constructor used only by tests (e.g. q = 257 for
    /// chi-square uniformity checks). Skips the 2^16 floor.
    pub fn new_unchecked_small(q: u64) -> Result<Self, FieldError> {
        if !is_prime(q) {
            return Err(FieldError::NotPrime(q));
        }
        Ok(Field { q })
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    /// Bytes needed to serialize one canonical element.
    pub fn elem_bytes(&self) -> usize {
        if self.q <= u32::MAX as u64 {
            4
        } else {
            8
        }
    }

    /// Reduce an arbitrary u64 into [0, q).
    pub fn reduce(&self, v: u64) -> u64 {
        v % self.q
    }

    /// Embed a signed value, mapping negatives to q - |v|.
    pub fn from_signed(&self, v: i64) -> u64 {
        if v >= 0 {
            (v as u64) % self.q
        } else {
            let m = ((-v) as u64) % self.q;
            if m == 0 {
                0
            } else {
                self.q - m
            }
        }
    }

    /// Interpret a canonical element as a centered residue in (-q/2, q/2].
    pub fn to_signed(&self, v: u64) -> i64 {
        if v > self.q / 2 {
            -((self.q - v) as i64)
        } else {
            v as i64
        }
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.q {
            s - self.q
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            self.q - b + a
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.q - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        if self.q == MERSENNE31 {
            // product < 2^62; fold twice via 2^31 ≡ 1 (mod q)
            let v = a * b;
            let folded = (v & MERSENNE31) + (v >> 31);
            let folded = (folded & MERSENNE31) + (folded >> 31);
            if folded >= MERSENNE31 {
                folded - MERSENNE31
            } else {
                folded
            }
        } else {
            ((a as u128 * b as u128) % self.q as u128) as u64
        }
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1u64;
        base %= self.q;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat: a^(q-2).
    pub fn inv(&self, a: u64) -> Result<u64, FieldError> {
        if a == 0 {
            return Err(FieldError::InversionOfZero);
        }
        Ok(self.pow(a, self.q - 2))
    }

    /// Invert a batch with the Montgomery trick: one inversion + 3n mults.
    pub fn batch_inv(&self, values: &[u64]) -> Result<Vec<u64>, FieldError> {
        let n = values.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut prefix = Vec::with_capacity(n);
        let mut acc = 1u64;
        for &v in values {
            if v == 0 {
                return Err(FieldError::InversionOfZero);
            }
            prefix.push(acc);
            acc = self.mul(acc, v);
        }
        let mut inv_acc = self.inv(acc)?;
        let mut out = vec![0u64; n];
        for i in (0..n).rev() {
            out[i] = self.mul(inv_acc, prefix[i]);
            inv_acc = self.mul(inv_acc, values[i]);
        }
        Ok(out)
    }

    /// Uniform element of [0, q) by rejection sampling fixed-width words.
    pub fn sample<R: rand::RngCore>(&self, rng: &mut R) -> u64 {
        if self.q <= u32::MAX as u64 {
            // largest multiple of q that fits in 32 bits
            let limit = (1u64 << 32) / self.q * self.q;
            loop {
                let w = rng.next_u32() as u64;
                if w < limit {
                    return w % self.q;
                }
            }
        } else {
            let limit = u64::MAX / self.q * self.q;
            loop {
                let w = rng.next_u64();
                if w < limit {
                    return w % self.q;
                }
            }
        }
    }
}

/// Deterministic Miller-Rabin for u64.
fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    let mut d = n - 1;
    let mut r = 0u32;
    while d % 2 == 0 {
        d /= 2;
        r += 1;
    }
    let mulmod = |a: u64, b: u64, m: u64| ((a as u128 * b as u128) % m as u128) as u64;
    let powmod = |mut base: u64, mut exp: u64, m: u64| {
        let mut acc = 1u64;
        base %= m;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = mulmod(acc, base, m);
            }
            base = mulmod(base, base, m);
            exp >>= 1;
        }
        acc
    };
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = powmod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 0..r - 1 {
            x = mulmod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// A fixed-length vector of canonical field elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldVector {
    field: Field,
    elems: Vec<u64>,
}

impl FieldVector {
    pub fn zeros(field: Field, len: usize) -> Self {
        FieldVector { field, elems: vec![0; len] }
    }

    /// Build from raw values, reducing each into [0, q).
    pub fn from_u64s(field: Field, values: &[u64]) -> Self {
        FieldVector {
            field,
            elems: values.iter().map(|&v| field.reduce(v)).collect(),
        }
    }

    /// Wrap values that are already canonical. Debug-asserted.
    pub fn from_canonical(field: Field, elems: Vec<u64>) -> Self {
        debug_assert!(elems.iter().all(|&v| v < field.q()));
        FieldVector { field, elems }
    }

    /// Uniform random vector; deterministic for a fixed rng seed.
    pub fn random<R: rand::RngCore>(field: Field, len: usize, rng: &mut R) -> Self {
        let elems = (0..len).map(|_| field.sample(rng)).collect();
        FieldVector { field, elems }
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn elems(&self) -> &[u64] {
        &self.elems
    }

    pub fn get(&self, i: usize) -> u64 {
        self.elems[i]
    }

    fn check_compat(&self, other: &FieldVector) -> Result<(), FieldError> {
        if self.field != other.field {
            return Err(FieldError::FieldMismatch(self.field.q(), other.field.q()));
        }
        if self.len() != other.len() {
            return Err(FieldError::LengthMismatch(self.len(), other.len()));
        }
        Ok(())
    }

    pub fn add(&self, other: &FieldVector) -> Result<FieldVector, FieldError> {
        self.check_compat(other)?;
        let elems = self
            .elems
            .iter()
            .zip(&other.elems)
            .map(|(&a, &b)| self.field.add(a, b))
            .collect();
        Ok(FieldVector { field: self.field, elems })
    }

    pub fn sub(&self, other: &FieldVector) -> Result<FieldVector, FieldError> {
        self.check_compat(other)?;
        let elems = self
            .elems
            .iter()
            .zip(&other.elems)
            .map(|(&a, &b)| self.field.sub(a, b))
            .collect();
        Ok(FieldVector { field: self.field, elems })
    }

    pub fn add_assign(&mut self, other: &FieldVector) -> Result<(), FieldError> {
        self.check_compat(other)?;
        for (a, &b) in self.elems.iter_mut().zip(&other.elems) {
            *a = self.field.add(*a, b);
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &FieldVector) -> Result<(), FieldError> {
        self.check_compat(other)?;
        for (a, &b) in self.elems.iter_mut().zip(&other.elems) {
            *a = self.field.sub(*a, b);
        }
        Ok(())
    }

    /// Sum a collection; an empty collection over a declared length is zero.
    pub fn sum<'a, I>(field: Field, len: usize, vs: I) -> Result<FieldVector, FieldError>
    where
        I: IntoIterator<Item = &'a FieldVector>,
    {
        let mut acc = FieldVector::zeros(field, len);
        for v in vs {
            acc.add_assign(v)?;
        }
        Ok(acc)
    }

    /// Sum of all elements of this vector, in the field.
    pub fn element_sum(&self) -> u64 {
        self.elems.iter().fold(0, |acc, &v| self.field.add(acc, v))
    }
}

/// Dense row-major matrix of field elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMatrix {
    field: Field,
    rows: usize,
    cols: usize,
    elems: Vec<u64>,
}

impl FieldMatrix {
    pub fn from_rows(field: Field, rows: &[Vec<u64>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut elems = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            assert_eq!(r.len(), n_cols, "ragged matrix");
            elems.extend(r.iter().map(|&v| field.reduce(v)));
        }
        FieldMatrix { field, rows: n_rows, cols: n_cols, elems }
    }

    pub fn random<R: rand::RngCore>(field: Field, rows: usize, cols: usize, rng: &mut R) -> Self {
        let elems = (0..rows * cols).map(|_| field.sample(rng)).collect();
        FieldMatrix { field, rows, cols, elems }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Matrix-vector product mod q.
    pub fn matvec(&self, v: &FieldVector) -> Result<FieldVector, FieldError> {
        if self.field != v.field() {
            return Err(FieldError::FieldMismatch(self.field.q(), v.field().q()));
        }
        if self.cols != v.len() {
            return Err(FieldError::DimensionMismatch {
                rows: self.rows,
                cols: self.cols,
                len: v.len(),
            });
        }
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let row = &self.elems[r * self.cols..(r + 1) * self.cols];
            out.push(dot(self.field, row, v.elems()));
        }
        Ok(FieldVector { field: self.field, elems: out })
    }
}

/// Dot product of two canonical slices (lengths must match).
pub fn dot(field: Field, a: &[u64], b: &[u64]) -> u64 {
    debug_assert_eq!(a.len(), b.len());
    if field.q() == MERSENNE31 {
        // accumulate in u128 and reduce once; products are < 2^62
        let mut acc = 0u128;
        for (&x, &y) in a.iter().zip(b) {
            acc += (x * y) as u128;
        }
        (acc % MERSENNE31 as u128) as u64
    } else {
        let mut acc = 0u64;
        for (&x, &y) in a.iter().zip(b) {
            acc = field.add(acc, field.mul(x, y));
        }
        acc
    }
}
