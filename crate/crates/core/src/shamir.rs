//! Threshold Shamir secret sharing over F_q, vectorized over long inputs,
//! with additive homomorphism and optional packing (pack_k secrets per share).
//!
//! Secrets are embedded at the fixed points q-1, q-2, ..., q-pack_k of a
//! random polynomial of degree t + pack_k - 2; party i's share is the
//! polynomial evaluated at party i's point (by default, point i). Any
//! t + pack_k - 1 shares reconstruct each block by Lagrange interpolation
//! at the embedding points. With pack_k = 1 this is classic Shamir sharing
//! with reconstruction threshold t.

use thiserror::Error;

use crate::field::{Field, FieldError, FieldVector};
use crate::wire::{Reader, WireError, Writer};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShareError {
    #[error("invalid sharing parameters: n={n}, t={t}, pack_k={pack_k}")]
    InvalidParams { n: usize, t: usize, pack_k: usize },
    #[error("cannot share an empty secret")]
    EmptySecret,
    #[error("evaluation point {0} is zero, duplicated, or collides with an embedding point")]
    BadEvaluationPoint(u64),
    #[error("{got} shares present but {needed} required for reconstruction")]
    ThresholdNotMet { got: usize, needed: usize },
    #[error("shares carry inconsistent parameters")]
    InconsistentParams,
    #[error("two shares carry the same evaluation point {0}")]
    DuplicatePoints(u64),
    #[error("shares from different owner points cannot be summed")]
    MixedOwnerPoints,
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Parameters of one sharing, carried inside every share so reconstruction
/// can validate consistency and strip block padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShareParams {
    /// Number of shares produced.
    pub n: usize,
    /// Reconstruction threshold (with pack_k = 1, t shares reconstruct).
    pub t: usize,
    /// Secrets packed per share; 1 = standard Shamir.
    pub pack_k: usize,
    /// Original secret length, for stripping the zero-padded final block.
    pub secret_len: usize,
}

impl ShareParams {
    /// Shares required for reconstruction: one more than the polynomial degree.
    pub fn required_shares(&self) -> usize {
        self.t + self.pack_k - 1
    }

    /// Number of secret blocks, i.e. elements per share.
    pub fn blocks(&self) -> usize {
        self.secret_len.div_ceil(self.pack_k)
    }

    fn validate(&self, field: Field) -> Result<(), ShareError> {
        // t + pack_k - 1 shares reconstruct, so that many must exist
        let ok = self.t >= 1
            && self.pack_k >= 1
            && self.t + self.pack_k - 1 <= self.n
            && (self.n as u64) < field.q();
        if !ok {
            return Err(ShareError::InvalidParams { n: self.n, t: self.t, pack_k: self.pack_k });
        }
        Ok(())
    }

    /// Points reserved for the secret embedding: q-1, ..., q-pack_k.
    fn embedding_points(&self, field: Field) -> Vec<u64> {
        (0..self.pack_k as u64).map(|j| field.q() - 1 - j).collect()
    }

    /// Points holding the t-1 blinding values, below the embedding points.
    fn randomness_points(&self, field: Field) -> Vec<u64> {
        (0..self.t as u64 - 1)
            .map(|j| field.q() - 1 - self.pack_k as u64 - j)
            .collect()
    }

    /// Smallest reserved point; party points must stay strictly below it.
    fn reserved_floor(&self, field: Field) -> u64 {
        field.q() - (self.pack_k + self.t - 1) as u64
    }
}

/// One party's share of a vector secret: the sharing polynomials of all
/// blocks evaluated at this party's point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareArray {
    pub owner_point: u64,
    pub values: FieldVector,
    pub params: ShareParams,
}

impl ShareArray {
    pub fn encode(&self, w: &mut Writer) {
        let field = self.values.field();
        w.put_elem(field, self.owner_point);
        w.put_u32(self.params.n as u32);
        w.put_u32(self.params.t as u32);
        w.put_u32(self.params.pack_k as u32);
        w.put_u32(self.params.secret_len as u32);
        w.put_fv(&self.values);
    }

    pub fn decode(r: &mut Reader, field: Field) -> Result<Self, WireError> {
        let owner_point = r.get_elem(field)?;
        let n = r.get_u32()? as usize;
        let t = r.get_u32()? as usize;
        let pack_k = r.get_u32()? as usize;
        let secret_len = r.get_u32()? as usize;
        let values = r.get_fv(field)?;
        Ok(ShareArray {
            owner_point,
            values,
            params: ShareParams { n, t, pack_k, secret_len },
        })
    }
}

/// Lagrange interpolation through fixed nodes, in coefficient form.
/// Precomputes, per node, the quotient polynomial scaled by its barycentric
/// weight, so interpolating many blocks through the same nodes is a
/// multiply-accumulate per node.
struct Interpolator {
    field: Field,
    /// scaled_quotients[i] = w_i * prod_{j != i} (x - x_j), coefficients low-to-high
    scaled_quotients: Vec<Vec<u64>>,
}

impl Interpolator {
    fn new(field: Field, xs: &[u64]) -> Result<Self, ShareError> {
        let m = xs.len();
        // master polynomial M(x) = prod (x - x_i), degree m
        let mut master = vec![0u64; m + 1];
        master[0] = 1;
        for (i, &x) in xs.iter().enumerate() {
            // multiply by (x - x_i)
            let neg = field.neg(x);
            let mut next = vec![0u64; m + 1];
            for k in 0..=i {
                next[k + 1] = field.add(next[k + 1], master[k]);
                next[k] = field.add(next[k], field.mul(master[k], neg));
            }
            master = next;
        }
        // barycentric denominators prod_{j != i} (x_i - x_j)
        let mut denoms = Vec::with_capacity(m);
        for (i, &xi) in xs.iter().enumerate() {
            let mut d = 1u64;
            for (j, &xj) in xs.iter().enumerate() {
                if i != j {
                    if xi == xj {
                        return Err(ShareError::DuplicatePoints(xi));
                    }
                    d = field.mul(d, field.sub(xi, xj));
                }
            }
            denoms.push(d);
        }
        let weights = field.batch_inv(&denoms)?;
        // synthetic division M / (x - x_i), scaled by w_i
        let mut scaled_quotients = Vec::with_capacity(m);
        for (i, &xi) in xs.iter().enumerate() {
            let mut q = vec![0u64; m];
            let mut carry = master[m];
            for k in (0..m).rev() {
                q[k] = carry;
                carry = field.add(master[k], field.mul(xi, carry));
            }
            for c in q.iter_mut() {
                *c = field.mul(*c, weights[i]);
            }
            scaled_quotients.push(q);
        }
        Ok(Interpolator { field, scaled_quotients })
    }

    /// Coefficients (low-to-high) of the unique polynomial through
    /// (x_i, ys[i]).
    fn coefficients(&self, ys: &[u64]) -> Vec<u64> {
        let m = self.scaled_quotients.len();
        debug_assert_eq!(ys.len(), m);
        let mut coeffs = vec![0u64; m];
        for (y, quot) in ys.iter().zip(&self.scaled_quotients) {
            if *y == 0 {
                continue;
            }
            for (c, &qc) in coeffs.iter_mut().zip(quot) {
                *c = self.field.add(*c, self.field.mul(*y, qc));
            }
        }
        coeffs
    }
}

fn horner(field: Field, coeffs: &[u64], x: u64) -> u64 {
    let mut acc = 0u64;
    for &c in coeffs.iter().rev() {
        acc = field.add(field.mul(acc, x), c);
    }
    acc
}

/// Split `secret` into shares at party points 1..=n.
pub fn share_array<R: rand::RngCore>(
    secret: &FieldVector,
    n: usize,
    t: usize,
    pack_k: usize,
    rng: &mut R,
) -> Result<Vec<ShareArray>, ShareError> {
    let points: Vec<u64> = (1..=n as u64).collect();
    share_array_at(secret, t, pack_k, &points, rng)
}

/// Split `secret` into one share per evaluation point. Points must be
/// nonzero, distinct, and below the reserved embedding/blinding range.
pub fn share_array_at<R: rand::RngCore>(
    secret: &FieldVector,
    t: usize,
    pack_k: usize,
    points: &[u64],
    rng: &mut R,
) -> Result<Vec<ShareArray>, ShareError> {
    let field = secret.field();
    if secret.is_empty() {
        return Err(ShareError::EmptySecret);
    }
    let params = ShareParams { n: points.len(), t, pack_k, secret_len: secret.len() };
    params.validate(field)?;
    let floor = params.reserved_floor(field);
    for (i, &p) in points.iter().enumerate() {
        if p == 0 || p >= floor {
            return Err(ShareError::BadEvaluationPoint(p));
        }
        if points[..i].contains(&p) {
            return Err(ShareError::DuplicatePoints(p));
        }
    }

    let mut xs = params.embedding_points(field);
    xs.extend(params.randomness_points(field));
    let interp = Interpolator::new(field, &xs)?;

    let blocks = params.blocks();
    let mut share_values: Vec<Vec<u64>> = vec![Vec::with_capacity(blocks); points.len()];
    let mut ys = vec![0u64; xs.len()];
    for b in 0..blocks {
        for j in 0..pack_k {
            let idx = b * pack_k + j;
            ys[j] = if idx < secret.len() { secret.get(idx) } else { 0 };
        }
        for y in ys.iter_mut().skip(pack_k) {
            *y = field.sample(rng);
        }
        let coeffs = interp.coefficients(&ys);
        for (vals, &p) in share_values.iter_mut().zip(points) {
            vals.push(horner(field, &coeffs, p));
        }
    }

    Ok(share_values
        .into_iter()
        .zip(points)
        .map(|(vals, &p)| ShareArray {
            owner_point: p,
            values: FieldVector::from_canonical(field, vals),
            params,
        })
        .collect())
}

/// Recover the secret vector from at least t + pack_k - 1 shares.
pub fn reconstruct_array(shares: &[ShareArray]) -> Result<FieldVector, ShareError> {
    let first = shares.first().ok_or(ShareError::ThresholdNotMet { got: 0, needed: 1 })?;
    let params = first.params;
    let field = first.values.field();
    let needed = params.required_shares();
    for s in shares {
        if s.params != params || s.values.field() != field || s.values.len() != params.blocks() {
            return Err(ShareError::InconsistentParams);
        }
    }
    let mut sorted: Vec<&ShareArray> = shares.iter().collect();
    sorted.sort_by_key(|s| s.owner_point);
    for pair in sorted.windows(2) {
        if pair[0].owner_point == pair[1].owner_point {
            return Err(ShareError::DuplicatePoints(pair[0].owner_point));
        }
    }
    if sorted.len() < needed {
        return Err(ShareError::ThresholdNotMet { got: sorted.len(), needed });
    }
    sorted.truncate(needed);

    let xs: Vec<u64> = sorted.iter().map(|s| s.owner_point).collect();
    // barycentric weights over the used points
    let mut denoms = Vec::with_capacity(needed);
    for (i, &xi) in xs.iter().enumerate() {
        let mut d = 1u64;
        for (j, &xj) in xs.iter().enumerate() {
            if i != j {
                d = field.mul(d, field.sub(xi, xj));
            }
        }
        denoms.push(d);
    }
    let weights = field.batch_inv(&denoms)?;

    // per embedding point e: coefficient c_i = w_i * prod_k (e - x_k) / (e - x_i)
    let embedding = params.embedding_points(field);
    let mut coeff_table: Vec<Vec<u64>> = Vec::with_capacity(embedding.len());
    for &e in &embedding {
        let diffs: Vec<u64> = xs.iter().map(|&x| field.sub(e, x)).collect();
        let prod = diffs.iter().fold(1u64, |acc, &d| field.mul(acc, d));
        let inv_diffs = field.batch_inv(&diffs)?;
        let coeffs = weights
            .iter()
            .zip(&inv_diffs)
            .map(|(&w, &inv_d)| field.mul(field.mul(w, prod), inv_d))
            .collect();
        coeff_table.push(coeffs);
    }

    let blocks = params.blocks();
    let mut out = Vec::with_capacity(blocks * params.pack_k);
    for b in 0..blocks {
        for coeffs in &coeff_table {
            let mut v = 0u64;
            for (share, &c) in sorted.iter().zip(coeffs) {
                v = field.add(v, field.mul(share.values.get(b), c));
            }
            out.push(v);
        }
    }
    out.truncate(params.secret_len);
    Ok(FieldVector::from_canonical(field, out))
}

/// Add one party's shares of several secrets, yielding that party's share of
/// the sum of the secrets.
pub fn sum_share_array(shares: &[ShareArray]) -> Result<ShareArray, ShareError> {
    let first = shares.first().ok_or(ShareError::ThresholdNotMet { got: 0, needed: 1 })?;
    let mut acc = first.clone();
    for s in &shares[1..] {
        if s.owner_point != acc.owner_point {
            return Err(ShareError::MixedOwnerPoints);
        }
        if s.params != acc.params {
            return Err(ShareError::InconsistentParams);
        }
        acc.values.add_assign(&s.values)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn f() -> Field {
        Field::mersenne31()
    }

    /// Independent oracle: straightforward O(m^2) Lagrange evaluation of the
    /// polynomial through (xs, ys) at point x.
    fn lagrange_eval_oracle(field: Field, xs: &[u64], ys: &[u64], x: u64) -> u64 {
        let mut acc = 0u64;
        for i in 0..xs.len() {
            let mut term = ys[i];
            for j in 0..xs.len() {
                if i != j {
                    let num = field.sub(x, xs[j]);
                    let den = field.sub(xs[i], xs[j]);
                    term = field.mul(term, field.mul(num, field.inv(den).unwrap()));
                }
            }
            acc = field.add(acc, term);
        }
        acc
    }

    #[test]
    fn roundtrip_grid() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for n in [3usize, 5, 8, 12] {
            for t in [1usize, 2, 4] {
                for pack_k in [1usize, 2, 3] {
                    if t + pack_k > n {
                        continue;
                    }
                    let secret = FieldVector::random(f(), 7, &mut rng);
                    let shares = share_array(&secret, n, t, pack_k, &mut rng).unwrap();
                    assert_eq!(shares.len(), n);
                    let got = reconstruct_array(&shares).unwrap();
                    assert_eq!(got, secret);
                }
            }
        }
    }

    #[test]
    fn two_of_three_matches_lagrange_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let secret = FieldVector::from_u64s(f(), &[5]);
        let shares = share_array(&secret, 3, 2, 1, &mut rng).unwrap();
        // oracle: interpolate the degree-1 polynomial through any two shares
        // and read off the embedding point q-1
        for pick in [[0usize, 2], [1, 2]] {
            let xs: Vec<u64> = pick.iter().map(|&i| shares[i].owner_point).collect();
            let ys: Vec<u64> = pick.iter().map(|&i| shares[i].values.get(0)).collect();
            let oracle = lagrange_eval_oracle(f(), &xs, &ys, f().q() - 1);
            assert_eq!(oracle, 5);
            let sub: Vec<ShareArray> = pick.iter().map(|&i| shares[i].clone()).collect();
            assert_eq!(reconstruct_array(&sub).unwrap().elems(), &[5]);
        }
    }

    #[test]
    fn below_threshold_errors() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let secret = FieldVector::random(f(), 4, &mut rng);
        let shares = share_array(&secret, 8, 3, 2, &mut rng).unwrap();
        let needed = shares[0].params.required_shares();
        assert_eq!(needed, 4);
        let err = reconstruct_array(&shares[..needed - 1]);
        assert!(matches!(err, Err(ShareError::ThresholdNotMet { .. })));
    }

    #[test]
    fn error_cases() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let secret = FieldVector::random(f(), 4, &mut rng);
        assert!(matches!(
            share_array(&secret, 3, 4, 1, &mut rng),
            Err(ShareError::InvalidParams { .. })
        ));
        // t = n is the all-shares-required boundary and stays valid
        let all = share_array(&secret, 3, 3, 1, &mut rng).unwrap();
        assert_eq!(reconstruct_array(&all).unwrap(), secret);
        // 1-of-1 degenerate sharing round-trips
        let one = share_array(&secret, 1, 1, 1, &mut rng).unwrap();
        assert_eq!(reconstruct_array(&one).unwrap(), secret);
        let empty = FieldVector::zeros(f(), 0);
        assert!(matches!(share_array(&empty, 4, 2, 1, &mut rng), Err(ShareError::EmptySecret)));

        let shares = share_array(&secret, 4, 2, 1, &mut rng).unwrap();
        let dup = vec![shares[0].clone(), shares[0].clone(), shares[1].clone()];
        assert!(matches!(reconstruct_array(&dup), Err(ShareError::DuplicatePoints(_))));
        assert!(matches!(
            sum_share_array(&[shares[0].clone(), shares[1].clone()]),
            Err(ShareError::MixedOwnerPoints)
        ));
        assert_eq!(sum_share_array(&[shares[2].clone()]).unwrap(), shares[2]);
    }

    #[test]
    fn additive_homomorphism_small() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let a = FieldVector::from_u64s(f(), &[3]);
        let b = FieldVector::from_u64s(f(), &[4]);
        let sa = share_array(&a, 4, 2, 1, &mut rng).unwrap();
        let sb = share_array(&b, 4, 2, 1, &mut rng).unwrap();
        let summed: Vec<ShareArray> = sa
            .iter()
            .zip(&sb)
            .map(|(x, y)| sum_share_array(&[x.clone(), y.clone()]).unwrap())
            .collect();
        assert_eq!(reconstruct_array(&summed).unwrap().elems(), &[7]);
    }

    #[test]
    fn share_encode_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let secret = FieldVector::random(f(), 5, &mut rng);
        let shares = share_array(&secret, 5, 2, 2, &mut rng).unwrap();
        let mut w = Writer::new();
        shares[3].encode(&mut w);
        let buf = w.finish();
        let mut r = Reader::new(&buf);
        let back = ShareArray::decode(&mut r, f()).unwrap();
        assert_eq!(back, shares[3]);
    }

    #[test]
    fn individual_shares_look_uniform_on_small_field() {
        // privacy smoke test: on the q=257 test field, a fixed share position
        // under fresh randomness should be uniform over [0, q)
        let field = Field::new_unchecked_small(257).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let secret = FieldVector::from_u64s(field, &[42]);
        let trials = 25700;
        let mut counts = vec![0u64; 257];
        for _ in 0..trials {
            let shares = share_array(&secret, 4, 2, 1, &mut rng).unwrap();
            counts[shares[0].values.get(0) as usize] += 1;
        }
        let expected = trials as f64 / 257.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 256 dof; 99.9th percentile is ~341
        assert!(chi2 < 341.0, "chi-square {chi2} too large for uniform shares");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn homomorphism_over_grid(
            seed in any::<u64>(),
            n in 3usize..10,
            len in 1usize..6,
        ) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let t = 1 + (seed as usize % (n - 1));
            let pack_k = 1 + (seed as usize / 7 % (n - t).max(1));
            prop_assume!(t + pack_k <= n);
            let a = FieldVector::random(f(), len, &mut rng);
            let b = FieldVector::random(f(), len, &mut rng);
            let sa = share_array(&a, n, t, pack_k, &mut rng).unwrap();
            let sb = share_array(&b, n, t, pack_k, &mut rng).unwrap();
            let summed: Vec<ShareArray> = sa.iter().zip(&sb)
                .map(|(x, y)| sum_share_array(&[x.clone(), y.clone()]).unwrap())
                .collect();
            let expect = a.add(&b).unwrap();
            prop_assert_eq!(reconstruct_array(&summed).unwrap(), expect);
        }
    }
}
