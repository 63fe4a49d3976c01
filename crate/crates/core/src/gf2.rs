//! GF(2) vectors and matrices, bit packed 64 wide.
//!
//! Bit i of a vector lives at bit 63 - (i % 64) of word i / 64. Packing the
//! first bit at the top of the word means numeric word comparison orders
//! vectors lexicographically by bit index, and the hex form reads left to
//! right starting at bit 0.

use rand::RngCore;
use thiserror::Error;

/// Hard cap on vector length / matrix width.
pub const MAX_BITS: usize = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("dimension error: {0}")]
pub struct DimensionError(pub String);

fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

/// Bit vector over GF(2).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Gf2Vec {
    len: usize,
    words: Vec<u64>,
}

impl Gf2Vec {
    pub fn zero(len: usize) -> Self {
        assert!(len <= MAX_BITS, "vector length {len} exceeds {MAX_BITS}");
        Gf2Vec { len, words: vec![0; words_for(len)] }
    }

    pub fn random(len: usize, rng: &mut impl RngCore) -> Self {
        let mut v = Self::zero(len);
        for w in v.words.iter_mut() {
            *w = rng.next_u64();
        }
        v.mask_tail();
        v
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        let mut v = Self::zero(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b != 0 {
                v.set(i, true);
            }
        }
        v
    }

    /// Zero vector with ones at the given positions.
    pub fn from_indices(len: usize, ones: &[usize]) -> Self {
        let mut v = Self::zero(len);
        for &i in ones {
            v.set(i, true);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (63 - (i % 64))) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (63 - (i % 64));
        if bit {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    fn mask_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= u64::MAX << (64 - rem);
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn xor_assign(&mut self, rhs: &Gf2Vec) {
        assert_eq!(self.len, rhs.len, "xor of unequal lengths");
        for (a, b) in self.words.iter_mut().zip(rhs.words.iter()) {
            *a ^= b;
        }
    }

    pub fn xor(&self, rhs: &Gf2Vec) -> Gf2Vec {
        let mut out = self.clone();
        out.xor_assign(rhs);
        out
    }

    /// Inner product over GF(2).
    pub fn dot(&self, rhs: &Gf2Vec) -> bool {
        assert_eq!(self.len, rhs.len, "dot of unequal lengths");
        let mut acc = 0u32;
        for (a, b) in self.words.iter().zip(rhs.words.iter()) {
            acc ^= (a & b).count_ones();
        }
        acc & 1 == 1
    }

    /// True when bits 0..k are all zero.
    pub fn prefix_is_zero(&self, k: usize) -> bool {
        assert!(k <= self.len);
        self.leading_zeros() >= k
    }

    /// Number of zero bits before the first set bit (len if all zero).
    pub fn leading_zeros(&self) -> usize {
        let mut n = 0;
        for &w in &self.words {
            if w == 0 {
                n += 64;
            } else {
                n += w.leading_zeros() as usize;
                break;
            }
        }
        n.min(self.len)
    }

    /// Index of the first set bit.
    pub fn first_one(&self) -> Option<usize> {
        let lz = self.leading_zeros();
        (lz < self.len).then_some(lz)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let nb = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(nb);
        for &w in &self.words {
            out.extend_from_slice(&w.to_be_bytes());
        }
        out.truncate(nb);
        out
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> Result<Self, DimensionError> {
        if bytes.len() != len.div_ceil(8) {
            return Err(DimensionError(format!(
                "need {} bytes for {len} bits, got {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        let mut v = Self::zero(len);
        for (j, &b) in bytes.iter().enumerate() {
            let w = j / 8;
            v.words[w] |= (b as u64) << (56 - 8 * (j % 8));
        }
        let stray = {
            let mut copy = v.clone();
            copy.mask_tail();
            copy.words != v.words
        };
        if stray {
            return Err(DimensionError(format!("stray bits beyond length {len}")));
        }
        Ok(v)
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(self.len.div_ceil(8) * 2);
        for b in self.to_bytes() {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    pub fn from_hex(len: usize, hex: &str) -> Result<Self, DimensionError> {
        if hex.len() % 2 != 0 {
            return Err(DimensionError("odd hex length".into()));
        }
        let mut bytes = Vec::with_capacity(hex.len() / 2);
        for i in (0..hex.len()).step_by(2) {
            let b = u8::from_str_radix(&hex[i..i + 2], 16)
                .map_err(|e| DimensionError(format!("bad hex: {e}")))?;
            bytes.push(b);
        }
        Self::from_bytes(len, &bytes)
    }
}

impl std::fmt::Debug for Gf2Vec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Gf2Vec[{}]({})", self.len, self.to_hex())
    }
}

/// Dense GF(2) matrix stored as packed rows.
#[derive(Clone, PartialEq, Eq)]
pub struct Gf2Mat {
    cols: usize,
    rows: Vec<Gf2Vec>,
}

impl Gf2Mat {
    pub fn zero(nrows: usize, cols: usize) -> Self {
        assert!(cols <= MAX_BITS, "width {cols} exceeds {MAX_BITS}");
        Gf2Mat { cols, rows: vec![Gf2Vec::zero(cols); nrows] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zero(n, n);
        for i in 0..n {
            m.rows[i].set(i, true);
        }
        m
    }

    pub fn random(nrows: usize, cols: usize, rng: &mut impl RngCore) -> Self {
        let mut m = Self::zero(nrows, cols);
        for r in m.rows.iter_mut() {
            *r = Gf2Vec::random(cols, rng);
        }
        m
    }

    pub fn from_rows(rows: Vec<Gf2Vec>) -> Result<Self, DimensionError> {
        let cols = rows.first().map(Gf2Vec::len).unwrap_or(0);
        if cols > MAX_BITS {
            return Err(DimensionError(format!("width {cols} exceeds {MAX_BITS}")));
        }
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DimensionError("ragged rows".into()));
        }
        Ok(Gf2Mat { cols, rows })
    }

    /// Vertical concatenation of equal-width blocks.
    pub fn stack(blocks: &[&Gf2Mat]) -> Result<Self, DimensionError> {
        let cols = blocks.first().map(|m| m.cols).unwrap_or(0);
        if blocks.iter().any(|m| m.cols != cols) {
            return Err(DimensionError("stack of unequal widths".into()));
        }
        let mut rows = Vec::with_capacity(blocks.iter().map(|m| m.nrows()).sum());
        for m in blocks {
            rows.extend(m.rows.iter().cloned());
        }
        Ok(Gf2Mat { cols, rows })
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &Gf2Vec {
        &self.rows[r]
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.rows[r].get(c)
    }

    pub fn set(&mut self, r: usize, c: usize, bit: bool) {
        self.rows[r].set(c, bit);
    }

    pub fn mul_vec(&self, v: &Gf2Vec) -> Result<Gf2Vec, DimensionError> {
        if v.len() != self.cols {
            return Err(DimensionError(format!(
                "matrix is {}x{}, vector has {} bits",
                self.nrows(),
                self.cols,
                v.len()
            )));
        }
        let mut out = Gf2Vec::zero(self.nrows());
        for (r, row) in self.rows.iter().enumerate() {
            if row.dot(v) {
                out.set(r, true);
            }
        }
        Ok(out)
    }

    /// Row-echelon rank via elimination on a scratch copy.
    pub fn rank(&self) -> usize {
        let mut rows = self.rows.clone();
        let mut r = 0;
        for c in 0..self.cols {
            if r == rows.len() {
                break;
            }
            let Some(p) = (r..rows.len()).find(|&i| rows[i].get(c)) else {
                continue;
            };
            rows.swap(r, p);
            let pivot = rows[r].clone();
            for row in rows.iter_mut().skip(r + 1) {
                if row.get(c) {
                    row.xor_assign(&pivot);
                }
            }
            r += 1;
        }
        r
    }

    /// Solve self * x = b. Pivots take the first set bit per column, free
    /// variables are fixed to zero, inconsistency yields None.
    pub fn solve(&self, b: &Gf2Vec) -> Result<Option<Gf2Vec>, DimensionError> {
        if b.len() != self.nrows() {
            return Err(DimensionError(format!(
                "matrix has {} rows, rhs has {} bits",
                self.nrows(),
                b.len()
            )));
        }
        let mut rows = self.rows.clone();
        let mut rhs: Vec<bool> = (0..b.len()).map(|i| b.get(i)).collect();
        let mut pivots: Vec<(usize, usize)> = Vec::new();
        let mut r = 0;
        for c in 0..self.cols {
            if r == rows.len() {
                break;
            }
            let Some(p) = (r..rows.len()).find(|&i| rows[i].get(c)) else {
                continue;
            };
            rows.swap(r, p);
            rhs.swap(r, p);
            let pivot = rows[r].clone();
            let pb = rhs[r];
            for i in r + 1..rows.len() {
                if rows[i].get(c) {
                    rows[i].xor_assign(&pivot);
                    rhs[i] ^= pb;
                }
            }
            pivots.push((r, c));
            r += 1;
        }
        for i in r..rows.len() {
            if rows[i].is_zero() && rhs[i] {
                return Ok(None);
            }
        }
        let mut x = Gf2Vec::zero(self.cols);
        for &(row, col) in pivots.iter().rev() {
            // Row has its pivot at col plus bits to the right; x[col] is
            // still zero so the dot picks up only the settled tail.
            let val = rows[row].dot(&x) ^ rhs[row];
            x.set(col, val);
        }
        Ok(Some(x))
    }

    /// Gauss-Jordan inverse; None when singular.
    pub fn try_inverse(&self) -> Option<Gf2Mat> {
        if self.nrows() != self.cols {
            return None;
        }
        let n = self.cols;
        let mut a = self.rows.clone();
        let mut inv = Gf2Mat::identity(n).rows;
        for c in 0..n {
            let p = (c..n).find(|&i| a[i].get(c))?;
            a.swap(c, p);
            inv.swap(c, p);
            for i in 0..n {
                if i != c && a[i].get(c) {
                    let (pa, pi) = (a[c].clone(), inv[c].clone());
                    a[i].xor_assign(&pa);
                    inv[i].xor_assign(&pi);
                }
            }
        }
        Some(Gf2Mat { cols: n, rows: inv })
    }
}

impl std::fmt::Debug for Gf2Mat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Gf2Mat {}x{}", self.nrows(), self.cols)?;
        for r in &self.rows {
            writeln!(f, "  {}", r.to_hex())?;
        }
        Ok(())
    }
}

/// Invertible square matrix carrying its precomputed inverse.
#[derive(Clone, Debug)]
pub struct InvertibleGf2Mat {
    fwd: Gf2Mat,
    inv: Gf2Mat,
}

impl InvertibleGf2Mat {
    pub fn from_matrix(m: Gf2Mat) -> Option<Self> {
        let inv = m.try_inverse()?;
        Some(InvertibleGf2Mat { fwd: m, inv })
    }

    pub fn identity(n: usize) -> Self {
        InvertibleGf2Mat { fwd: Gf2Mat::identity(n), inv: Gf2Mat::identity(n) }
    }

    pub fn matrix(&self) -> &Gf2Mat {
        &self.fwd
    }

    pub fn inverse(&self) -> &Gf2Mat {
        &self.inv
    }

    pub fn apply(&self, v: &Gf2Vec) -> Gf2Vec {
        self.fwd.mul_vec(v).expect("dimension fixed at construction")
    }

    pub fn apply_inv(&self, v: &Gf2Vec) -> Gf2Vec {
        self.inv.mul_vec(v).expect("dimension fixed at construction")
    }

    pub fn dim(&self) -> usize {
        self.fwd.cols()
    }
}

/// Rejection-sample a uniform invertible matrix. Acceptance per attempt
/// approaches prod_{i>=1} (1 - 2^-i) ~ 0.2888, so a handful of tries.
pub fn sample_invertible(n: usize, rng: &mut impl RngCore) -> InvertibleGf2Mat {
    assert!(n > 0 && n <= MAX_BITS);
    loop {
        let m = Gf2Mat::random(n, n, rng);
        if let Some(inv) = m.try_inverse() {
            return InvertibleGf2Mat { fwd: m, inv };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_idx;
    use proptest::prelude::*;

    #[test]
    fn mat_vec_small_example() {
        let m = Gf2Mat::from_rows(vec![
            Gf2Vec::from_bits(&[1, 1, 0]),
            Gf2Vec::from_bits(&[0, 1, 1]),
            Gf2Vec::from_bits(&[1, 0, 1]),
        ])
        .unwrap();
        let v = Gf2Vec::from_bits(&[1, 0, 1]);
        let out = m.mul_vec(&v).unwrap();
        assert_eq!(out, Gf2Vec::from_bits(&[1, 1, 0]));
    }

    #[test]
    fn mat_vec_dimension_mismatch() {
        let m = Gf2Mat::identity(3);
        let v = Gf2Vec::zero(4);
        assert!(m.mul_vec(&v).is_err());
    }

    #[test]
    fn xor_and_prefix() {
        let a = Gf2Vec::from_indices(70, &[0, 65]);
        let b = Gf2Vec::from_indices(70, &[0, 69]);
        let c = a.xor(&b);
        assert!(c.prefix_is_zero(65));
        assert!(!c.prefix_is_zero(66));
        assert_eq!(c.leading_zeros(), 65);
        assert_eq!(c.weight(), 2);
    }

    #[test]
    fn lexicographic_order_follows_bit_index() {
        let a = Gf2Vec::from_bits(&[0, 1]);
        let b = Gf2Vec::from_bits(&[1, 0]);
        assert!(a < b);
        let c = Gf2Vec::from_indices(130, &[128]);
        let d = Gf2Vec::from_indices(130, &[1]);
        assert!(c < d);
    }

    #[test]
    fn hex_roundtrip_and_leading_bit_view() {
        let v = Gf2Vec::from_indices(12, &[0, 11]);
        // Bit 0 shows up in the top nibble.
        assert_eq!(v.to_hex(), "8010");
        let back = Gf2Vec::from_hex(12, &v.to_hex()).unwrap();
        assert_eq!(back, v);
        assert!(Gf2Vec::from_hex(12, "800f").is_err()); // stray bits past len
    }

    #[test]
    fn solve_exact_and_inconsistent() {
        // Duplicate rows with conflicting rhs have no solution.
        let m = Gf2Mat::from_rows(vec![
            Gf2Vec::from_bits(&[1, 0]),
            Gf2Vec::from_bits(&[1, 0]),
        ])
        .unwrap();
        assert_eq!(m.solve(&Gf2Vec::from_bits(&[0, 1])).unwrap(), None);
        assert_eq!(
            m.solve(&Gf2Vec::from_bits(&[1, 1])).unwrap(),
            Some(Gf2Vec::from_bits(&[1, 0]))
        );
    }

    #[test]
    fn solve_fixes_free_variables_to_zero() {
        let m = Gf2Mat::from_rows(vec![Gf2Vec::from_bits(&[1, 1, 0])]).unwrap();
        let x = m.solve(&Gf2Vec::from_bits(&[1])).unwrap().unwrap();
        // Pivot at column 0; columns 1 and 2 are free and stay zero.
        assert_eq!(x, Gf2Vec::from_bits(&[1, 0, 0]));
    }

    #[test]
    fn solve_roundtrip_randomized() {
        let mut rng = stream_idx(11, "solve", 0);
        for _ in 0..100 {
            let m = Gf2Mat::random(6, 10, &mut rng);
            let x = Gf2Vec::random(10, &mut rng);
            let b = m.mul_vec(&x).unwrap();
            let got = m.solve(&b).unwrap().expect("consistent by construction");
            assert_eq!(m.mul_vec(&got).unwrap(), b);
        }
    }

    /// Plain bool-matrix elimination used as an independent rank oracle.
    fn rank_reference(m: &Gf2Mat) -> usize {
        let mut a: Vec<Vec<bool>> = (0..m.nrows())
            .map(|r| (0..m.cols()).map(|c| m.get(r, c)).collect())
            .collect();
        let mut rank = 0;
        for c in 0..m.cols() {
            let Some(p) = (rank..a.len()).find(|&i| a[i][c]) else { continue };
            a.swap(rank, p);
            for i in 0..a.len() {
                if i != rank && a[i][c] {
                    let pivot = a[rank].clone();
                    for (x, y) in a[i].iter_mut().zip(pivot.iter()) {
                        *x ^= y;
                    }
                }
            }
            rank += 1;
            if rank == a.len() {
                break;
            }
        }
        rank
    }

    #[test]
    fn rank_matches_reference_elimination() {
        let mut rng = stream_idx(12, "rank", 0);
        for _ in 0..50 {
            let m = Gf2Mat::random(8, 12, &mut rng);
            assert_eq!(m.rank(), rank_reference(&m));
        }
        assert_eq!(Gf2Mat::identity(9).rank(), 9);
        let dup = Gf2Mat::from_rows(vec![
            Gf2Vec::from_bits(&[1, 1]),
            Gf2Vec::from_bits(&[1, 1]),
        ])
        .unwrap();
        assert_eq!(dup.rank(), 1);
    }

    #[test]
    fn stack_concatenates_and_rejects_ragged() {
        let a = Gf2Mat::identity(2);
        let b = Gf2Mat::zero(3, 2);
        let s = Gf2Mat::stack(&[&a, &b]).unwrap();
        assert_eq!(s.nrows(), 5);
        assert_eq!(s.cols(), 2);
        assert_eq!(s.row(1), a.row(1));
        let c = Gf2Mat::zero(1, 3);
        assert!(Gf2Mat::stack(&[&a, &c]).is_err());
    }

    #[test]
    fn gl2_has_exactly_six_elements() {
        let mut count = 0;
        for bits in 0u32..16 {
            let mut m = Gf2Mat::zero(2, 2);
            for p in 0..4 {
                m.set(p / 2, p % 2, bits >> p & 1 == 1);
            }
            // Independent invertibility oracle: 2x2 determinant over GF(2).
            let det = (m.get(0, 0) & m.get(1, 1)) ^ (m.get(0, 1) & m.get(1, 0));
            assert_eq!(m.try_inverse().is_some(), det);
            if det {
                count += 1;
            }
        }
        assert_eq!(count, 6);
    }

    #[test]
    fn sample_invertible_uniform_over_gl2() {
        let mut rng = stream_idx(13, "gl2", 0);
        let trials = 6000usize;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..trials {
            let m = sample_invertible(2, &mut rng);
            let key: Vec<bool> = (0..4).map(|p| m.matrix().get(p / 2, p % 2)).collect();
            *counts.entry(key).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let expect = trials as f64 / 6.0;
        let sigma = (trials as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for (_, &c) in &counts {
            assert!(
                (c as f64 - expect).abs() <= 3.0 * sigma,
                "count {c} outside 3 sigma of {expect}"
            );
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let mut rng = stream_idx(14, "inv", 0);
        for _ in 0..20 {
            let m = sample_invertible(24, &mut rng);
            let x = Gf2Vec::random(24, &mut rng);
            assert_eq!(m.apply_inv(&m.apply(&x)), x);
            assert_eq!(m.apply(&m.apply_inv(&x)), x);
        }
    }

    #[test]
    fn birthday_scale_sanity_at_n32() {
        // 10^4 uniform 32-bit draws: expected colliding pairs ~ 0.0116.
        let mut rng = stream_idx(15, "bday", 0);
        let mut seen = std::collections::HashSet::new();
        let mut collisions = 0;
        for _ in 0..10_000 {
            if !seen.insert(Gf2Vec::random(32, &mut rng)) {
                collisions += 1;
            }
        }
        assert!(collisions <= 3, "implausible collision count {collisions}");
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

        #[test]
        fn hex_roundtrip(len in 1usize..200, seed in 0u64..1 << 48) {
            let mut rng = stream_idx(seed, "hexrt", 0);
            let v = Gf2Vec::random(len, &mut rng);
            prop_assert_eq!(Gf2Vec::from_hex(len, &v.to_hex()).unwrap(), v);
        }

        #[test]
        fn xor_is_involutive(len in 1usize..200, seed in 0u64..1 << 48) {
            let mut rng = stream_idx(seed, "xorrt", 0);
            let a = Gf2Vec::random(len, &mut rng);
            let b = Gf2Vec::random(len, &mut rng);
            prop_assert_eq!(a.xor(&b).xor(&b), a);
        }

        #[test]
        fn solve_solution_satisfies_system(seed in 0u64..1 << 48) {
            let mut rng = stream_idx(seed, "solvep", 0);
            let m = Gf2Mat::random(7, 9, &mut rng);
            let x = Gf2Vec::random(9, &mut rng);
            let b = m.mul_vec(&x).unwrap();
            let got = m.solve(&b).unwrap().unwrap();
            prop_assert_eq!(m.mul_vec(&got).unwrap(), b);
        }
    }
}
