//! The keyed Feistel construction over a possibly subverted round family.
//!
//! Round i first applies a public affine encoding y = a_i * x + b_i with
//! invertible a_i, then feeds y to the (subverted) round oracle. The
//! construction proper always goes through the subverted path; with the
//! honest program that coincides with the raw family.

use crate::gf2::{sample_invertible, Gf2Vec, InvertibleGf2Mat};
use crate::oracle::{OracleError, QuerySet, SubvertedOracle};
use crate::rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("bad construction parameters: {0}")]
    Invalid(String),
}

/// Per-round affine encodings (a_i, b_i), rounds 1-based.
pub struct PublicRandomness {
    n: usize,
    rounds: Vec<(InvertibleGf2Mat, Gf2Vec)>,
}

impl PublicRandomness {
    /// Sample fresh encodings: a_i uniform invertible, b_i uniform.
    pub fn sample(n: usize, ell: usize, seed: u64) -> Self {
        assert!(n >= 1 && ell >= 1);
        let rounds = (1..=ell)
            .map(|i| {
                let mut sa = rng::stream(seed, "enc-a", &[&(i as u64).to_le_bytes()]);
                let mut sb = rng::stream(seed, "enc-b", &[&(i as u64).to_le_bytes()]);
                (sample_invertible(n, &mut sa), Gf2Vec::random(n, &mut sb))
            })
            .collect();
        PublicRandomness { n, rounds }
    }

    /// Identity encodings, for tests that want table coordinates raw.
    pub fn identity(n: usize, ell: usize) -> Self {
        let rounds = (0..ell).map(|_| (InvertibleGf2Mat::identity(n), Gf2Vec::zero(n))).collect();
        PublicRandomness { n, rounds }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ell(&self) -> usize {
        self.rounds.len()
    }

    pub fn a(&self, i: usize) -> &InvertibleGf2Mat {
        &self.rounds[i - 1].0
    }

    pub fn b(&self, i: usize) -> &Gf2Vec {
        &self.rounds[i - 1].1
    }

    /// y = a_i * x + b_i.
    pub fn encode(&self, i: usize, x: &Gf2Vec) -> Gf2Vec {
        let mut y = self.rounds[i - 1].0.apply(x);
        y.xor_assign(&self.rounds[i - 1].1);
        y
    }

    /// x = a_i^-1 * (y + b_i).
    pub fn decode(&self, i: usize, y: &Gf2Vec) -> Gf2Vec {
        self.rounds[i - 1].0.apply_inv(&y.xor(&self.rounds[i - 1].1))
    }
}

/// Which rule produced a parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileTag {
    EightN,
    Eps,
    Custom,
}

/// Network geometry for the simulator and games: total rounds, detection
/// window width, the two adapt positions, and the protected middle band.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConstructionParams {
    pub n: usize,
    pub ell: usize,
    pub w: usize,
    pub u_lo: usize,
    pub u_hi: usize,
    pub mid_lo: usize,
    pub mid_hi: usize,
    pub profile: ProfileTag,
}

impl ConstructionParams {
    /// ell = 8n with window max(3, n/10), adapt at 4n / 7n, band [3n, 5n].
    pub fn profile_8n(n: usize) -> Result<Self, ParamsError> {
        let p = ConstructionParams {
            n,
            ell: 8 * n,
            w: (n / 10).max(3),
            u_lo: 4 * n,
            u_hi: 7 * n,
            mid_lo: 3 * n,
            mid_hi: 5 * n,
            profile: ProfileTag::EightN,
        };
        p.validate()?;
        Ok(p)
    }

    /// ell = ceil(2000 n / log2(1/eps)); derived positions keep the same
    /// proportions of ell as the 8n profile.
    pub fn profile_eps(n: usize, eps: f64) -> Result<Self, ParamsError> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(ParamsError::Invalid(format!("eps {eps} outside (0, 1)")));
        }
        let bits = (1.0 / eps).log2();
        let ell = ((2000.0 * n as f64) / bits).ceil() as usize;
        let p = ConstructionParams {
            n,
            ell,
            w: (ell / 80).max(3),
            u_lo: ell / 2,
            u_hi: 7 * ell / 8,
            mid_lo: 3 * ell / 8,
            mid_hi: 5 * ell / 8,
            profile: ProfileTag::Eps,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn custom(
        n: usize,
        ell: usize,
        w: usize,
        u_lo: usize,
        u_hi: usize,
        mid_lo: usize,
        mid_hi: usize,
    ) -> Result<Self, ParamsError> {
        let p = ConstructionParams {
            n,
            ell,
            w,
            u_lo,
            u_hi,
            mid_lo,
            mid_hi,
            profile: ProfileTag::Custom,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), ParamsError> {
        let bad = |msg: String| Err(ParamsError::Invalid(msg));
        if self.n < 1 {
            return bad("n must be at least 1".into());
        }
        // A window binds its members through interior XOR relations, and a
        // width below 3 has none: any two entries at adjacent rounds would
        // count as a chain, and completions would cascade across unrelated
        // cycles until the tables blow up.
        if !(3 <= self.w && self.w < self.ell) {
            return bad(format!("window {} outside 3..{}", self.w, self.ell));
        }
        if self.u_lo < 2 {
            return bad(format!("low adapt position {} below 2", self.u_lo));
        }
        if !(self.u_lo + 1 < self.u_hi && self.u_hi + 2 <= self.ell) {
            return bad(format!(
                "adapt positions {} / {} incompatible with {} rounds",
                self.u_lo, self.u_hi, self.ell
            ));
        }
        if !(1 <= self.mid_lo && self.mid_lo <= self.u_lo && self.u_lo <= self.mid_hi) {
            return bad(format!(
                "low adapt position {} outside middle band [{}, {}]",
                self.u_lo, self.mid_lo, self.mid_hi
            ));
        }
        if !(self.mid_hi < self.u_hi) {
            return bad(format!(
                "high adapt position {} inside middle band ending {}",
                self.u_hi, self.mid_hi
            ));
        }
        Ok(())
    }

    /// True when round i lies in the protected middle band.
    pub fn in_band(&self, i: usize) -> bool {
        self.mid_lo <= i && i <= self.mid_hi
    }

    /// Adapt position for a detection window starting at s: the low
    /// position when the window misses the band entirely, else the high one.
    pub fn adapt_position(&self, s: usize) -> usize {
        if s > self.mid_hi || s + self.w - 1 < self.mid_lo {
            self.u_lo
        } else {
            self.u_hi
        }
    }
}

/// Rolling evaluation state: pair (x_{i-1}, x_i) about to enter round i.
#[derive(Clone, Debug)]
pub struct FeistelState {
    pub round: usize,
    pub prev: Gf2Vec,
    pub cur: Gf2Vec,
}

impl FeistelState {
    pub fn start(x0: Gf2Vec, x1: Gf2Vec) -> Self {
        FeistelState { round: 1, prev: x0, cur: x1 }
    }

    /// Feed this round's oracle output; the pair shifts one position up.
    pub fn advance(&mut self, round_value: &Gf2Vec) {
        let next = self.prev.xor(round_value);
        self.prev = std::mem::replace(&mut self.cur, next);
        self.round += 1;
    }
}

fn check_dims(o: &SubvertedOracle, r: &PublicRandomness) -> Result<(), OracleError> {
    if o.n() != r.n() || o.ell() != r.ell() {
        return Err(OracleError::Parameter(format!(
            "oracle is {}x{} rounds, encodings are {}x{}",
            o.n(),
            o.ell(),
            r.n(),
            r.ell()
        )));
    }
    Ok(())
}

/// Unsubverted encoded round function F_i(a_i x + b_i).
pub fn cf(
    o: &mut SubvertedOracle,
    r: &PublicRandomness,
    i: usize,
    x: &Gf2Vec,
) -> Result<Gf2Vec, OracleError> {
    check_dims(o, r)?;
    o.query_f(i, &r.encode(i, x))
}

/// Subverted encoded round function.
pub fn cf_tilde(
    o: &mut SubvertedOracle,
    r: &PublicRandomness,
    i: usize,
    x: &Gf2Vec,
) -> Result<Gf2Vec, OracleError> {
    check_dims(o, r)?;
    o.query_f_tilde(i, &r.encode(i, x))
}

/// Query set of a subverted evaluation, mapped back through the encodings so
/// members are (round, pre-encoding input) pairs. Evaluates on first touch.
pub fn cf_tilde_query_set(
    o: &mut SubvertedOracle,
    r: &PublicRandomness,
    i: usize,
    x: &Gf2Vec,
) -> Result<QuerySet, OracleError> {
    cf_tilde(o, r, i, x)?;
    let raw = o.query_log_lookup(i, &r.encode(i, x))?;
    Ok(raw.iter().map(|(j, y)| (*j, r.decode(*j, y))).collect())
}

/// Run the network forward: returns (x_ell, x_{ell+1}).
pub fn evaluate(
    o: &mut SubvertedOracle,
    r: &PublicRandomness,
    x0: &Gf2Vec,
    x1: &Gf2Vec,
) -> Result<(Gf2Vec, Gf2Vec), OracleError> {
    check_dims(o, r)?;
    let mut st = FeistelState::start(x0.clone(), x1.clone());
    for i in 1..=r.ell() {
        let v = cf_tilde(o, r, i, &st.cur)?;
        st.advance(&v);
    }
    Ok((st.prev, st.cur))
}

/// Run the network backward: returns (x_0, x_1).
pub fn invert(
    o: &mut SubvertedOracle,
    r: &PublicRandomness,
    x_ell: &Gf2Vec,
    x_ell1: &Gf2Vec,
) -> Result<(Gf2Vec, Gf2Vec), OracleError> {
    check_dims(o, r)?;
    let mut cur = x_ell.clone();
    let mut next = x_ell1.clone();
    for i in (1..=r.ell()).rev() {
        let v = cf_tilde(o, r, i, &cur)?;
        let prev = next.xor(&v);
        next = std::mem::replace(&mut cur, prev);
    }
    Ok((cur, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{OracleTable, SubversionProgram};
    use crate::rng::stream_idx;
    use proptest::prelude::*;

    fn honest_oracle(n: usize, ell: usize, seed: u64) -> SubvertedOracle {
        SubvertedOracle::new(OracleTable::new(n, ell, seed), SubversionProgram::honest(), 1)
    }

    #[test]
    fn encode_decode_roundtrip() {
        let r = PublicRandomness::sample(16, 3, 42);
        let mut rng = stream_idx(0, "ed", 0);
        for i in 1..=3 {
            for _ in 0..10 {
                let x = Gf2Vec::random(16, &mut rng);
                assert_eq!(r.decode(i, &r.encode(i, &x)), x);
            }
        }
    }

    #[test]
    fn one_round_network_matches_hand_computation() {
        let n = 12;
        let mut o = honest_oracle(n, 1, 7);
        let r = PublicRandomness::sample(n, 1, 8);
        let mut rng = stream_idx(1, "oneround", 0);
        let x0 = Gf2Vec::random(n, &mut rng);
        let x1 = Gf2Vec::random(n, &mut rng);
        let (out_l, out_r1) = evaluate(&mut o, &r, &x0, &x1).unwrap();
        // Independent recomputation straight from the raw oracle.
        let enc = r.a(1).apply(&x1).xor(r.b(1));
        let f = o.query_f(1, &enc).unwrap();
        assert_eq!(out_l, x1);
        assert_eq!(out_r1, x0.xor(&f));
    }

    #[test]
    fn all_zero_rounds_alternate_the_input_pair() {
        // prefix width 0 zeroes every round value, so positions alternate.
        let n = 10;
        let mut rng = stream_idx(2, "alt", 0);
        let x0 = Gf2Vec::random(n, &mut rng);
        let x1 = Gf2Vec::random(n, &mut rng);
        for (ell, swapped) in [(4usize, false), (5usize, true)] {
            let prog = SubversionProgram::prefix_zero(0, n).unwrap();
            let mut o = SubvertedOracle::new(OracleTable::new(n, ell, 3), prog, 1);
            let r = PublicRandomness::sample(n, ell, 4);
            let got = evaluate(&mut o, &r, &x0, &x1).unwrap();
            if swapped {
                assert_eq!(got, (x1.clone(), x0.clone()));
            } else {
                assert_eq!(got, (x0.clone(), x1.clone()));
            }
        }
    }

    #[test]
    fn honest_cf_equals_cf_tilde_and_query_set_decodes_to_self() {
        let n = 14;
        let mut o = honest_oracle(n, 5, 9);
        let r = PublicRandomness::sample(n, 5, 10);
        let mut rng = stream_idx(3, "hq", 0);
        for i in 1..=5 {
            let x = Gf2Vec::random(n, &mut rng);
            assert_eq!(cf(&mut o, &r, i, &x).unwrap(), cf_tilde(&mut o, &r, i, &x).unwrap());
            let qs = cf_tilde_query_set(&mut o, &r, i, &x).unwrap();
            assert_eq!(qs.len(), 1);
            assert!(qs.contains(&(i, x.clone())));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut o = honest_oracle(8, 2, 0);
        let r = PublicRandomness::sample(8, 3, 0);
        let x = Gf2Vec::zero(8);
        assert!(evaluate(&mut o, &r, &x, &x).is_err());
    }

    #[test]
    fn profile_8n_positions() {
        let p = ConstructionParams::profile_8n(30).unwrap();
        assert_eq!((p.ell, p.w), (240, 3));
        assert_eq!((p.u_lo, p.u_hi), (120, 210));
        assert_eq!((p.mid_lo, p.mid_hi), (90, 150));
        assert!(p.in_band(120) && !p.in_band(151));
        // Window [1, 3] misses the band; [89, 91] touches it.
        assert_eq!(p.adapt_position(1), 120);
        assert_eq!(p.adapt_position(89), 210);
        assert_eq!(p.adapt_position(151), 120);
    }

    #[test]
    fn profile_eps_scales_with_dishonesty_budget() {
        let p = ConstructionParams::profile_eps(30, 0.0625).unwrap();
        assert_eq!(p.ell, 15000);
        assert_eq!(p.w, 15000 / 80);
        assert_eq!((p.u_lo, p.u_hi), (7500, 13125));
        assert_eq!((p.mid_lo, p.mid_hi), (5625, 9375));
        assert!(ConstructionParams::profile_eps(30, 0.0).is_err());
        assert!(ConstructionParams::profile_eps(30, 1.0).is_err());
    }

    #[test]
    fn custom_validation() {
        // The tiny study profile.
        let p = ConstructionParams::custom(20, 24, 3, 12, 21, 9, 15).unwrap();
        assert_eq!(p.adapt_position(1), 12);
        assert_eq!(p.adapt_position(8), 21); // window [8, 10] touches band
        assert_eq!(p.adapt_position(16), 12);
        assert!(ConstructionParams::custom(20, 24, 0, 12, 21, 9, 15).is_err());
        assert!(ConstructionParams::custom(20, 24, 2, 12, 21, 9, 15).is_err()); // no interior relation
        assert!(ConstructionParams::custom(20, 24, 3, 12, 23, 9, 15).is_err()); // u_hi > ell-2
        assert!(ConstructionParams::custom(20, 24, 3, 1, 21, 1, 15).is_err()); // u_lo < 2
        assert!(ConstructionParams::custom(20, 24, 3, 8, 21, 9, 15).is_err()); // u_lo < mid_lo
        assert!(ConstructionParams::custom(20, 24, 3, 16, 21, 9, 15).is_err()); // u_lo > mid_hi
        assert!(ConstructionParams::custom(20, 24, 3, 12, 15, 9, 15).is_err()); // u_hi = mid_hi
        assert!(ConstructionParams::profile_8n(1).is_err()); // 7n > 8n - 2
        assert!(ConstructionParams::profile_8n(5).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

        #[test]
        fn invert_undoes_evaluate(seed in 0u64..1 << 40, subverted in proptest::bool::ANY) {
            let n = 10;
            let ell = 6;
            let prog = if subverted {
                SubversionProgram::prefix_zero(2, n).unwrap()
            } else {
                SubversionProgram::honest()
            };
            let mut o = SubvertedOracle::new(OracleTable::new(n, ell, seed), prog, 1);
            let r = PublicRandomness::sample(n, ell, seed ^ 0xabcd);
            let mut rng = stream_idx(seed, "rt", 1);
            let x0 = Gf2Vec::random(n, &mut rng);
            let x1 = Gf2Vec::random(n, &mut rng);
            let (l, r1) = evaluate(&mut o, &r, &x0, &x1).unwrap();
            let back = invert(&mut o, &r, &l, &r1).unwrap();
            prop_assert_eq!(back, (x0, x1));
        }
    }
}
