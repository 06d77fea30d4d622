//! Training objectives: multi-label BCE, temperature-softened multi-label
//! distillation (MKD), the symmetric contrastive transfer loss (CLT), and
//! their weighted combination.
//!
//! All losses are built from tape ops, so gradients come from the same
//! reverse-mode engine the backbone uses. Teacher-side inputs are passed
//! as non-grad leaves by callers; gradients then flow into the student
//! path only.

use rand_chacha::ChaCha8Rng;

use crate::bank::MemoryBank;
use crate::diff::{lit, Scalar, Var};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Weights of the combined objective `bce + alpha * mkd + beta * clt`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Distillation temperature.
    pub tau_kd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            tau: 0.07,
            tau_kd: 1.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.tau_kd > 0.0 && self.tau_kd.is_finite()) {
            return Err(Error::Config(format!(
                "tau_kd must be > 0, got {}",
                self.tau_kd
            )));
        }
        Ok(())
    }
}

/// Mean over every entry of `-[y ln p + (1 - y) ln(1 - p)]`.
pub fn bce_loss<'t, T: Scalar>(probs: Var<'t, T>, labels: Var<'t, T>) -> Result<Var<'t, T>> {
    if probs.shape() != labels.shape() {
        return Err(Error::ShapeMismatch {
            op: "bce_loss",
            lhs: probs.shape(),
            rhs: labels.shape(),
        });
    }
    let eps = lit::<T>(PROB_CLAMP);
    let p = probs.clamp(eps, T::one() - eps);
    let pos = labels.mul(p.ln()?)?;
    let neg = labels
        .scale_add(-T::one(), T::one())
        .mul(p.scale_add(-T::one(), T::one()).ln()?)?;
    Ok(pos.add(neg)?.mean().scale_add(-T::one(), T::zero()))
}

/// Binary temperature softmax `q = sigma((2p - 1) / tau_kd)`, elementwise.
pub fn mkd_q<T: Scalar>(p: Var<'_, T>, tau_kd: T) -> Var<'_, T> {
    let two = lit::<T>(2.0);
    p.scale_add(two / tau_kd, -T::one() / tau_kd).sigmoid()
}

/// `tau_kd^2 *` batch mean of the per-class Bernoulli KL between the
/// softened teacher and student outputs. Class axis is summed; gradients
/// reach the student probabilities only when the teacher enters as a
/// non-grad leaf.
pub fn mkd_loss<'t, T: Scalar>(
    p_teacher: Var<'t, T>,
    p_student: Var<'t, T>,
    tau_kd: T,
) -> Result<Var<'t, T>> {
    if p_teacher.shape() != p_student.shape() {
        return Err(Error::ShapeMismatch {
            op: "mkd_loss",
            lhs: p_teacher.shape(),
            rhs: p_student.shape(),
        });
    }
    let eps = lit::<T>(PROB_CLAMP);
    let one = T::one();
    let q_t = mkd_q(p_teacher.clamp(eps, one - eps), tau_kd);
    let q_s = mkd_q(p_student.clamp(eps, one - eps), tau_kd);
    let q_t1 = q_t.scale_add(-one, one);
    let q_s1 = q_s.scale_add(-one, one);
    // KL(Bern(q_t) || Bern(q_s)) = q_t (ln q_t - ln q_s) + (1-q_t)(ln(1-q_t) - ln(1-q_s))
    let fore = q_t.mul(q_t.ln()?.add(q_s.ln()?.scale_add(-one, T::zero()))?)?;
    let aft = q_t1.mul(q_t1.ln()?.add(q_s1.ln()?.scale_add(-one, T::zero()))?)?;
    let kl = fore.add(aft)?;
    let class_axis = kl.shape().len() - 1;
    let per_sample = kl.sum_axis(class_axis)?;
    Ok(per_sample.mean().scale_add(tau_kd * tau_kd, T::zero()))
}

fn check_unit_rows<T: Scalar>(data: &[T], dim: usize) -> Result<()> {
    let tol = 1e-3;
    for (r, row) in data.chunks(dim).enumerate() {
        let norm = row
            .iter()
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
            .to_f64()
            .unwrap_or(f64::NAN);
        if !((norm - 1.0).abs() <= tol) {
            return Err(Error::NonUnitRow { row: r, norm });
        }
    }
    Ok(())
}

/// One direction of the contrastive transfer loss: softmax cross-entropy
/// of picking the paired positive against `N` negatives at temperature
/// `tau`. `negatives` is a flattened `[N, d]` constant block.
pub fn clt_infonce<'t, T: Scalar>(
    anchors: Var<'t, T>,
    positives: Var<'t, T>,
    negatives: &[T],
    tau: T,
) -> Result<Var<'t, T>> {
    let shape = anchors.shape();
    if shape.len() != 2 || positives.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "clt_infonce",
            lhs: shape,
            rhs: positives.shape(),
        });
    }
    let (batch, dim) = (shape[0], shape[1]);
    if negatives.is_empty() || negatives.len() % dim != 0 {
        return Err(Error::InsufficientRows {
            requested: 1,
            available: negatives.len() / dim,
        });
    }
    let n_neg = negatives.len() / dim;
    check_unit_rows(&anchors.value(), dim)?;
    check_unit_rows(&positives.value(), dim)?;
    check_unit_rows(negatives, dim)?;

    let tape = anchors.tape;
    let inv_tau = T::one() / tau;
    // paired logit: row-wise dot of anchors and positives
    let pos_logit = anchors
        .mul(positives)?
        .sum_axis(1)?
        .scale_add(inv_tau, T::zero());
    // negative logits: anchors @ negatives^T
    let mut neg_t = vec![T::zero(); dim * n_neg];
    for (r, row) in negatives.chunks(dim).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            neg_t[c * n_neg + r] = v;
        }
    }
    let neg_mat = tape.leaf(&[dim, n_neg], &neg_t, false);
    let neg_logits = anchors.matmul(neg_mat)?.scale_add(inv_tau, T::zero());
    let all = tape.concat(&[pos_logit.reshape(&[batch, 1])?, neg_logits], 1)?;
    let lse = all.logsumexp(1)?;
    Ok(lse.add(pos_logit.scale_add(-T::one(), T::zero()))?.mean())
}

/// Symmetric contrastive transfer loss over the two memory banks:
/// the student anchors score against teacher-bank negatives and vice
/// versa; the two directions are averaged. Negatives are sampled without
/// replacement, excluding `batch_indices`.
#[allow(clippy::too_many_arguments)]
pub fn clt_loss<'t, T: Scalar>(
    student_emb: Var<'t, T>,
    teacher_emb: Var<'t, T>,
    student_bank: &MemoryBank<T>,
    teacher_bank: &MemoryBank<T>,
    batch_indices: &[usize],
    n_negatives: usize,
    tau: T,
    rng: &mut ChaCha8Rng,
) -> Result<Var<'t, T>> {
    let teacher_negs = teacher_bank.sample(n_negatives, batch_indices, rng)?;
    let student_negs = student_bank.sample(n_negatives, batch_indices, rng)?;
    let fwd = clt_infonce(student_emb, teacher_emb, &teacher_negs, tau)?;
    let rev = clt_infonce(teacher_emb, student_emb, &student_negs, tau)?;
    Ok(fwd.add(rev)?.scale_add(lit::<T>(0.5), T::zero()))
}

/// Combined objective `bce + alpha * mkd + beta * clt`. Rejects
/// non-finite inputs, naming the offending term.
pub fn mvkt_loss<'t, T: Scalar>(
    bce: Var<'t, T>,
    mkd: Var<'t, T>,
    clt: Var<'t, T>,
    weights: &LossWeights,
) -> Result<Var<'t, T>> {
    for (term, v) in [("bce", bce), ("mkd", mkd), ("clt", clt)] {
        if !v.scalar_value().is_finite() {
            return Err(Error::NonFinite { term });
        }
    }
    let alpha = lit::<T>(weights.alpha);
    let beta = lit::<T>(weights.beta);
    bce.add(mkd.scale_add(alpha, T::zero()))?
        .add(clt.scale_add(beta, T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tape;
    use crate::rng::{stream, tag};

    /// High-precision oracle for one Bernoulli KL term.
    fn kl_bern(q_t: f64, q_s: f64) -> f64 {
        q_t * (q_t / q_s).ln() + (1.0 - q_t) * ((1.0 - q_t) / (1.0 - q_s)).ln()
    }

    fn sigma(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn bce_at_half_probs_is_ln_two() {
        let tape: Tape<f64> = Tape::new();
        let p = tape.leaf(&[2, 2], &[0.5; 4], true);
        let y = tape.leaf(&[2, 2], &[1.0, 0.0, 0.0, 1.0], false);
        let loss = bce_loss(p, y).unwrap().scalar_value();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_single_entry_matches_neg_ln() {
        let tape: Tape<f64> = Tape::new();
        let p = tape.leaf(&[1], &[0.9], true);
        let y = tape.leaf(&[1], &[1.0], false);
        let loss = bce_loss(p, y).unwrap().scalar_value();
        let expected = -(0.9f64).ln(); // 0.105361
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.105361).abs() < 1e-6);
    }

    #[test]
    fn bce_averages_equal_terms() {
        let tape: Tape<f64> = Tape::new();
        let p = tape.leaf(&[1, 2], &[0.9, 0.1], true);
        let y = tape.leaf(&[1, 2], &[1.0, 0.0], false);
        let loss = bce_loss(p, y).unwrap().scalar_value();
        assert!((loss - 0.105361).abs() < 1e-6);
    }

    #[test]
    fn bce_rejects_shape_mismatch() {
        let tape: Tape<f64> = Tape::new();
        let p = tape.leaf(&[2], &[0.5, 0.5], true);
        let y = tape.leaf(&[3], &[1.0, 0.0, 1.0], false);
        assert!(bce_loss(p, y).is_err());
    }

    #[test]
    fn mkd_q_fixed_points() {
        let tape: Tape<f64> = Tape::new();
        let p = tape.leaf(&[3], &[0.5, 0.8, 1.0], false);
        let q15 = mkd_q(p, 1.5).value();
        assert!((q15[0] - 0.5).abs() < 1e-12);
        assert!((q15[1] - sigma(0.4)).abs() < 1e-12);
        assert!((q15[1] - 0.598688).abs() < 1e-6);
        let q1 = mkd_q(p, 1.0).value();
        assert!((q1[2] - sigma(1.0)).abs() < 1e-12);
        assert!((q1[2] - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn mkd_q_is_increasing_and_complementary() {
        let tape: Tape<f64> = Tape::new();
        let ps: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        let p = tape.leaf(&[99], &ps, false);
        let q = mkd_q(p, 1.5).value();
        for w in q.windows(2) {
            assert!(w[1] > w[0]);
        }
        for i in 0..99 {
            assert!((q[i] + q[98 - i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mkd_loss_zero_for_identical_probs() {
        let tape: Tape<f64> = Tape::new();
        let p = tape.leaf(&[2, 3], &[0.1, 0.4, 0.9, 0.2, 0.6, 0.7], false);
        let q = tape.leaf(&[2, 3], &[0.1, 0.4, 0.9, 0.2, 0.6, 0.7], true);
        let loss = mkd_loss(p, q, 1.5).unwrap().scalar_value();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn mkd_loss_matches_bernoulli_kl_oracle() {
        let tape: Tape<f64> = Tape::new();
        let pt = tape.leaf(&[1, 1], &[0.8], false);
        let ps = tape.leaf(&[1, 1], &[0.5], true);
        let loss = mkd_loss(pt, ps, 1.5).unwrap().scalar_value();
        let oracle = 1.5 * 1.5 * kl_bern(sigma((2.0 * 0.8 - 1.0) / 1.5), 0.5);
        assert!((loss - oracle).abs() < 1e-12);
        assert!((loss - 0.044121).abs() < 1e-6);
    }

    #[test]
    fn mkd_loss_is_nonnegative() {
        let tape: Tape<f64> = Tape::new();
        let mut rng = stream(5, tag::INIT);
        use rand::Rng;
        for _ in 0..50 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..0.99)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..0.99)).collect();
            let pt = tape.leaf(&[1, 4], &a, false);
            let ps = tape.leaf(&[1, 4], &b, true);
            let loss = mkd_loss(pt, ps, 1.5).unwrap().scalar_value();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn mkd_gradient_skips_frozen_teacher() {
        let tape: Tape<f64> = Tape::new();
        let pt = tape.leaf(&[1, 2], &[0.8, 0.3], false);
        let ps = tape.leaf(&[1, 2], &[0.4, 0.6], true);
        let loss = mkd_loss(pt, ps, 1.5).unwrap();
        tape.backward(loss).unwrap();
        assert!(pt.grad().is_none());
        assert!(ps.grad().is_some());
    }

    fn unit_rows(n: usize, d: usize, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = stream(seed, tag::NEGATIVES);
        let mut out = vec![0.0f64; n * d];
        for row in out.chunks_mut(d) {
            let mut s = 0.0f64;
            for v in row.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
                s += *v * *v;
            }
            let inv = 1.0 / s.sqrt();
            row.iter_mut().for_each(|v| *v *= inv);
        }
        out
    }

    #[test]
    fn infonce_uniform_similarity_is_ln_n_plus_one() {
        let tape: Tape<f64> = Tape::new();
        let d = 8;
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        let rows: Vec<f64> = e.repeat(3);
        let a = tape.leaf(&[3, d], &rows, true);
        let p = tape.leaf(&[3, d], &rows, false);
        let negs = e.repeat(1024);
        let loss = clt_infonce(a, p, &negs, 0.07).unwrap().scalar_value();
        assert!((loss - 1025f64.ln()).abs() < 1e-9);
        assert!((loss - 6.932448).abs() < 1e-6);
    }

    #[test]
    fn infonce_single_negative_hand_value() {
        let tape: Tape<f64> = Tape::new();
        // anchor = positive = e0, negative orthogonal: loss = ln(1 + e^-1)
        let a = tape.leaf(&[1, 2], &[1.0, 0.0], true);
        let p = tape.leaf(&[1, 2], &[1.0, 0.0], false);
        let negs = vec![0.0, 1.0];
        let loss = clt_infonce(a, p, &negs, 1.0).unwrap().scalar_value();
        let expected = (1.0 + (-1.0f64).exp()).ln(); // 0.313262
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn infonce_is_nonnegative_and_monotone_in_positive_similarity() {
        let tape: Tape<f64> = Tape::new();
        let negs = unit_rows(16, 4, 3);
        let mut last = f64::INFINITY;
        for angle in [0.0f64, 0.5, 1.0, 1.5] {
            let a = tape.leaf(&[1, 4], &[1.0, 0.0, 0.0, 0.0], true);
            let p = tape.leaf(&[1, 4], &[angle.cos(), angle.sin(), 0.0, 0.0], false);
            let loss = clt_infonce(a, p, &negs, 0.5).unwrap().scalar_value();
            assert!(loss >= 0.0);
            // cos(angle) decreases over the sweep, loss must increase
            assert!(loss > last || angle == 0.0);
            last = loss;
        }
    }

    #[test]
    fn infonce_rejects_non_unit_rows_and_empty_negatives() {
        let tape: Tape<f64> = Tape::new();
        let a = tape.leaf(&[1, 2], &[2.0, 0.0], true);
        let p = tape.leaf(&[1, 2], &[1.0, 0.0], false);
        assert!(matches!(
            clt_infonce(a, p, &[0.0, 1.0], 1.0),
            Err(Error::NonUnitRow { .. })
        ));
        let a = tape.leaf(&[1, 2], &[1.0, 0.0], true);
        assert!(matches!(
            clt_infonce(a, p, &[], 1.0),
            Err(Error::InsufficientRows { .. })
        ));
    }

    #[test]
    fn clt_loss_uniform_banks_give_ln_n_plus_one() {
        let dim = 8;
        let mut e = vec![0.0f64; dim];
        e[0] = 1.0;
        let mut bank_rng = stream(1, tag::BANK_STUDENT);
        let mut sb = MemoryBank::<f64>::init(64, dim, 0.0, &mut bank_rng);
        let mut tb = MemoryBank::<f64>::init(64, dim, 0.0, &mut bank_rng);
        let all: Vec<usize> = (0..64).collect();
        let rows = e.repeat(64);
        sb.update(&all, &rows).unwrap();
        tb.update(&all, &rows).unwrap();
        let tape: Tape<f64> = Tape::new();
        let emb = tape.leaf(&[4, dim], &e.repeat(4), true);
        let temb = tape.leaf(&[4, dim], &e.repeat(4), false);
        let mut rng = stream(2, tag::NEGATIVES);
        let loss = clt_loss(emb, temb, &sb, &tb, &[0, 1, 2, 3], 32, 0.07, &mut rng)
            .unwrap()
            .scalar_value();
        assert!((loss - 33f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn clt_loss_rejects_oversized_negative_request() {
        let mut bank_rng = stream(1, tag::BANK_STUDENT);
        let sb = MemoryBank::<f64>::init(8, 4, 0.5, &mut bank_rng);
        let tb = MemoryBank::<f64>::init(8, 4, 0.5, &mut bank_rng);
        let tape: Tape<f64> = Tape::new();
        let e = tape.leaf(&[1, 4], &[1.0, 0.0, 0.0, 0.0], true);
        let t = tape.leaf(&[1, 4], &[1.0, 0.0, 0.0, 0.0], false);
        let mut rng = stream(2, tag::NEGATIVES);
        assert!(matches!(
            clt_loss(e, t, &sb, &tb, &[0], 8, 0.07, &mut rng),
            Err(Error::InsufficientRows { .. })
        ));
    }

    #[test]
    fn mvkt_combines_linearly() {
        let tape: Tape<f64> = Tape::new();
        let bce = tape.leaf(&[1], &[0.7], true);
        let mkd = tape.leaf(&[1], &[0.04], true);
        let clt = tape.leaf(&[1], &[6.9], true);
        let w = LossWeights {
            alpha: 1.0,
            beta: 1.0,
            ..Default::default()
        };
        let total = mvkt_loss(bce, mkd, clt, &w).unwrap().scalar_value();
        assert!((total - 7.64).abs() < 1e-12);

        let w0 = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            ..Default::default()
        };
        let only_bce = mvkt_loss(bce, mkd, clt, &w0).unwrap().scalar_value();
        assert_eq!(only_bce, 0.7);

        let w2 = LossWeights {
            alpha: 2.0,
            beta: 1.0,
            ..Default::default()
        };
        let doubled = mvkt_loss(bce, mkd, clt, &w2).unwrap().scalar_value();
        assert!((doubled - total - 0.04).abs() < 1e-12);
    }

    #[test]
    fn mvkt_rejects_non_finite_terms() {
        let tape: Tape<f64> = Tape::new();
        let bce = tape.leaf(&[1], &[0.7], true);
        let mkd = tape.leaf(&[1], &[f64::NAN], true);
        let clt = tape.leaf(&[1], &[0.0], true);
        let err = mvkt_loss(bce, mkd, clt, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("mkd"));
    }

    #[test]
    fn beta_zero_sends_no_gradient_through_clt() {
        let tape: Tape<f64> = Tape::new();
        let bce = tape.leaf(&[1], &[0.7], true);
        let mkd = tape.leaf(&[1], &[0.1], false);
        let clt = tape.leaf(&[1], &[6.9], true);
        let w = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            ..Default::default()
        };
        let total = mvkt_loss(bce, mkd, clt, &w).unwrap();
        tape.backward(total).unwrap();
        assert_eq!(clt.grad().unwrap(), vec![0.0]);
        assert_eq!(bce.grad().unwrap(), vec![1.0]);
    }
}
