//! Token-level distillation kernels: forward/reverse KL and Jensen-Shannon
//! divergences, teacher top-k truncation, the full-response (SDPO) loss and
//! the masked (ROSD) loss.
//!
//! Two routes exist side by side. The distribution route works on
//! [`TokenDistribution`] values and is what the spec-level operations expose.
//! The logits route (`*_from_logits`) additionally returns analytic gradients
//! with respect to student logits and is what the trainer drives; its teacher
//! side is a constant — the returned teacher gradient is identically zero.

use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Probability floor applied inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Divergence {
    #[serde(rename = "FKL")]
    Fkl,
    #[serde(rename = "RKL")]
    Rkl,
    #[serde(rename = "JSD")]
    Jsd,
}

impl FromStr for Divergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fkl" => Ok(Divergence::Fkl),
            "rkl" => Ok(Divergence::Rkl),
            "jsd" => Ok(Divergence::Jsd),
            other => Err(Error::Config(format!("unknown divergence: {other}"))),
        }
    }
}

/// A next-token distribution over an explicit support.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub support: Vec<u32>,
    pub probs: Vec<f64>,
    pub truncated: bool,
    pub k: Option<usize>,
}

impl TokenDistribution {
    /// Full-vocabulary distribution: support is 0..probs.len().
    pub fn full(probs: Vec<f64>) -> Self {
        let support = (0..probs.len() as u32).collect();
        TokenDistribution {
            support,
            probs,
            truncated: false,
            k: None,
        }
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        TokenDistribution::full(softmax(logits))
    }

    pub fn validate(&self) -> Result<()> {
        if self.support.len() != self.probs.len() {
            return Err(Error::Input("support/probs length mismatch".into()));
        }
        if self.probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Input("probabilities must be finite and >= 0".into()));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!("probabilities sum to {sum}, not 1")));
        }
        let mut seen = self.support.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.support.len() {
            return Err(Error::Input("support indices must be unique".into()));
        }
        Ok(())
    }

    fn prob_of(&self, token: u32) -> f64 {
        self.support
            .iter()
            .position(|&t| t == token)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= sum;
    }
    out
}

/// Pairs of (p, q) over the union of the two supports, in ascending token
/// order; tokens missing from a side carry probability zero.
fn align(p: &TokenDistribution, q: &TokenDistribution) -> Vec<(f64, f64)> {
    let mut tokens: Vec<u32> = p.support.iter().chain(q.support.iter()).cloned().collect();
    tokens.sort_unstable();
    tokens.dedup();
    tokens
        .into_iter()
        .map(|t| (p.prob_of(t), q.prob_of(t)))
        .collect()
}

#[inline]
fn ln_floored(x: f64) -> f64 {
    x.max(PROB_FLOOR).ln()
}

/// KL(p || q) = sum p ln(p/q). Returns `f64::INFINITY` when p puts mass where
/// q has none.
pub fn forward_kl(p: &TokenDistribution, q: &TokenDistribution) -> f64 {
    let mut total = 0.0;
    for (pi, qi) in align(p, q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return f64::INFINITY;
        }
        total += pi * (ln_floored(pi) - ln_floored(qi));
    }
    total
}

/// KL(q || p).
pub fn reverse_kl(p: &TokenDistribution, q: &TokenDistribution) -> f64 {
    forward_kl(q, p)
}

/// Jensen-Shannon divergence with mixture weight `alpha` in (0,1):
/// `alpha*KL(p||m) + (1-alpha)*KL(q||m)` with `m = alpha*p + (1-alpha)*q`.
/// Finite for all inputs; symmetric and bounded by ln 2 at alpha = 0.5.
pub fn jsd(p: &TokenDistribution, q: &TokenDistribution, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let mut total = 0.0;
    for (pi, qi) in align(p, q) {
        let mi = alpha * pi + (1.0 - alpha) * qi;
        if pi > 0.0 {
            total += alpha * pi * (ln_floored(pi) - ln_floored(mi));
        }
        if qi > 0.0 {
            total += (1.0 - alpha) * qi * (ln_floored(qi) - ln_floored(mi));
        }
    }
    Ok(total)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "jsd alpha must lie in (0,1), got {alpha}"
        )));
    }
    Ok(())
}

/// D(student || teacher) under the selected divergence.
pub fn divergence(
    div: Divergence,
    student: &TokenDistribution,
    teacher: &TokenDistribution,
    alpha: f64,
) -> Result<f64> {
    match div {
        Divergence::Fkl => Ok(forward_kl(student, teacher)),
        Divergence::Rkl => Ok(reverse_kl(student, teacher)),
        Divergence::Jsd => jsd(student, teacher, alpha),
    }
}

/// Restricts both distributions to the k highest-probability teacher tokens
/// (ties broken toward the lower token index) and renormalizes each side.
/// A k at or above the support size is a no-op that still renormalizes.
pub fn truncate_topk(
    teacher: &TokenDistribution,
    student: &TokenDistribution,
    k: usize,
) -> Result<(TokenDistribution, TokenDistribution)> {
    if k < 1 {
        return Err(Error::Config("top-k must be >= 1".into()));
    }
    let keep = topk_support(teacher, k);
    let restrict = |d: &TokenDistribution| {
        let probs: Vec<f64> = keep.iter().map(|&t| d.prob_of(t)).collect();
        let sum: f64 = probs.iter().sum();
        let probs = if sum > 0.0 {
            probs.iter().map(|p| p / sum).collect()
        } else {
            vec![1.0 / keep.len() as f64; keep.len()]
        };
        TokenDistribution {
            support: keep.clone(),
            probs,
            truncated: true,
            k: Some(k),
        }
    };
    Ok((restrict(teacher), restrict(student)))
}

/// The k teacher tokens with highest probability, ascending token order.
pub fn topk_support(teacher: &TokenDistribution, k: usize) -> Vec<u32> {
    let mut order: Vec<usize> = (0..teacher.support.len()).collect();
    order.sort_by(|&a, &b| {
        teacher.probs[b]
            .partial_cmp(&teacher.probs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(teacher.support[a].cmp(&teacher.support[b]))
    });
    let mut keep: Vec<u32> = order
        .into_iter()
        .take(k.min(teacher.support.len()))
        .map(|i| teacher.support[i])
        .collect();
    keep.sort_unstable();
    keep
}

/// Per-token 0/1 distillation weights: zero strictly before the error index
/// `k`, one from `k` onward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillationMask {
    pub weights: Vec<u8>,
    pub k: usize,
    pub t_len: usize,
}

impl DistillationMask {
    pub fn all_ones(t_len: usize) -> Self {
        DistillationMask {
            weights: vec![1; t_len],
            k: 0,
            t_len,
        }
    }

    pub fn from_error_index(k: usize, t_len: usize) -> Self {
        let weights = (0..t_len).map(|t| u8::from(t >= k)).collect();
        DistillationMask { weights, k, t_len }
    }
}

fn check_positions(student: usize, teacher: usize) -> Result<()> {
    if student != teacher {
        return Err(Error::Input(format!(
            "position count mismatch: student {student}, teacher {teacher}"
        )));
    }
    if student == 0 {
        return Err(Error::Input("at least one position required".into()));
    }
    Ok(())
}

/// Masked token-level objective: `sum_t m_t * D(student_t || teacher_t)`.
/// The teacher side is a constant with respect to optimization.
pub fn rosd_loss(
    student_dists: &[TokenDistribution],
    teacher_dists: &[TokenDistribution],
    mask: &DistillationMask,
    div: Divergence,
    alpha: f64,
) -> Result<f64> {
    check_positions(student_dists.len(), teacher_dists.len())?;
    if mask.weights.len() != student_dists.len() {
        return Err(Error::Input(format!(
            "mask length {} does not match position count {}",
            mask.weights.len(),
            student_dists.len()
        )));
    }
    let mut total = 0.0;
    for (t, (s, te)) in student_dists.iter().zip(teacher_dists.iter()).enumerate() {
        if mask.weights[t] == 0 {
            continue;
        }
        total += divergence(div, s, te, alpha)?;
    }
    Ok(total)
}

/// Full-response objective: `sum_t D(student_t || teacher_t)`.
/// Identical to [`rosd_loss`] with an all-ones mask.
pub fn sdpo_loss(
    student_dists: &[TokenDistribution],
    teacher_dists: &[TokenDistribution],
    div: Divergence,
    alpha: f64,
) -> Result<f64> {
    let mask = DistillationMask::all_ones(student_dists.len());
    rosd_loss(student_dists, teacher_dists, &mask, div, alpha)
}

/// Value and gradient of one per-position divergence with respect to the
/// student logits. The student distribution is `softmax(student_logits)`;
/// `teacher_probs` is treated as a constant (stop-gradient).
pub fn divergence_grad_from_logits(
    div: Divergence,
    student_logits: &[f64],
    teacher_probs: &[f64],
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    if student_logits.len() != teacher_probs.len() {
        return Err(Error::Input(format!(
            "support mismatch: {} logits vs {} teacher probs",
            student_logits.len(),
            teacher_probs.len()
        )));
    }
    let p = softmax(student_logits);
    let q = teacher_probs;
    let n = p.len();
    match div {
        Divergence::Fkl => {
            // D = sum p ln(p/q); dD/dz_j = p_j (ln(p_j/q_j) - D)
            let mut d = 0.0;
            let mut logratio = vec![0.0; n];
            for i in 0..n {
                logratio[i] = ln_floored(p[i]) - ln_floored(q[i]);
                d += p[i] * logratio[i];
            }
            let grad = (0..n).map(|j| p[j] * (logratio[j] - d)).collect();
            Ok((d, grad))
        }
        Divergence::Rkl => {
            // D = sum q ln(q/p); dD/dz_j = S p_j - q_j with S = sum q
            let mut d = 0.0;
            let mut s = 0.0;
            for i in 0..n {
                s += q[i];
                if q[i] > 0.0 {
                    d += q[i] * (ln_floored(q[i]) - ln_floored(p[i]));
                }
            }
            let grad = (0..n).map(|j| s * p[j] - q[j]).collect();
            Ok((d, grad))
        }
        Divergence::Jsd => {
            check_alpha(alpha)?;
            // dD/dz_j = alpha p_j (ln(p_j/m_j) - KL(p||m))
            let mut kl_pm = 0.0;
            let mut kl_qm = 0.0;
            let mut logratio = vec![0.0; n];
            for i in 0..n {
                let m = alpha * p[i] + (1.0 - alpha) * q[i];
                logratio[i] = ln_floored(p[i]) - ln_floored(m);
                kl_pm += p[i] * logratio[i];
                if q[i] > 0.0 {
                    kl_qm += q[i] * (ln_floored(q[i]) - ln_floored(m));
                }
            }
            let d = alpha * kl_pm + (1.0 - alpha) * kl_qm;
            let grad = (0..n)
                .map(|j| alpha * p[j] * (logratio[j] - kl_pm))
                .collect();
            Ok((d, grad))
        }
    }
}

/// Sequence-level distillation gradients from per-position student logits.
pub struct SeqDistillGrad {
    pub loss: f64,
    /// d(loss)/d(student logits), one vector per position. Zero at masked
    /// positions.
    pub student_logit_grads: Vec<Vec<f64>>,
    /// d(loss)/d(teacher inputs): identically zero by the stop-gradient
    /// contract.
    pub teacher_grads: Vec<Vec<f64>>,
}

/// Masked sequence loss plus gradients. `mask = None` means all-ones
/// (the full-response objective).
pub fn masked_distill_grad_from_logits(
    student_logits: &[Vec<f64>],
    teacher_probs: &[Vec<f64>],
    mask: Option<&DistillationMask>,
    div: Divergence,
    alpha: f64,
) -> Result<SeqDistillGrad> {
    check_positions(student_logits.len(), teacher_probs.len())?;
    if let Some(m) = mask {
        if m.weights.len() != student_logits.len() {
            return Err(Error::Input(format!(
                "mask length {} does not match position count {}",
                m.weights.len(),
                student_logits.len()
            )));
        }
    }
    let mut loss = 0.0;
    let mut student_grads = Vec::with_capacity(student_logits.len());
    let mut teacher_grads = Vec::with_capacity(student_logits.len());
    for (t, (z, q)) in student_logits.iter().zip(teacher_probs.iter()).enumerate() {
        let active = mask.map_or(true, |m| m.weights[t] == 1);
        teacher_grads.push(vec![0.0; q.len()]);
        if active {
            let (d, g) = divergence_grad_from_logits(div, z, q, alpha)?;
            loss += d;
            student_grads.push(g);
        } else {
            student_grads.push(vec![0.0; z.len()]);
        }
    }
    Ok(SeqDistillGrad {
        loss,
        student_logit_grads: student_grads,
        teacher_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    /// Brute-force reference: direct summation over aligned supports with no
    /// log-space tricks. Kept intentionally naive and separate from the
    /// implementation path.
    pub(crate) fn oracle_kl(p: &[f64], q: &[f64]) -> f64 {
        let mut total = 0.0;
        for (&pi, &qi) in p.iter().zip(q.iter()) {
            if pi > 0.0 {
                if qi == 0.0 {
                    return f64::INFINITY;
                }
                total += pi * (pi / qi).ln();
            }
        }
        total
    }

    pub(crate) fn oracle_jsd(p: &[f64], q: &[f64], alpha: f64) -> f64 {
        let m: Vec<f64> = p
            .iter()
            .zip(q.iter())
            .map(|(&pi, &qi)| alpha * pi + (1.0 - alpha) * qi)
            .collect();
        alpha * oracle_kl(p, &m) + (1.0 - alpha) * oracle_kl(q, &m)
    }

    fn dist(probs: &[f64]) -> TokenDistribution {
        TokenDistribution::full(probs.to_vec())
    }

    #[test]
    fn forward_kl_fixtures() {
        assert_eq!(forward_kl(&dist(&[0.5, 0.5]), &dist(&[0.5, 0.5])), 0.0);
        // Expected value frozen from the summation oracle.
        let expected = oracle_kl(&[0.5, 0.5], &[0.25, 0.75]);
        assert!((expected - 0.143841).abs() < 1e-6);
        let got = forward_kl(&dist(&[0.5, 0.5]), &dist(&[0.25, 0.75]));
        assert!((got - expected).abs() < 1e-12);
        // Disjoint support reports the infinity sentinel, never a crash.
        assert!(forward_kl(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).is_infinite());
    }

    #[test]
    fn jsd_fixtures() {
        assert_eq!(jsd(&dist(&[0.3, 0.7]), &dist(&[0.3, 0.7]), 0.5).unwrap(), 0.0);
        let lg2 = std::f64::consts::LN_2;
        let disjoint = jsd(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0]), 0.5).unwrap();
        assert!((disjoint - lg2).abs() < 1e-9);
        // Frozen from the summation oracle.
        let expected = oracle_jsd(&[0.5, 0.5], &[1.0, 0.0], 0.5);
        assert!((expected - 0.215761).abs() < 1e-6);
        let got = jsd(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0]), 0.5).unwrap();
        assert!((got - expected).abs() < 1e-9);
    }

    #[test]
    fn jsd_rejects_bad_alpha() {
        let p = dist(&[0.5, 0.5]);
        assert!(matches!(jsd(&p, &p, 0.0), Err(Error::Config(_))));
        assert!(matches!(jsd(&p, &p, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn truncate_topk_fixture() {
        let teacher = dist(&[0.4, 0.3, 0.2, 0.05, 0.05]);
        let student = dist(&[0.2; 5]);
        let (t2, s2) = truncate_topk(&teacher, &student, 3).unwrap();
        assert_eq!(t2.support, vec![0, 1, 2]);
        let expect = [4.0 / 9.0, 3.0 / 9.0, 2.0 / 9.0];
        for (got, want) in t2.probs.iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(t2.truncated && s2.truncated);
        assert_eq!(t2.k, Some(3));
        // Student renormalized over the kept support.
        assert!((s2.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncate_topk_noop_at_full_vocab() {
        let teacher = dist(&[0.4, 0.3, 0.2, 0.1]);
        let student = dist(&[0.1, 0.2, 0.3, 0.4]);
        let (t2, s2) = truncate_topk(&teacher, &student, 16).unwrap();
        assert_eq!(t2.support, teacher.support);
        for (a, b) in t2.probs.iter().zip(teacher.probs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in s2.probs.iter().zip(student.probs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn truncate_topk_tie_breaks_to_lower_index() {
        let teacher = dist(&[0.4, 0.2, 0.2, 0.2]);
        let student = dist(&[0.25; 4]);
        let (t2, _) = truncate_topk(&teacher, &student, 2).unwrap();
        assert_eq!(t2.support, vec![0, 1]);
    }

    #[test]
    fn sdpo_loss_fixtures() {
        let s = [dist(&[0.5, 0.5])];
        let t = [dist(&[0.25, 0.75])];
        let got = sdpo_loss(&s, &t, Divergence::Fkl, 0.5).unwrap();
        assert!((got - oracle_kl(&[0.5, 0.5], &[0.25, 0.75])).abs() < 1e-12);

        let same = [dist(&[0.3, 0.7]), dist(&[0.6, 0.4])];
        assert_eq!(sdpo_loss(&same, &same, Divergence::Jsd, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn sdpo_loss_rejects_length_mismatch() {
        let s = [dist(&[0.5, 0.5]), dist(&[0.5, 0.5])];
        let t = [dist(&[0.5, 0.5])];
        assert!(matches!(
            sdpo_loss(&s, &t, Divergence::Fkl, 0.5),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn rosd_loss_mask_fixtures() {
        let s = [
            dist(&[0.5, 0.5]),
            dist(&[0.9, 0.1]),
            dist(&[0.2, 0.8]),
            dist(&[0.6, 0.4]),
        ];
        let t = [
            dist(&[0.25, 0.75]),
            dist(&[0.5, 0.5]),
            dist(&[0.5, 0.5]),
            dist(&[0.5, 0.5]),
        ];
        // All-ones mask reproduces the full-response loss bit for bit.
        let ones = DistillationMask::all_ones(4);
        let a = rosd_loss(&s, &t, &ones, Divergence::Jsd, 0.5).unwrap();
        let b = sdpo_loss(&s, &t, Divergence::Jsd, 0.5).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());

        // All-zeros mask gives exactly zero.
        let zeros = DistillationMask {
            weights: vec![0; 4],
            k: 4,
            t_len: 4,
        };
        assert_eq!(rosd_loss(&s, &t, &zeros, Divergence::Jsd, 0.5).unwrap(), 0.0);

        // Partial mask sums exactly the masked-in terms.
        let mask = DistillationMask::from_error_index(2, 4);
        let partial = rosd_loss(&s, &t, &mask, Divergence::Jsd, 0.5).unwrap();
        let c = jsd(&s[2], &t[2], 0.5).unwrap();
        let d = jsd(&s[3], &t[3], 0.5).unwrap();
        assert!((partial - (c + d)).abs() < 1e-15);
    }

    #[test]
    fn logits_route_matches_distribution_route() {
        let mut rng = Rng::new(17);
        for div in [Divergence::Fkl, Divergence::Rkl, Divergence::Jsd] {
            for _ in 0..50 {
                let n = 2 + rng.below(8);
                let z: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
                let q = softmax(&(0..n).map(|_| rng.gaussian()).collect::<Vec<_>>());
                let (v, _) = divergence_grad_from_logits(div, &z, &q, 0.5).unwrap();
                let sd = TokenDistribution::from_logits(&z);
                let td = TokenDistribution::full(q.clone());
                let w = divergence(div, &sd, &td, 0.5).unwrap();
                assert!((v - w).abs() < 1e-12, "{div:?}: {v} vs {w}");
            }
        }
    }

    #[test]
    fn stop_gradient_returns_zero_teacher_grads() {
        let mut rng = Rng::new(3);
        let t_len = 5;
        let n = 6;
        let z: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..n).map(|_| rng.gaussian()).collect())
            .collect();
        let q: Vec<Vec<f64>> = (0..t_len)
            .map(|_| softmax(&(0..n).map(|_| rng.gaussian()).collect::<Vec<_>>()))
            .collect();
        let out =
            masked_distill_grad_from_logits(&z, &q, None, Divergence::Jsd, 0.5).unwrap();
        assert!(out
            .teacher_grads
            .iter()
            .all(|row| row.iter().all(|&g| g == 0.0)));
        assert!(out.loss > 0.0);
    }

    #[test]
    fn masked_prefix_positions_get_zero_gradient() {
        let mut rng = Rng::new(5);
        let n = 4;
        let z: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n).map(|_| rng.gaussian()).collect())
            .collect();
        let q: Vec<Vec<f64>> = (0..3)
            .map(|_| softmax(&(0..n).map(|_| rng.gaussian()).collect::<Vec<_>>()))
            .collect();
        let mask = DistillationMask::from_error_index(2, 3);
        let out =
            masked_distill_grad_from_logits(&z, &q, Some(&mask), Divergence::Jsd, 0.5).unwrap();
        assert!(out.student_logit_grads[0].iter().all(|&g| g == 0.0));
        assert!(out.student_logit_grads[1].iter().all(|&g| g == 0.0));
        assert!(out.student_logit_grads[2].iter().any(|&g| g != 0.0));

        // Perturbing a masked-out position leaves the loss bit-identical.
        let mut z2 = z.clone();
        z2[0][1] += 3.5;
        let out2 =
            masked_distill_grad_from_logits(&z2, &q, Some(&mask), Divergence::Jsd, 0.5).unwrap();
        assert_eq!(out.loss.to_bits(), out2.loss.to_bits());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(29);
        let eps = 1e-6;
        for div in [Divergence::Fkl, Divergence::Rkl, Divergence::Jsd] {
            for _ in 0..30 {
                let n = 3 + rng.below(6);
                let z: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
                let q = softmax(&(0..n).map(|_| rng.gaussian()).collect::<Vec<_>>());
                let (_, grad) = divergence_grad_from_logits(div, &z, &q, 0.5).unwrap();
                for j in 0..n {
                    let mut zp = z.clone();
                    zp[j] += eps;
                    let mut zm = z.clone();
                    zm[j] -= eps;
                    let (vp, _) = divergence_grad_from_logits(div, &zp, &q, 0.5).unwrap();
                    let (vm, _) = divergence_grad_from_logits(div, &zm, &q, 0.5).unwrap();
                    let fd = (vp - vm) / (2.0 * eps);
                    let denom = fd.abs().max(grad[j].abs()).max(1e-8);
                    assert!(
                        (fd - grad[j]).abs() / denom < 1e-4,
                        "{div:?} dim {j}: fd {fd} vs {}",
                        grad[j]
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn jsd_symmetric_and_bounded(
            a in proptest::collection::vec(1e-6..1.0f64, 2..10),
            b in proptest::collection::vec(1e-6..1.0f64, 2..10),
        ) {
            let n = a.len().min(b.len());
            let norm = |v: &[f64]| {
                let s: f64 = v[..n].iter().sum();
                v[..n].iter().map(|x| x / s).collect::<Vec<_>>()
            };
            let p = dist(&norm(&a));
            let q = dist(&norm(&b));
            let ab = jsd(&p, &q, 0.5).unwrap();
            let ba = jsd(&q, &p, 0.5).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
            prop_assert!(ab <= std::f64::consts::LN_2 + 1e-12);
        }

        #[test]
        fn truncation_converges_to_untruncated(
            raw_t in proptest::collection::vec(1e-4..1.0f64, 4..12),
            raw_s in proptest::collection::vec(1e-4..1.0f64, 4..12),
        ) {
            let n = raw_t.len().min(raw_s.len());
            let norm = |v: &[f64]| {
                let s: f64 = v[..n].iter().sum();
                v[..n].iter().map(|x| x / s).collect::<Vec<_>>()
            };
            let teacher = dist(&norm(&raw_t));
            let student = dist(&norm(&raw_s));
            let full = jsd(&student, &teacher, 0.5).unwrap();
            let (t2, s2) = truncate_topk(&teacher, &student, n).unwrap();
            let trunc = jsd(&s2, &t2, 0.5).unwrap();
            prop_assert!((full - trunc).abs() < 1e-9);
        }

        #[test]
        fn divergences_nonnegative_and_zero_iff_equal(
            raw in proptest::collection::vec(1e-4..1.0f64, 3..8),
        ) {
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let d = dist(&p);
            prop_assert_eq!(forward_kl(&d, &d), 0.0);
            prop_assert_eq!(jsd(&d, &d, 0.5).unwrap(), 0.0);
        }
    }
}
