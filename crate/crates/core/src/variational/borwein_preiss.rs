use super::metric::MetricSpace;
use crate::error::{Error, Result};

/// Points `y_k`, weights `β_k` and the selected point `y_ε`, together with
/// the post-hoc certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct BPResult {
    pub y_eps: usize,
    pub sequence: Vec<usize>,
    pub weights: Vec<f64>,
    pub certificate: BPCertificate,
}

impl BPResult {
    /// `Δ(y) = Σ β_k d(y, y_k)²`.
    pub fn delta<M: MetricSpace + ?Sized>(&self, space: &M, y: usize) -> f64 {
        delta(space, &self.sequence, &self.weights, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BPCertificate {
    /// `β_k ≥ 0` and `Σ β_k = 1`.
    pub weights_valid: bool,
    /// `d(y_k, y_ε)` reaches 0 along the sequence.
    pub sequence_converges: bool,
    /// `sup_k d(y_k, y_ε) ≤ ε^{1/4}`.
    pub sup_distance: f64,
    /// `d(y_ε, y₀) ≤ ε^{1/4}`.
    pub anchor_distance: f64,
    /// `F(y_ε) ≥ sup F − ε`, stored as `F(y_ε) − sup F + ε`.
    pub near_supremum_margin: f64,
    /// `min_y [F(y_ε) − √ε Δ(y_ε) − F(y) + √ε Δ(y)]`.
    pub perturbed_maximum_margin: f64,
    pub radius: f64,
}

impl BPCertificate {
    pub fn pass(&self) -> bool {
        let tol = 1e-12;
        self.weights_valid
            && self.sequence_converges
            && self.sup_distance <= self.radius + tol
            && self.anchor_distance <= self.radius + tol
            && self.near_supremum_margin >= -tol
            && self.perturbed_maximum_margin >= -tol
    }
}

fn delta<M: MetricSpace + ?Sized>(space: &M, seq: &[usize], weights: &[f64], y: usize) -> f64 {
    seq.iter()
        .zip(weights)
        .map(|(&k, b)| b * space.dist(y, k).powi(2))
        .sum()
}

/// Geometric weights `(1 − q) q^{j−1}` for all but the last of `m` points,
/// which receives the remaining mass `q^{m−1}`.
fn stage_weights(m: usize, q: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..m - 1).map(|j| (1.0 - q) * q.powi(j as i32)).collect();
    w.push(q.powi(m as i32 - 1));
    w
}

fn argmax_penalized<M: MetricSpace + ?Sized>(
    space: &M,
    f: &[f64],
    root_eps: f64,
    seq: &[usize],
    weights: &[f64],
    prefer: usize,
) -> usize {
    let score = |y: usize| f[y] - root_eps * delta(space, seq, weights, y);
    let mut best = prefer;
    let mut best_val = score(prefer);
    for y in 0..space.len() {
        let v = score(y);
        if v > best_val {
            best = y;
            best_val = v;
        }
    }
    best
}

/// Checks every conclusion of the variational principle for a candidate
/// sequence and weights.
pub fn certify<M: MetricSpace + ?Sized>(
    space: &M,
    f: &[f64],
    eps: f64,
    y0: usize,
    y_eps: usize,
    sequence: &[usize],
    weights: &[f64],
) -> BPCertificate {
    let sum: f64 = weights.iter().sum();
    let weights_valid = weights.iter().all(|b| *b >= 0.0) && (sum - 1.0).abs() <= 1e-12;
    let sequence_converges = sequence
        .last()
        .is_some_and(|&y| space.dist(y, y_eps) == 0.0);
    let sup_distance = sequence
        .iter()
        .map(|&y| space.dist(y, y_eps))
        .fold(0.0, f64::max);
    let sup_f = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let root = eps.sqrt();
    let at = f[y_eps] - root * delta(space, sequence, weights, y_eps);
    let perturbed_maximum_margin = (0..space.len())
        .map(|y| at - (f[y] - root * delta(space, sequence, weights, y)))
        .fold(f64::INFINITY, f64::min);
    BPCertificate {
        weights_valid,
        sequence_converges,
        sup_distance,
        anchor_distance: space.dist(y_eps, y0),
        near_supremum_margin: f[y_eps] - sup_f + eps,
        perturbed_maximum_margin,
        radius: eps.powf(0.25),
    }
}

/// Greedy stage-wise construction of the Borwein-Preiss point.
///
/// Starting from `y₁ = y₀`, stage `k` picks the maximizer of
/// `F − √ε Σ_{j≤k} β_j d(·, y_j)²` under the stage weights, preferring the
/// latest point on ties, and stops when that point is selected again.
pub fn borwein_preiss<M: MetricSpace + ?Sized>(
    space: &M,
    f: &[f64],
    eps: f64,
    y0: usize,
    q: f64,
) -> Result<BPResult> {
    let n = space.len();
    if f.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: f.len(),
        });
    }
    if y0 >= n {
        return Err(Error::InvalidArgument(format!(
            "y0 = {y0} outside a space of {n} points"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps = {eps}")));
    }
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "q = {q} must lie in [0, 1)"
        )));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective".into()));
    }
    let sup_f = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if f[y0] < sup_f - eps {
        return Err(Error::Precondition(format!(
            "F(y0) = {} is more than eps below sup F = {sup_f}",
            f[y0]
        )));
    }
    let root = eps.sqrt();
    let mut seq = vec![y0];
    let limit = 20 * n.max(1);
    for _ in 0..limit {
        let weights = stage_weights(seq.len(), q);
        let last = *seq.last().unwrap();
        let next = argmax_penalized(space, f, root, &seq, &weights, last);
        if next == last {
            let certificate = certify(space, f, eps, y0, last, &seq, &weights);
            return Ok(BPResult {
                y_eps: last,
                sequence: seq,
                weights,
                certificate,
            });
        }
        seq.push(next);
    }
    Err(Error::NoConvergence(limit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variational::metric::FiniteMetricSpace;

    #[test]
    fn single_point() {
        let s = FiniteMetricSpace::new(vec!["a".into()], vec![vec![0.0]]).unwrap();
        let r = borwein_preiss(&s, &[3.0], 0.5, 0, 0.5).unwrap();
        assert_eq!(r.y_eps, 0);
        assert!(r.certificate.pass());
        assert_eq!(r.delta(&s, 0), 0.0);
    }

    #[test]
    fn two_points_exhaustive() {
        let s = FiniteMetricSpace::from_points(&[vec![0.0], vec![1.0]]).unwrap();
        let f = [0.0, 0.5];
        let r = borwein_preiss(&s, &f, 1.0, 0, 0.5).unwrap();
        assert!(r.certificate.pass(), "{r:?}");
        let score = |y: usize| f[y] - r.delta(&s, y);
        for y in 0..2 {
            assert!(score(r.y_eps) >= score(y));
        }
    }

    #[test]
    fn precondition_and_arguments() {
        let s = FiniteMetricSpace::from_points(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            borwein_preiss(&s, &[0.0, 2.0], 1.0, 0, 0.5),
            Err(Error::Precondition(_))
        ));
        assert!(borwein_preiss(&s, &[0.0], 1.0, 0, 0.5).is_err());
        assert!(borwein_preiss(&s, &[0.0, 0.0], 0.0, 0, 0.5).is_err());
        assert!(borwein_preiss(&s, &[0.0, 0.0], 1.0, 2, 0.5).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        for m in 1..30 {
            let w = stage_weights(m, 0.5);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn delta_vanishes_only_on_concentrated_sequences() {
        let s = FiniteMetricSpace::from_points(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        let r = borwein_preiss(&s, &[1.0, 0.0, 0.0], 0.5, 0, 0.5).unwrap();
        assert_eq!(r.sequence, vec![0]);
        assert_eq!(r.delta(&s, 0), 0.0);
        assert!(r.delta(&s, 1) > 0.0 && r.delta(&s, 2) > 0.0);
    }
}
