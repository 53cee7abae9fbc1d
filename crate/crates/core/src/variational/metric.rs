use crate::error::{Error, Result};

/// A finite metric space with points indexed `0..len()`.
pub trait MetricSpace: Sync {
    fn len(&self) -> usize;

    fn dist(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const METRIC_TOLERANCE: f64 = 1e-12;

/// Labelled points with an explicit distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMetricSpace {
    labels: Vec<String>,
    dist: Vec<f64>,
}

impl FiniteMetricSpace {
    /// Validates symmetry, zero diagonal, nonnegativity and the triangle
    /// inequality, all to [`METRIC_TOLERANCE`].
    pub fn new(labels: Vec<String>, matrix: Vec<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidMetric("empty space".into()));
        }
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidMetric(format!(
                "distance matrix is not {n}×{n}"
            )));
        }
        let tol = METRIC_TOLERANCE;
        for i in 0..n {
            if matrix[i][i].abs() > tol {
                return Err(Error::InvalidMetric(format!(
                    "d({i},{i}) = {}",
                    matrix[i][i]
                )));
            }
            for j in 0..n {
                let d = matrix[i][j];
                if !d.is_finite() || d < -tol {
                    return Err(Error::InvalidMetric(format!("d({i},{j}) = {d}")));
                }
                if (d - matrix[j][i]).abs() > tol {
                    return Err(Error::InvalidMetric(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if matrix[i][k] > matrix[i][j] + matrix[j][k] + tol {
                        return Err(Error::InvalidMetric(format!(
                            "triangle inequality fails for ({i},{j},{k})"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            labels,
            dist: matrix.into_iter().flatten().collect(),
        })
    }

    /// Euclidean distances between points of `ℝᵈ`.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let matrix = points
            .iter()
            .map(|a| {
                points
                    .iter()
                    .map(|b| {
                        a.iter()
                            .zip(b)
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect()
            })
            .collect();
        Self::new((0..points.len()).map(|i| format!("p{i}")).collect(), matrix)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

impl MetricSpace for FiniteMetricSpace {
    fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.labels.len() + j]
    }
}

/// `[times]² × [dictionary]²` with
/// `d = (|t − t′|² + |s − s′|² + ‖ρ − ρ′‖ + ‖χ − χ′‖)^{1/2}`,
/// where `‖·‖` is a precomputed (unsquared) norm distance on the dictionary.
/// Point `(i, j, a, b)` is stored at index `((i·m + j)·k + a)·k + b` for
/// `m` times and `k` dictionary entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductSpace {
    times: Vec<f64>,
    norms: Vec<f64>,
    k: usize,
}

impl ProductSpace {
    pub fn new(times: Vec<f64>, dictionary_distances: Vec<Vec<f64>>) -> Result<Self> {
        let k = dictionary_distances.len();
        if times.is_empty() || k == 0 {
            return Err(Error::InvalidMetric("empty product factor".into()));
        }
        let labels = (0..k).map(|i| format!("d{i}")).collect();
        let check = FiniteMetricSpace::new(labels, dictionary_distances)?;
        Ok(Self {
            times,
            norms: check.dist,
            k,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dictionary_len(&self) -> usize {
        self.k
    }

    /// `(t index, s index, ρ index, χ index)` of a point.
    pub fn decode(&self, p: usize) -> (usize, usize, usize, usize) {
        let k = self.k;
        let m = self.times.len();
        let b = p % k;
        let a = (p / k) % k;
        let j = (p / (k * k)) % m;
        let i = p / (k * k * m);
        (i, j, a, b)
    }

    pub fn encode(&self, i: usize, j: usize, a: usize, b: usize) -> usize {
        ((i * self.times.len() + j) * self.k + a) * self.k + b
    }

    pub fn norm_distance(&self, a: usize, b: usize) -> f64 {
        self.norms[a * self.k + b]
    }
}

impl MetricSpace for ProductSpace {
    fn len(&self) -> usize {
        self.times.len() * self.times.len() * self.k * self.k
    }

    fn dist(&self, p: usize, q: usize) -> f64 {
        let (i, j, a, b) = self.decode(p);
        let (i2, j2, a2, b2) = self.decode(q);
        let dt = self.times[i] - self.times[i2];
        let ds = self.times[j] - self.times[j2];
        (dt * dt + ds * ds + self.norm_distance(a, a2) + self.norm_distance(b, b2)).sqrt()
    }
}
