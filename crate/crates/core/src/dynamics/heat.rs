use rayon::prelude::*;

use crate::densities::{normal_pdf, GridDensity};
use crate::error::{Error, Result};

/// Transition density of `σ W` from `(s, x)` to `(t, y)`.
pub fn heat_kernel(s: f64, x: f64, t: f64, y: f64, sigma: f64) -> f64 {
    normal_pdf(y, x, sigma * sigma * (t - s))
}

/// Zero-drift solution `ρ_t(y) = Σ_x p(s, x; t, y) ρ₀(x) w_x`, renormalized
/// on the grid to absorb kernel mass lost past the ends.
pub fn heat_oracle(rho0: &GridDensity, s: f64, t: f64, sigma: f64) -> Result<GridDensity> {
    if !(t > s) {
        return Err(Error::InvalidArgument(format!(
            "heat oracle needs t > s, got s = {s}, t = {t}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma = {sigma}")));
    }
    let grid = *rho0.grid();
    let src: Vec<(f64, f64)> = (0..grid.len())
        .filter(|&i| rho0.values()[i] != 0.0)
        .map(|i| (grid.node(i), rho0.values()[i] * grid.weight(i)))
        .collect();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let y = grid.node(j);
            src.iter()
                .map(|&(x, m)| heat_kernel(s, x, t, y, sigma) * m)
                .sum()
        })
        .collect();
    GridDensity::normalized(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::gaussian_density;
    use crate::weightspace::{wasserstein1, Grid};

    #[test]
    fn kernel_symmetry_and_positivity() {
        for (x, y) in [(0.0, 1.0), (-2.0, 3.5), (0.4, 0.4)] {
            let a = heat_kernel(0.1, x, 0.6, y, 0.8);
            assert!(a > 0.0);
            assert_eq!(a, heat_kernel(0.1, y, 0.6, x, 0.8));
        }
    }

    #[test]
    fn gaussian_convolution_identity() {
        let g = Grid::standard(513).unwrap();
        let rho = gaussian_density(0.0, 0.25, &g).unwrap();
        let out = heat_oracle(&rho, 0.0, 0.5, 1.0).unwrap();
        let exact = gaussian_density(0.0, 0.75, &g).unwrap();
        assert!(wasserstein1(&out, &exact).unwrap() <= 1e-6);
    }

    #[test]
    fn short_time_limit() {
        let g = Grid::standard(513).unwrap();
        let rho = gaussian_density(0.5, 0.3, &g).unwrap();
        let out = heat_oracle(&rho, 0.0, 1e-6, 1.0).unwrap();
        assert!(wasserstein1(&out, &rho).unwrap() <= 2.0 * g.h());
    }

    #[test]
    fn rejects_reversed_times() {
        let g = Grid::standard(129).unwrap();
        let rho = gaussian_density(0.0, 1.0, &g).unwrap();
        assert!(heat_oracle(&rho, 1.0, 1.0, 1.0).is_err());
        assert!(heat_oracle(&rho, 1.0, 0.5, 1.0).is_err());
    }
}
