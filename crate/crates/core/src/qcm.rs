//! Quantiled conditional moments: regress quantiles on the Cornish-Fisher basis
//! `(1, z, z^2 - 1, z^3 - 3z)` and read variance, skewness and kurtosis off the slopes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::special::normal_quantile;
use crate::math::{LeastSquares, Tensor};
use crate::training::{QuantilePanel, SeriesPanel};

/// Floor on the scale coefficient in the skewness and kurtosis ratios.
pub const BETA1_FLOOR: f64 = 1e-8;

/// Levels, their normal quantiles and the factorized `K x 4` design.
#[derive(Debug, Clone)]
pub struct QuantileGrid {
    pub levels: Vec<f64>,
    pub z: Vec<f64>,
    pub design: Tensor,
    ls: LeastSquares,
}

impl QuantileGrid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Extreme eigenvalues of `Z'Z`.
    pub fn eigen_range(&self) -> (f64, f64) {
        self.ls.eigen_range()
    }

    pub fn residuals(&self, q: &[f64], beta: &[f64; 4]) -> Vec<f64> {
        self.ls.residuals(q, beta)
    }
}

/// One Cornish-Fisher row.
pub fn cf_row(z: f64) -> [f64; 4] {
    [1.0, z, z * z - 1.0, z * z * z - 3.0 * z]
}

pub fn build_design(levels: &[f64]) -> Result<QuantileGrid> {
    if levels.len() < 4 {
        return Err(Error::Singular(format!(
            "{} quantile levels; the moment regression needs at least 4",
            levels.len()
        )));
    }
    if levels.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage("levels must be strictly increasing inside (0, 1)".into()));
    }
    let z: Vec<f64> = levels.iter().map(|&t| normal_quantile(t)).collect();
    let rows: Vec<f64> = z.iter().flat_map(|&v| cf_row(v)).collect();
    let design = Tensor::from_vec(&[levels.len(), 4], rows)?;
    let ls = LeastSquares::new(&design)
        .map_err(|e| Error::Singular(format!("Z'Z is not positive definite: {e}")))?;
    Ok(QuantileGrid { levels: levels.to_vec(), z, design, ls })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub h: f64,
    pub s: f64,
    pub k: f64,
    pub degenerate: bool,
    pub projected: bool,
}

/// `(h, s, k)` from `beta = (b0, b1, b2, b3)` before any projection.
pub fn moments_from_beta(beta: &[f64; 4]) -> MomentEstimate {
    let b1p = beta[1].max(BETA1_FLOOR);
    MomentEstimate {
        h: beta[1] * beta[1],
        s: 6.0 * beta[2] / b1p,
        k: 24.0 * beta[3] / b1p + 3.0,
        degenerate: beta[1] < BETA1_FLOOR,
        projected: false,
    }
}

/// Raises `k` to `s^2 + 1` when it falls below.
pub fn project_feasible(est: MomentEstimate) -> MomentEstimate {
    let floor = est.s * est.s + 1.0;
    if est.k < floor {
        MomentEstimate { k: floor, projected: true, ..est }
    } else {
        est
    }
}

/// Least-squares coefficients and projected moments for one `(i, t)` cell.
pub fn fit_qcm(quantiles: &[f64], grid: &QuantileGrid) -> Result<([f64; 4], MomentEstimate)> {
    if quantiles.len() != grid.len() {
        return Err(Error::Shape(format!("{} quantiles for {} levels", quantiles.len(), grid.len())));
    }
    if quantiles.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input quantile".into()));
    }
    let b = grid.ls.solve(quantiles)?;
    let beta = [b[0], b[1], b[2], b[3]];
    Ok((beta, project_feasible(moments_from_beta(&beta))))
}

/// Per stock-day moments with the mean forecast attached.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPanel {
    pub days: Vec<usize>,
    pub n_stocks: usize,
    pub mu: Vec<f64>,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub k: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub projected: Vec<bool>,
    /// Cell had finite inputs and was fitted.
    pub fitted: Vec<bool>,
    /// Stock had at least four valid levels.
    pub usable: Vec<bool>,
    pub omega_sizes: Vec<usize>,
}

impl MomentPanel {
    #[inline]
    pub fn idx(&self, i: usize, d: usize) -> usize {
        i * self.days.len() + d
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    /// `(mu, h, s, k)` at stock `i`, day slot `d`.
    pub fn row(&self, i: usize, d: usize) -> (f64, f64, f64, f64) {
        let j = self.idx(i, d);
        (self.mu[j], self.h[j], self.s[j], self.k[j])
    }

    /// Whether the cell can enter a ranking.
    pub fn valid(&self, i: usize, d: usize) -> bool {
        self.usable[i] && self.fitted[self.idx(i, d)]
    }

    pub fn degenerate_count(&self, i: usize) -> usize {
        (0..self.n_days()).filter(|&d| self.degenerate[self.idx(i, d)]).count()
    }

    pub fn projected_count(&self, i: usize) -> usize {
        (0..self.n_days()).filter(|&d| self.projected[self.idx(i, d)]).count()
    }
}

/// Fits every cell using, for stock `i`, only the level indices in `omega[i]`.
pub fn qcm_panel(quantiles: &QuantilePanel, mean: &SeriesPanel, omega: &[Vec<usize>]) -> Result<MomentPanel> {
    let (n, nd) = (quantiles.n_stocks, quantiles.n_days());
    if omega.len() != n || mean.n_stocks != n || mean.days != quantiles.days {
        return Err(Error::Shape("quantile panel, mean panel and level sets disagree".into()));
    }
    let per_stock: Vec<Result<Vec<(f64, f64, f64, bool, bool, bool)>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let set = &omega[i];
            if set.len() < 4 {
                return Ok(vec![(0.0, 0.0, 0.0, false, false, false); nd]);
            }
            let levels: Vec<f64> = set.iter().map(|&k| quantiles.levels[k]).collect();
            let grid = build_design(&levels)?;
            let mut out = Vec::with_capacity(nd);
            let mut q = vec![0.0; set.len()];
            for d in 0..nd {
                let cell = quantiles.cell(i, d);
                for (slot, &k) in set.iter().enumerate() {
                    q[slot] = cell[k];
                }
                match fit_qcm(&q, &grid) {
                    Ok((_, m)) => out.push((m.h, m.s, m.k, m.degenerate, m.projected, true)),
                    Err(Error::Numeric(_)) => out.push((0.0, 0.0, 0.0, false, false, false)),
                    Err(e) => return Err(e),
                }
            }
            Ok(out)
        })
        .collect();

    let mut panel = MomentPanel {
        days: quantiles.days.clone(),
        n_stocks: n,
        mu: mean.values.clone(),
        h: vec![0.0; n * nd],
        s: vec![0.0; n * nd],
        k: vec![0.0; n * nd],
        degenerate: vec![false; n * nd],
        projected: vec![false; n * nd],
        fitted: vec![false; n * nd],
        usable: omega.iter().map(|o| o.len() >= 4).collect(),
        omega_sizes: omega.iter().map(Vec::len).collect(),
    };
    for (i, cells) in per_stock.into_iter().enumerate() {
        for (d, (h, s, k, deg, proj, fit)) in cells?.into_iter().enumerate() {
            let j = i * nd + d;
            panel.h[j] = h;
            panel.s[j] = s;
            panel.k[j] = k;
            panel.degenerate[j] = deg;
            panel.projected[j] = proj;
            panel.fitted[j] = fit;
        }
    }
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::quantile_levels;

    #[test]
    fn median_row_and_symmetry() {
        let g = build_design(&[0.1, 0.3, 0.5, 0.7, 0.9]).unwrap();
        assert_eq!(g.design.row(2), &[1.0, 0.0, -1.0, 0.0]);
        for col in [1, 3] {
            let s: f64 = (0..5).map(|r| g.design.get2(r, col)).sum();
            assert!(s.abs() < 1e-14);
        }
    }

    #[test]
    fn too_few_levels() {
        assert!(matches!(build_design(&[0.2, 0.5, 0.8]), Err(Error::Singular(_))));
        assert!(build_design(&[0.2, 0.5, 0.5, 0.8]).is_err());
    }

    #[test]
    fn formula_cases() {
        let m = moments_from_beta(&[0.0, 1.0, 0.0, 0.0]);
        assert_eq!((m.h, m.s, m.k), (1.0, 0.0, 3.0));
        let keep = MomentEstimate { h: 1.0, s: 0.0, k: 2.5, degenerate: false, projected: false };
        assert_eq!(project_feasible(keep), keep);
        let p = project_feasible(MomentEstimate { s: 2.0, k: 3.0, ..keep });
        assert_eq!((p.k, p.projected), (5.0, true));
        assert_eq!(project_feasible(p), p);
        let neg = moments_from_beta(&[0.0, -0.5, 0.1, 0.0]);
        assert!(neg.degenerate && neg.h == 0.25);
    }

    #[test]
    fn gaussian_exactness() {
        let g = build_design(&quantile_levels(199)).unwrap();
        let (mu, sigma) = (0.003, 0.021);
        let q: Vec<f64> = g.z.iter().map(|z| mu + sigma * z).collect();
        let (beta, m) = fit_qcm(&q, &g).unwrap();
        assert!((beta[0] - mu).abs() < 1e-12 && (beta[1] - sigma).abs() < 1e-12);
        assert!((m.h - sigma * sigma).abs() < 1e-10 && m.s.abs() < 1e-10 && (m.k - 3.0).abs() < 1e-10);
        let res = g.residuals(&q, &beta);
        for c in 0..4 {
            let dot: f64 = (0..199).map(|r| g.design.get2(r, c) * res[r]).sum();
            assert!(dot.abs() < 1e-8 * 199.0);
        }
    }

    #[test]
    fn non_finite_cell_rejected() {
        let g = build_design(&quantile_levels(9)).unwrap();
        let mut q = vec![0.0; 9];
        q[3] = f64::NAN;
        assert!(matches!(fit_qcm(&q, &g), Err(Error::Numeric(_))));
        assert!(fit_qcm(&q[..8], &g).is_err());
    }

    #[test]
    fn panel_restricted_sets_are_independent() {
        let levels = quantile_levels(9);
        let days = vec![10, 11, 12];
        let mut qp = QuantilePanel::new(levels.clone(), days.clone(), 2);
        let z: Vec<f64> = levels.iter().map(|&t| normal_quantile(t)).collect();
        for i in 0..2 {
            for d in 0..3 {
                for k in 0..9 {
                    qp.set(i, d, k, 0.001 * d as f64 + (0.01 + 0.005 * i as f64) * z[k] + 0.001 * z[k].powi(2));
                }
            }
        }
        let mu = SeriesPanel { days: days.clone(), n_stocks: 2, values: vec![0.0; 6] };
        let full: Vec<usize> = (0..9).collect();
        let omega = vec![full.clone(), vec![0, 2, 4, 6, 8]];
        let a = qcm_panel(&qp, &mu, &omega).unwrap();
        let grid = build_design(&levels).unwrap();
        let (_, direct) = fit_qcm(qp.cell(0, 1), &grid).unwrap();
        assert_eq!(a.row(0, 1).1, direct.h);
        let mut qp2 = qp.clone();
        for d in 0..3 {
            for k in 0..9 {
                let v = qp2.get(0, d, k);
                qp2.set(0, d, k, v * 3.0 + 1.0);
            }
        }
        let b = qcm_panel(&qp2, &mu, &omega).unwrap();
        for d in 0..3 {
            assert_eq!(a.row(1, d), b.row(1, d));
        }
        let c = qcm_panel(&qp, &mu, &[full, vec![0, 1, 2]]).unwrap();
        assert!(!c.usable[1] && !c.valid(1, 0) && c.valid(0, 0));
    }
}
