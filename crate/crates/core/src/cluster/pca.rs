use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Principal axes of centred data, ordered by descending variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `target x D`, one unit-norm component per row.
    pub components: Array2<f64>,
    /// Per-component variance (population).
    pub variance: Vec<f64>,
}

impl Pca {
    /// Fits `target` components. Requires `target <= min(N - 1, D)`.
    ///
    /// The eigenproblem is solved on whichever of the `N x N` Gram matrix or
    /// the `D x D` scatter matrix is smaller; both yield the right singular
    /// vectors of the centred data. Each component's largest-magnitude
    /// loading is made positive.
    pub fn fit(x: &Array2<f64>, target: usize) -> Result<Pca> {
        let (n, d) = x.dim();
        if target == 0 || n < 2 || target > (n - 1).min(d) {
            return Err(Error::invalid(format!(
                "cannot reduce {n} x {d} data to {target} dimensions (need 1 <= target <= min(N-1, D))"
            )));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centred = x - &mean;
        let xc = DMatrix::from_row_iterator(n, d, centred.iter().copied());

        let (values, mut axes) = if n <= d {
            let gram = &xc * xc.transpose();
            let eig = SymmetricEigen::new(gram);
            let order = descending(eig.eigenvalues.as_slice());
            let top = order[0..target].to_vec();
            let max_val = eig.eigenvalues[order[0]].max(0.0);
            let mut axes = Array2::<f64>::zeros((target, d));
            let mut values = Vec::with_capacity(target);
            for (row, &i) in top.iter().enumerate() {
                let lambda = eig.eigenvalues[i].max(0.0);
                values.push(lambda);
                if lambda <= max_val * 1e-14 || lambda == 0.0 {
                    continue;
                }
                let v = xc.transpose() * eig.eigenvectors.column(i) / lambda.sqrt();
                for (j, val) in v.iter().enumerate() {
                    axes[[row, j]] = *val;
                }
            }
            (values, axes)
        } else {
            let scatter = xc.transpose() * &xc;
            let eig = SymmetricEigen::new(scatter);
            let order = descending(eig.eigenvalues.as_slice());
            let mut axes = Array2::<f64>::zeros((target, d));
            let mut values = Vec::with_capacity(target);
            for (row, &i) in order[0..target].iter().enumerate() {
                values.push(eig.eigenvalues[i].max(0.0));
                for j in 0..d {
                    axes[[row, j]] = eig.eigenvectors[(j, i)];
                }
            }
            (values, axes)
        };

        for mut axis in axes.rows_mut() {
            let pivot = axis
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (j, v)| if v.abs() > best.1 { (j, v.abs()) } else { best })
                .0;
            if axis[pivot] < 0.0 {
                axis.mapv_inplace(|v| -v);
            }
        }
        Ok(Pca {
            mean,
            components: axes,
            variance: values.into_iter().map(|v| v / n as f64).collect(),
        })
    }

    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::invalid(format!(
                "PCA fitted on {} columns, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        Ok((x - &self.mean).dot(&self.components.t()))
    }

    pub fn inverse_transform(&self, z: &Array2<f64>) -> Array2<f64> {
        z.dot(&self.components) + &self.mean
    }
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Projects `x` onto its top `target` principal components.
pub fn reduce_dim(x: &Array2<f64>, target: usize) -> Result<Array2<f64>> {
    Pca::fit(x, target)?.transform(x)
}
