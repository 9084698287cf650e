use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn simplex_project(v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("vector to project"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("vector to project"));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    Ok(v.mapv(|x| (x - theta).max(0.0)))
}

/// Projects every row of `m` onto the simplex in place.
pub fn project_rows_onto_simplex(m: &mut Array2<f64>) -> Result<()> {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let p = simplex_project(row.view())?;
        row.assign(&p);
    }
    Ok(())
}
