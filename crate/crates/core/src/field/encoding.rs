use std::f64::consts::PI;

use crate::field::Matrix;

/// Fourier features of every scalar in `values` (`rows × dim`).
///
/// Each scalar `m` expands to
/// `[sin(2⁰πm), cos(2⁰πm), …, sin(2^{L−1}πm), cos(2^{L−1}πm)]`; the blocks
/// of the `dim` columns are concatenated in column order, giving
/// `rows × 2·L·dim`. Raw values are not included.
pub fn fourier_encode(values: &Matrix, num_freqs: usize) -> Matrix {
    let (rows, dim) = (values.rows(), values.cols());
    let width = 2 * num_freqs * dim;
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for &m in values.row(r) {
            encode_scalar_into(m, num_freqs, &mut out);
        }
    }
    Matrix::new(rows, width, out).expect("width computed above")
}

pub(crate) fn encode_scalar_into(m: f64, num_freqs: usize, out: &mut Vec<f64>) {
    let mut freq = PI;
    for _ in 0..num_freqs {
        let (s, c) = (freq * m).sin_cos();
        out.extend([s, c]);
        freq *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{grid_coordinates, MetricSpaceSpec};

    fn encode(m: f64, l: usize) -> Vec<f64> {
        fourier_encode(&Matrix::new(1, 1, vec![m]).unwrap(), l)
            .data()
            .to_vec()
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(encode(0.0, 2), vec![0.0, 1.0, 0.0, 1.0]);
        let half = encode(0.5, 1);
        assert!((half[0] - 1.0).abs() < 1e-15 && half[1].abs() < 1e-15);
        let one = encode(1.0, 1);
        assert!(one[0].abs() < 1e-15 && (one[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimensions_are_concatenated_in_order() {
        let m = Matrix::new(1, 2, vec![0.0, 0.5]).unwrap();
        let e = fourier_encode(&m, 1);
        assert_eq!(e.cols(), 4);
        assert_eq!(&e.data()[..2], &[0.0, 1.0]);
        assert!((e.data()[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn default_encoding_separates_all_grid_points_up_to_64() {
        for side in [2, 8, 32, 64] {
            let coords = grid_coordinates(&MetricSpaceSpec::Grid2d {
                height: side,
                width: side,
            })
            .unwrap();
            let enc = fourier_encode(coords.matrix(), 10);
            let n = enc.rows();
            let mut min_dist = f64::INFINITY;
            for i in 0..n {
                let a = enc.row(i);
                for j in i + 1..n {
                    let b = enc.row(j);
                    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    min_dist = min_dist.min(d);
                }
            }
            assert!(min_dist > 1e-6, "side {side}: min squared distance {min_dist}");
        }
    }
}
