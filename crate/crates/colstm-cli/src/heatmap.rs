//! Matrix visualizations: a raw-value CSV next to an 8-bit binary graymap.
//!
//! The graymap is the binary `P5` format — header `P5\n<cols> <rows>\n255\n`
//! followed by one byte per cell in row-major order — chosen because it is
//! bit-exactly specifiable without an imaging dependency. Cells are scaled
//! linearly so the maximum value maps to 255; an all-zero matrix therefore
//! produces an all-black image rather than dividing by zero. The CSV carries
//! the unscaled values (shortest round-trippable decimal form) for plotting
//! elsewhere.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use colstm_core::tensor::Matrix;

/// A labeled nonnegative matrix ready for export.
pub struct Heatmap {
    values: Matrix,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

impl Heatmap {
    /// Build from any matrix by taking elementwise absolute values. Fails on
    /// non-finite entries or label/dimension mismatches.
    pub fn of_magnitudes(
        m: &Matrix,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
    ) -> Result<Self> {
        ensure!(
            row_labels.len() == m.rows(),
            "{} row labels for a {}-row matrix",
            row_labels.len(),
            m.rows()
        );
        ensure!(
            col_labels.len() == m.cols(),
            "{} column labels for a {}-column matrix",
            col_labels.len(),
            m.cols()
        );
        let mut values = Matrix::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let v = m.get(i, j);
                ensure!(v.is_finite(), "entry ({i}, {j}) is {v}; heatmaps need finite values");
                values.set(i, j, v.abs());
            }
        }
        Ok(Heatmap {
            values,
            row_labels,
            col_labels,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    /// Write the labeled values: a header row of column labels (first cell
    /// empty), then one row label plus values per line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, ",{}", self.col_labels.join(","));
        for i in 0..self.rows() {
            let _ = write!(out, "{}", self.row_labels[i]);
            for j in 0..self.cols() {
                let _ = write!(out, ",{}", self.values.get(i, j));
            }
            out.push('\n');
        }
        fs::write(path, out).with_context(|| format!("writing {}", path.display()))
    }

    /// Write the binary graymap described in the module docs.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let max = self.values.data().iter().cloned().fold(0.0f64, f64::max);
        let header = format!("P5\n{} {}\n255\n", self.cols(), self.rows());
        let mut out = Vec::with_capacity(header.len() + self.rows() * self.cols());
        out.extend_from_slice(header.as_bytes());
        for v in self.values.data() {
            let byte = if max > 0.0 {
                (v / max * 255.0).round() as u8
            } else {
                0
            };
            out.push(byte);
        }
        fs::write(path, out).with_context(|| format!("writing {}", path.display()))
    }
}

/// `prefix0`, `prefix1`, … — the label scheme for indexed rows and columns.
pub fn index_labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(path: &Path) -> Vec<u8> {
        fs::read(path).unwrap()
    }

    fn pgm_pixels(bytes: &[u8], cols: usize, rows: usize) -> Vec<u8> {
        let header = format!("P5\n{cols} {rows}\n255\n");
        assert!(bytes.starts_with(header.as_bytes()), "bad header in {bytes:?}");
        let pixels = &bytes[header.len()..];
        assert_eq!(pixels.len(), cols * rows);
        pixels.to_vec()
    }

    #[test]
    fn zero_matrix_maps_to_all_black() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        let m = Matrix::zeros(2, 3);
        let h = Heatmap::of_magnitudes(&m, index_labels("r", 2), index_labels("c", 3)).unwrap();
        h.write_pgm(&path).unwrap();
        let pixels = pgm_pixels(&read(&path), 3, 2);
        assert!(pixels.iter().all(|&b| b == 0));
    }

    #[test]
    fn single_nonzero_entry_is_exactly_one_bright_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pgm");
        let mut m = Matrix::zeros(3, 4);
        m.set(1, 2, -7.5); // sign must not matter
        let h = Heatmap::of_magnitudes(&m, index_labels("r", 3), index_labels("c", 4)).unwrap();
        h.write_pgm(&path).unwrap();
        let pixels = pgm_pixels(&read(&path), 4, 3);
        for (k, &b) in pixels.iter().enumerate() {
            assert_eq!(b, if k == 4 + 2 { 255 } else { 0 }, "pixel {k}");
        }
    }

    #[test]
    fn scaling_is_linear_with_max_at_255() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ramp.pgm");
        let m = Matrix::from_vec(1, 4, vec![0.0, 1.0, 2.0, 4.0]);
        let h = Heatmap::of_magnitudes(&m, index_labels("r", 1), index_labels("c", 4)).unwrap();
        h.write_pgm(&path).unwrap();
        let pixels = pgm_pixels(&read(&path), 4, 1);
        assert_eq!(pixels, vec![0, 64, 128, 255]); // round(v/4·255)
    }

    #[test]
    fn csv_round_trips_exact_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let values = vec![0.1, 1.0 / 3.0, 2.5e-17, 1048576.0, 0.0, 5e-324];
        let m = Matrix::from_vec(2, 3, values.clone());
        let h = Heatmap::of_magnitudes(&m, index_labels("r", 2), index_labels("c", 3)).unwrap();
        h.write_csv(&path).unwrap();
        let text = String::from_utf8(read(&path)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), ",c0,c1,c2");
        let parsed: Vec<f64> = lines
            .flat_map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect::<Vec<_>>())
            .collect();
        for (a, b) in values.iter().zip(&parsed) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_non_finite_entries_and_bad_labels() {
        let mut m = Matrix::zeros(2, 2);
        m.set(0, 1, f64::NAN);
        assert!(Heatmap::of_magnitudes(&m, index_labels("r", 2), index_labels("c", 2)).is_err());

        let m = Matrix::zeros(2, 2);
        assert!(Heatmap::of_magnitudes(&m, index_labels("r", 3), index_labels("c", 2)).is_err());
    }
}
