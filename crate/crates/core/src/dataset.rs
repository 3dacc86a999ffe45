//! Sparse datasets in compressed row form.
//!
//! Samples are read from LibSVM text, stored as a CSR matrix plus a label
//! vector, and summarised by [`FeatureStats`]: the probability `p_k` that a
//! uniformly drawn row touches coordinate `k`. The sparse solvers reweight the
//! dense snapshot gradient by `1 / p_k` on the sampled support so that its
//! expectation over rows is the dense vector again.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    n_cols: usize,
}

/// Borrowed view of one matrix row.
#[derive(Debug, Clone, Copy)]
pub struct Row<'a> {
    pub indices: &'a [usize],
    pub values: &'a [f64],
}

impl<'a> Row<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `<a, x>` against a dense vector.
    #[inline]
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(self.values)
            .map(|(&k, &v)| v * x[k])
            .sum()
    }

    /// `<a, x>` against a vector holding only the support entries, in order.
    #[inline]
    pub fn dot_support(&self, x_support: &[f64]) -> f64 {
        self.values.iter().zip(x_support).map(|(v, x)| v * x).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Gathers `x` on this row's support.
    pub fn gather(&self, x: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&k| x[k]).collect()
    }
}

impl SparseMatrix {
    /// Builds a matrix, checking the CSR invariants.
    pub fn new(
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
        n_cols: usize,
    ) -> Result<Self> {
        if row_offsets.first() != Some(&0) {
            return Err(Error::InvalidMatrix("row_offsets must start at 0".into()));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidMatrix("row_offsets must be non-decreasing".into()));
        }
        let nnz = *row_offsets.last().unwrap();
        if nnz != col_indices.len() || nnz != values.len() {
            return Err(Error::InvalidMatrix(format!(
                "row_offsets end at {nnz} but there are {} indices and {} values",
                col_indices.len(),
                values.len()
            )));
        }
        for (r, w) in row_offsets.windows(2).enumerate() {
            let cols = &col_indices[w[0]..w[1]];
            if cols.windows(2).any(|c| c[0] >= c[1]) {
                return Err(Error::InvalidMatrix(format!(
                    "row {r}: column indices not strictly increasing"
                )));
            }
            if let Some(&last) = cols.last() {
                if last >= n_cols {
                    return Err(Error::InvalidMatrix(format!(
                        "row {r}: column {last} out of range for {n_cols} columns"
                    )));
                }
            }
        }
        Ok(SparseMatrix {
            row_offsets,
            col_indices,
            values,
            n_cols,
        })
    }

    /// Builds a CSR matrix from dense rows, dropping exact zeros.
    pub fn from_dense(rows: &[Vec<f64>], n_cols: usize) -> Self {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for row in rows {
            assert!(row.len() <= n_cols, "dense row wider than n_cols");
            for (k, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col_indices.push(k);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            row_offsets,
            col_indices,
            values,
            n_cols,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> Row<'_> {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        Row {
            indices: &self.col_indices[lo..hi],
            values: &self.values[lo..hi],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i))
    }
}

/// Design matrix plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    matrix: SparseMatrix,
    labels: Vec<f64>,
    normalized: bool,
}

impl SparseDataset {
    pub fn new(matrix: SparseMatrix, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != matrix.n_rows() {
            return Err(Error::InvalidMatrix(format!(
                "{} labels for {} rows",
                labels.len(),
                matrix.n_rows()
            )));
        }
        Ok(SparseDataset {
            matrix,
            labels,
            normalized: false,
        })
    }

    pub fn from_dense(rows: &[Vec<f64>], labels: Vec<f64>) -> Result<Self> {
        let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        Self::new(SparseMatrix::from_dense(rows, n_cols), labels)
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    #[inline]
    pub fn row(&self, i: usize) -> Row<'_> {
        self.matrix.row(i)
    }

    pub fn n_samples(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn n_features(&self) -> usize {
        self.matrix.n_cols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Scales every nonempty row to unit Euclidean norm.
    pub fn normalize_rows(mut self) -> Self {
        let offsets = self.matrix.row_offsets.clone();
        for w in offsets.windows(2) {
            let vals = &mut self.matrix.values[w[0]..w[1]];
            let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm != 1.0 {
                vals.iter_mut().for_each(|v| *v /= norm);
            }
        }
        self.normalized = true;
        self
    }

    /// Appends a constant-one column (a dense bias feature).
    ///
    /// Apply before [`normalize_rows`](Self::normalize_rows) to mirror the
    /// usual "add bias, then normalize" preprocessing.
    pub fn with_bias(self) -> Self {
        let bias_col = self.matrix.n_cols;
        let n = self.n_samples();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(self.matrix.nnz() + n);
        let mut values = Vec::with_capacity(self.matrix.nnz() + n);
        row_offsets.push(0);
        for row in self.matrix.rows() {
            col_indices.extend_from_slice(row.indices);
            values.extend_from_slice(row.values);
            col_indices.push(bias_col);
            values.push(1.0);
            row_offsets.push(col_indices.len());
        }
        SparseDataset {
            matrix: SparseMatrix {
                row_offsets,
                col_indices,
                values,
                n_cols: bias_col + 1,
            },
            labels: self.labels,
            normalized: false,
        }
    }

    /// Raises the column count to at least `n_cols` (trailing columns unused).
    pub fn with_min_cols(mut self, n_cols: usize) -> Self {
        self.matrix.n_cols = self.matrix.n_cols.max(n_cols);
        self
    }

    pub fn feature_stats(&self) -> FeatureStats {
        FeatureStats::compute(self)
    }

    /// Writes the dataset back out as LibSVM text (1-based indices).
    ///
    /// Floats use the shortest representation that parses back to the same
    /// bits, so `parse_libsvm(serialize(ds))` reproduces `ds` exactly as long
    /// as the last column is used (otherwise re-apply [`with_min_cols`]).
    ///
    /// [`with_min_cols`]: Self::with_min_cols
    pub fn write_libsvm<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line = String::new();
        for (i, row) in self.matrix.rows().enumerate() {
            line.clear();
            write!(line, "{}", self.labels[i]).unwrap();
            for (&k, &v) in row.indices.iter().zip(row.values) {
                write!(line, " {}:{}", k + 1, v).unwrap();
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_libsvm_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_libsvm(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("LibSVM output is ASCII")
    }
}

/// Parses LibSVM text: one sample per line, `<label> <idx>:<val> ...` with
/// 1-based, strictly ascending indices. Blank lines are skipped.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<SparseDataset> {
    let mut row_offsets = vec![0usize];
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n_cols = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let err = |message: String| Error::Parse {
            line: lineno,
            message,
        };
        let mut tokens = line.split_ascii_whitespace();
        let Some(label) = tokens.next() else {
            continue;
        };
        let label: f64 = label
            .parse()
            .map_err(|_| err(format!("invalid label `{label}`")))?;
        let row_start = col_indices.len();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("malformed feature `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("invalid feature index `{idx}`")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("invalid feature value `{val}`")))?;
            let col = idx - 1;
            if col_indices.len() > row_start && *col_indices.last().unwrap() >= col {
                return Err(err(format!("feature index {idx} is not ascending")));
            }
            col_indices.push(col);
            values.push(val);
            n_cols = n_cols.max(idx);
        }
        labels.push(label);
        row_offsets.push(col_indices.len());
    }

    let matrix = SparseMatrix {
        row_offsets,
        col_indices,
        values,
        n_cols,
    };
    SparseDataset::new(matrix, labels)
}

pub fn parse_libsvm_str(text: &str) -> Result<SparseDataset> {
    parse_libsvm(text.as_bytes())
}

/// Per-coordinate support statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    /// Fraction of rows whose support contains `k`.
    pub p: Vec<f64>,
    /// `1 / p_k` for used coordinates, `0.0` for unused ones.
    pub inv_p: Vec<f64>,
    /// `max_k 1/p_k` over used coordinates (`1` when none are used).
    pub d_max: f64,
    /// `max_k p_k`.
    pub delta: f64,
}

impl FeatureStats {
    pub fn compute(ds: &SparseDataset) -> Self {
        let d = ds.n_features();
        let n = ds.n_samples();
        let mut counts = vec![0usize; d];
        for &k in ds.matrix.col_indices() {
            counts[k] += 1;
        }
        let p: Vec<f64> = counts
            .iter()
            .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect();
        let inv_p: Vec<f64> = counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { n as f64 / c as f64 })
            .collect();
        let d_max = inv_p.iter().copied().fold(1.0, f64::max);
        let delta = p.iter().copied().fold(0.0, f64::max);
        FeatureStats {
            p,
            inv_p,
            d_max,
            delta,
        }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    #[inline]
    pub fn is_used(&self, k: usize) -> bool {
        self.p[k] > 0.0
    }

    pub fn n_unused(&self) -> usize {
        self.p.iter().filter(|&&p| p == 0.0).count()
    }

    /// `D_m^2 - D_m`, the excess variance factor of the sparse estimator.
    pub fn zeta(&self) -> f64 {
        self.d_max * self.d_max - self.d_max
    }

    /// `D_i v`: `v_k / p_k` on the support of `row`, in support order.
    pub fn reweight_on_support(&self, row: Row<'_>, v: &[f64]) -> Vec<f64> {
        row.indices.iter().map(|&k| v[k] * self.inv_p[k]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_rows() -> SparseDataset {
        parse_libsvm_str("+1 1:0.6 3:0.8\n-1 2:1.0").unwrap()
    }

    #[test]
    fn parses_example() {
        let ds = two_rows();
        assert_eq!(ds.n_samples(), 2);
        assert_eq!(ds.n_features(), 3);
        assert_eq!(ds.row(0).indices, &[0, 2]);
        assert_eq!(ds.row(0).values, &[0.6, 0.8]);
        assert_eq!(ds.row(1).indices, &[1]);
        assert_eq!(ds.row(1).values, &[1.0]);
        assert_eq!(ds.labels(), &[1.0, -1.0]);
    }

    #[test]
    fn empty_input() {
        let ds = parse_libsvm_str("").unwrap();
        assert_eq!(ds.n_samples(), 0);
        assert_eq!(ds.n_features(), 0);
    }

    #[test]
    fn rejects_non_ascending() {
        match parse_libsvm_str("+1 2:1.0 1:1.0") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_tokens_with_line_number() {
        let cases = [
            ("1 1:1\n1 2", 2),
            ("1 1:1\n\n1 1:x", 3),
            ("abc 1:1", 1),
            ("1 0:1", 1),
            ("1 1:1 1:2", 1),
        ];
        for (text, expected) in cases {
            match parse_libsvm_str(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, expected, "{text:?}"),
                other => panic!("{text:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn label_only_line_is_empty_row() {
        let ds = parse_libsvm_str("2.5\n-1 3:1").unwrap();
        assert!(ds.row(0).is_empty());
        assert_eq!(ds.labels(), &[2.5, -1.0]);
    }

    #[test]
    fn csr_validation() {
        assert!(SparseMatrix::new(vec![0, 2], vec![1, 0], vec![1.0, 1.0], 3).is_err());
        assert!(SparseMatrix::new(vec![0, 1], vec![3], vec![1.0], 3).is_err());
        assert!(SparseMatrix::new(vec![1, 1], vec![], vec![], 3).is_err());
        assert!(SparseMatrix::new(vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0], 3).is_err());
        assert!(SparseMatrix::new(vec![0, 1, 2], vec![0, 0], vec![1.0, 1.0], 1).is_ok());
    }

    #[test]
    fn normalize_examples() {
        let ds = SparseDataset::from_dense(
            &[vec![0.6, 0.0, 0.8], vec![3.0, 4.0, 0.0], vec![0.0, 0.0, 0.0]],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap()
        .normalize_rows();
        assert_eq!(ds.row(0).values, &[0.6, 0.8]);
        assert_eq!(ds.row(1).values, &[0.6, 0.8]);
        assert!(ds.row(2).is_empty());
        assert!(ds.is_normalized());
    }

    #[test]
    fn stats_examples() {
        let st = two_rows().feature_stats();
        assert_eq!(st.p, vec![0.5, 0.5, 0.5]);
        assert_eq!(st.d_max, 2.0);
        assert_eq!(st.delta, 0.5);

        let dense = SparseDataset::from_dense(
            &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
            vec![1.0; 3],
        )
        .unwrap();
        let st = dense.feature_stats();
        assert_eq!(st.p, vec![1.0, 1.0]);
        assert_eq!(st.d_max, 1.0);
        assert_eq!(st.delta, 1.0);
        assert_eq!(st.zeta(), 0.0);

        let n = 8;
        let mut rows = vec![vec![1.0, 0.0]; n];
        rows[3][1] = 1.0;
        let st = SparseDataset::from_dense(&rows, vec![1.0; n]).unwrap().feature_stats();
        assert_eq!(st.p[1], 1.0 / n as f64);
        assert_eq!(st.d_max, n as f64);
    }

    #[test]
    fn unused_coordinates_are_flagged() {
        let ds = parse_libsvm_str("1 1:1 4:2\n-1 1:3").unwrap();
        let st = ds.feature_stats();
        assert!(st.is_used(0) && st.is_used(3));
        assert!(!st.is_used(1) && !st.is_used(2));
        assert_eq!(st.n_unused(), 2);
        assert_eq!(st.inv_p[1], 0.0);
        assert_eq!(st.d_max, 2.0);
    }

    #[test]
    fn bias_column_is_dense() {
        let ds = two_rows().with_bias();
        assert_eq!(ds.n_features(), 4);
        let st = ds.feature_stats();
        assert_eq!(st.p[3], 1.0);
        assert_eq!(st.delta, 1.0);
        assert_eq!(ds.row(1).indices, &[1, 3]);
    }

    #[test]
    fn column_override_only_grows() {
        let ds = two_rows().with_min_cols(10);
        assert_eq!(ds.n_features(), 10);
        let ds = ds.with_min_cols(2);
        assert_eq!(ds.n_features(), 10);
    }

    fn arb_value(wide: bool) -> BoxedStrategy<f64> {
        if wide {
            prop_oneof![Just(0.0), -1e3f64..1e3, any::<f64>().prop_filter("finite", |v| v.is_finite())].boxed()
        } else {
            prop_oneof![Just(0.0), -1e3f64..1e3].boxed()
        }
    }

    fn arb_dataset_with(wide: bool) -> impl Strategy<Value = SparseDataset> {
        (1usize..8, 1usize..12).prop_flat_map(move |(n, d)| {
            (
                proptest::collection::vec(proptest::collection::vec(arb_value(wide), d), n),
                proptest::collection::vec(-10.0f64..10.0, n),
            )
                .prop_map(move |(rows, labels)| {
                    SparseDataset::new(SparseMatrix::from_dense(&rows, d), labels).unwrap()
                })
        })
    }

    fn arb_dataset() -> impl Strategy<Value = SparseDataset> {
        arb_dataset_with(false)
    }

    proptest! {
        #[test]
        fn libsvm_round_trip(ds in arb_dataset_with(true)) {
            let text = ds.to_libsvm_string();
            let back = parse_libsvm_str(&text).unwrap().with_min_cols(ds.n_features());
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn normalize_is_idempotent(ds in arb_dataset()) {
            let once = ds.normalize_rows();
            let twice = once.clone().normalize_rows();
            for i in 0..once.n_samples() {
                for (a, b) in once.row(i).values.iter().zip(twice.row(i).values) {
                    prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
                }
                let nrm = once.row(i).norm_sq();
                if !once.row(i).is_empty() {
                    prop_assert!((nrm.sqrt() - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn stats_invariants(ds in arb_dataset()) {
            let st = ds.feature_stats();
            prop_assert!(st.d_max >= 1.0);
            prop_assert!(st.delta <= 1.0);
            for k in 0..st.dim() {
                if st.is_used(k) {
                    prop_assert!(st.p[k] > 0.0 && st.p[k] <= 1.0);
                    prop_assert!((st.inv_p[k] * st.p[k] - 1.0).abs() < 1e-12);
                }
            }
            if st.n_unused() < st.dim() {
                prop_assert!(st.delta >= 1.0 / ds.n_samples() as f64);
            }
        }

        #[test]
        fn reweighting_is_unbiased(ds in arb_dataset(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let st = ds.feature_stats();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mu: Vec<f64> = (0..ds.n_features()).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut avg = vec![0.0; ds.n_features()];
            for i in 0..ds.n_samples() {
                let row = ds.row(i);
                for (&k, w) in row.indices.iter().zip(st.reweight_on_support(row, &mu)) {
                    avg[k] += w;
                }
            }
            let n = ds.n_samples() as f64;
            for k in 0..ds.n_features() {
                if st.is_used(k) {
                    prop_assert!((avg[k] / n - mu[k]).abs() <= 1e-12 * mu[k].abs().max(1.0));
                }
            }
        }
    }
}
