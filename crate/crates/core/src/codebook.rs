//! Code matrices and the distances used to design them.
//!
//! A [`CodeMatrix`] assigns each of `M` classes an `N`-symbol codeword over a
//! q-ary alphabet. Rows are compared with the Hamming distance, columns are
//! viewed as partitions of the classes and compared with the variation of
//! information. All logarithms are natural.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// An `M x N` q-ary code matrix.
///
/// Invariants: every entry is in `[0, q)`, rows are pairwise distinct and
/// every column uses at least two symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "CodeMatrixFile", into = "CodeMatrixFile")]
pub struct CodeMatrix {
    num_classes: usize,
    code_length: usize,
    alphabet: usize,
    entries: Vec<usize>,
}

/// On-disk shape of a code matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodeMatrixFile {
    num_classes: usize,
    code_length: usize,
    alphabet: usize,
    entries: Vec<Vec<usize>>,
}

impl CodeMatrix {
    /// Builds a matrix from row-major rows and checks every invariant.
    pub fn new(alphabet: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let m = Self::from_rows_unchecked(alphabet, rows)?;
        m.validate()?;
        Ok(m)
    }

    fn from_rows_unchecked(alphabet: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        if alphabet < 2 {
            return Err(Error::InvalidMatrix(format!("alphabet must be >= 2, got {alphabet}")));
        }
        let num_classes = rows.len();
        if num_classes == 0 {
            return Err(Error::InvalidMatrix("matrix has no rows".into()));
        }
        let code_length = rows[0].len();
        if code_length == 0 {
            return Err(Error::InvalidMatrix("matrix has no columns".into()));
        }
        let mut entries = Vec::with_capacity(num_classes * code_length);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != code_length {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} has length {}, expected {code_length}",
                    row.len()
                )));
            }
            entries.extend(row);
        }
        Ok(Self { num_classes, code_length, alphabet, entries })
    }

    /// Builds a matrix from a flat row-major buffer and checks every invariant.
    pub fn from_flat(num_classes: usize, code_length: usize, alphabet: usize, entries: Vec<usize>) -> Result<Self> {
        if entries.len() != num_classes * code_length {
            return Err(invalid(format!(
                "expected {} entries, got {}",
                num_classes * code_length,
                entries.len()
            )));
        }
        if alphabet < 2 || num_classes == 0 || code_length == 0 {
            return Err(Error::InvalidMatrix("dimensions must be positive and alphabet >= 2".into()));
        }
        let m = Self { num_classes, code_length, alphabet, entries };
        m.validate()?;
        Ok(m)
    }

    /// Checks the three matrix invariants.
    pub fn validate(&self) -> Result<()> {
        if let Some(pos) = self.entries.iter().position(|&e| e >= self.alphabet) {
            return Err(Error::InvalidMatrix(format!(
                "entry ({}, {}) = {} outside alphabet of size {}",
                pos / self.code_length,
                pos % self.code_length,
                self.entries[pos],
                self.alphabet
            )));
        }
        self.check_rows_distinct()?;
        for n in 0..self.code_length {
            if !self.column_is_nonconstant(n) {
                return Err(Error::InvalidMatrix(format!("column {n} is constant")));
            }
        }
        Ok(())
    }

    fn check_rows_distinct(&self) -> Result<()> {
        for i in 0..self.num_classes {
            for j in (i + 1)..self.num_classes {
                if self.row(i) == self.row(j) {
                    return Err(Error::InvalidMatrix(format!("rows {i} and {j} are identical")));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn column_is_nonconstant(&self, n: usize) -> bool {
        let first = self.get(0, n);
        (1..self.num_classes).any(|i| self.get(i, n) != first)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn code_length(&self) -> usize {
        self.code_length
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> usize {
        self.entries[row * self.code_length + col]
    }

    pub(crate) fn set_unchecked(&mut self, row: usize, col: usize, symbol: usize) {
        self.entries[row * self.code_length + col] = symbol;
    }

    /// Codeword `r_i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.entries[i * self.code_length..(i + 1) * self.code_length]
    }

    /// Column `c_n` as a symbol per class.
    pub fn column(&self, n: usize) -> Vec<usize> {
        (0..self.num_classes).map(|i| self.get(i, n)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        (0..self.num_classes).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    /// Partition of the classes induced by column `n`.
    pub fn partition(&self, n: usize) -> ColumnPartition {
        ColumnPartition::from_assignment(self.alphabet, &self.column(n))
            .expect("matrix entries are within the alphabet")
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.code_length) {
            return Err(invalid(format!("column {bad} out of range")));
        }
        let rows = (0..self.num_classes)
            .map(|i| cols.iter().map(|&c| self.get(i, c)).collect())
            .collect();
        Self::new(self.alphabet, rows)
    }

    /// Replaces each q-ary entry with its one-hot block of length `q`.
    ///
    /// The result is `M x qN` and binary. When a source column never uses some
    /// symbol, the matching expanded column is all zeros; this is the only
    /// invariant the expansion does not carry over.
    pub fn binary_expansion(&self) -> CodeMatrix {
        let q = self.alphabet;
        let mut entries = vec![0; self.num_classes * self.code_length * q];
        let width = self.code_length * q;
        for i in 0..self.num_classes {
            for n in 0..self.code_length {
                entries[i * width + n * q + self.get(i, n)] = 1;
            }
        }
        CodeMatrix { num_classes: self.num_classes, code_length: width, alphabet: 2, entries }
    }

    /// Serializes to the JSON object format, one row per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        let _ = writeln!(s, "  \"num_classes\": {},", self.num_classes);
        let _ = writeln!(s, "  \"code_length\": {},", self.code_length);
        let _ = writeln!(s, "  \"alphabet\": {},", self.alphabet);
        s.push_str("  \"entries\": [\n");
        for i in 0..self.num_classes {
            let row: Vec<String> = self.row(i).iter().map(|e| e.to_string()).collect();
            let sep = if i + 1 == self.num_classes { "" } else { "," };
            let _ = writeln!(s, "    [{}]{sep}", row.join(", "));
        }
        s.push_str("  ]\n}\n");
        s
    }

    /// Parses the JSON object format. Trailing content, out-of-range entries,
    /// shape mismatches and invariant violations are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let file: CodeMatrixFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            row: None,
            message: e.to_string(),
        })?;
        Self::try_from(file)
    }
}

impl TryFrom<CodeMatrixFile> for CodeMatrix {
    type Error = Error;

    fn try_from(file: CodeMatrixFile) -> Result<Self> {
        if file.entries.len() != file.num_classes {
            return Err(Error::Parse {
                row: None,
                message: format!("declared {} classes but found {} rows", file.num_classes, file.entries.len()),
            });
        }
        if let Some((i, r)) = file.entries.iter().enumerate().find(|(_, r)| r.len() != file.code_length) {
            return Err(Error::Parse {
                row: Some(i),
                message: format!("declared code length {} but row has {}", file.code_length, r.len()),
            });
        }
        Self::new(file.alphabet, file.entries)
    }
}

impl From<CodeMatrix> for CodeMatrixFile {
    fn from(m: CodeMatrix) -> Self {
        Self { num_classes: m.num_classes, code_length: m.code_length, alphabet: m.alphabet, entries: m.rows() }
    }
}

/// The grouping of classes induced by one column: `C^k` is the set of classes
/// assigned symbol `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnPartition {
    cluster_sets: Vec<Vec<usize>>,
    assignment: Vec<usize>,
}

impl ColumnPartition {
    /// Builds the partition from one symbol per class.
    pub fn from_assignment(alphabet: usize, assignment: &[usize]) -> Result<Self> {
        if assignment.is_empty() {
            return Err(invalid("partition over zero classes"));
        }
        if alphabet == 0 {
            return Err(invalid("alphabet must be positive"));
        }
        let mut cluster_sets = vec![Vec::new(); alphabet];
        for (class, &k) in assignment.iter().enumerate() {
            if k >= alphabet {
                return Err(invalid(format!("symbol {k} for class {class} outside alphabet {alphabet}")));
            }
            cluster_sets[k].push(class);
        }
        Ok(Self { cluster_sets, assignment: assignment.to_vec() })
    }

    pub fn num_classes(&self) -> usize {
        self.assignment.len()
    }

    pub fn alphabet(&self) -> usize {
        self.cluster_sets.len()
    }

    pub fn cluster_sets(&self) -> &[Vec<usize>] {
        &self.cluster_sets
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Sizes `|C^k|` for every symbol.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.cluster_sets.iter().map(Vec::len).collect()
    }
}

#[inline]
fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Number of positions where two codewords differ.
pub fn hamming_distance(a: &[usize], b: &[usize]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(invalid(format!("codeword lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// Minimum Hamming distance over unordered row pairs, `d_H`.
pub fn min_hamming(m: &CodeMatrix) -> Result<usize> {
    if m.num_classes() < 2 {
        return Err(invalid("minimum Hamming distance needs at least two rows"));
    }
    let mut best = usize::MAX;
    for i in 0..m.num_classes() {
        for j in (i + 1)..m.num_classes() {
            best = best.min(hamming_distance(m.row(i), m.row(j))?);
        }
    }
    Ok(best)
}

/// Variation of information between two partitions of the same class set.
pub fn vi_distance(a: &ColumnPartition, b: &ColumnPartition) -> Result<f64> {
    if a.num_classes() != b.num_classes() {
        return Err(invalid(format!(
            "partitions cover {} and {} classes",
            a.num_classes(),
            b.num_classes()
        )));
    }
    Ok(vi_from_assignments(a.assignment(), a.alphabet(), b.assignment(), b.alphabet()))
}

pub(crate) fn vi_from_assignments(a: &[usize], qa: usize, b: &[usize], qb: usize) -> f64 {
    let m = a.len() as f64;
    let mut joint = vec![0usize; qa * qb];
    let mut ca = vec![0usize; qa];
    let mut cb = vec![0usize; qb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * qb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let ha: f64 = -ca.iter().map(|&c| xlogx(c as f64 / m)).sum::<f64>();
    let hb: f64 = -cb.iter().map(|&c| xlogx(c as f64 / m)).sum::<f64>();
    let mut mi = 0.0;
    for k in 0..qa {
        for l in 0..qb {
            let c = joint[k * qb + l];
            if c > 0 {
                let s = c as f64 / m;
                mi += s * (s / ((ca[k] as f64 / m) * (cb[l] as f64 / m))).ln();
            }
        }
    }
    // Identical partitions cancel only up to rounding.
    (ha + hb - 2.0 * mi).max(0.0)
}

/// Minimum VI over unordered column pairs, `d_VI`.
pub fn min_vi(m: &CodeMatrix) -> Result<f64> {
    if m.code_length() < 2 {
        return Err(invalid("minimum VI distance needs at least two columns"));
    }
    let cols: Vec<Vec<usize>> = (0..m.code_length()).map(|n| m.column(n)).collect();
    let q = m.alphabet();
    let mut best = f64::INFINITY;
    for i in 0..cols.len() {
        for j in (i + 1)..cols.len() {
            best = best.min(vi_from_assignments(&cols[i], q, &cols[j], q));
        }
    }
    Ok(best)
}

/// Mutual information between the class label and the meta-class of a column.
///
/// Evaluated as the double sum over symbols `k` and classes `l` of
/// `s(k,l) log(s(k,l) / (s(k) s(l)))` with `s(l) = 1/M`.
pub fn mutual_information(c: &ColumnPartition) -> Result<f64> {
    let m = c.num_classes();
    if m == 0 {
        return Err(invalid("empty partition"));
    }
    let mf = m as f64;
    let sizes = c.cluster_sizes();
    let mut total = 0.0;
    for (k, members) in c.cluster_sets().iter().enumerate() {
        let sk = sizes[k] as f64 / mf;
        for _ in members {
            let skl = 1.0 / mf;
            total += skl * (skl / (sk * (1.0 / mf))).ln();
        }
    }
    Ok(total)
}

/// Largest mutual information over every valid column of an `M`-class,
/// q-ary code. Enumerates cluster-size compositions with at least two
/// non-empty clusters and returns the best value with its sizes.
pub fn max_mutual_information(num_classes: usize, alphabet: usize) -> Result<(f64, Vec<usize>)> {
    if num_classes < 2 || alphabet < 2 {
        return Err(invalid("need at least two classes and alphabet >= 2"));
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut sizes = vec![0usize; alphabet];
    fn rec(
        k: usize,
        remaining: usize,
        sizes: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
        m: usize,
    ) -> Result<()> {
        let q = sizes.len();
        if k + 1 == q {
            sizes[k] = remaining;
            if sizes.iter().filter(|&&s| s > 0).count() >= 2 {
                let mut assignment = Vec::with_capacity(m);
                for (sym, &s) in sizes.iter().enumerate() {
                    assignment.extend(std::iter::repeat_n(sym, s));
                }
                let part = ColumnPartition::from_assignment(q, &assignment)?;
                let v = mutual_information(&part)?;
                if v > best.0 {
                    *best = (v, sizes.clone());
                }
            }
            return Ok(());
        }
        for s in 0..=remaining {
            sizes[k] = s;
            rec(k + 1, remaining - s, sizes, best, m)?;
        }
        Ok(())
    }
    rec(0, num_classes, &mut sizes, &mut best, num_classes)?;
    Ok(best)
}

/// Sum of `H^-2` over unordered row pairs.
pub fn row_energy(m: &CodeMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..m.num_classes() {
        for j in (i + 1)..m.num_classes() {
            let h = m.row(i).iter().zip(m.row(j)).filter(|(a, b)| a != b).count();
            total += if h == 0 { f64::INFINITY } else { 1.0 / (h * h) as f64 };
        }
    }
    total
}

/// Sum of `VI^-2` over unordered column pairs; infinite when two columns
/// induce the same partition.
pub fn column_energy(m: &CodeMatrix) -> f64 {
    let cols: Vec<Vec<usize>> = (0..m.code_length()).map(|n| m.column(n)).collect();
    let q = m.alphabet();
    let mut total = 0.0;
    for i in 0..cols.len() {
        for j in (i + 1)..cols.len() {
            total += inverse_square_vi(vi_from_assignments(&cols[i], q, &cols[j], q));
        }
    }
    total
}

/// VI below this is treated as zero (identical partitions).
pub const VI_ZERO_TOL: f64 = 1e-12;

#[inline]
pub(crate) fn inverse_square_vi(vi: f64) -> f64 {
    if vi <= VI_ZERO_TOL {
        f64::INFINITY
    } else {
        1.0 / (vi * vi)
    }
}

/// Annealing energy: row term plus `eta` times the column term, summed over
/// unordered pairs. With `eta == 0` the column term is skipped.
pub fn energy(m: &CodeMatrix, eta: f64) -> f64 {
    let rows = row_energy(m);
    if eta == 0.0 {
        rows
    } else {
        rows + eta * column_energy(m)
    }
}

#[cfg(test)]
pub(crate) fn table1() -> CodeMatrix {
    CodeMatrix::new(2, vec![vec![1, 0, 1, 0], vec![1, 1, 0, 1], vec![0, 0, 0, 1]]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn part(q: usize, a: &[usize]) -> ColumnPartition {
        ColumnPartition::from_assignment(q, a).unwrap()
    }

    /// Independent VI oracle: entropies from cluster-set intersections.
    fn vi_oracle(a: &ColumnPartition, b: &ColumnPartition) -> f64 {
        let m = a.num_classes() as f64;
        let h = |p: &ColumnPartition| -> f64 {
            p.cluster_sets().iter().filter(|s| !s.is_empty()).map(|s| {
                let x = s.len() as f64 / m;
                -x * x.ln()
            }).sum()
        };
        let mut joint_h = 0.0;
        for sa in a.cluster_sets() {
            for sb in b.cluster_sets() {
                let n = sa.iter().filter(|c| sb.contains(c)).count();
                if n > 0 {
                    let x = n as f64 / m;
                    joint_h -= x * x.ln();
                }
            }
        }
        // VI = 2 H(A,B) - H(A) - H(B)
        2.0 * joint_h - h(a) - h(b)
    }

    #[test]
    fn hamming_table1_rows() {
        let m = table1();
        assert_eq!(hamming_distance(m.row(0), m.row(1)).unwrap(), 3);
        assert_eq!(hamming_distance(m.row(0), m.row(0)).unwrap(), 0);
        assert_eq!(hamming_distance(m.row(1), m.row(2)).unwrap(), 2);
        assert_eq!(hamming_distance(m.row(0), m.row(2)).unwrap(), 3);
        assert!(matches!(hamming_distance(&[0, 1], &[0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn min_hamming_examples() {
        assert_eq!(min_hamming(&table1()).unwrap(), 2);
        let comp = CodeMatrix::new(2, vec![vec![0, 1, 1, 0, 1], vec![1, 0, 0, 1, 0]]).unwrap();
        assert_eq!(min_hamming(&comp).unwrap(), 5);
        let id = CodeMatrix::new(2, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]).unwrap();
        assert_eq!(min_hamming(&id).unwrap(), 2);
        let one = CodeMatrix::new(3, vec![vec![0, 1, 2]]);
        // one row means every column is constant
        assert!(one.is_err());
    }

    #[test]
    fn vi_examples() {
        let m = table1();
        assert_eq!(vi_distance(&m.partition(2), &m.partition(3)).unwrap(), 0.0);
        assert_eq!(vi_distance(&m.partition(1), &m.partition(1)).unwrap(), 0.0);
        let v = vi_distance(&m.partition(0), &m.partition(1)).unwrap();
        assert!((v - 0.924_196_240_746_593_7).abs() < 1e-12, "{v}");
        assert!((vi_oracle(&m.partition(0), &m.partition(1)) - v).abs() < 1e-12);
        let err = vi_distance(&part(2, &[0, 1]), &part(2, &[0, 1, 1]));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn min_vi_examples() {
        assert_eq!(min_vi(&table1()).unwrap(), 0.0);
        let two = table1().select_columns(&[0, 1]).unwrap();
        assert!((min_vi(&two).unwrap() - 0.924_196_240_746_593_7).abs() < 1e-12);
        // all distinct balanced partitions of 4 classes
        let bal = CodeMatrix::new(2, vec![vec![0, 0, 0], vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]]).unwrap();
        assert!(min_vi(&bal).unwrap() > 0.0);
        let single = CodeMatrix::new(2, vec![vec![0], vec![1]]).unwrap();
        assert!(min_vi(&single).is_err());
    }

    #[test]
    fn mutual_information_balanced() {
        let p = part(2, &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert!((mutual_information(&p).unwrap() - 2f64.ln()).abs() < 1e-12);
        let p = part(3, &[0, 0, 0, 1, 1, 1, 2, 2, 2]);
        assert!((mutual_information(&p).unwrap() - 3f64.ln()).abs() < 1e-12);
        let constant = part(2, &[1, 1, 1]);
        assert_eq!(mutual_information(&constant).unwrap(), 0.0);
    }

    #[test]
    fn max_mutual_information_is_log_q() {
        for &m in &[6usize, 10, 12] {
            for &q in &[2usize, 3, 4] {
                let (v, sizes) = max_mutual_information(m, q).unwrap();
                if m % q == 0 {
                    assert!((v - (q as f64).ln()).abs() < 1e-12);
                    assert!(sizes.iter().all(|&s| s == m / q));
                } else {
                    assert!(v < (q as f64).ln());
                }
            }
        }
    }

    #[test]
    fn energy_examples() {
        let t = table1();
        assert_eq!(energy(&t, 1.0), f64::INFINITY);
        assert_eq!(energy(&t, 0.01), f64::INFINITY);
        // rows of the reference matrix are at distances {3, 3, 2}
        assert!((energy(&t, 0.0) - (1.0 / 9.0 + 1.0 / 9.0 + 0.25)).abs() < 1e-15);
        // first three columns: rows pairwise at distance 2
        let r = t.select_columns(&[0, 1, 2]).unwrap();
        assert!((energy(&r, 0.0) - 0.75).abs() < 1e-15);
        // complementary-row 2-class code: one pair at distance N
        let comp = CodeMatrix::new(2, vec![vec![0, 1, 0, 1], vec![1, 0, 1, 0]]).unwrap();
        assert!((energy(&comp, 0.0) - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn energy_closed_form_for_uniform_distances() {
        // 4 classes, the 3 balanced partitions; every row pair at H = 2, every column pair at the same VI.
        let m = CodeMatrix::new(2, vec![vec![0, 0, 0], vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]]).unwrap();
        let v = vi_distance(&m.partition(0), &m.partition(1)).unwrap();
        let eta = 0.7;
        let expected = 6.0 / 4.0 + eta * 3.0 / (v * v);
        assert!((energy(&m, eta) - expected).abs() < 1e-12);
    }

    #[test]
    fn binary_expansion_examples() {
        let m = CodeMatrix::new(3, vec![vec![0, 2], vec![1, 0], vec![2, 1]]).unwrap();
        let b = m.binary_expansion();
        assert_eq!(b.row(0), &[1, 0, 0, 0, 0, 1]);
        assert_eq!(b.alphabet(), 2);
        assert_eq!(b.code_length(), 6);
        let t = table1();
        let tb = t.binary_expansion();
        assert_eq!(&tb.row(1)[..2], &[0, 1]);
        assert_eq!(min_hamming(&tb).unwrap(), 2 * min_hamming(&t).unwrap());
    }

    #[test]
    fn text_round_trip_and_rejections() {
        let t = table1();
        let text = t.to_text();
        assert_eq!(CodeMatrix::from_text(&text).unwrap(), t);

        let dup = r#"{"num_classes": 2, "code_length": 2, "alphabet": 2, "entries": [[0,1],[0,1]]}"#;
        assert!(CodeMatrix::from_text(dup).is_err());
        let range = r#"{"num_classes": 2, "code_length": 2, "alphabet": 2, "entries": [[0,3],[1,0]]}"#;
        assert!(CodeMatrix::from_text(range).is_err());
        let trailing = format!("{text} x");
        assert!(CodeMatrix::from_text(&trailing).is_err());
        let short = r#"{"num_classes": 3, "code_length": 2, "alphabet": 2, "entries": [[0,1],[1,0]]}"#;
        assert!(CodeMatrix::from_text(short).is_err());
        let extra = r#"{"num_classes": 2, "code_length": 2, "alphabet": 2, "entries": [[0,1],[1,0]], "x": 1}"#;
        assert!(CodeMatrix::from_text(extra).is_err());
    }

    #[test]
    fn invariants_enforced() {
        assert!(CodeMatrix::new(2, vec![vec![0, 1], vec![0, 0]]).is_err()); // constant column 0
        assert!(CodeMatrix::new(1, vec![vec![0], vec![1]]).is_err());
        assert!(CodeMatrix::new(2, vec![vec![0, 1], vec![1]]).is_err());
    }

    fn arb_column(m: usize, q: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0..q, m)
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(
            a in proptest::collection::vec(0usize..3, 12),
            b in proptest::collection::vec(0usize..3, 12),
            c in proptest::collection::vec(0usize..3, 12),
        ) {
            let ab = hamming_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, hamming_distance(&b, &a).unwrap());
            prop_assert_eq!(ab == 0, a == b);
            let ac = hamming_distance(&a, &c).unwrap();
            let cb = hamming_distance(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb);
        }

        #[test]
        fn vi_properties(
            a in arb_column(9, 3),
            b in arb_column(9, 3),
            perm_idx in 0usize..6,
        ) {
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let p = perms[perm_idx];
            let pa = part(3, &a);
            let pb = part(3, &b);
            let relabeled: Vec<usize> = a.iter().map(|&s| p[s]).collect();
            let pr = part(3, &relabeled);
            let ab = vi_distance(&pa, &pb).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - vi_distance(&pb, &pa).unwrap()).abs() < 1e-12);
            prop_assert!((ab - vi_distance(&pr, &pb).unwrap()).abs() < 1e-12);
            prop_assert!(vi_distance(&pa, &pr).unwrap() < 1e-12);
            prop_assert!((ab - vi_oracle(&pa, &pb)).abs() < 1e-12);
            // zero iff same partition up to relabeling: compare co-membership
            let same = (0..9).all(|i| (0..9).all(|j| (a[i] == a[j]) == (b[i] == b[j])));
            prop_assert_eq!(ab < VI_ZERO_TOL, same);
        }

        #[test]
        fn mutual_information_bounded_by_log_q(q in 2usize..5, col in arb_column(12, 4)) {
            let col: Vec<usize> = col.into_iter().map(|s| s % q).collect();
            let p = part(q, &col);
            let mi = mutual_information(&p).unwrap();
            let simplified: f64 = p.cluster_sizes().iter().filter(|&&s| s > 0)
                .map(|&s| (s as f64 / 12.0) * (12.0 / s as f64).ln()).sum();
            prop_assert!((mi - simplified).abs() < 1e-12);
            prop_assert!(mi <= (q as f64).ln() + 1e-12);
            let balanced = p.cluster_sizes().iter().all(|&s| s * q == 12);
            prop_assert_eq!((mi - (q as f64).ln()).abs() < 1e-12, balanced);
        }

        #[test]
        fn energy_decreases_when_one_distance_grows(rows in proptest::collection::vec(proptest::collection::vec(0usize..3, 6), 3)) {
            // Raise H(r0, r2) by one at a position where r2 agrees with r0 and r1
            // differs from both; the third symbol keeps H(r1, r2) unchanged.
            if let Ok(m) = CodeMatrix::new(3, rows) {
                let pos = (0..6).find(|&n| m.get(2, n) == m.get(0, n) && m.get(1, n) != m.get(0, n));
                if let Some(n) = pos {
                    let mut bumped = m.clone();
                    bumped.set_unchecked(2, n, 3 - m.get(0, n) - m.get(1, n));
                    prop_assert!(bumped.validate().is_ok());
                    let h = |x: &CodeMatrix, i: usize, j: usize| hamming_distance(x.row(i), x.row(j)).unwrap();
                    prop_assert_eq!(h(&bumped, 0, 2), h(&m, 0, 2) + 1);
                    prop_assert_eq!(h(&bumped, 1, 2), h(&m, 1, 2));
                    prop_assert_eq!(h(&bumped, 0, 1), h(&m, 0, 1));
                    prop_assert!(energy(&bumped, 0.0) < energy(&m, 0.0));
                }
            }
        }

        #[test]
        fn binary_expansion_keeps_rows_distinct(rows in proptest::collection::vec(proptest::collection::vec(0usize..3, 5), 4)) {
            if let Ok(m) = CodeMatrix::new(3, rows) {
                let b = m.binary_expansion();
                prop_assert!(b.check_rows_distinct().is_ok());
                prop_assert_eq!(min_hamming(&b).unwrap(), 2 * min_hamming(&m).unwrap());
            }
        }
    }
}
