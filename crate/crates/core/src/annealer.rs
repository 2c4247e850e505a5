//! Simulated-annealing search for code matrices.
//!
//! The energy is `sum_{i<j} H(r_i, r_j)^-2 + eta * sum_{m<n} VI(c_m, c_n)^-2`.
//! Column pairs with `VI = 0` make the energy infinite; internally the search
//! orders states by (number of such pairs, finite remainder) so the Metropolis
//! rule stays well defined while a duplicate partition is present.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::codebook::{self, inverse_square_vi, vi_from_assignments, CodeMatrix, VI_ZERO_TOL};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Rng};

/// Resample budget for proposals and random initial matrices.
pub const MAX_RESAMPLES: usize = 1000;

/// Geometric cooling schedule `T_t = T_0 * cooling^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub initial_temperature: f64,
    pub cooling_factor: f64,
    pub steps_per_temperature: usize,
    pub num_temperatures: usize,
    pub seed: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            initial_temperature: 1.0,
            cooling_factor: 0.95,
            steps_per_temperature: 500,
            num_temperatures: 200,
            seed: 0,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_temperature > 0.0 && self.initial_temperature.is_finite()) {
            return Err(invalid("initial temperature must be positive and finite"));
        }
        if !(self.cooling_factor > 0.0 && self.cooling_factor < 1.0) {
            return Err(invalid("cooling factor must lie in (0, 1)"));
        }
        if self.steps_per_temperature == 0 || self.num_temperatures == 0 {
            return Err(invalid("step and temperature counts must be positive"));
        }
        Ok(())
    }

    pub fn temperature(&self, t: usize) -> f64 {
        self.initial_temperature * self.cooling_factor.powi(t as i32)
    }
}

/// Outcome of one annealing run.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub matrix: CodeMatrix,
    pub final_energy: f64,
    pub min_hamming: usize,
    pub min_vi: f64,
    pub eta_used: f64,
    /// Best-so-far energy after each temperature level.
    pub energy_trace: Vec<f64>,
}

#[derive(Serialize)]
struct DesignReport<'a> {
    num_classes: usize,
    code_length: usize,
    alphabet: usize,
    final_energy: Option<f64>,
    min_hamming: usize,
    min_vi: f64,
    eta_used: f64,
    energy_trace: Vec<Option<f64>>,
    entries: &'a [Vec<usize>],
}

impl DesignResult {
    /// JSON report; infinite energies are written as `null`.
    pub fn report_json(&self) -> String {
        let finite = |v: f64| v.is_finite().then_some(v);
        let rows = self.matrix.rows();
        let report = DesignReport {
            num_classes: self.matrix.num_classes(),
            code_length: self.matrix.code_length(),
            alphabet: self.matrix.alphabet(),
            final_energy: finite(self.final_energy),
            min_hamming: self.min_hamming,
            min_vi: self.min_vi,
            eta_used: self.eta_used,
            energy_trace: self.energy_trace.iter().copied().map(finite).collect(),
            entries: &rows,
        };
        serde_json::to_string_pretty(&report).expect("report serializes")
    }
}

/// Weight that makes both energy sums equal on `m`.
///
/// Fails with [`Error::DegeneratePartition`] when two columns share a
/// partition; the caller is expected to resample.
pub fn calibrate_eta(m: &CodeMatrix) -> Result<f64> {
    if let Some((i, j)) = first_duplicate_partition(m) {
        return Err(Error::DegeneratePartition(i, j));
    }
    let rows = codebook::row_energy(m);
    let cols = codebook::column_energy(m);
    if cols == 0.0 {
        // a single column has no pairs
        return Ok(1.0);
    }
    Ok(rows / cols)
}

fn first_duplicate_partition(m: &CodeMatrix) -> Option<(usize, usize)> {
    let cols: Vec<Vec<usize>> = (0..m.code_length()).map(|n| m.column(n)).collect();
    let q = m.alphabet();
    for i in 0..cols.len() {
        for j in (i + 1)..cols.len() {
            if vi_from_assignments(&cols[i], q, &cols[j], q) <= VI_ZERO_TOL {
                return Some((i, j));
            }
        }
    }
    None
}

fn check_feasible(num_classes: usize, code_length: usize, alphabet: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(invalid("need at least two classes"));
    }
    if alphabet < 2 {
        return Err(invalid("alphabet must be >= 2"));
    }
    if code_length == 0 {
        return Err(invalid("code length must be positive"));
    }
    // q^N >= M, computed without overflow
    let mut reach: usize = 1;
    for _ in 0..code_length {
        reach = reach.saturating_mul(alphabet);
        if reach >= num_classes {
            return Ok(());
        }
    }
    Err(invalid(format!(
        "{code_length} symbols over alphabet {alphabet} cannot give {num_classes} distinct codewords"
    )))
}

/// Uniform random matrix with non-constant columns, resampled until the rows
/// are distinct. Columns are drawn one at a time so that the constant-column
/// rejection does not compound over `N`.
pub fn random_matrix(num_classes: usize, code_length: usize, alphabet: usize, rng: &mut Rng) -> Result<CodeMatrix> {
    check_feasible(num_classes, code_length, alphabet)?;
    for _ in 0..MAX_RESAMPLES {
        let mut entries = vec![0; num_classes * code_length];
        for n in 0..code_length {
            loop {
                for i in 0..num_classes {
                    entries[i * code_length + n] = rng.random_range(0..alphabet);
                }
                let first = entries[n];
                if (1..num_classes).any(|i| entries[i * code_length + n] != first) {
                    break;
                }
            }
        }
        if let Ok(m) = CodeMatrix::from_flat(num_classes, code_length, alphabet, entries) {
            return Ok(m);
        }
    }
    Err(Error::SearchStuck(MAX_RESAMPLES))
}

fn draw_move(m: &CodeMatrix, rng: &mut Rng) -> (usize, usize, usize) {
    let i = rng.random_range(0..m.num_classes());
    let n = rng.random_range(0..m.code_length());
    let old = m.get(i, n);
    let mut s = rng.random_range(0..m.alphabet() - 1);
    if s >= old {
        s += 1;
    }
    (i, n, s)
}

/// Whether setting entry `(i, n)` to `symbol` keeps the matrix valid.
fn move_is_valid(m: &CodeMatrix, i: usize, n: usize, symbol: usize) -> bool {
    let rows_ok = (0..m.num_classes()).filter(|&j| j != i).all(|j| {
        (0..m.code_length()).any(|c| {
            let a = if c == n { symbol } else { m.get(i, c) };
            a != m.get(j, c)
        })
    });
    if !rows_ok {
        return false;
    }
    (0..m.num_classes()).any(|j| j != i && m.get(j, n) != symbol)
}

/// Copy of `m` with one uniformly chosen entry changed to a different symbol.
pub fn propose_neighbor(m: &CodeMatrix, rng: &mut Rng) -> Result<CodeMatrix> {
    for _ in 0..MAX_RESAMPLES {
        let (i, n, s) = draw_move(m, rng);
        if move_is_valid(m, i, n, s) {
            let mut next = m.clone();
            next.set_unchecked(i, n, s);
            return Ok(next);
        }
    }
    Err(Error::SearchStuck(MAX_RESAMPLES))
}

/// Energy ordered first by the number of zero-VI column pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Energy {
    duplicates: usize,
    finite: f64,
}

impl Energy {
    fn less_than(&self, other: &Energy) -> bool {
        self.duplicates < other.duplicates || (self.duplicates == other.duplicates && self.finite < other.finite)
    }

    fn value(&self) -> f64 {
        if self.duplicates > 0 {
            f64::INFINITY
        } else {
            self.finite
        }
    }
}

/// Matrix plus cached pairwise distances for incremental energy updates.
struct AnnealState {
    matrix: CodeMatrix,
    columns: Vec<Vec<usize>>,
    hamming: Vec<usize>,
    vi: Vec<f64>,
    eta: f64,
    energy: Energy,
}

impl AnnealState {
    fn new(matrix: CodeMatrix, eta: f64) -> Self {
        let (m, n) = (matrix.num_classes(), matrix.code_length());
        let columns: Vec<Vec<usize>> = (0..n).map(|c| matrix.column(c)).collect();
        let mut hamming = vec![0; m * m];
        for i in 0..m {
            for j in 0..m {
                hamming[i * m + j] = matrix.row(i).iter().zip(matrix.row(j)).filter(|(a, b)| a != b).count();
            }
        }
        let q = matrix.alphabet();
        let mut vi = vec![0.0; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let v = vi_from_assignments(&columns[a], q, &columns[b], q);
                vi[a * n + b] = v;
                vi[b * n + a] = v;
            }
        }
        let mut s = Self { matrix, columns, hamming, vi, eta, energy: Energy { duplicates: 0, finite: 0.0 } };
        s.energy = s.full_energy();
        s
    }

    fn use_columns(&self) -> bool {
        self.eta != 0.0
    }

    fn full_energy(&self) -> Energy {
        let (m, n) = (self.matrix.num_classes(), self.matrix.code_length());
        let mut finite = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                let h = self.hamming[i * m + j];
                finite += 1.0 / (h * h) as f64;
            }
        }
        let mut duplicates = 0;
        if self.use_columns() {
            let mut cols = 0.0;
            for a in 0..n {
                for b in (a + 1)..n {
                    let v = self.vi[a * n + b];
                    if v <= VI_ZERO_TOL {
                        duplicates += 1;
                    } else {
                        cols += inverse_square_vi(v);
                    }
                }
            }
            finite += self.eta * cols;
        }
        Energy { duplicates, finite }
    }

    /// Energy after setting `(i, n)` to `symbol`, plus the new VI row for column `n`.
    fn trial(&self, i: usize, n: usize, symbol: usize) -> (Energy, Vec<f64>) {
        let m = self.matrix.num_classes();
        let old = self.matrix.get(i, n);
        let mut finite = self.energy.finite;
        for j in 0..m {
            if j == i {
                continue;
            }
            let h = self.hamming[i * m + j];
            let other = self.matrix.get(j, n);
            let h_new = h + usize::from(other != symbol) - usize::from(other != old);
            finite += 1.0 / (h_new * h_new) as f64 - 1.0 / (h * h) as f64;
        }
        let mut duplicates = self.energy.duplicates;
        let mut new_vi = Vec::new();
        if self.use_columns() {
            let cols_n = self.matrix.code_length();
            let q = self.matrix.alphabet();
            let mut col = self.columns[n].clone();
            col[i] = symbol;
            new_vi = vec![0.0; cols_n];
            let mut delta = 0.0;
            for c in 0..cols_n {
                if c == n {
                    continue;
                }
                let before = self.vi[n * cols_n + c];
                let after = vi_from_assignments(&col, q, &self.columns[c], q);
                new_vi[c] = after;
                match (before <= VI_ZERO_TOL, after <= VI_ZERO_TOL) {
                    (true, true) => {}
                    (true, false) => {
                        duplicates -= 1;
                        delta += inverse_square_vi(after);
                    }
                    (false, true) => {
                        duplicates += 1;
                        delta -= inverse_square_vi(before);
                    }
                    (false, false) => delta += inverse_square_vi(after) - inverse_square_vi(before),
                }
            }
            finite += self.eta * delta;
        }
        (Energy { duplicates, finite }, new_vi)
    }

    fn commit(&mut self, i: usize, n: usize, symbol: usize, energy: Energy, new_vi: Vec<f64>) {
        let m = self.matrix.num_classes();
        let old = self.matrix.get(i, n);
        for j in 0..m {
            if j == i {
                continue;
            }
            let other = self.matrix.get(j, n);
            let h = self.hamming[i * m + j] + usize::from(other != symbol) - usize::from(other != old);
            self.hamming[i * m + j] = h;
            self.hamming[j * m + i] = h;
        }
        self.matrix.set_unchecked(i, n, symbol);
        self.columns[n][i] = symbol;
        if self.use_columns() {
            let cols_n = self.matrix.code_length();
            for (c, v) in new_vi.into_iter().enumerate() {
                if c != n {
                    self.vi[n * cols_n + c] = v;
                    self.vi[c * cols_n + n] = v;
                }
            }
        }
        self.energy = energy;
    }

    fn valid_move(&self, i: usize, n: usize, symbol: usize) -> bool {
        let m = self.matrix.num_classes();
        let old = self.matrix.get(i, n);
        // row distinctness: a row at distance 1 that differs exactly here would collide
        for j in 0..m {
            if j == i {
                continue;
            }
            let other = self.matrix.get(j, n);
            let h_new = self.hamming[i * m + j] + usize::from(other != symbol) - usize::from(other != old);
            if h_new == 0 {
                return false;
            }
        }
        (0..m).any(|j| j != i && self.matrix.get(j, n) != symbol)
    }

    fn all_valid_moves(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.matrix.num_classes() {
            for n in 0..self.matrix.code_length() {
                for s in 0..self.matrix.alphabet() {
                    if s != self.matrix.get(i, n) && self.valid_move(i, n, s) {
                        out.push((i, n, s));
                    }
                }
            }
        }
        out
    }
}

/// Anneals an `M x N` q-ary matrix under `schedule`.
///
/// `eta` is calibrated once on the random initial matrix and then frozen. When
/// no initial draw has all-distinct column partitions (for instance when `N`
/// exceeds the number of distinct partitions of `M` classes), `eta` is
/// calibrated on the finite column terms only.
pub fn design_matrix(num_classes: usize, code_length: usize, alphabet: usize, schedule: &AnnealSchedule) -> Result<DesignResult> {
    check_feasible(num_classes, code_length, alphabet)?;
    schedule.validate()?;
    let mut rng = rng::seeded(schedule.seed);

    let mut initial = random_matrix(num_classes, code_length, alphabet, &mut rng)?;
    let mut eta = None;
    for _ in 0..MAX_RESAMPLES {
        match calibrate_eta(&initial) {
            Ok(e) => {
                eta = Some(e);
                break;
            }
            Err(Error::DegeneratePartition(..)) => {
                initial = random_matrix(num_classes, code_length, alphabet, &mut rng)?;
            }
            Err(e) => return Err(e),
        }
    }
    let eta = match eta {
        Some(e) => e,
        None => calibrate_on_finite_terms(&initial),
    };

    let mut state = AnnealState::new(initial, eta);
    let mut best = state.matrix.clone();
    let mut best_energy = exact_energy(&best, eta);
    let mut trace = Vec::with_capacity(schedule.num_temperatures);

    let mut frozen = false;
    for t in 0..schedule.num_temperatures {
        let temperature = schedule.temperature(t);
        for _ in 0..schedule.steps_per_temperature {
            if frozen {
                break;
            }
            let mut proposal = None;
            for _ in 0..MAX_RESAMPLES {
                let (i, n, s) = draw_move(&state.matrix, &mut rng);
                if state.valid_move(i, n, s) {
                    proposal = Some((i, n, s));
                    break;
                }
            }
            if proposal.is_none() {
                // Sampling missed; fall back to enumerating the neighbourhood.
                // An empty neighbourhood means the current matrix is the only
                // reachable state (e.g. two rows, binary alphabet).
                let moves = state.all_valid_moves();
                if moves.is_empty() {
                    frozen = true;
                    break;
                }
                proposal = Some(moves[rng.random_range(0..moves.len())]);
            }
            let (i, n, s) = proposal.expect("proposal chosen above");
            let (candidate, new_vi) = state.trial(i, n, s);
            let accept = if candidate.duplicates != state.energy.duplicates {
                candidate.duplicates < state.energy.duplicates
            } else {
                let delta = candidate.finite - state.energy.finite;
                delta <= 0.0 || rng.random::<f64>() < (-delta / temperature).exp()
            };
            if accept {
                state.commit(i, n, s, candidate, new_vi);
                if state.energy.less_than(&best_energy) {
                    let exact = exact_energy(&state.matrix, eta);
                    if exact.less_than(&best_energy) {
                        best = state.matrix.clone();
                        best_energy = exact;
                    }
                }
            }
        }
        // resync to drop accumulated rounding in the running sum
        state.energy = state.full_energy();
        trace.push(best_energy.value());
    }

    let final_energy = codebook::energy(&best, eta);
    Ok(DesignResult {
        min_hamming: codebook::min_hamming(&best)?,
        min_vi: if code_length >= 2 { codebook::min_vi(&best)? } else { f64::INFINITY },
        matrix: best,
        final_energy,
        eta_used: eta,
        energy_trace: trace,
    })
}

/// Energy evaluated from scratch, summed in the same order as [`codebook::energy`].
fn exact_energy(m: &CodeMatrix, eta: f64) -> Energy {
    let rows = codebook::row_energy(m);
    if eta == 0.0 {
        return Energy { duplicates: 0, finite: rows };
    }
    let n = m.code_length();
    let q = m.alphabet();
    let cols: Vec<Vec<usize>> = (0..n).map(|c| m.column(c)).collect();
    let mut duplicates = 0;
    let mut finite_cols = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            let v = vi_from_assignments(&cols[a], q, &cols[b], q);
            if v <= VI_ZERO_TOL {
                duplicates += 1;
            } else {
                finite_cols += inverse_square_vi(v);
            }
        }
    }
    Energy { duplicates, finite: rows + eta * finite_cols }
}

fn calibrate_on_finite_terms(m: &CodeMatrix) -> f64 {
    let rows = codebook::row_energy(m);
    let n = m.code_length();
    let q = m.alphabet();
    let cols: Vec<Vec<usize>> = (0..n).map(|c| m.column(c)).collect();
    let mut finite = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            let v = vi_from_assignments(&cols[a], q, &cols[b], q);
            if v > VI_ZERO_TOL {
                finite += inverse_square_vi(v);
            }
        }
    }
    if finite > 0.0 {
        rows / finite
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{energy, min_hamming, min_vi, table1};

    fn quick(seed: u64) -> AnnealSchedule {
        AnnealSchedule { steps_per_temperature: 200, num_temperatures: 80, seed, ..Default::default() }
    }

    #[test]
    fn calibrate_eta_examples() {
        // 4 classes with the three balanced partitions
        let m = CodeMatrix::new(2, vec![vec![0, 0, 0], vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]]).unwrap();
        let eta = calibrate_eta(&m).unwrap();
        let rows = codebook::row_energy(&m);
        let cols = codebook::column_energy(&m);
        assert!((eta * cols - rows).abs() < 1e-12);
        assert!(matches!(calibrate_eta(&table1()), Err(Error::DegeneratePartition(2, 3))));

        let mut r = rng::seeded(3);
        let m = loop {
            let m = random_matrix(10, 20, 2, &mut r).unwrap();
            if calibrate_eta(&m).is_ok() {
                break m;
            }
        };
        let eta = calibrate_eta(&m).unwrap();
        let lhs = eta * codebook::column_energy(&m);
        let rhs = codebook::row_energy(&m);
        assert!((lhs - rhs).abs() <= 1e-12 * rhs);
    }

    #[test]
    fn calibrate_eta_ratio() {
        // both sums hand-computed on this matrix: eta is their ratio
        let m = CodeMatrix::new(2, vec![vec![0, 0, 0], vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]]).unwrap();
        let v = codebook::vi_distance(&m.partition(0), &m.partition(1)).unwrap();
        let expected = (6.0 / 4.0) / (3.0 / (v * v));
        assert!((calibrate_eta(&m).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn neighbor_differs_in_one_entry_and_is_valid() {
        let mut r = rng::seeded(11);
        let m = random_matrix(6, 8, 3, &mut r).unwrap();
        for _ in 0..200 {
            let n = propose_neighbor(&m, &mut r).unwrap();
            let diff = m.entries().iter().zip(n.entries()).filter(|(a, b)| a != b).count();
            assert_eq!(diff, 1);
            n.validate().unwrap();
        }
    }

    #[test]
    fn neighbor_of_two_by_two() {
        // rows (0,1),(1,0): enumerate all four single flips
        let m = CodeMatrix::new(2, vec![vec![0, 1], vec![1, 0]]).unwrap();
        let mut valid = 0;
        for i in 0..2 {
            for n in 0..2 {
                let mut c = m.clone();
                c.set_unchecked(i, n, 1 - m.get(i, n));
                if c.validate().is_ok() {
                    valid += 1;
                }
                assert_eq!(c.validate().is_ok(), move_is_valid(&m, i, n, 1 - m.get(i, n)));
            }
        }
        // flipping any bit makes that column constant
        assert_eq!(valid, 0);
        assert!(matches!(propose_neighbor(&m, &mut rng::seeded(0)), Err(Error::SearchStuck(_))));

        // 3 classes x 2 columns: enumerate, then check the proposer finds only valid ones
        let m = CodeMatrix::new(2, vec![vec![0, 1], vec![1, 0], vec![1, 1]]).unwrap();
        let mut valid = 0;
        for i in 0..3 {
            for n in 0..2 {
                let mut c = m.clone();
                c.set_unchecked(i, n, 1 - m.get(i, n));
                valid += usize::from(c.validate().is_ok());
            }
        }
        assert_eq!(valid, 2);
        let mut r = rng::seeded(5);
        for _ in 0..50 {
            propose_neighbor(&m, &mut r).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn random_matrix_examples() {
        let mut r = rng::seeded(1);
        let m = random_matrix(10, 30, 2, &mut r).unwrap();
        m.validate().unwrap();
        let a = random_matrix(10, 30, 2, &mut rng::seeded(9)).unwrap();
        let b = random_matrix(10, 30, 2, &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
        assert!(random_matrix(5, 2, 2, &mut r).is_err());
    }

    #[test]
    fn design_is_deterministic() {
        let a = design_matrix(6, 8, 2, &quick(42)).unwrap();
        let b = design_matrix(6, 8, 2, &quick(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.final_energy.to_bits(), b.final_energy.to_bits());
    }

    #[test]
    fn design_result_invariants() {
        let r = design_matrix(8, 12, 2, &quick(1)).unwrap();
        assert_eq!(r.final_energy, energy(&r.matrix, r.eta_used));
        assert!(r.energy_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.min_hamming, min_hamming(&r.matrix).unwrap());
        assert_eq!(r.min_vi, min_vi(&r.matrix).unwrap());
        assert_eq!(*r.energy_trace.last().unwrap(), r.final_energy);
    }

    #[test]
    fn three_classes_reach_minimum_duplicates() {
        // three binary partitions exist for 3 classes: N = 3 can avoid duplicates
        let r = design_matrix(3, 3, 2, &quick(2)).unwrap();
        assert!(r.min_vi > 0.0);
        // N = 4 forces one duplicate pair, same as the reference matrix; the design must not do worse
        let r = design_matrix(3, 4, 2, &quick(2)).unwrap();
        assert_eq!(r.min_vi, 0.0);
        let dupes = |m: &CodeMatrix| {
            let mut d = 0;
            for a in 0..m.code_length() {
                for b in (a + 1)..m.code_length() {
                    if codebook::vi_distance(&m.partition(a), &m.partition(b)).unwrap() < VI_ZERO_TOL {
                        d += 1;
                    }
                }
            }
            d
        };
        assert_eq!(dupes(&r.matrix), 1);
        assert_eq!(dupes(&table1()), 1);
        assert!(codebook::row_energy(&r.matrix) <= codebook::row_energy(&table1()));
    }

    #[test]
    fn two_classes_get_complementary_rows() {
        let r = design_matrix(2, 8, 2, &quick(3)).unwrap();
        assert_eq!(r.min_hamming, 8);
    }

    #[test]
    fn infeasible_dimensions_rejected() {
        assert!(design_matrix(9, 3, 2, &quick(0)).is_err());
        assert!(design_matrix(1, 3, 2, &quick(0)).is_err());
        let bad = AnnealSchedule { cooling_factor: 1.0, ..Default::default() };
        assert!(design_matrix(4, 4, 2, &bad).is_err());
    }

    #[test]
    fn incremental_energy_tracks_full_recompute() {
        let mut r = rng::seeded(8);
        let m = loop {
            let m = random_matrix(7, 9, 3, &mut r).unwrap();
            if calibrate_eta(&m).is_ok() {
                break m;
            }
        };
        let eta = calibrate_eta(&m).unwrap();
        let mut state = AnnealState::new(m, eta);
        for _ in 0..500 {
            let (i, n, s) = draw_move(&state.matrix, &mut r);
            if !state.valid_move(i, n, s) {
                continue;
            }
            let (e, vi) = state.trial(i, n, s);
            state.commit(i, n, s, e, vi);
            let full = state.full_energy();
            assert_eq!(full.duplicates, state.energy.duplicates);
            assert!((full.finite - state.energy.finite).abs() < 1e-9 * full.finite.max(1.0));
            let direct = energy(&state.matrix, eta);
            if full.duplicates == 0 {
                assert!((direct - full.finite).abs() < 1e-9 * direct);
            } else {
                assert_eq!(direct, f64::INFINITY);
            }
        }
    }
}
