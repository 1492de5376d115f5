//! Absorbing continuous-time Markov chain in compressed sparse row form.

use std::io::{self, Write};
use std::sync::OnceLock;

use crate::io::fmt_f64;
use crate::srn::Marking;

/// Sparse generator of an absorbing CTMC.
///
/// Only off-diagonal entries are stored: `cols[row_ptr[i]..row_ptr[i+1]]`
/// are the successors of state `i` with positive rates in the matching
/// slice of `rates`. Diagonal entries are implied by the row sums
/// (`exit_rate`). Absorbing states have empty rows.
pub struct Ctmc {
    markings: Vec<Marking>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    rates: Vec<f64>,
    initial: u32,
    absorbing: Vec<bool>,
    exit_rates: Vec<f64>,
    rewards: Vec<(String, Vec<f64>)>,
    transpose: OnceLock<Transpose>,
}

/// In-edge view of the generator: `cols[row_ptr[i]..row_ptr[i+1]]` are the
/// predecessors of state `i`.
pub struct Transpose {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub rates: Vec<f64>,
}

impl Transpose {
    pub fn in_edges(&self, state: usize) -> (&[u32], &[f64]) {
        let lo = self.row_ptr[state];
        let hi = self.row_ptr[state + 1];
        (&self.cols[lo..hi], &self.rates[lo..hi])
    }
}

impl std::fmt::Debug for Ctmc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ctmc")
            .field("states", &self.n_states())
            .field("transitions", &self.n_transitions())
            .field("initial", &self.initial)
            .finish_non_exhaustive()
    }
}

impl Ctmc {
    pub(crate) fn from_expansion(
        markings: Vec<Marking>,
        row_ptr: Vec<usize>,
        cols: Vec<u32>,
        rates: Vec<f64>,
        initial: u32,
        absorbing: Vec<bool>,
        rewards: Vec<(String, Vec<f64>)>,
    ) -> Self {
        let exit_rates = compute_exit_rates(&row_ptr, &rates);
        Ctmc {
            markings,
            row_ptr,
            cols,
            rates,
            initial,
            absorbing,
            exit_rates,
            rewards,
            transpose: OnceLock::new(),
        }
    }

    /// Builds a chain directly from an edge list; used by tests and by
    /// callers that want CTMC analysis without a net. States listed in
    /// `absorbing` must have no outgoing edges.
    pub fn from_parts(
        n_states: usize,
        edges: &[(u32, u32, f64)],
        initial: u32,
        absorbing: Vec<bool>,
        rewards: Vec<(String, Vec<f64>)>,
    ) -> Self {
        assert_eq!(absorbing.len(), n_states);
        assert!((initial as usize) < n_states);
        for (name, r) in &rewards {
            assert_eq!(r.len(), n_states, "reward `{name}` has wrong length");
        }
        let mut sorted: Vec<(u32, u32, f64)> = edges.to_vec();
        sorted.sort_by_key(|&(s, d, _)| (s, d));
        let mut row_ptr = vec![0usize; n_states + 1];
        let mut cols = Vec::with_capacity(sorted.len());
        let mut rates = Vec::with_capacity(sorted.len());
        for &(s, d, r) in &sorted {
            assert!(!absorbing[s as usize], "absorbing state {s} has an outgoing edge");
            assert!(s != d, "self-loop on state {s}");
            assert!(r > 0.0 && r.is_finite());
            row_ptr[s as usize + 1] += 1;
            cols.push(d);
            rates.push(r);
        }
        for i in 0..n_states {
            row_ptr[i + 1] += row_ptr[i];
        }
        let exit_rates = compute_exit_rates(&row_ptr, &rates);
        Ctmc {
            markings: Vec::new(),
            row_ptr,
            cols,
            rates,
            initial,
            absorbing,
            exit_rates,
            rewards,
            transpose: OnceLock::new(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.absorbing.len()
    }

    /// Number of stored (off-diagonal) transitions.
    pub fn n_transitions(&self) -> u64 {
        self.cols.len() as u64
    }

    pub fn initial(&self) -> u32 {
        self.initial
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        self.absorbing[state]
    }

    pub fn absorbing_flags(&self) -> &[bool] {
        &self.absorbing
    }

    pub fn n_absorbing(&self) -> usize {
        self.absorbing.iter().filter(|&&a| a).count()
    }

    pub fn out_edges(&self, state: usize) -> (&[u32], &[f64]) {
        let lo = self.row_ptr[state];
        let hi = self.row_ptr[state + 1];
        (&self.cols[lo..hi], &self.rates[lo..hi])
    }

    /// Total rate out of `state` (the negated diagonal entry).
    pub fn exit_rate(&self, state: usize) -> f64 {
        self.exit_rates[state]
    }

    pub fn exit_rates(&self) -> &[f64] {
        &self.exit_rates
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.exit_rates.iter().copied().fold(0.0, f64::max)
    }

    /// Tangible markings in state-index order. Empty for chains built via
    /// [`Ctmc::from_parts`].
    pub fn markings(&self) -> &[Marking] {
        &self.markings
    }

    pub fn reward_names(&self) -> impl Iterator<Item = &str> {
        self.rewards.iter().map(|(n, _)| n.as_str())
    }

    pub fn reward_vec(&self, name: &str) -> Option<&[f64]> {
        self.rewards.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Primary (index 0) reward vector.
    pub fn primary_reward(&self) -> Option<&[f64]> {
        self.rewards.first().map(|(_, v)| v.as_slice())
    }

    /// In-edge representation, built once on first use.
    pub fn transpose(&self) -> &Transpose {
        self.transpose.get_or_init(|| {
            let n = self.n_states();
            let mut row_ptr = vec![0usize; n + 1];
            for &d in &self.cols {
                row_ptr[d as usize + 1] += 1;
            }
            for i in 0..n {
                row_ptr[i + 1] += row_ptr[i];
            }
            let mut fill = row_ptr.clone();
            let mut cols = vec![0u32; self.cols.len()];
            let mut rates = vec![0f64; self.cols.len()];
            for src in 0..n {
                let (dsts, rs) = self.out_edges(src);
                for (&d, &r) in dsts.iter().zip(rs) {
                    let slot = fill[d as usize];
                    fill[d as usize] += 1;
                    cols[slot] = src as u32;
                    rates[slot] = r;
                }
            }
            Transpose { row_ptr, cols, rates }
        })
    }

    /// Plain-text export: header records (`states`, `initial`, `absorbing`,
    /// one `reward` record per state), then one `src dst rate` line per
    /// transition. Rates and rewards carry 13 significant digits.
    pub fn export_edge_list<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "states {}", self.n_states())?;
        writeln!(w, "initial {}", self.initial)?;
        write!(w, "absorbing")?;
        for (i, &a) in self.absorbing.iter().enumerate() {
            if a {
                write!(w, " {i}")?;
            }
        }
        writeln!(w)?;
        if let Some(r) = self.primary_reward() {
            for (i, &x) in r.iter().enumerate() {
                writeln!(w, "reward {i} {}", fmt_f64(x))?;
            }
        }
        for src in 0..self.n_states() {
            let (dsts, rs) = self.out_edges(src);
            for (&d, &r) in dsts.iter().zip(rs) {
                writeln!(w, "{src} {d} {}", fmt_f64(r))?;
            }
        }
        Ok(())
    }

    pub fn edge_list_string(&self) -> io::Result<String> {
        let mut buf = Vec::new();
        self.export_edge_list(&mut buf)?;
        Ok(String::from_utf8(buf).expect("edge list is ASCII"))
    }
}

fn compute_exit_rates(row_ptr: &[usize], rates: &[f64]) -> Vec<f64> {
    let n = row_ptr.len() - 1;
    let mut out = vec![0.0; n];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = rates[row_ptr[i]..row_ptr[i + 1]].iter().sum();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Ctmc {
        Ctmc::from_parts(
            3,
            &[(0, 1, 1.0), (0, 2, 3.0), (1, 2, 0.5)],
            0,
            vec![false, false, true],
            vec![("r".into(), vec![0.0, 1.0, 2.0])],
        )
    }

    #[test]
    fn from_parts_builds_csr() {
        let c = tiny();
        assert_eq!(c.n_states(), 3);
        assert_eq!(c.n_transitions(), 3);
        assert_eq!(c.out_edges(0), (&[1u32, 2][..], &[1.0, 3.0][..]));
        assert!((c.exit_rate(0) - 4.0).abs() < 1e-15);
        assert!((c.exit_rate(2) - 0.0).abs() < 1e-15);
        assert_eq!(c.n_absorbing(), 1);
        assert!((c.max_exit_rate() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn transpose_lists_in_edges() {
        let c = tiny();
        let t = c.transpose();
        assert_eq!(t.in_edges(0), (&[][..], &[][..]));
        assert_eq!(t.in_edges(1), (&[0u32][..], &[1.0][..]));
        let (srcs, rates) = t.in_edges(2);
        assert_eq!(srcs, &[0, 1]);
        assert_eq!(rates, &[3.0, 0.5]);
    }

    #[test]
    fn edge_list_format() {
        let c = tiny();
        let text = c.edge_list_string().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "states 3");
        assert_eq!(lines[1], "initial 0");
        assert_eq!(lines[2], "absorbing 2");
        assert_eq!(lines[3], "reward 0 0.000000000000e0");
        assert!(lines.contains(&"0 2 3.000000000000e0"));
        assert!(lines.contains(&"1 2 5.000000000000e-1"));
    }
}
