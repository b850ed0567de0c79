//! Exchange plans: who sends how many elements to whom, and where those
//! elements live in each rank's send and receive buffers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Rank identifier within a communicator.
pub type Rank = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("communicator must have at least one rank")]
    EmptyCommunicator,
    #[error("element size must be positive")]
    ZeroElemSize,
    #[error("{field} has {got} rows/columns, expected {expected}")]
    Shape {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sendcounts[{src}][{dst}] = {send} but recvcounts[{dst}][{src}] = {recv}")]
    Inconsistent {
        src: Rank,
        dst: Rank,
        send: usize,
        recv: usize,
    },
    #[error("rank {rank} {side} regions for peers {a} and {b} overlap")]
    Overlap {
        rank: Rank,
        side: &'static str,
        a: Rank,
        b: Rank,
    },
    #[error("process grid {rows}x{cols} does not factor {n_ranks} ranks")]
    ProcessGrid {
        rows: usize,
        cols: usize,
        n_ranks: usize,
    },
    #[error("grid dimensions must be at least 1")]
    EmptyGrid,
}

/// Per-rank variable counts and displacements of an alltoallv, in elements.
///
/// Row `p` of each matrix belongs to rank `p`; column `q` names the peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangePlan {
    n_ranks: usize,
    elem_size: usize,
    sendcounts: Vec<Vec<usize>>,
    sdispls: Vec<Vec<usize>>,
    recvcounts: Vec<Vec<usize>>,
    rdispls: Vec<Vec<usize>>,
}

impl ExchangePlan {
    /// Builds a plan from explicit matrices, checking every invariant.
    pub fn new(
        elem_size: usize,
        sendcounts: Vec<Vec<usize>>,
        sdispls: Vec<Vec<usize>>,
        recvcounts: Vec<Vec<usize>>,
        rdispls: Vec<Vec<usize>>,
    ) -> Result<Self, PlanError> {
        let plan = ExchangePlan {
            n_ranks: sendcounts.len(),
            elem_size,
            sendcounts,
            sdispls,
            recvcounts,
            rdispls,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Builds a plan from send counts alone: receive counts are the
    /// transpose and both sides use packed displacements.
    pub fn from_sendcounts(
        elem_size: usize,
        sendcounts: Vec<Vec<usize>>,
    ) -> Result<Self, PlanError> {
        let n = sendcounts.len();
        if let Some(row) = sendcounts.iter().find(|row| row.len() != n) {
            return Err(PlanError::Shape {
                field: "sendcounts",
                expected: n,
                got: row.len(),
            });
        }
        let recvcounts: Vec<Vec<usize>> = (0..n)
            .map(|p| (0..n).map(|q| sendcounts[q][p]).collect())
            .collect();
        let sdispls = sendcounts.iter().map(|row| packed_displs(row)).collect();
        let rdispls = recvcounts.iter().map(|row| packed_displs(row)).collect();
        Self::new(elem_size, sendcounts, sdispls, recvcounts, rdispls)
    }

    pub fn n_ranks(&self) -> usize {
        self.n_ranks
    }

    pub fn elem_size(&self) -> usize {
        self.elem_size
    }

    pub fn sendcounts(&self) -> &[Vec<usize>] {
        &self.sendcounts
    }

    pub fn sdispls(&self) -> &[Vec<usize>] {
        &self.sdispls
    }

    pub fn recvcounts(&self) -> &[Vec<usize>] {
        &self.recvcounts
    }

    pub fn rdispls(&self) -> &[Vec<usize>] {
        &self.rdispls
    }

    /// Byte range of `src`'s send buffer destined for `dst`.
    pub fn send_range(&self, src: Rank, dst: Rank) -> std::ops::Range<usize> {
        let start = self.sdispls[src][dst] * self.elem_size;
        start..start + self.sendcounts[src][dst] * self.elem_size
    }

    /// Byte range of `dst`'s receive buffer filled by the message from `src`.
    pub fn recv_range(&self, dst: Rank, src: Rank) -> std::ops::Range<usize> {
        let start = self.rdispls[dst][src] * self.elem_size;
        start..start + self.recvcounts[dst][src] * self.elem_size
    }

    /// Bytes `src` sends to `dst`.
    pub fn message_bytes(&self, src: Rank, dst: Rank) -> usize {
        self.sendcounts[src][dst] * self.elem_size
    }

    pub fn send_buf_len(&self, rank: Rank) -> usize {
        extent(&self.sendcounts[rank], &self.sdispls[rank]) * self.elem_size
    }

    pub fn recv_buf_len(&self, rank: Rank) -> usize {
        let summed: usize = self.recvcounts[rank].iter().sum();
        summed.max(extent(&self.recvcounts[rank], &self.rdispls[rank])) * self.elem_size
    }

    /// Total bytes moved by the whole exchange, self messages included.
    pub fn total_bytes(&self) -> usize {
        self.sendcounts.iter().flatten().sum::<usize>() * self.elem_size
    }

    /// Returns a copy with displacements `a` and `b` of `rank`'s receive
    /// side swapped. Used to inject routing faults into verification runs.
    pub fn with_swapped_rdispls(&self, rank: Rank, a: Rank, b: Rank) -> Self {
        let mut plan = self.clone();
        plan.rdispls[rank].swap(a, b);
        plan
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let n = self.n_ranks;
        if n == 0 {
            return Err(PlanError::EmptyCommunicator);
        }
        if self.elem_size == 0 {
            return Err(PlanError::ZeroElemSize);
        }
        for (field, m) in [
            ("sendcounts", &self.sendcounts),
            ("sdispls", &self.sdispls),
            ("recvcounts", &self.recvcounts),
            ("rdispls", &self.rdispls),
        ] {
            if m.len() != n {
                return Err(PlanError::Shape {
                    field,
                    expected: n,
                    got: m.len(),
                });
            }
            if let Some(row) = m.iter().find(|row| row.len() != n) {
                return Err(PlanError::Shape {
                    field,
                    expected: n,
                    got: row.len(),
                });
            }
        }
        for p in 0..n {
            for q in 0..n {
                let (send, recv) = (self.sendcounts[p][q], self.recvcounts[q][p]);
                if send != recv {
                    return Err(PlanError::Inconsistent {
                        src: p,
                        dst: q,
                        send,
                        recv,
                    });
                }
            }
            check_disjoint(p, "send", &self.sendcounts[p], &self.sdispls[p])?;
            check_disjoint(p, "recv", &self.recvcounts[p], &self.rdispls[p])?;
        }
        Ok(())
    }
}

/// Exclusive prefix sums of `counts`: contiguous layout in peer order.
pub fn packed_displs(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .scan(0, |acc, &c| {
            let d = *acc;
            *acc += c;
            Some(d)
        })
        .collect()
}

fn extent(counts: &[usize], displs: &[usize]) -> usize {
    counts
        .iter()
        .zip(displs)
        .map(|(&c, &d)| if c == 0 { 0 } else { c + d })
        .max()
        .unwrap_or(0)
}

fn check_disjoint(
    rank: Rank,
    side: &'static str,
    counts: &[usize],
    displs: &[usize],
) -> Result<(), PlanError> {
    let mut regions: Vec<(usize, usize, Rank)> = counts
        .iter()
        .zip(displs)
        .enumerate()
        .filter(|(_, (&c, _))| c > 0)
        .map(|(q, (&c, &d))| (d, d + c, q))
        .collect();
    regions.sort_unstable();
    for pair in regions.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(PlanError::Overlap {
                rank,
                side,
                a: pair[0].2,
                b: pair[1].2,
            });
        }
    }
    Ok(())
}

/// Every rank sends `count_per_pair` elements to every rank.
pub fn uniform_plan(
    n_ranks: usize,
    count_per_pair: usize,
    elem_size: usize,
) -> Result<ExchangePlan, PlanError> {
    if n_ranks == 0 {
        return Err(PlanError::EmptyCommunicator);
    }
    ExchangePlan::from_sendcounts(elem_size, vec![vec![count_per_pair; n_ranks]; n_ranks])
}

/// Counts drawn uniformly from `0..=max_count`, reproducible per seed.
pub fn random_plan(
    n_ranks: usize,
    max_count: usize,
    elem_size: usize,
    seed: u64,
) -> Result<ExchangePlan, PlanError> {
    if n_ranks == 0 {
        return Err(PlanError::EmptyCommunicator);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sendcounts = (0..n_ranks)
        .map(|_| (0..n_ranks).map(|_| rng.gen_range(0..=max_count)).collect())
        .collect();
    ExchangePlan::from_sendcounts(elem_size, sendcounts)
}

/// Balanced split of `dim` lines over `parts` owners: the first
/// `dim % parts` owners get one extra line. Returns `(offset, len)`.
pub fn balanced_split(dim: usize, parts: usize, index: usize) -> (usize, usize) {
    let base = dim / parts;
    let extra = dim % parts;
    let len = base + usize::from(index < extra);
    let offset = index * base + index.min(extra);
    (offset, len)
}

/// Pencil-transpose workload on a `grid_x` by `grid_y` plane over a
/// `proc_rows` by `proc_cols` process grid.
///
/// Rank `p` sits at process row `p / proc_cols` and column `p % proc_cols`.
/// Its row slab is its process row's share of the `grid_x` rows; the column
/// slab of a peer is that peer's process column's share of the `grid_y`
/// columns. Rank `p` sends each peer the intersection of the two slabs.
pub fn fft_transpose_plan(
    grid_x: usize,
    grid_y: usize,
    proc_rows: usize,
    proc_cols: usize,
    elem_size: usize,
) -> Result<ExchangePlan, PlanError> {
    if grid_x == 0 || grid_y == 0 {
        return Err(PlanError::EmptyGrid);
    }
    let n = proc_rows * proc_cols;
    if n == 0 {
        return Err(PlanError::ProcessGrid {
            rows: proc_rows,
            cols: proc_cols,
            n_ranks: n,
        });
    }
    let sendcounts = (0..n)
        .map(|p| {
            let (_, rows) = balanced_split(grid_x, proc_rows, p / proc_cols);
            (0..n)
                .map(|q| rows * balanced_split(grid_y, proc_cols, q % proc_cols).1)
                .collect()
        })
        .collect();
    ExchangePlan::from_sendcounts(elem_size, sendcounts)
}

/// Same as [`fft_transpose_plan`] but rejects a process grid that does not
/// factor the expected communicator size.
pub fn fft_transpose_plan_for(
    n_ranks: usize,
    grid_x: usize,
    grid_y: usize,
    proc_rows: usize,
    proc_cols: usize,
    elem_size: usize,
) -> Result<ExchangePlan, PlanError> {
    if proc_rows * proc_cols != n_ranks {
        return Err(PlanError::ProcessGrid {
            rows: proc_rows,
            cols: proc_cols,
            n_ranks,
        });
    }
    fft_transpose_plan(grid_x, grid_y, proc_rows, proc_cols, elem_size)
}

/// Grid edge length grown by the square root of the process count,
/// `floor(base_dim * sqrt(n_procs))`, computed exactly in integers.
pub fn scaled_grid_dim(base_dim: u64, n_procs: u64) -> u64 {
    let square = u128::from(base_dim) * u128::from(base_dim) * u128::from(n_procs);
    square.isqrt() as u64
}

/// Send and receive buffers of one rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankBuffers {
    pub send_buf: Vec<u8>,
    pub recv_buf: Vec<u8>,
}

/// Byte pattern of element `index` of the block `src` sends to `dst`.
///
/// The key `(src, dst, index)` is packed into a `u64` and passed through a
/// bijective mixer, so with `elem_size >= 8` distinct keys always produce
/// distinct elements. Narrower elements keep the low bytes of the mix.
pub fn element_pattern(src: Rank, dst: Rank, index: usize, out: &mut [u8]) {
    let key = ((src as u64 & 0xffff) << 48) | ((dst as u64 & 0xffff) << 32) | (index as u64 & 0xffff_ffff);
    for (word, chunk) in out.chunks_mut(8).enumerate() {
        let bytes = mix64(key ^ (word as u64).wrapping_mul(0xa076_1d64_78bd_642f)).to_le_bytes();
        chunk.copy_from_slice(&bytes[..chunk.len()]);
    }
}

// splitmix64 finalizer; a bijection on u64.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Tagged send buffer and zeroed receive buffer for `rank`.
pub fn fill_pattern(plan: &ExchangePlan, rank: Rank) -> RankBuffers {
    let es = plan.elem_size();
    let mut send_buf = vec![0u8; plan.send_buf_len(rank)];
    for dst in 0..plan.n_ranks() {
        let range = plan.send_range(rank, dst);
        for (k, elem) in send_buf[range].chunks_exact_mut(es).enumerate() {
            element_pattern(rank, dst, k, elem);
        }
    }
    RankBuffers {
        send_buf,
        recv_buf: vec![0u8; plan.recv_buf_len(rank)],
    }
}

/// Send buffers for every rank, in rank order.
pub fn fill_all(plan: &ExchangePlan) -> Vec<Vec<u8>> {
    (0..plan.n_ranks())
        .map(|r| fill_pattern(plan, r).send_buf)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_single_rank() {
        let plan = uniform_plan(1, 5, 8).unwrap();
        assert_eq!(plan.sendcounts()[0][0], 5);
        assert_eq!(plan.sdispls()[0][0], 0);
    }

    #[test]
    fn uniform_empty_exchange() {
        let plan = uniform_plan(4, 0, 4).unwrap();
        assert!(plan.sendcounts().iter().flatten().all(|&c| c == 0));
        assert!(plan.sdispls().iter().flatten().all(|&d| d == 0));
        assert!(plan.rdispls().iter().flatten().all(|&d| d == 0));
        assert_eq!(plan.send_buf_len(2), 0);
    }

    #[test]
    fn uniform_packed_displacements() {
        let plan = uniform_plan(3, 2, 8).unwrap();
        for p in 0..3 {
            assert_eq!(plan.sdispls()[p], vec![0, 2, 4]);
        }
    }

    #[test]
    fn zero_ranks_rejected() {
        assert_eq!(uniform_plan(0, 1, 1), Err(PlanError::EmptyCommunicator));
        assert_eq!(uniform_plan(2, 1, 0), Err(PlanError::ZeroElemSize));
    }

    #[test]
    fn inconsistent_counts_rejected() {
        let err = ExchangePlan::new(
            1,
            vec![vec![1, 2], vec![3, 4]],
            vec![vec![0, 1], vec![0, 3]],
            vec![vec![1, 2], vec![2, 4]],
            vec![vec![0, 1], vec![0, 2]],
        )
        .unwrap_err();
        assert!(matches!(err, PlanError::Inconsistent { .. }));
    }

    #[test]
    fn overlapping_regions_rejected() {
        let err = ExchangePlan::new(
            1,
            vec![vec![2, 2], vec![2, 2]],
            vec![vec![0, 1], vec![0, 2]],
            vec![vec![2, 2], vec![2, 2]],
            vec![vec![0, 2], vec![0, 2]],
        )
        .unwrap_err();
        assert_eq!(
            err,
            PlanError::Overlap {
                rank: 0,
                side: "send",
                a: 0,
                b: 1
            }
        );
    }

    #[test]
    fn non_packed_layout_accepted() {
        // peer 1 first, a gap, then peer 0
        let plan = ExchangePlan::new(
            1,
            vec![vec![2, 1], vec![1, 1]],
            vec![vec![4, 0], vec![0, 1]],
            vec![vec![2, 1], vec![1, 1]],
            vec![vec![1, 0], vec![0, 1]],
        )
        .unwrap();
        assert_eq!(plan.send_buf_len(0), 6);
        assert_eq!(plan.recv_buf_len(0), 3);
    }

    #[test]
    fn balanced_split_rule() {
        assert_eq!(balanced_split(5, 2, 0), (0, 3));
        assert_eq!(balanced_split(5, 2, 1), (3, 2));
        assert_eq!(balanced_split(7, 3, 2), (5, 2));
        assert_eq!(balanced_split(2, 4, 3), (2, 0));
    }

    #[test]
    fn fft_single_cell() {
        let plan = fft_transpose_plan(1, 1, 1, 1, 8).unwrap();
        assert_eq!(plan.sendcounts()[0][0], 1);
    }

    #[test]
    fn fft_rejects_bad_grid() {
        assert!(matches!(
            fft_transpose_plan_for(6, 4, 4, 2, 2, 8),
            Err(PlanError::ProcessGrid { .. })
        ));
        assert_eq!(fft_transpose_plan(0, 4, 1, 1, 8), Err(PlanError::EmptyGrid));
    }

    #[test]
    fn scaled_grid_identity() {
        assert_eq!(scaled_grid_dim(4096, 1), 4096);
    }

    #[test]
    fn random_plan_degenerate_and_deterministic() {
        let zero = random_plan(5, 0, 4, 9).unwrap();
        assert_eq!(zero.total_bytes(), 0);
        assert_eq!(random_plan(6, 9, 4, 3), random_plan(6, 9, 4, 3));
        assert_ne!(random_plan(6, 9, 4, 3), random_plan(6, 9, 4, 4));
        assert!(random_plan(4, 7, 8, 42).unwrap().validate().is_ok());
    }

    #[test]
    fn pattern_distinguishes_direction() {
        for es in [1, 4, 8] {
            let mut a = vec![0u8; es];
            let mut b = vec![0u8; es];
            element_pattern(1, 2, 0, &mut a);
            element_pattern(2, 1, 0, &mut b);
            assert_ne!(a, b, "elem_size {es}");
        }
    }

    #[test]
    fn zero_count_peer_contributes_nothing() {
        let plan = ExchangePlan::from_sendcounts(4, vec![vec![0, 3], vec![2, 0]]).unwrap();
        let bufs = fill_pattern(&plan, 0);
        assert_eq!(bufs.send_buf.len(), 12);
        assert_eq!(bufs.recv_buf.len(), 8);
    }

    /// Owner of line `x` when `dim` lines are dealt out in contiguous runs,
    /// the first `dim % parts` runs one line longer.
    fn brute_owner(dim: usize, parts: usize, x: usize) -> usize {
        let mut start = 0;
        for owner in 0..parts {
            let len = if owner < dim % parts { dim.div_ceil(parts) } else { dim / parts };
            if x < start + len {
                return owner;
            }
            start += len;
        }
        unreachable!()
    }

    fn brute_fft_counts(gx: usize, gy: usize, pr: usize, pc: usize) -> Vec<Vec<usize>> {
        let n = pr * pc;
        let mut counts = vec![vec![0; n]; n];
        for (p, row) in counts.iter_mut().enumerate() {
            for (q, cell) in row.iter_mut().enumerate() {
                for x in 0..gx {
                    for y in 0..gy {
                        if brute_owner(gx, pr, x) == p / pc && brute_owner(gy, pc, y) == q % pc {
                            *cell += 1;
                        }
                    }
                }
            }
        }
        counts
    }

    #[test]
    fn fft_even_grid_uses_two_by_two_blocks() {
        let plan = fft_transpose_plan(4, 4, 2, 2, 8).unwrap();
        assert_eq!(plan.sendcounts(), brute_fft_counts(4, 4, 2, 2).as_slice());
        assert!(plan.sendcounts().iter().flatten().all(|&c| c == 4));
    }

    #[test]
    fn fft_uneven_grid_has_nine_cell_block() {
        let plan = fft_transpose_plan(5, 5, 2, 2, 8).unwrap();
        let expected = brute_fft_counts(5, 5, 2, 2);
        assert_eq!(plan.sendcounts(), expected.as_slice());
        // rank 0 owns 3 rows, rank 0's column slab has 3 columns
        assert_eq!(plan.sendcounts()[0][0], 9);
        assert_eq!(plan.sendcounts()[0][1], 6);
        assert_eq!(plan.sendcounts()[3][3], 4);
    }

    #[test]
    fn scaled_grid_published_meshes() {
        assert_eq!(scaled_grid_dim(4096, 64), 32768);
        assert_eq!(scaled_grid_dim(4096, 32), 23170);
        assert_eq!(scaled_grid_dim(4096, 8), 11585);
    }

    fn packed_by_hand(counts: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut acc = 0;
        for &c in counts {
            out.push(acc);
            acc += c;
        }
        out
    }

    fn assert_generated_shape(plan: &ExchangePlan) {
        let n = plan.n_ranks();
        for p in 0..n {
            for q in 0..n {
                assert_eq!(plan.sendcounts()[p][q], plan.recvcounts()[q][p]);
            }
            assert_eq!(plan.sdispls()[p], packed_by_hand(&plan.sendcounts()[p]));
            assert_eq!(plan.rdispls()[p], packed_by_hand(&plan.recvcounts()[p]));
        }
        assert!(plan.validate().is_ok());
    }

    proptest! {
        #[test]
        fn random_plans_are_consistent(n in 1usize..12, max in 0usize..50, es in 1usize..9, seed in any::<u64>()) {
            let plan = random_plan(n, max, es, seed).unwrap();
            assert_generated_shape(&plan);
            prop_assert!(plan.sendcounts().iter().flatten().all(|&c| c <= max));
        }

        #[test]
        fn uniform_plans_are_consistent(n in 1usize..12, count in 0usize..20, es in 1usize..9) {
            assert_generated_shape(&uniform_plan(n, count, es).unwrap());
        }

        #[test]
        fn fft_plans_match_brute_force(gx in 1usize..12, gy in 1usize..12, pr in 1usize..4, pc in 1usize..4) {
            let plan = fft_transpose_plan(gx, gy, pr, pc, 4).unwrap();
            assert_generated_shape(&plan);
            let expected = brute_fft_counts(gx, gy, pr, pc);
            prop_assert_eq!(plan.sendcounts(), expected.as_slice());
            // every rank ships its whole row slab once per process row
            let total: usize = plan.sendcounts().iter().flatten().sum();
            prop_assert_eq!(total, pr * pc * gx * gy);
            for p in 0..pr * pc {
                let row_total: usize = plan.sendcounts()[p].iter().sum();
                prop_assert_eq!(row_total, balanced_split(gx, pr, p / pc).1 * gy * pr);
            }
        }

        #[test]
        fn balanced_split_tiles_the_line(dim in 0usize..500, parts in 1usize..40) {
            let mut next = 0;
            for i in 0..parts {
                let (off, len) = balanced_split(dim, parts, i);
                prop_assert_eq!(off, next);
                prop_assert!(len == dim / parts || len == dim.div_ceil(parts));
                next += len;
            }
            prop_assert_eq!(next, dim);
        }

        #[test]
        fn scaled_grid_is_monotone_floor_sqrt(base in 1u64..100_000, n in 1u64..4096) {
            let d = scaled_grid_dim(base, n);
            let exact = u128::from(base) * u128::from(base) * u128::from(n);
            prop_assert!(u128::from(d) * u128::from(d) <= exact);
            prop_assert!(u128::from(d + 1) * u128::from(d + 1) > exact);
            prop_assert!(scaled_grid_dim(base, n + 1) >= d);
        }
    }
}
