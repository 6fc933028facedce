//! Per-cell retention times, generated lazily one row at a time.
//!
//! A row holds `row_bits` cells. Weak cells are placed explicitly; the strong
//! bulk is represented by its ascending order statistics, drawn only as far as
//! a caller asks. Most rows are never asked for anything below a few seconds,
//! so only a handful of strong cells per row ever exist in memory.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1, LogNormal};
use statrs::function::erf::erfc_inv;

use super::ModuleProfile;
use crate::geometry::DeviceGeometry;

/// How many standard deviations below the strong median are drawn eagerly.
const EAGER_SIGMAS: f64 = 2.5;

pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One cell: retention time at the reference temperature and its bit index
/// within the row (byte `bit / 8`, bit `bit % 8` counting from the LSB).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub retention_ms: f64,
    pub bit: u32,
}

fn inv_normal_cdf(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Draws `size` distinct values from `0..size` in random order without
/// materializing the permutation.
#[derive(Debug, Clone)]
struct LazyShuffle {
    swapped: HashMap<u32, u32>,
    drawn: u32,
    size: u32,
}

impl LazyShuffle {
    fn new(size: u32) -> Self {
        LazyShuffle {
            swapped: HashMap::new(),
            drawn: 0,
            size,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> u32 {
        let r = rng.random_range(self.drawn..self.size);
        let at = |m: &HashMap<u32, u32>, i: u32| m.get(&i).copied().unwrap_or(i);
        let picked = at(&self.swapped, r);
        let front = at(&self.swapped, self.drawn);
        self.swapped.insert(r, front);
        self.swapped.remove(&self.drawn);
        self.drawn += 1;
        picked
    }
}

/// Generator of the strong cells of one row in ascending retention order.
#[derive(Debug, Clone)]
struct StrongTail {
    rng: ChaCha8Rng,
    mu: f64,
    sigma: f64,
    remaining: u32,
    spacing: f64,
    shuffle: LazyShuffle,
    weak_bits: std::sync::Arc<[u32]>,
}

impl StrongTail {
    fn next_cell(&mut self) -> Option<Cell> {
        if self.remaining == 0 {
            return None;
        }
        // Uniform order statistics via exponential spacings: the k-th smallest
        // of m uniforms is 1 - exp(-sum_{i<k} E_i / (m - i)).
        let e: f64 = Exp1.sample(&mut self.rng);
        self.spacing += e / self.remaining as f64;
        self.remaining -= 1;
        let u = (-(-self.spacing).exp_m1()).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        let retention_ms = (self.mu + self.sigma * inv_normal_cdf(u)).exp();
        let mut bit = self.shuffle.next(&mut self.rng);
        for &w in self.weak_bits.iter() {
            if w <= bit {
                bit += 1;
            } else {
                break;
            }
        }
        Some(Cell { retention_ms, bit })
    }
}

#[derive(Debug)]
struct RowCells {
    /// Weak cells plus strong cells below the eager horizon, ascending.
    cells: Vec<Cell>,
    tail: StrongTail,
    /// Retention of the first strong cell not in `cells`.
    tail_head: Option<Cell>,
}

/// Immutable retention map of a whole device. Shared between device instances
/// built from the same seed so that repeated experiments see the same cells.
#[derive(Debug)]
pub struct CellArray {
    geometry: DeviceGeometry,
    seed: u64,
    layout_seed: u64,
    strong: (f64, f64),
    weak: (f64, f64),
    weak_fraction: f64,
    horizon_ms: f64,
    rows: Vec<OnceLock<RowCells>>,
}

impl CellArray {
    pub fn new(geometry: DeviceGeometry, profile: &ModuleProfile, seed: u64) -> Self {
        let rows = (0..geometry.total_rows()).map(|_| OnceLock::new()).collect();
        CellArray {
            geometry,
            seed,
            layout_seed: profile.true_cell_layout_seed,
            strong: (profile.retention_log_mean, profile.retention_log_sd),
            weak: (profile.weak_retention_log_mean, profile.weak_retention_log_sd),
            weak_fraction: profile.weak_cell_fraction,
            horizon_ms: (profile.retention_log_mean - EAGER_SIGMAS * profile.retention_log_sd)
                .exp(),
            rows,
        }
    }

    pub fn geometry(&self) -> DeviceGeometry {
        self.geometry
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// True-cells store 1 as charge; anti-cells store 0 as charge.
    pub fn is_true_cell(&self, bank: u32, row: u32, bit: u32) -> bool {
        let key = ((bank as u64) << 40) | row as u64;
        mix64(mix64(self.layout_seed ^ key) ^ bit as u64) >> 63 == 0
    }

    /// The value a cell reads after losing its charge.
    pub fn discharged_bit(&self, bank: u32, row: u32, bit: u32) -> u8 {
        u8::from(!self.is_true_cell(bank, row, bit))
    }

    /// Bytes of a fully discharged row, `range` in byte offsets.
    pub fn discharged_bytes(&self, bank: u32, row: u32, range: std::ops::Range<usize>) -> Vec<u8> {
        range
            .map(|byte| {
                (0..8).fold(0u8, |acc, b| {
                    acc | (self.discharged_bit(bank, row, (byte * 8 + b) as u32) << b)
                })
            })
            .collect()
    }

    fn row(&self, bank: u32, row: u32) -> &RowCells {
        let idx = self.geometry.row_index(bank, row);
        self.rows[idx].get_or_init(|| self.generate(bank, row))
    }

    fn generate(&self, bank: u32, row: u32) -> RowCells {
        let n = self.geometry.row_bits();
        let key = ((bank as u64) << 32) | row as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(self.seed ^ mix64(key)));

        let n_weak = if self.weak_fraction > 0.0 {
            Binomial::new(n as u64, self.weak_fraction)
                .expect("validated fraction")
                .sample(&mut rng) as u32
        } else {
            0
        };
        let mut weak_bits: Vec<u32> = index::sample(&mut rng, n as usize, n_weak as usize)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        weak_bits.sort_unstable();
        let weak_dist = LogNormal::new(self.weak.0, self.weak.1).expect("validated sd");
        let mut cells: Vec<Cell> = weak_bits
            .iter()
            .map(|&bit| Cell {
                retention_ms: weak_dist.sample(&mut rng),
                bit,
            })
            .collect();

        let mut tail = StrongTail {
            rng,
            mu: self.strong.0,
            sigma: self.strong.1,
            remaining: n - n_weak,
            spacing: 0.0,
            shuffle: LazyShuffle::new(n - n_weak),
            weak_bits: weak_bits.into(),
        };
        let mut tail_head = tail.next_cell();
        while let Some(c) = tail_head {
            if c.retention_ms >= self.horizon_ms {
                break;
            }
            cells.push(c);
            tail_head = tail.next_cell();
        }
        cells.sort_by(|a, b| a.retention_ms.total_cmp(&b.retention_ms).then(a.bit.cmp(&b.bit)));
        RowCells {
            cells,
            tail,
            tail_head,
        }
    }

    /// Calls `f` for every cell of the row whose reference retention is below
    /// `threshold_ms`, in ascending retention order.
    pub fn for_each_below(&self, bank: u32, row: u32, threshold_ms: f64, mut f: impl FnMut(Cell)) {
        if threshold_ms <= 0.0 || threshold_ms.is_nan() {
            return;
        }
        let rc = self.row(bank, row);
        // Weak cells above the horizon may interleave with tail cells, so
        // merge the two ascending streams.
        let mut listed = rc.cells.iter().copied().take_while(|c| c.retention_ms < threshold_ms).peekable();
        let mut tail = rc.tail.clone();
        let mut head = rc.tail_head.filter(|c| c.retention_ms < threshold_ms);
        loop {
            match (listed.peek(), head) {
                (Some(l), Some(h)) if h.retention_ms < l.retention_ms => {
                    f(h);
                    head = tail.next_cell().filter(|c| c.retention_ms < threshold_ms);
                }
                (Some(_), _) => f(listed.next().expect("peeked")),
                (None, Some(h)) => {
                    f(h);
                    head = tail.next_cell().filter(|c| c.retention_ms < threshold_ms);
                }
                (None, None) => break,
            }
        }
    }

    /// Number of cells in the row below `threshold_ms`.
    pub fn count_below(&self, bank: u32, row: u32, threshold_ms: f64) -> usize {
        let mut n = 0;
        self.for_each_below(bank, row, threshold_ms, |_| n += 1);
        n
    }

    /// Reference retention time of a single cell. Expensive for strong cells
    /// far above the eager horizon; meant for inspection and tests.
    pub fn retention_ms(&self, bank: u32, row: u32, bit: u32) -> f64 {
        let mut found = f64::INFINITY;
        let mut stop = false;
        self.for_each_below(bank, row, f64::INFINITY, |c| {
            if !stop && c.bit == bit {
                found = c.retention_ms;
                stop = true;
            }
        });
        found
    }
}
