use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Collocation budgets per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    pub n_interior: usize,
    pub m_initial: usize,
    pub k_boundary: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_interior: 5000,
            m_initial: 2000,
            k_boundary: 2000,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn count(&self, kind: PointKind) -> usize {
        match kind {
            PointKind::Interior => self.n_interior,
            PointKind::Initial => self.m_initial,
            PointKind::Boundary => self.k_boundary,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointKind {
    Interior,
    Initial,
    Boundary,
}

impl PointKind {
    pub const ALL: [PointKind; 3] = [PointKind::Interior, PointKind::Initial, PointKind::Boundary];

    pub(crate) fn tag(self) -> u64 {
        self as u64
    }
}

/// Fresh uniform points for one epoch, as `(â, τ)` pairs: interior points
/// fill the unit square, initial points have `τ = 0`, boundary points `â = 0`.
/// The stream is keyed by `(seed, epoch, kind)`.
pub fn sample_points(config: &SamplerConfig, kind: PointKind, epoch: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(epoch as u64 * 3 + kind.tag());
    let n = config.count(kind);
    match kind {
        PointKind::Interior => (0..n).map(|_| (rng.gen(), rng.gen())).collect(),
        PointKind::Initial => (0..n).map(|_| (rng.gen(), 0.0)).collect(),
        PointKind::Boundary => (0..n).map(|_| (0.0, rng.gen())).collect(),
    }
}

/// SplitMix64 finalizer; derives independent per-sample seeds.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
