use crate::error::{CoreError, Result};
use crate::numerics::{Matrix, Vector};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based random stream: draw k of stream id is
/// `mix64(id + (k+1) * GOLDEN)`, i.e. the splitmix64 sequence seeded at the
/// id. Streams are plain values; every sampling call returns the advanced
/// stream, so identical (master_seed, stream_id) reproduce identical samples
/// on any platform and under any evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    stream_id: u64,
    state: u64,
}

/// Derive an independent stream from a master seed and an index.
/// Pure function; distinct indices give distinct streams.
pub fn derive_stream(master_seed: u64, index: u64) -> RngStream {
    RngStream {
        stream_id: mix64(master_seed ^ index.wrapping_mul(GOLDEN)),
        state: 0,
    }
}

impl RngStream {
    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(self) -> (u64, RngStream) {
        let c = self.state.wrapping_add(1);
        let out = mix64(self.stream_id.wrapping_add(c.wrapping_mul(GOLDEN)));
        (
            out,
            RngStream {
                stream_id: self.stream_id,
                state: c,
            },
        )
    }

    /// Uniform draw in (0, 1].
    pub fn next_uniform(self) -> (f64, RngStream) {
        let (r, next) = self.next_u64();
        ((((r >> 11) + 1) as f64) * (1.0 / 9007199254740992.0), next)
    }

    /// Standard normal draw (Box-Muller, cosine branch).
    pub fn next_gaussian(self) -> (f64, RngStream) {
        let (u1, s) = self.next_uniform();
        let (u2, s) = s.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        (r * (2.0 * std::f64::consts::PI * u2).cos(), s)
    }

    /// Uniform index in 0..n via the 128-bit multiply reduction.
    pub fn next_index(self, n: usize) -> (usize, RngStream) {
        debug_assert!(n > 0);
        let (r, next) = self.next_u64();
        ((((r as u128) * (n as u128)) >> 64) as usize, next)
    }
}

/// Matrix with i.i.d. normal(0, std^2) entries, filled row-major.
pub fn sample_gaussian_matrix(
    stream: RngStream,
    rows: usize,
    cols: usize,
    std: f64,
) -> Result<(Matrix, RngStream)> {
    if !(std > 0.0) {
        return Err(CoreError::InvalidInput(
            "gaussian sampling requires std > 0".into(),
        ));
    }
    let mut s = stream;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let (g, next) = s.next_gaussian();
        s = next;
        data.push(std * g);
    }
    Ok((Matrix::from_vec(rows, cols, data)?, s))
}

/// Vector with i.i.d. normal(0, std^2) entries.
pub fn sample_gaussian_vector(stream: RngStream, d: usize, std: f64) -> Result<(Vector, RngStream)> {
    if !(std > 0.0) {
        return Err(CoreError::InvalidInput(
            "gaussian sampling requires std > 0".into(),
        ));
    }
    let mut s = stream;
    let mut data = Vec::with_capacity(d);
    for _ in 0..d {
        let (g, next) = s.next_gaussian();
        s = next;
        data.push(std * g);
    }
    Ok((Vector::new(data), s))
}

/// Uniform direction on the unit sphere (normalized Gaussian draw).
pub fn sample_unit_vector(stream: RngStream, d: usize) -> Result<(Vector, RngStream)> {
    let mut s = stream;
    loop {
        let (v, next) = sample_gaussian_vector(s, d, 1.0)?;
        s = next;
        let n = v.norm();
        if n > 1e-12 {
            return Ok((v.scale(1.0 / n), s));
        }
    }
}
