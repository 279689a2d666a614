//! Counter-based deterministic random streams.
//!
//! A [`CounterRng`] is a pure function of `(key, counter)`, so streams can be
//! split by key derivation and replayed independently of thread scheduling.
//! Training code keys streams by `(seed, purpose, lane, step)`; sampling code
//! only sees the [`SignSource`] trait, which test oracles implement with
//! exhaustive enumeration instead of randomness.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splittable counter-based generator (splitmix64 over a derived key).
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { key: mix(seed ^ GAMMA), counter: 0 }
    }

    /// Derive an independent stream from this one, keyed by `tags`.
    /// Derivation does not consume any draws from `self`.
    pub fn derive(&self, tags: &[u64]) -> Self {
        let mut key = self.key;
        for &t in tags {
            key = mix(key ^ mix(t.wrapping_add(GAMMA)));
        }
        CounterRng { key, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal via Box-Muller (one draw per call, no cached spare).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn sign(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Source of uniformly random signs in `{+1, -1}`.
///
/// Samplers draw through this trait so that tests can substitute exhaustive
/// enumeration for randomness. The number of draws a sampler makes must not
/// depend on the sign values themselves.
pub trait SignSource {
    fn sign(&mut self) -> f64;
}

impl SignSource for CounterRng {
    fn sign(&mut self) -> f64 {
        CounterRng::sign(self)
    }
}

/// Replays a fixed sign assignment: draw `i` returns `-1` when bit `i` of
/// `assignment` is set, `+1` otherwise.
pub struct EnumSigns {
    assignment: u64,
    drawn: u32,
}

impl EnumSigns {
    pub fn new(assignment: u64) -> Self {
        EnumSigns { assignment, drawn: 0 }
    }

    pub fn drawn(&self) -> u32 {
        self.drawn
    }
}

impl SignSource for EnumSigns {
    fn sign(&mut self) -> f64 {
        assert!(self.drawn < 64, "enumeration supports at most 64 sign draws");
        let s = if (self.assignment >> self.drawn) & 1 == 1 { -1.0 } else { 1.0 };
        self.drawn += 1;
        s
    }
}

/// Counts draws, always answering `+1`. Used to probe how many signs a
/// sampler needs before enumerating them.
#[derive(Default)]
pub struct CountSigns {
    pub drawn: u32,
}

impl SignSource for CountSigns {
    fn sign(&mut self) -> f64 {
        self.drawn += 1;
        1.0
    }
}
