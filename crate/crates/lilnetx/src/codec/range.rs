//! Deterministic range coder: 64-bit state, 16-bit frequency totals, byte
//! renormalization, integer arithmetic only.
//!
//! The interval is tracked as [low, low + range − 1] with the invariant that
//! the inclusive end never exceeds u64::MAX, which rules out carries: an
//! encode step always shrinks the interval. The flush emits only as many
//! bytes as the final interval needs (1..=8), so short or near-certain
//! streams cost single bytes rather than a fixed-width tail; the decoder
//! reads missing bytes as zero.

/// Frequencies must sum to exactly this for every table.
pub const TOTAL: u32 = 1 << 16;
const TOTAL_BITS: u32 = 16;
/// Top byte settles when low and high agree above this boundary.
const TOP: u64 = 1 << 56;
/// Force renormalization below this so range/TOTAL keeps 24 bits of headroom.
const BOT: u64 = 1 << 40;

pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u64::MAX, out: Vec::new() }
    }

    /// Encode one symbol occupying [cum, cum+freq) of the 2^16 total.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= TOTAL);
        let r = self.range >> TOTAL_BITS;
        self.low += cum as u64 * r;
        self.range = freq as u64 * r;
        self.normalize();
    }

    /// Encode 16 raw bits at exactly 16 bits of cost (a uniform symbol).
    pub fn encode_raw_u16(&mut self, v: u16) {
        let r = self.range >> TOTAL_BITS;
        self.low += v as u64 * r;
        self.range = r;
        self.normalize();
    }

    fn normalize(&mut self) {
        loop {
            let hi = self.low + (self.range - 1);
            if (self.low ^ hi) < TOP {
                // top byte settled
            } else if self.range < BOT {
                // straddling a byte boundary with a narrow range: cut the
                // interval at the next BOT boundary so the top byte settles
                self.range = BOT - (self.low & (BOT - 1));
            } else {
                break;
            }
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
            if self.range == 0 {
                // interval spanned the full shifted space
                self.range = u64::MAX;
            }
        }
    }

    /// Close the stream, emitting the minimal byte tail that pins a value
    /// inside the final interval.
    pub fn finish(mut self) -> Vec<u8> {
        for k in 1..=8u32 {
            let m = 1u64 << (64 - 8 * k);
            if self.range >= m {
                // smallest multiple of m inside [low, low+range-1]
                let v = (self.low + (m - 1)) & !(m - 1);
                for byte in 0..k {
                    self.out.push((v >> (56 - 8 * byte)) as u8);
                }
                return self.out;
            }
        }
        // range >= BOT always holds after normalize, so k <= 3 is reached
        unreachable!("range invariant violated")
    }

    pub fn bytes_written(&self) -> usize {
        self.out.len()
    }
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

pub struct RangeDecoder<'a> {
    low: u64,
    range: u64,
    code: u64,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = Self { low: 0, range: u64::MAX, code: 0, input, pos: 0 };
        for _ in 0..8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Cumulative-frequency position of the next symbol, in [0, 2^16).
    pub fn peek_cum(&self) -> u32 {
        let r = self.range >> TOTAL_BITS;
        ((self.code.wrapping_sub(self.low) / r) as u32).min(TOTAL - 1)
    }

    /// Consume the symbol previously identified from [`Self::peek_cum`].
    pub fn consume(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= TOTAL);
        let r = self.range >> TOTAL_BITS;
        self.low += cum as u64 * r;
        self.range = freq as u64 * r;
        self.normalize();
    }

    pub fn decode_raw_u16(&mut self) -> u16 {
        let r = self.range >> TOTAL_BITS;
        let v = ((self.code.wrapping_sub(self.low) / r) as u32).min(TOTAL - 1) as u16;
        self.low += v as u64 * r;
        self.range = r;
        self.normalize();
        v
    }

    fn normalize(&mut self) {
        loop {
            let hi = self.low + (self.range - 1);
            if (self.low ^ hi) < TOP {
            } else if self.range < BOT {
                self.range = BOT - (self.low & (BOT - 1));
            } else {
                break;
            }
            self.low <<= 8;
            self.range <<= 8;
            if self.range == 0 {
                self.range = u64::MAX;
            }
            self.code = (self.code << 8) | self.next_byte() as u64;
        }
    }
}

/// Cumulative lookup built from a frequency table summing to [`TOTAL`].
#[derive(Debug, Clone)]
pub struct CumTable {
    cum: Vec<u32>,
}

impl CumTable {
    pub fn new(freqs: &[u16]) -> Self {
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut at = 0u32;
        for &f in freqs {
            cum.push(at);
            at += f as u32;
        }
        cum.push(at);
        debug_assert_eq!(at, TOTAL, "frequencies must sum to 2^16");
        Self { cum }
    }

    pub fn span(&self, symbol: usize) -> (u32, u32) {
        (self.cum[symbol], self.cum[symbol + 1] - self.cum[symbol])
    }

    /// Largest symbol whose cumulative start is <= `target`.
    pub fn lookup(&self, target: u32) -> usize {
        debug_assert!(target < TOTAL);
        let mut lo = 0usize;
        let mut hi = self.cum.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cum[mid] <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn roundtrip(freqs: &[u16], symbols: &[usize]) -> usize {
        let table = CumTable::new(freqs);
        let mut enc = RangeEncoder::new();
        for &s in symbols {
            let (cum, freq) = table.span(s);
            enc.encode(cum, freq);
        }
        let payload = enc.finish();
        let mut dec = RangeDecoder::new(&payload);
        for &s in symbols {
            let found = table.lookup(dec.peek_cum());
            assert_eq!(found, s);
            let (cum, freq) = table.span(found);
            dec.consume(cum, freq);
        }
        payload.len()
    }

    #[test]
    fn skewed_short_stream_stays_tiny() {
        // q = {0: 0.75, 1: 0.25}: 4 symbols cost ~3.25 bits, 1-2 bytes
        let freqs = [49152u16, 16384];
        let bytes = roundtrip(&freqs, &[0, 0, 1, 0]);
        assert!(bytes <= 2, "payload {bytes} bytes");
    }

    #[test]
    fn random_streams_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n_symbols = rng.gen_range(2..20usize);
            let mut probs: Vec<f64> = (0..n_symbols).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = probs.iter().sum();
            for p in &mut probs {
                *p /= total;
            }
            let freqs_u32 = crate::entropy::quantize_pmf(&probs, TOTAL);
            let freqs: Vec<u16> = freqs_u32.iter().map(|&f| f as u16).collect();
            let len = rng.gen_range(0..400usize);
            let symbols: Vec<usize> = (0..len).map(|_| rng.gen_range(0..n_symbols)).collect();
            roundtrip(&freqs, &symbols);
        }
    }

    #[test]
    fn raw_bits_roundtrip() {
        let mut enc = RangeEncoder::new();
        let values = [0u16, 1, 0xFFFF, 0x8000, 12345];
        for &v in &values {
            enc.encode_raw_u16(v);
        }
        let payload = enc.finish();
        // 5 * 16 bits = 10 bytes of content, plus at most a few flush bytes
        assert!(payload.len() <= 13, "{} bytes", payload.len());
        let mut dec = RangeDecoder::new(&payload);
        for &v in &values {
            assert_eq!(dec.decode_raw_u16(), v);
        }
    }

    #[test]
    fn payload_tracks_ideal_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let freqs_u32 =
                crate::entropy::quantize_pmf(&[0.9, 0.05, 0.03, 0.02], TOTAL);
            let freqs: Vec<u16> = freqs_u32.iter().map(|&f| f as u16).collect();
            let n = rng.gen_range(100..2000usize);
            let symbols: Vec<usize> = (0..n)
                .map(|_| {
                    let x: f64 = rng.gen();
                    if x < 0.9 {
                        0
                    } else if x < 0.95 {
                        1
                    } else if x < 0.98 {
                        2
                    } else {
                        3
                    }
                })
                .collect();
            let ideal: f64 = symbols
                .iter()
                .map(|&s| -((freqs[s] as f64) / TOTAL as f64).log2())
                .sum();
            let bytes = roundtrip(&freqs, &symbols);
            assert!(
                (bytes as f64) * 8.0 <= ideal + 64.0,
                "{} bytes vs ideal {:.1} bits",
                bytes,
                ideal
            );
        }
    }
}
