//! Laplace entropy model and a byte-oriented range coder.

use crate::error::{Error, Result};
use crate::nn::{laplace_bits, MIN_SCALE};

/// Frequency tables sum to `1 << TOTAL_BITS`.
pub const TOTAL_BITS: u32 = 16;
const TOTAL: u32 = 1 << TOTAL_BITS;
const TOP: u32 = 1 << 24;
/// Raw bits written after an escape symbol, holding `v + ESCAPE_OFFSET`.
pub const ESCAPE_BITS: u32 = 16;
pub const ESCAPE_OFFSET: i64 = 1 << 15;
const MAX_SUPPORT: i64 = 4095;

/// Cumulative frequency table over `n` symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqTable {
    freqs: Vec<u32>,
    cum: Vec<u32>,
}

impl FreqTable {
    /// Quantizes probabilities: `f_i = 1 + floor(p_i (T - n))`, with the
    /// remainder added to the most likely symbol.
    pub fn from_probs(probs: &[f64]) -> Self {
        let n = probs.len();
        assert!(n >= 1 && (n as u32) < TOTAL, "alphabet of {n} symbols");
        let sum: f64 = probs.iter().sum();
        let budget = f64::from(TOTAL - n as u32);
        let mut freqs: Vec<u32> = probs.iter().map(|p| 1 + (p / sum * budget).floor() as u32).collect();
        let used: u32 = freqs.iter().sum();
        let best = (0..n).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        freqs[best] += TOTAL - used;
        Self::from_freqs(freqs)
    }

    pub fn uniform(n: usize) -> Self {
        Self::from_probs(&vec![1.0; n])
    }

    fn from_freqs(freqs: Vec<u32>) -> Self {
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0;
        cum.push(0);
        for f in &freqs {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, TOTAL);
        Self { freqs, cum }
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Ideal code length of symbol `s` in bits.
    pub fn cost(&self, s: usize) -> f64 {
        f64::from(TOTAL_BITS) - f64::from(self.freqs[s]).log2()
    }

    fn find(&self, v: u32) -> usize {
        self.cum.partition_point(|&c| c <= v) - 1
    }
}

/// Per-channel table for a zero-mean Laplace of scale `b`: symbols
/// `-S..=S` plus one escape, `S = clamp(ceil(12 b) + 1, 2, 4095)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceTable {
    support: i64,
    table: FreqTable,
}

impl LaplaceTable {
    pub fn new(scale: f64) -> Self {
        let b = scale.max(MIN_SCALE);
        let support = ((12.0 * b).ceil() as i64 + 1).clamp(2, MAX_SUPPORT);
        let mut probs: Vec<f64> =
            (-support..=support).map(|v| (-laplace_bits(v as f64, b).0 * std::f64::consts::LN_2).exp()).collect();
        // Both tails beyond the support: 2 * P(v > S) = exp(-(S + 1/2) / b).
        probs.push((-(support as f64 + 0.5) / b).exp());
        Self { support, table: FreqTable::from_probs(&probs) }
    }

    pub fn support(&self) -> i64 {
        self.support
    }

    fn escape(&self) -> usize {
        self.table.len() - 1
    }
}

/// Carry-propagating range encoder (LZMA style).
#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    fn encode_range(&mut self, cum: u32, freq: u32, total_bits: u32) {
        let r = self.range >> total_bits;
        self.low += u64::from(r) * u64::from(cum);
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode(&mut self, table: &FreqTable, s: usize) {
        self.encode_range(table.cum[s], table.freqs[s], TOTAL_BITS);
    }

    /// Writes `bits` (at most 16) raw bits.
    pub fn encode_bits(&mut self, value: u32, bits: u32) {
        debug_assert!(bits <= 16 && value < (1 << bits));
        self.encode_range(value, 1, bits);
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::CorruptStream(format!("range-coded body of {} bytes", bytes.len())));
        }
        if bytes[0] != 0 {
            return Err(Error::CorruptStream("range-coded body must start with a zero byte".into()));
        }
        let code = u32::from_be_bytes([bytes[1], bytes[2], bytes[3], bytes[4]]);
        Ok(Self { code, range: u32::MAX, bytes, pos: 5 })
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.bytes.get(self.pos).ok_or_else(|| Error::CorruptStream("range-coded body ends early".into()))?;
        self.pos += 1;
        Ok(b)
    }

    fn decode_freq(&mut self, total_bits: u32) -> Result<(u32, u32)> {
        let r = self.range >> total_bits;
        let v = self.code / r;
        if v >= 1 << total_bits {
            return Err(Error::CorruptStream("code value outside the coding range".into()));
        }
        Ok((r, v))
    }

    fn consume(&mut self, r: u32, cum: u32, freq: u32) -> Result<()> {
        self.code -= r * cum;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
        }
        Ok(())
    }

    pub fn decode(&mut self, table: &FreqTable) -> Result<usize> {
        let (r, v) = self.decode_freq(TOTAL_BITS)?;
        let s = table.find(v);
        self.consume(r, table.cum[s], table.freqs[s])?;
        Ok(s)
    }

    pub fn decode_bits(&mut self, bits: u32) -> Result<u32> {
        let (r, v) = self.decode_freq(bits)?;
        self.consume(r, v, 1)?;
        Ok(v)
    }

    /// True when every byte has been consumed.
    pub fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Per-channel Laplace scales.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyModel {
    pub scales: Vec<f64>,
}

impl EntropyModel {
    pub fn new(scales: Vec<f64>) -> Self {
        Self { scales: scales.into_iter().map(|b| b.max(MIN_SCALE)).collect() }
    }

    /// Scales as shipped in a bitstream header.
    pub fn from_f32(scales: &[f32]) -> Self {
        Self::new(scales.iter().map(|&s| f64::from(s)).collect())
    }

    pub fn channels(&self) -> usize {
        self.scales.len()
    }

    pub fn tables(&self) -> Vec<LaplaceTable> {
        self.scales.iter().map(|&b| LaplaceTable::new(b)).collect()
    }
}

/// Estimated bits of row-major `symbols` (channel = index mod C).
pub fn rate_estimate(symbols: &[i32], model: &EntropyModel) -> f64 {
    let c = model.channels();
    symbols.iter().enumerate().map(|(i, &v)| laplace_bits(f64::from(v), model.scales[i % c]).0).sum()
}

fn check_symbol(v: i32) -> Result<()> {
    if i64::from(v) < -ESCAPE_OFFSET || i64::from(v) >= ESCAPE_OFFSET {
        return Err(Error::Overflow(f64::from(v)));
    }
    Ok(())
}

/// Range-codes row-major latent symbols with per-channel Laplace tables.
pub fn range_encode(symbols: &[i32], model: &EntropyModel) -> Result<Vec<u8>> {
    let tables = model.tables();
    let c = tables.len();
    let mut enc = RangeEncoder::new();
    for (i, &v) in symbols.iter().enumerate() {
        check_symbol(v)?;
        let t = &tables[i % c];
        let v = i64::from(v);
        if v.abs() <= t.support {
            enc.encode(&t.table, (v + t.support) as usize);
        } else {
            enc.encode(&t.table, t.escape());
            enc.encode_bits((v + ESCAPE_OFFSET) as u32, ESCAPE_BITS);
        }
    }
    Ok(enc.finish())
}

pub fn range_decode(bytes: &[u8], count: usize, model: &EntropyModel) -> Result<Vec<i32>> {
    let tables = model.tables();
    let c = tables.len();
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let t = &tables[i % c];
        let s = dec.decode(&t.table)?;
        let v = if s == t.escape() {
            let raw = i64::from(dec.decode_bits(ESCAPE_BITS)?) - ESCAPE_OFFSET;
            if raw.abs() <= t.support {
                return Err(Error::CorruptStream("escape used for an in-support symbol".into()));
            }
            raw
        } else {
            s as i64 - t.support
        };
        out.push(v as i32);
    }
    if !dec.at_end() {
        return Err(Error::CorruptStream("trailing bytes after the last symbol".into()));
    }
    Ok(out)
}

/// Symbols from a discretized Laplace of scale `b`, by inverse CDF.
pub fn sample_laplace_symbols<R: rand::Rng>(rng: &mut R, b: f64, n: usize) -> Vec<i32> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(-0.5..0.5);
            let x = -b * u.signum() * (1.0 - 2.0 * u.abs()).ln();
            x.round().clamp(-(ESCAPE_OFFSET as f64), ESCAPE_OFFSET as f64 - 1.0) as i32
        })
        .collect()
}
