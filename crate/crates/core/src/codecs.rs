//! Reference codecs for the two compression families.
//!
//! `quantize` packs 32-bit-float elements into `bits`-wide integer codes in
//! groups, storing a float scale and zero point per group. `drop_tokens`
//! keeps the attention-sink prefix and the recent tail of a token sequence
//! and concatenates the surviving token blocks. Output sizes follow closed
//! formulas exactly, so the planner can predict them without running the
//! codec.
//!
//! The framed stream formats (`AKVC` for quantized data, `AKVD` for dropped
//! tokens) wrap the raw codec payload with a little-endian header carrying
//! the parameters needed to decode it standalone.

use crate::error::{Error, Result};

/// Byte layout of one token's KV block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KvLayout {
    pub token_count: u64,
    /// Bytes per token block.
    pub stride: u32,
}

impl KvLayout {
    pub fn new(token_count: u64, stride: u32) -> Result<Self> {
        if token_count == 0 || stride == 0 {
            return Err(Error::Input("layout needs at least one token and a positive stride".into()));
        }
        Ok(KvLayout { token_count, stride })
    }

    pub fn total_bytes(&self) -> u64 {
        self.token_count * self.stride as u64
    }
}

/// Group quantization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantSpec {
    pub bits: u8,
    pub group_size: u32,
}

/// Bytes of scale plus zero point stored per group.
const GROUP_HEADER_BYTES: u64 = 8;

impl QuantSpec {
    /// `bits` must be 2, 4, or 8 and every full group must pack to whole
    /// bytes, i.e. `group_size * bits` divisible by 8.
    pub fn new(bits: u8, group_size: u32) -> Result<Self> {
        if !matches!(bits, 2 | 4 | 8) {
            return Err(Error::Config(format!("quantization bits must be 2, 4, or 8, got {bits}")));
        }
        if group_size == 0 {
            return Err(Error::Config("group_size must be at least 1".into()));
        }
        if (group_size as u64 * bits as u64) % 8 != 0 {
            return Err(Error::Config(format!(
                "group_size {group_size} at {bits} bits does not pack to whole bytes"
            )));
        }
        Ok(QuantSpec { bits, group_size })
    }

    /// Exact output size for `n` elements:
    /// `ceil(n * bits / 8)` code bytes plus 8 bytes per group.
    pub fn compressed_bytes(&self, n: u64) -> u64 {
        let code_bytes = (n * self.bits as u64).div_ceil(8);
        let groups = n.div_ceil(self.group_size as u64);
        code_bytes + groups * GROUP_HEADER_BYTES
    }

    /// Achieved rate against the 4-byte-per-element input.
    pub fn achieved_rate(&self, n: u64) -> f64 {
        self.compressed_bytes(n) as f64 / (4 * n) as f64
    }
}

/// Quantize `values` to packed integer codes.
///
/// Per group of up to `group_size` elements the codec stores the group
/// minimum (zero point) and `step = (max - min) / (2^bits - 1)` (scale) as
/// f32, then `round((x - min) / step)` for each element. A constant group
/// has step 0 and all-zero codes. Output layout per group:
/// `[scale f32][zero f32][packed codes]`, codes in element order, low bits
/// first within each byte.
pub fn quantize(values: &[f32], spec: &QuantSpec) -> Result<Vec<u8>> {
    if values.is_empty() {
        return Err(Error::Input("cannot quantize zero elements".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite element {bad} in quantize input")));
    }
    let n = values.len() as u64;
    let mut out = Vec::with_capacity(spec.compressed_bytes(n) as usize);
    let levels = (1u32 << spec.bits) - 1;
    for group in values.chunks(spec.group_size as usize) {
        let min = group.iter().copied().fold(f32::INFINITY, f32::min);
        let max = group.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let step = (max - min) / levels as f32;
        out.extend_from_slice(&step.to_le_bytes());
        out.extend_from_slice(&min.to_le_bytes());

        let mut acc: u16 = 0;
        let mut filled: u8 = 0;
        for &x in group {
            let code = if step > 0.0 {
                (((x - min) / step).round() as u32).min(levels)
            } else {
                0
            };
            acc |= (code as u16) << filled;
            filled += spec.bits;
            if filled == 8 {
                out.push(acc as u8);
                acc = 0;
                filled = 0;
            }
        }
        if filled > 0 {
            out.push(acc as u8);
        }
    }
    debug_assert_eq!(out.len() as u64, spec.compressed_bytes(n));
    Ok(out)
}

/// Invert `quantize`. `element_count` and `spec` must match the encoder;
/// a payload of the wrong length is a malformed stream.
pub fn dequantize(payload: &[u8], element_count: u64, spec: &QuantSpec) -> Result<Vec<f32>> {
    let expected = spec.compressed_bytes(element_count);
    if payload.len() as u64 != expected {
        return Err(Error::Format(format!(
            "quantized payload is {} bytes, expected {expected} for {element_count} elements",
            payload.len()
        )));
    }
    let mut values = Vec::with_capacity(element_count as usize);
    let mut pos = 0usize;
    let mut remaining = element_count;
    while remaining > 0 {
        let group_len = remaining.min(spec.group_size as u64) as usize;
        let step = f32::from_le_bytes(payload[pos..pos + 4].try_into().unwrap());
        let zero = f32::from_le_bytes(payload[pos + 4..pos + 8].try_into().unwrap());
        pos += 8;
        let code_bytes = (group_len * spec.bits as usize).div_ceil(8);
        let codes = &payload[pos..pos + code_bytes];
        pos += code_bytes;

        let mask = (1u16 << spec.bits) - 1;
        for i in 0..group_len {
            let bit = i * spec.bits as usize;
            let code = (codes[bit / 8] >> (bit % 8)) as u16 & mask;
            values.push(zero + code as f32 * step);
        }
        remaining -= group_len as u64;
    }
    Ok(values)
}

/// Token-dropping parameters: keep the first `sink` tokens and the last
/// `recent` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropSpec {
    pub sink: u32,
    pub recent: u32,
}

impl DropSpec {
    pub fn new(sink: u32, recent: u32) -> Result<Self> {
        if sink == 0 && recent == 0 {
            return Err(Error::Config("token dropping must keep at least one token".into()));
        }
        Ok(DropSpec { sink, recent })
    }

    /// Parameters that keep roughly `rate * token_count` tokens, with up to
    /// four of them spent on the sink prefix.
    pub fn for_rate(rate: f64, token_count: u64) -> Result<Self> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::Config(format!("keep rate must lie in (0, 1], got {rate}")));
        }
        let kept = ((rate * token_count as f64).round() as u64).clamp(1, token_count);
        let sink = kept.min(4) as u32;
        DropSpec::new(sink, (kept - sink as u64) as u32)
    }

    /// Fraction of tokens kept: `min(1, (sink + recent) / token_count)`.
    pub fn achieved_rate(&self, token_count: u64) -> f64 {
        ((self.sink as u64 + self.recent as u64) as f64 / token_count as f64).min(1.0)
    }

    pub fn kept_indices(&self, token_count: u64) -> Vec<u64> {
        let mut kept: Vec<u64> = (0..token_count.min(self.sink as u64)).collect();
        let tail_start = token_count.saturating_sub(self.recent as u64);
        for t in tail_start..token_count {
            if kept.last().is_none_or(|&last| t > last) {
                kept.push(t);
            }
        }
        kept
    }
}

/// Drop tokens from a payload of `layout.token_count` fixed-stride blocks.
/// Returns the concatenated surviving blocks and their original indices,
/// ascending. Output size is exactly `kept * stride`.
pub fn drop_tokens(payload: &[u8], layout: &KvLayout, spec: &DropSpec) -> Result<(Vec<u8>, Vec<u64>)> {
    if payload.len() as u64 != layout.total_bytes() {
        return Err(Error::Input(format!(
            "payload is {} bytes but the layout describes {}",
            payload.len(),
            layout.total_bytes()
        )));
    }
    let kept = spec.kept_indices(layout.token_count);
    let stride = layout.stride as usize;
    let mut out = Vec::with_capacity(kept.len() * stride);
    for &t in &kept {
        let start = t as usize * stride;
        out.extend_from_slice(&payload[start..start + stride]);
    }
    Ok((out, kept))
}

const QUANT_MAGIC: &[u8; 4] = b"AKVC";
const DROP_MAGIC: &[u8; 4] = b"AKVD";
const STREAM_VERSION: u8 = 1;

/// Frame a quantized payload as a standalone stream:
/// `"AKVC" | version u8 | method u8 | bits u8 | group_size u32 | element_count u64`,
/// then the payload, all little-endian.
pub fn write_quant_stream(payload: &[u8], element_count: u64, spec: &QuantSpec) -> Vec<u8> {
    let mut out = Vec::with_capacity(19 + payload.len());
    out.extend_from_slice(QUANT_MAGIC);
    out.push(STREAM_VERSION);
    out.push(0); // method tag: quantize
    out.push(spec.bits);
    out.extend_from_slice(&spec.group_size.to_le_bytes());
    out.extend_from_slice(&element_count.to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Decode a framed quantized stream back to elements.
pub fn read_quant_stream(stream: &[u8]) -> Result<Vec<f32>> {
    if stream.len() < 19 {
        return Err(Error::Format("quantized stream shorter than its header".into()));
    }
    if &stream[..4] != QUANT_MAGIC {
        return Err(Error::Format("bad magic, expected AKVC".into()));
    }
    if stream[4] != STREAM_VERSION {
        return Err(Error::Format(format!("unsupported stream version {}", stream[4])));
    }
    let spec = QuantSpec::new(stream[6], u32::from_le_bytes(stream[7..11].try_into().unwrap()))
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let element_count = u64::from_le_bytes(stream[11..19].try_into().unwrap());
    dequantize(&stream[19..], element_count, &spec)
}

/// Frame a dropped-token payload:
/// `"AKVD" | version u8 | sink u32 | recent u32 | token_count u64 | stride u32`,
/// then the surviving blocks.
pub fn write_drop_stream(payload: &[u8], layout: &KvLayout, spec: &DropSpec) -> Vec<u8> {
    let mut out = Vec::with_capacity(25 + payload.len());
    out.extend_from_slice(DROP_MAGIC);
    out.push(STREAM_VERSION);
    out.extend_from_slice(&spec.sink.to_le_bytes());
    out.extend_from_slice(&spec.recent.to_le_bytes());
    out.extend_from_slice(&layout.token_count.to_le_bytes());
    out.extend_from_slice(&layout.stride.to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Decode a framed dropped-token stream. Returns the surviving blocks and
/// their original token indices.
pub fn read_drop_stream(stream: &[u8]) -> Result<(Vec<u8>, Vec<u64>)> {
    if stream.len() < 25 {
        return Err(Error::Format("dropped-token stream shorter than its header".into()));
    }
    if &stream[..4] != DROP_MAGIC {
        return Err(Error::Format("bad magic, expected AKVD".into()));
    }
    if stream[4] != STREAM_VERSION {
        return Err(Error::Format(format!("unsupported stream version {}", stream[4])));
    }
    let spec = DropSpec::new(
        u32::from_le_bytes(stream[5..9].try_into().unwrap()),
        u32::from_le_bytes(stream[9..13].try_into().unwrap()),
    )
    .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let layout = KvLayout::new(
        u64::from_le_bytes(stream[13..21].try_into().unwrap()),
        u32::from_le_bytes(stream[21..25].try_into().unwrap()),
    )
    .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let kept = spec.kept_indices(layout.token_count);
    let expected = kept.len() as u64 * layout.stride as u64;
    if (stream.len() - 25) as u64 != expected {
        return Err(Error::Format(format!(
            "dropped-token stream carries {} payload bytes, expected {expected}",
            stream.len() - 25
        )));
    }
    Ok((stream[25..].to_vec(), kept))
}
