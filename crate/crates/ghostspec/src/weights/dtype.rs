//! Tensor element types and exact widening to f64.

use crate::error::{Error, Result};

/// Element types supported in weight files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F64,
    F32,
    F16,
    BF16,
}

impl DType {
    pub const fn byte_width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::F16 | DType::BF16 => 2,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            DType::F64 => "F64",
            DType::F32 => "F32",
            DType::F16 => "F16",
            DType::BF16 => "BF16",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "F64" => Some(DType::F64),
            "F32" => Some(DType::F32),
            "F16" => Some(DType::F16),
            "BF16" => Some(DType::BF16),
            _ => None,
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// IEEE half-precision bit pattern to f64. Every finite half value is
/// exactly representable, so the widening is value-exact.
pub fn f16_bits_to_f64(bits: u16) -> f64 {
    let sign = if bits >> 15 == 1 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1F) as i32;
    let frac = (bits & 0x3FF) as f64;
    match exp {
        0x1F => {
            if frac == 0.0 {
                sign * f64::INFINITY
            } else {
                f64::NAN
            }
        }
        // Subnormals: frac * 2^-24.
        0 => sign * frac * (-24.0_f64).exp2(),
        _ => sign * (1.0 + frac / 1024.0) * f64::from(exp - 15).exp2(),
    }
}

/// bfloat16 bit pattern to f64 (a bf16 is the top half of an f32).
pub fn bf16_bits_to_f64(bits: u16) -> f64 {
    f64::from(f32::from_bits(u32::from(bits) << 16))
}

/// Decode a little-endian payload into f64 values. The byte length must be a
/// multiple of the dtype width (callers validate against the tensor shape).
pub fn decode_payload(dtype: DType, bytes: &[u8]) -> Result<Vec<f64>> {
    let width = dtype.byte_width();
    if bytes.len() % width != 0 {
        return Err(Error::DimensionMismatch(format!(
            "payload of {} bytes is not a multiple of {width} ({dtype})",
            bytes.len()
        )));
    }
    let out = match dtype {
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        DType::F16 => bytes
            .chunks_exact(2)
            .map(|c| f16_bits_to_f64(u16::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        DType::BF16 => bytes
            .chunks_exact(2)
            .map(|c| bf16_bits_to_f64(u16::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    };
    Ok(out)
}

/// Encode f64 values into a little-endian payload of the given dtype.
/// Narrowing conversions round to nearest; used by checkpoint writers.
pub fn encode_payload(dtype: DType, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.byte_width());
    match dtype {
        DType::F64 => {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        DType::F32 => {
            for v in values {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        DType::F16 | DType::BF16 => {
            // Narrowing to 16-bit floats is only needed for synthetic fixture
            // files; route through f32 then truncate/round the mantissa.
            for v in values {
                let bits32 = (*v as f32).to_bits();
                let bits16 = if dtype == DType::BF16 {
                    // Round-to-nearest-even on the dropped 16 bits.
                    let rounding = 0x7FFF + ((bits32 >> 16) & 1);
                    ((bits32 + rounding) >> 16) as u16
                } else {
                    f32_to_f16_bits(f32::from_bits(bits32))
                };
                out.extend_from_slice(&bits16.to_le_bytes());
            }
        }
    }
    out
}

/// f32 to IEEE half bits, round-to-nearest-even, with overflow to infinity.
fn f32_to_f16_bits(v: f32) -> u16 {
    let bits = v.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let frac = bits & 0x7F_FFFF;

    if exp == 0xFF {
        // Inf / NaN.
        return sign | 0x7C00 | if frac != 0 { 0x200 } else { 0 };
    }
    let unbiased = exp - 127;
    if unbiased > 15 {
        return sign | 0x7C00; // overflow -> inf
    }
    if unbiased >= -14 {
        // Normal half. 13 mantissa bits dropped.
        let mant = frac >> 13;
        let rest = frac & 0x1FFF;
        let mut h = sign | (((unbiased + 15) as u16) << 10) | mant as u16;
        if rest > 0x1000 || (rest == 0x1000 && (mant & 1) == 1) {
            h += 1; // carries into the exponent correctly by construction
        }
        h
    } else if unbiased >= -25 {
        // Subnormal half: round 1.frac x 2^unbiased to a multiple of 2^-24.
        let shift = (-1 - unbiased) as u32;
        let full = 0x80_0000 | frac;
        let mant = full >> shift;
        let rest = full & ((1 << shift) - 1);
        let half_point = 1u32 << (shift - 1);
        let mut h = sign | mant as u16;
        if rest > half_point || (rest == half_point && (mant & 1) == 1) {
            h += 1;
        }
        h
    } else {
        sign // underflow to zero
    }
}
