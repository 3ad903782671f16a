//! Compressed-counts text codec for run-length masks.
//!
//! Runs are delta coded against the run two positions back (from the fourth run
//! on), then each signed value is written as little-endian 5-bit groups. A group
//! sits in the low bits of a 6-bit chunk whose bit 5 flags continuation, and the
//! chunk is emitted as the character `chunk + 48`.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

const CHAR_OFFSET: u8 = 48;
const CONTINUE: i64 = 0x20;
const GROUP: i64 = 0x1f;
const SIGN: i64 = 0x10;

pub fn compress(mask: &BinaryMask) -> String {
    let runs = mask.runs();
    let mut out = String::with_capacity(runs.len() * 2);
    for (i, &run) in runs.iter().enumerate() {
        let mut x = run as i64;
        if i > 2 {
            x -= runs[i - 2] as i64;
        }
        push_value(&mut out, x);
    }
    out
}

fn push_value(out: &mut String, mut x: i64) {
    loop {
        let mut chunk = x & GROUP;
        x >>= 5;
        let more = if chunk & SIGN != 0 { x != -1 } else { x != 0 };
        if more {
            chunk |= CONTINUE;
        }
        out.push((chunk as u8 + CHAR_OFFSET) as char);
        if !more {
            break;
        }
    }
}

pub fn decompress(token: &str, width: u32, height: u32) -> Result<BinaryMask> {
    let bytes = token.as_bytes();
    let mut runs: Vec<u64> = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let mut x: i64 = 0;
        let mut shift = 0u32;
        loop {
            let Some(&b) = bytes.get(pos) else {
                return Err(Error::Corrupt(format!(
                    "token truncated inside value {} at byte {pos}",
                    runs.len()
                )));
            };
            if !(CHAR_OFFSET..CHAR_OFFSET + 64).contains(&b) {
                return Err(Error::Corrupt(format!("invalid character {:?} at byte {pos}", b as char)));
            }
            if shift >= 64 {
                return Err(Error::Corrupt(format!("value {} overflows 64 bits", runs.len())));
            }
            let chunk = (b - CHAR_OFFSET) as i64;
            pos += 1;
            x |= (chunk & GROUP) << shift;
            shift += 5;
            if chunk & CONTINUE == 0 {
                if chunk & SIGN != 0 && shift < 64 {
                    x |= -1i64 << shift;
                }
                break;
            }
        }
        let i = runs.len();
        if i > 2 {
            x = x
                .checked_add(runs[i - 2] as i64)
                .ok_or_else(|| Error::Corrupt(format!("run {i} overflows")))?;
        }
        if x < 0 {
            return Err(Error::Corrupt(format!("run {i} decodes to negative length {x}")));
        }
        runs.push(x as u64);
    }
    BinaryMask::from_runs(width, height, runs)
}
