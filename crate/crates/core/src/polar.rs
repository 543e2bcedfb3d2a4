//! CRC-aided polar coding with successive-cancellation list decoding.
//!
//! LLR sign convention: positive means bit 0 is more likely. Path metrics use
//! the exact log-likelihood penalty, so with an unpruned list the decoder
//! coincides with exhaustive maximum likelihood over the information set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crc::CrcSpec;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolarError {
    #[error("block length {0} is not a power of two")]
    BlockLength(usize),
    #[error("info length {info} exceeds block length {block}")]
    InfoTooLong { info: usize, block: usize },
    #[error("expected {want} bits, got {got}")]
    LengthMismatch { got: usize, want: usize },
}

/// Code parameters for one LED cluster.
///
/// `payload_bits` counts data bits only; the CRC is appended before the polar
/// transform, so the information set has `payload_bits + crc.width` positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolarCodeConfig {
    pub block_len: usize,
    pub payload_bits: usize,
    pub list_size: usize,
    pub crc: CrcSpec,
}

impl Default for PolarCodeConfig {
    fn default() -> Self {
        // 48 payload bits + CRC-8 = 56 info positions in a length-128 code:
        // 16 clusters carry 96 payload bytes at a payload rate of 3/8.
        PolarCodeConfig {
            block_len: 128,
            payload_bits: 48,
            list_size: 8,
            crc: CrcSpec::CRC8,
        }
    }
}

impl PolarCodeConfig {
    pub fn info_len(&self) -> usize {
        self.payload_bits + self.crc.width as usize
    }

    pub fn validate(&self) -> Result<(), PolarError> {
        if !self.block_len.is_power_of_two() {
            return Err(PolarError::BlockLength(self.block_len));
        }
        if self.info_len() > self.block_len {
            return Err(PolarError::InfoTooLong {
                info: self.info_len(),
                block: self.block_len,
            });
        }
        Ok(())
    }

    /// Frozen mask (`true` = frozen) via [`build_frozen_set`].
    pub fn frozen_mask(&self) -> Vec<bool> {
        let frozen = build_frozen_set(self.block_len, self.info_len());
        let mut mask = vec![false; self.block_len];
        for i in frozen {
            mask[i] = true;
        }
        mask
    }
}

/// Bhattacharyya parameters of the synthesized channels under BEC(0.5):
/// z starts at 0.5 and polarizes as (2z - z^2, z^2) per recursion level.
pub fn bhattacharyya_parameters(block_len: usize) -> Vec<f64> {
    let mut z = vec![0.5f64];
    while z.len() < block_len {
        let mut next = Vec::with_capacity(z.len() * 2);
        for &v in &z {
            next.push(2.0 * v - v * v);
            next.push(v * v);
        }
        z = next;
    }
    z
}

/// The `block_len - info_len` least reliable indices (largest z), ties broken
/// toward the lower index. Returned sorted ascending.
pub fn build_frozen_set(block_len: usize, info_len: usize) -> Vec<usize> {
    assert!(block_len.is_power_of_two());
    assert!(info_len <= block_len);
    let z = bhattacharyya_parameters(block_len);
    let mut order: Vec<usize> = (0..block_len).collect();
    order.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b)));
    let mut frozen: Vec<usize> = order[..block_len - info_len].to_vec();
    frozen.sort_unstable();
    frozen
}

/// Polar transform x = u G, with G the n-fold Kronecker power of [[1,0],[1,1]].
/// Involutive over GF(2).
pub fn polar_transform(u: &[u8]) -> Vec<u8> {
    let n = u.len();
    debug_assert!(n.is_power_of_two());
    let mut x = u.to_vec();
    let mut half = 1;
    while half < n {
        let step = half * 2;
        for start in (0..n).step_by(step) {
            for i in start..start + half {
                x[i] ^= x[i + half];
            }
        }
        half = step;
    }
    x
}

/// Append the CRC to `payload_bits` and encode; returns `block_len` bits.
pub fn polar_encode(payload_bits: &[u8], config: &PolarCodeConfig) -> Result<Vec<u8>, PolarError> {
    config.validate()?;
    if payload_bits.len() != config.payload_bits {
        return Err(PolarError::LengthMismatch {
            got: payload_bits.len(),
            want: config.payload_bits,
        });
    }
    let info = config.crc.append(payload_bits);
    let mask = config.frozen_mask();
    let mut u = vec![0u8; config.block_len];
    let mut it = info.iter();
    for (i, frozen) in mask.iter().enumerate() {
        if !frozen {
            u[i] = *it.next().unwrap();
        }
    }
    Ok(polar_transform(&u))
}

/// Decoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub payload: Vec<u8>,
    pub crc_ok: bool,
    pub path_metric: f64,
}

fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t
    } else {
        t.exp().ln_1p()
    }
}

/// Exact boxplus: f(a,b) = ln((1 + e^{a+b}) / (e^a + e^b)), stable form.
fn llr_f(a: f64, b: f64) -> f64 {
    let s = a + b;
    s.max(0.0) + softplus(-s.abs()) - a.max(b) - softplus(-(a - b).abs())
}

#[derive(Clone)]
struct Path {
    pm: f64,
    /// All u-domain decisions so far.
    u: Vec<u8>,
    /// LLR vector of the subtree currently being entered.
    cur_llr: Vec<f64>,
    /// Codeword of the most recently finished subtree.
    x: Vec<u8>,
    /// Parent LLR vectors and, once available, left-subtree codewords.
    saved: Vec<(Vec<f64>, Option<Vec<u8>>)>,
    /// Fork order, used as a deterministic tie break when pruning.
    born: u64,
}

fn prune(paths: &mut Vec<Path>, list_size: usize) {
    if paths.len() > list_size {
        paths.sort_by(|a, b| a.pm.partial_cmp(&b.pm).unwrap().then(a.born.cmp(&b.born)));
        paths.truncate(list_size);
    }
}

fn scl_subtree(mut paths: Vec<Path>, frozen: &[bool], list_size: usize, serial: &mut u64) -> Vec<Path> {
    let m = frozen.len();
    if m == 1 {
        let llr_of = |p: &Path| p.cur_llr[0];
        if frozen[0] {
            for p in &mut paths {
                let l = llr_of(p);
                p.pm += softplus(-l);
                p.u.push(0);
                p.x = vec![0];
            }
        } else {
            let mut next = Vec::with_capacity(paths.len() * 2);
            for p in paths {
                let l = llr_of(&p);
                for bit in [0u8, 1u8] {
                    let mut q = p.clone();
                    let s = (1.0 - 2.0 * bit as f64) * l;
                    q.pm += softplus(-s);
                    q.u.push(bit);
                    q.x = vec![bit];
                    *serial += 1;
                    q.born = *serial;
                    next.push(q);
                }
            }
            paths = next;
            prune(&mut paths, list_size);
        }
        return paths;
    }

    let half = m / 2;
    for p in &mut paths {
        let parent = std::mem::take(&mut p.cur_llr);
        p.cur_llr = (0..half).map(|i| llr_f(parent[i], parent[i + half])).collect();
        p.saved.push((parent, None));
    }
    paths = scl_subtree(paths, &frozen[..half], list_size, serial);

    for p in &mut paths {
        let x_left = std::mem::take(&mut p.x);
        let (parent, slot) = p.saved.last_mut().unwrap();
        p.cur_llr = (0..half)
            .map(|i| parent[i + half] + (1.0 - 2.0 * x_left[i] as f64) * parent[i])
            .collect();
        *slot = Some(x_left);
    }
    paths = scl_subtree(paths, &frozen[half..], list_size, serial);

    for p in &mut paths {
        let x_right = std::mem::take(&mut p.x);
        let (_, slot) = p.saved.pop().unwrap();
        let x_left = slot.unwrap();
        let mut x = Vec::with_capacity(m);
        for i in 0..half {
            x.push(x_left[i] ^ x_right[i]);
        }
        x.extend_from_slice(&x_right);
        p.x = x;
    }
    paths
}

/// List-decode `llrs` (length `block_len`). Returns the best-metric path that
/// passes the CRC, or, when none does, the best-metric path with
/// `crc_ok = false`.
pub fn scl_decode(llrs: &[f64], config: &PolarCodeConfig) -> Result<DecodeResult, PolarError> {
    config.validate()?;
    if llrs.len() != config.block_len {
        return Err(PolarError::LengthMismatch {
            got: llrs.len(),
            want: config.block_len,
        });
    }
    let mask = config.frozen_mask();
    let root = Path {
        pm: 0.0,
        u: Vec::with_capacity(config.block_len),
        cur_llr: llrs.to_vec(),
        x: Vec::new(),
        saved: Vec::new(),
        born: 0,
    };
    let mut serial = 0u64;
    let mut paths = scl_subtree(vec![root], &mask, config.list_size.max(1), &mut serial);
    paths.sort_by(|a, b| a.pm.partial_cmp(&b.pm).unwrap().then(a.born.cmp(&b.born)));

    let extract = |p: &Path| -> Vec<u8> {
        mask.iter()
            .enumerate()
            .filter(|(_, f)| !**f)
            .map(|(i, _)| p.u[i])
            .collect()
    };
    for p in &paths {
        let info = extract(p);
        if config.crc.check(&info) {
            return Ok(DecodeResult {
                payload: info[..config.payload_bits].to_vec(),
                crc_ok: true,
                path_metric: p.pm,
            });
        }
    }
    let best = &paths[0];
    let info = extract(best);
    Ok(DecodeResult {
        payload: info[..config.payload_bits].to_vec(),
        crc_ok: false,
        path_metric: best.pm,
    })
}

/// Map hard bits to high-confidence LLRs.
pub fn bits_to_llrs(bits: &[u8], magnitude: f64) -> Vec<f64> {
    bits.iter()
        .map(|&b| if b == 0 { magnitude } else { -magnitude })
        .collect()
}
