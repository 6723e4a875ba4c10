//! Prefix-dependent XOR masks on the v-bits of named points.

use std::collections::HashMap;

use crate::error::{invalid, Result};
use crate::families::{Locus, PointRef};
use crate::seed::mix64;

/// Arguments of one mask bit: the name, the type, the stage and the true
/// bits before that stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaskKey {
    pub name: u64,
    pub i: usize,
    pub j: usize,
    pub stage: usize,
    pub prefix: u64,
}

/// A seeded pseudorandom mask function with optional pinned values.
#[derive(Debug, Clone, PartialEq)]
pub struct Obfuscation {
    seed: u64,
    names: u64,
    d: usize,
    identity: bool,
    overrides: HashMap<MaskKey, bool>,
}

fn low_bits(bits: u64, count: usize) -> u64 {
    if count >= 64 {
        bits
    } else {
        bits & ((1u64 << count) - 1)
    }
}

impl Obfuscation {
    pub fn new(seed: u64, names: u64, d: usize) -> Result<Self> {
        if names == 0 || d == 0 || d > 64 {
            return Err(invalid(format!(
                "obfuscation needs a nonempty name space and 1 ≤ d ≤ 64, got W = {names}, d = {d}"
            )));
        }
        Ok(Obfuscation {
            seed,
            names,
            d,
            identity: false,
            overrides: HashMap::new(),
        })
    }

    /// Every mask bit is zero. Test hook.
    pub fn identity(names: u64, d: usize) -> Result<Self> {
        let mut out = Self::new(0, names, d)?;
        out.identity = true;
        Ok(out)
    }

    pub fn names(&self) -> u64 {
        self.names
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mask(&self, key: MaskKey) -> bool {
        let key = MaskKey {
            prefix: low_bits(key.prefix, key.stage),
            ..key
        };
        if let Some(&bit) = self.overrides.get(&key) {
            return bit;
        }
        if self.identity {
            return false;
        }
        let mut h = mix64(self.seed ^ 0x6F62_6675_7363_6174);
        for word in [
            key.name,
            ((key.i as u64) << 32) ^ key.j as u64,
            key.stage as u64,
            key.prefix,
        ] {
            h = mix64(h ^ word);
        }
        h >> 63 == 1
    }

    /// Pins one mask value, replacing the pseudorandom one.
    pub fn set_mask(&mut self, key: MaskKey, bit: bool) {
        let key = MaskKey {
            prefix: low_bits(key.prefix, key.stage),
            ..key
        };
        self.overrides.insert(key, bit);
    }

    fn parts(&self, point: &PointRef) -> Result<(u64, usize, usize, u64)> {
        let name = point
            .name
            .ok_or_else(|| invalid("obfuscation needs a named point"))?;
        if name >= self.names {
            return Err(invalid(format!("name {name} outside [0, {})", self.names)));
        }
        match point.locus {
            Locus::Tensor { i, j, bits } => Ok((name, i, j, bits)),
            Locus::Marginal { j, bits } => Ok((name, 0, j, bits)),
            _ => Err(invalid("obfuscation applies to tensor and marginal points")),
        }
    }

    fn with_bits(point: &PointRef, bits: u64) -> PointRef {
        let locus = match point.locus {
            Locus::Tensor { i, j, .. } => Locus::Tensor { i, j, bits },
            Locus::Marginal { j, .. } => Locus::Marginal { j, bits },
            other => other,
        };
        PointRef { locus, ..*point }
    }

    fn key(name: u64, i: usize, j: usize, stage: usize, prefix: u64) -> MaskKey {
        MaskKey {
            name,
            i,
            j,
            stage,
            prefix,
        }
    }

    pub fn obfuscate(&self, point: &PointRef) -> Result<PointRef> {
        let (name, i, j, truth) = self.parts(point)?;
        let mut out = 0u64;
        for r in 0..self.d {
            let m = self.mask(Self::key(name, i, j, r, truth)) as u64;
            out |= ((truth >> r & 1) ^ m) << r;
        }
        Ok(Self::with_bits(point, out))
    }

    pub fn deobfuscate(&self, point: &PointRef) -> Result<PointRef> {
        let truth = self.true_prefix(point, self.d)?;
        Ok(Self::with_bits(point, truth))
    }

    /// True bits `0..stages` of an obfuscated point; higher bits are zero.
    pub fn true_prefix(&self, point: &PointRef, stages: usize) -> Result<u64> {
        let (name, i, j, seen) = self.parts(point)?;
        let mut truth = 0u64;
        for r in 0..stages.min(self.d) {
            let m = self.mask(Self::key(name, i, j, r, truth)) as u64;
            truth |= ((seen >> r & 1) ^ m) << r;
        }
        Ok(truth)
    }

    /// Pins masks so that the true point `replacement` obfuscates to what
    /// `original` obfuscated to before the call. The two must share
    /// name, type and the bits before `from_stage`.
    pub fn couple(
        &mut self,
        original: &PointRef,
        replacement: &PointRef,
        from_stage: usize,
    ) -> Result<()> {
        let (name, i, j, old) = self.parts(original)?;
        let (name2, i2, j2, new) = self.parts(replacement)?;
        if (name, i, j) != (name2, i2, j2) || low_bits(old ^ new, from_stage) != 0 {
            return Err(invalid("coupled points must share name, type and prefix"));
        }
        let target = self.obfuscate(original)?;
        let seen = target.bits().expect("bit-addressed point");
        for r in from_stage..self.d {
            let bit = (seen >> r & 1) ^ (new >> r & 1);
            self.set_mask(Self::key(name, i, j, r, new), bit == 1);
        }
        Ok(())
    }
}
