//! Byte-exact encoder/decoder for the per-function language-specific data
//! area: call-site table, action table, type table and spec table, all
//! integers LEB128.
//!
//! The layout is fixed and versioned (see `docs/lsda-format.md`):
//!
//! ```text
//! version byte 0x01
//! ULEB counts: callsites, actions, types, specs
//! callsites:   ULEB start, ULEB length, ULEB landing_pad, ULEB action
//! actions:     SLEB type_filter, SLEB next
//! types:       ULEB typeinfo id          (0 = catch-all / null)
//! specs:       ULEB ids ... ULEB 0       (one 0-terminated list per spec)
//! ```

use thiserror::Error;

pub const LSDA_VERSION: u8 = 0x01;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LsdaError {
    #[error("truncated input")]
    Truncated,
    #[error("LEB128 value does not fit in 64 bits")]
    Overflow,
    #[error("unsupported version {0:#04x}")]
    Version(u8),
    #[error("malformed table: {0}")]
    Invalid(String),
}

/// Maps one code range to its landing pad and action chain. `landing_pad`
/// 0 means "no handler here": the unwinder keeps searching caller-ward.
/// `action` is the 1-based index of the first entry of the chain; 0 means no
/// actions at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallSiteRecord {
    pub start: u32,
    pub length: u32,
    pub landing_pad: u32,
    pub action: u32,
}

/// One link of an action chain. `type_filter` > 0 selects a type-table entry
/// (a catch clause), < 0 selects a spec-table list (an exception
/// specification), 0 marks a cleanup. `next` is a relative entry offset; 0
/// terminates the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionEntry {
    pub type_filter: i32,
    pub next: i32,
}

/// Decoded form of a function's LSDA.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LsdaTable {
    pub callsites: Vec<CallSiteRecord>,
    pub actions: Vec<ActionEntry>,
    /// Positive filter j refers to types[j-1]; entry value is a typeinfo id,
    /// 0 meaning catch-all.
    pub types: Vec<u32>,
    /// Negative filter -k refers to specs[k-1].
    pub specs: Vec<Vec<u32>>,
}

pub fn uleb_encode(mut v: u64, out: &mut Vec<u8>) {
    loop {
        let mut byte = (v & 0x7f) as u8;
        v >>= 7;
        if v != 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if v == 0 {
            break;
        }
    }
}

pub fn uleb_decode(bytes: &[u8]) -> Result<(u64, usize), LsdaError> {
    let mut value: u64 = 0;
    let mut shift = 0u32;
    for (i, &b) in bytes.iter().enumerate() {
        let low = (b & 0x7f) as u64;
        if shift >= 64 || (shift == 63 && low > 1) {
            return Err(LsdaError::Overflow);
        }
        value |= low << shift;
        if b & 0x80 == 0 {
            return Ok((value, i + 1));
        }
        shift += 7;
    }
    Err(LsdaError::Truncated)
}

pub fn sleb_encode(mut v: i64, out: &mut Vec<u8>) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        let sign_clear = byte & 0x40 == 0;
        if (v == 0 && sign_clear) || (v == -1 && !sign_clear) {
            out.push(byte);
            break;
        }
        out.push(byte | 0x80);
    }
}

pub fn sleb_decode(bytes: &[u8]) -> Result<(i64, usize), LsdaError> {
    let mut value: i64 = 0;
    let mut shift = 0u32;
    for (i, &b) in bytes.iter().enumerate() {
        if shift >= 64 {
            return Err(LsdaError::Overflow);
        }
        value |= ((b & 0x7f) as i64) << shift;
        shift += 7;
        if b & 0x80 == 0 {
            if shift < 64 && b & 0x40 != 0 {
                value |= -1i64 << shift;
            }
            return Ok((value, i + 1));
        }
    }
    Err(LsdaError::Truncated)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn uleb(&mut self) -> Result<u64, LsdaError> {
        let (v, n) = uleb_decode(&self.bytes[self.pos..])?;
        self.pos += n;
        Ok(v)
    }

    fn uleb32(&mut self) -> Result<u32, LsdaError> {
        let v = self.uleb()?;
        u32::try_from(v).map_err(|_| LsdaError::Overflow)
    }

    fn sleb32(&mut self) -> Result<i32, LsdaError> {
        let (v, n) = sleb_decode(&self.bytes[self.pos..])?;
        self.pos += n;
        i32::try_from(v).map_err(|_| LsdaError::Overflow)
    }
}

impl LsdaTable {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![LSDA_VERSION];
        uleb_encode(self.callsites.len() as u64, &mut out);
        uleb_encode(self.actions.len() as u64, &mut out);
        uleb_encode(self.types.len() as u64, &mut out);
        uleb_encode(self.specs.len() as u64, &mut out);
        for cs in &self.callsites {
            uleb_encode(cs.start as u64, &mut out);
            uleb_encode(cs.length as u64, &mut out);
            uleb_encode(cs.landing_pad as u64, &mut out);
            uleb_encode(cs.action as u64, &mut out);
        }
        for a in &self.actions {
            sleb_encode(a.type_filter as i64, &mut out);
            sleb_encode(a.next as i64, &mut out);
        }
        for t in &self.types {
            uleb_encode(*t as u64, &mut out);
        }
        for spec in &self.specs {
            for id in spec {
                uleb_encode(*id as u64, &mut out);
            }
            uleb_encode(0, &mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<LsdaTable, LsdaError> {
        if bytes.is_empty() {
            return Err(LsdaError::Truncated);
        }
        if bytes[0] != LSDA_VERSION {
            return Err(LsdaError::Version(bytes[0]));
        }
        let mut r = Reader { bytes, pos: 1 };
        let n_callsites = r.uleb32()?;
        let n_actions = r.uleb32()?;
        let n_types = r.uleb32()?;
        let n_specs = r.uleb32()?;
        let mut t = LsdaTable::default();
        for _ in 0..n_callsites {
            t.callsites.push(CallSiteRecord {
                start: r.uleb32()?,
                length: r.uleb32()?,
                landing_pad: r.uleb32()?,
                action: r.uleb32()?,
            });
        }
        for _ in 0..n_actions {
            t.actions.push(ActionEntry {
                type_filter: r.sleb32()?,
                next: r.sleb32()?,
            });
        }
        for _ in 0..n_types {
            t.types.push(r.uleb32()?);
        }
        for _ in 0..n_specs {
            let mut list = Vec::new();
            loop {
                let id = r.uleb32()?;
                if id == 0 {
                    break;
                }
                list.push(id);
            }
            t.specs.push(list);
        }
        if r.pos != bytes.len() {
            return Err(LsdaError::Invalid("trailing bytes".into()));
        }
        t.validate()?;
        Ok(t)
    }

    /// Check the structural invariants: sorted non-overlapping call sites,
    /// terminating action chains, filters in range.
    pub fn validate(&self) -> Result<(), LsdaError> {
        let mut prev_end: u64 = 0;
        for (i, cs) in self.callsites.iter().enumerate() {
            if i > 0 && (cs.start as u64) < prev_end {
                return Err(LsdaError::Invalid(format!(
                    "call sites overlap or are unsorted at index {i}"
                )));
            }
            prev_end = cs.start as u64 + cs.length as u64;
            if cs.action as usize > self.actions.len() {
                return Err(LsdaError::Invalid(format!(
                    "call site {i} references action {} of {}",
                    cs.action,
                    self.actions.len()
                )));
            }
        }
        for first in self.callsites.iter().filter(|c| c.action != 0) {
            // Follow the chain; a chain longer than the table must loop.
            let mut idx = first.action as i64 - 1;
            let mut hops = 0usize;
            loop {
                if idx < 0 || idx as usize >= self.actions.len() {
                    return Err(LsdaError::Invalid("action chain leaves the table".into()));
                }
                let e = self.actions[idx as usize];
                if e.type_filter > 0 && e.type_filter as usize > self.types.len() {
                    return Err(LsdaError::Invalid(format!(
                        "type filter {} exceeds type table size {}",
                        e.type_filter,
                        self.types.len()
                    )));
                }
                if e.type_filter < 0 && (-e.type_filter) as usize > self.specs.len() {
                    return Err(LsdaError::Invalid(format!(
                        "spec filter {} exceeds spec table size {}",
                        e.type_filter,
                        self.specs.len()
                    )));
                }
                if e.next == 0 {
                    break;
                }
                idx += e.next as i64;
                hops += 1;
                if hops > self.actions.len() {
                    return Err(LsdaError::Invalid("action chain does not terminate".into()));
                }
            }
        }
        Ok(())
    }

    /// The unique record covering `pc` (half-open intervals), if any.
    pub fn find_callsite(&self, pc: u32) -> Option<&CallSiteRecord> {
        let idx = self
            .callsites
            .partition_point(|cs| cs.start as u64 + cs.length as u64 <= pc as u64);
        let cs = self.callsites.get(idx)?;
        (cs.start <= pc).then_some(cs)
    }

    /// Iterate one action chain starting at 1-based index `action`.
    pub fn chain(&self, action: u32) -> ChainIter<'_> {
        ChainIter {
            table: self,
            next: if action == 0 { None } else { Some(action as i64 - 1) },
        }
    }
}

pub struct ChainIter<'a> {
    table: &'a LsdaTable,
    next: Option<i64>,
}

impl Iterator for ChainIter<'_> {
    type Item = ActionEntry;

    fn next(&mut self) -> Option<ActionEntry> {
        let idx = self.next?;
        let e = *self.table.actions.get(usize::try_from(idx).ok()?)?;
        self.next = if e.next == 0 { None } else { Some(idx + e.next as i64) };
        Some(e)
    }
}
