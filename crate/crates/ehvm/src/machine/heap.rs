//! Tracked object space: alloca cells, user allocations, exception objects
//! and module globals all live here. Every access is checked; violations
//! surface as faults at the access site.

use super::FaultKind;

/// A checked address: object handle (1-based) plus cell/byte offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Addr {
    pub obj: u32,
    pub off: u32,
}

/// A machine value. Integers and addresses are the only first-class kinds;
/// the pair is the fixed-shape landing-pad result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Addr(Addr),
    Pair(Addr, i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Alloca,
    User,
    Exception,
    Global,
}

/// Host-side state of an in-flight or caught exception, stored behind a
/// heap handle so lifetime mistakes fault like any other memory error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExcHeader {
    pub class: [u8; 8],
    /// Thrown typeinfo id; 0 for foreign exceptions.
    pub typeinfo: u32,
    pub payload: Option<Addr>,
    /// Function id of the payload destructor; 0 = none.
    pub dtor: i64,
    pub handler_count: u32,
    /// Raised (or re-raised) and not yet delivered to a catch.
    pub in_flight: bool,
    pub cursor: Option<Cursor>,
    pub throw_fn: String,
    pub throw_pc: u32,
}

/// Phase-2 resumption state recorded at handler installation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cursor {
    /// Frame the context was installed into.
    pub installed: u32,
    /// Frame flagged by phase 1, if any.
    pub handler_frame: Option<u32>,
    /// Mask value to restore at the next hand-off.
    pub saved_mask: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectData {
    Cells(Vec<Option<Value>>),
    Bytes(Vec<u8>),
    Exception(ExcHeader),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeapObject {
    pub data: ObjectData,
    pub live: bool,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeapError {
    pub kind: FaultKind,
    pub msg: String,
}

fn err<T>(kind: FaultKind, msg: impl Into<String>) -> Result<T, HeapError> {
    Err(HeapError {
        kind,
        msg: msg.into(),
    })
}

/// Live-object census by origin; frames are counted by the machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Census {
    pub alloca: usize,
    pub user: usize,
    pub exception: usize,
    pub global: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Heap {
    objects: Vec<HeapObject>,
}

impl Heap {
    fn push(&mut self, data: ObjectData, origin: Origin) -> Addr {
        self.objects.push(HeapObject {
            data,
            live: true,
            origin,
        });
        Addr {
            obj: self.objects.len() as u32,
            off: 0,
        }
    }

    pub fn alloc_cells(&mut self, n: usize, origin: Origin) -> Addr {
        self.push(ObjectData::Cells(vec![None; n]), origin)
    }

    pub fn alloc_bytes(&mut self, bytes: Vec<u8>, origin: Origin) -> Addr {
        self.push(ObjectData::Bytes(bytes), origin)
    }

    pub fn alloc_exception(&mut self, hdr: ExcHeader) -> Addr {
        self.push(ObjectData::Exception(hdr), Origin::Exception)
    }

    pub fn get(&self, obj: u32) -> Option<&HeapObject> {
        if obj == 0 {
            return None;
        }
        self.objects.get(obj as usize - 1)
    }

    fn get_live(&self, obj: u32) -> Result<&HeapObject, HeapError> {
        match self.get(obj) {
            None => err(FaultKind::Bounds, format!("access to unknown object {obj}")),
            Some(o) if !o.live => err(
                FaultKind::UseAfterFree,
                format!("access to freed object {obj}"),
            ),
            Some(o) => Ok(o),
        }
    }

    fn get_live_mut(&mut self, obj: u32) -> Result<&mut HeapObject, HeapError> {
        self.get_live(obj)?;
        Ok(self.objects.get_mut(obj as usize - 1).unwrap())
    }

    pub fn load(&self, addr: Addr) -> Result<Value, HeapError> {
        let o = self.get_live(addr.obj)?;
        match &o.data {
            ObjectData::Cells(cells) => match cells.get(addr.off as usize) {
                None => err(
                    FaultKind::Bounds,
                    format!("load at offset {} of a {}-cell object", addr.off, cells.len()),
                ),
                Some(None) => err(FaultKind::Uninitialized, "load of an uninitialized cell"),
                Some(Some(v)) => Ok(*v),
            },
            ObjectData::Bytes(bytes) => match bytes.get(addr.off as usize) {
                None => err(
                    FaultKind::Bounds,
                    format!("load at offset {} of a {}-byte object", addr.off, bytes.len()),
                ),
                Some(b) => Ok(Value::Int(*b as i64)),
            },
            ObjectData::Exception(_) => err(
                FaultKind::Bounds,
                "exception headers are only accessible through the runtime",
            ),
        }
    }

    pub fn store(&mut self, addr: Addr, v: Value) -> Result<(), HeapError> {
        let o = self.get_live_mut(addr.obj)?;
        match &mut o.data {
            ObjectData::Cells(cells) => {
                let len = cells.len();
                match cells.get_mut(addr.off as usize) {
                    None => err(
                        FaultKind::Bounds,
                        format!("store at offset {} of a {len}-cell object", addr.off),
                    ),
                    Some(slot) => {
                        *slot = Some(v);
                        Ok(())
                    }
                }
            }
            ObjectData::Bytes(bytes) => {
                let len = bytes.len();
                match (bytes.get_mut(addr.off as usize), v) {
                    (Some(slot), Value::Int(i)) if (0..=255).contains(&i) => {
                        *slot = i as u8;
                        Ok(())
                    }
                    (Some(_), _) => err(FaultKind::Trap, "byte store requires a value in 0..=255"),
                    (None, _) => err(
                        FaultKind::Bounds,
                        format!("store at offset {} of a {len}-byte object", addr.off),
                    ),
                }
            }
            ObjectData::Exception(_) => err(
                FaultKind::Bounds,
                "exception headers are only accessible through the runtime",
            ),
        }
    }

    pub fn bytes_of(&self, obj: u32) -> Result<&[u8], HeapError> {
        match &self.get_live(obj)?.data {
            ObjectData::Bytes(b) => Ok(b),
            _ => err(FaultKind::Trap, "object is not a byte array"),
        }
    }

    pub fn exception(&self, addr: Addr) -> Result<&ExcHeader, HeapError> {
        match &self.get_live(addr.obj)?.data {
            ObjectData::Exception(h) => Ok(h),
            _ => err(FaultKind::Trap, "not an exception object"),
        }
    }

    pub fn exception_mut(&mut self, addr: Addr) -> Result<&mut ExcHeader, HeapError> {
        match &mut self.get_live_mut(addr.obj)?.data {
            ObjectData::Exception(h) => Ok(h),
            _ => err(FaultKind::Trap, "not an exception object"),
        }
    }

    /// Mark an object dead. Double free is a use-after-free fault.
    pub fn free(&mut self, obj: u32) -> Result<(), HeapError> {
        let o = self.get_live_mut(obj)?;
        o.live = false;
        Ok(())
    }

    pub fn origin(&self, obj: u32) -> Option<Origin> {
        self.get(obj).map(|o| o.origin)
    }

    pub fn is_live(&self, obj: u32) -> bool {
        self.get(obj).is_some_and(|o| o.live)
    }

    pub fn census(&self) -> Census {
        let mut c = Census::default();
        for o in &self.objects {
            if !o.live {
                continue;
            }
            match o.origin {
                Origin::Alloca => c.alloca += 1,
                Origin::User => c.user += 1,
                Origin::Exception => c.exception += 1,
                Origin::Global => c.global += 1,
            }
        }
        c
    }
}
