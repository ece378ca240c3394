//! Runtime symbols callable from guest code: machine hypercalls, the
//! low-level stack interface, the unwinder entry points and the language
//! runtime. The validator resolves call targets against this table.

/// Identity of a runtime symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    // machine hypercalls
    VmChoose,
    VmMask,
    VmSpawn,
    Malloc,
    Free,
    // low-level stack interface
    DiosUnwind,
    DiosJump,
    Setjmp,
    Longjmp,
    // unwinder (the libunwind surface)
    RaiseException,
    Resume,
    DeleteException,
    SetGr,
    GetGr,
    SetIp,
    GetIp,
    GetLsda,
    GetRegionStart,
    // language runtime
    CxaAllocateException,
    CxaThrow,
    CxaBeginCatch,
    CxaEndCatch,
    CxaRethrow,
    Personality,
    /// Compile-time pseudo-call; replaced by the lowering pass.
    TypeidFor,
}

/// Argument arity contract for a builtin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
}

pub fn lookup(name: &str) -> Option<Builtin> {
    use Builtin::*;
    Some(match name {
        "@__vm_choose" => VmChoose,
        "@__vm_mask" => VmMask,
        "@__vm_spawn" => VmSpawn,
        "@malloc" => Malloc,
        "@free" => Free,
        "@__dios_unwind" => DiosUnwind,
        "@__dios_jump" => DiosJump,
        "@setjmp" => Setjmp,
        "@longjmp" => Longjmp,
        "@_Unwind_RaiseException" => RaiseException,
        "@_Unwind_Resume" => Resume,
        "@_Unwind_DeleteException" => DeleteException,
        "@_Unwind_SetGR" => SetGr,
        "@_Unwind_GetGR" => GetGr,
        "@_Unwind_SetIP" => SetIp,
        "@_Unwind_GetIP" => GetIp,
        "@_Unwind_GetLanguageSpecificData" => GetLsda,
        "@_Unwind_GetRegionStart" => GetRegionStart,
        "@__cxa_allocate_exception" => CxaAllocateException,
        "@__cxa_throw" => CxaThrow,
        "@__cxa_begin_catch" => CxaBeginCatch,
        "@__cxa_end_catch" => CxaEndCatch,
        "@__cxa_rethrow" => CxaRethrow,
        "@__ehvm_personality_v0" => Personality,
        "@typeid.for" => TypeidFor,
        _ => return None,
    })
}

pub fn arity(b: Builtin) -> Arity {
    use Builtin::*;
    match b {
        VmChoose | VmMask | Malloc | Free | Setjmp | RaiseException | Resume
        | DeleteException | GetIp | GetLsda | GetRegionStart | CxaAllocateException
        | CxaBeginCatch | TypeidFor => Arity::Exact(1),
        DiosUnwind | Longjmp | GetGr | SetIp => Arity::Exact(2),
        DiosJump | SetGr | CxaThrow => Arity::Exact(3),
        CxaEndCatch | CxaRethrow => Arity::Exact(0),
        VmSpawn => Arity::AtLeast(1),
        Personality => Arity::AtLeast(0),
    }
}

/// Symbols that never return normally; a call to one of these is a valid
/// block terminator.
pub fn is_noreturn(b: Builtin) -> bool {
    matches!(
        b,
        Builtin::CxaThrow | Builtin::CxaRethrow | Builtin::Resume | Builtin::Longjmp
    )
}

/// Personality routines the unwinder knows how to dispatch to.
pub fn is_personality(name: &str) -> bool {
    name == "@__ehvm_personality_v0"
}
