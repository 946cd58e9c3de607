//! The slice of the GNU Readline ABI the shim uses, resolved at run time.
//!
//! Nothing here links against Readline. Every function and variable is looked
//! up by name through the dynamic loader's global scope, so a host without
//! Readline simply yields no table and the shim stays inert.

use std::collections::BTreeMap;
use std::ffi::{c_char, c_int, c_void, CStr, CString};
use std::ptr;

use super::LineEditor;
use crate::keyseq::KeySequence;

/// `rl_command_func_t`.
pub type CommandFn = unsafe extern "C" fn(count: c_int, key: c_int) -> c_int;

type BindKeyseqFn = unsafe extern "C" fn(*const c_char, Option<CommandFn>) -> c_int;
type AddDefunFn = unsafe extern "C" fn(*const c_char, Option<CommandFn>, c_int) -> c_int;
type InsertTextFn = unsafe extern "C" fn(*const c_char) -> c_int;
type DeleteTextFn = unsafe extern "C" fn(c_int, c_int) -> c_int;
type RedisplayFn = unsafe extern "C" fn();
type HistoryListFn = unsafe extern "C" fn() -> *mut *mut HistEntry;
type AddHistoryFn = unsafe extern "C" fn(*const c_char);
type DingFn = unsafe extern "C" fn() -> c_int;
type NamedFunctionFn = unsafe extern "C" fn(*const c_char) -> Option<CommandFn>;

/// Leading fields of Readline's `HIST_ENTRY`.
#[repr(C)]
pub struct HistEntry {
    pub line: *mut c_char,
    pub timestamp: *mut c_char,
    pub data: *mut c_void,
}

/// Symbol names, exactly as exported by Readline.
pub mod symbols {
    use std::ffi::CStr;

    pub const LINE_BUFFER: &CStr = c"rl_line_buffer";
    pub const POINT: &CStr = c"rl_point";
    pub const END: &CStr = c"rl_end";
    pub const BIND_KEYSEQ: &CStr = c"rl_bind_keyseq";
    pub const ADD_DEFUN: &CStr = c"rl_add_defun";
    pub const INSERT_TEXT: &CStr = c"rl_insert_text";
    pub const DELETE_TEXT: &CStr = c"rl_delete_text";
    pub const REDISPLAY: &CStr = c"rl_redisplay";
    pub const HISTORY_LIST: &CStr = c"history_list";
    pub const ADD_HISTORY: &CStr = c"add_history";
    pub const DING: &CStr = c"rl_ding";
    pub const NAMED_FUNCTION: &CStr = c"rl_named_function";

    /// Without all of these the shim does not attach.
    pub const REQUIRED: [&CStr; 9] = [
        LINE_BUFFER,
        POINT,
        END,
        BIND_KEYSEQ,
        ADD_DEFUN,
        INSERT_TEXT,
        DELETE_TEXT,
        REDISPLAY,
        HISTORY_LIST,
    ];
    pub const OPTIONAL: [&CStr; 3] = [ADD_HISTORY, DING, NAMED_FUNCTION];
}

/// Looks up symbols by name.
///
/// # Safety
///
/// A non-null address returned for one of the [`symbols`] names must point
/// to an object or function with the type Readline gives that name.
pub unsafe trait SymbolResolver {
    fn resolve(&self, name: &CStr) -> *mut c_void;
}

/// The process-wide scope of the dynamic loader (`dlsym(RTLD_DEFAULT, ..)`).
#[derive(Debug, Clone, Copy, Default)]
pub struct GlobalScope;

unsafe impl SymbolResolver for GlobalScope {
    fn resolve(&self, name: &CStr) -> *mut c_void {
        unsafe { libc::dlsym(libc::RTLD_DEFAULT, name.as_ptr()) }
    }
}

/// Resolved Readline entry points and editing-state variables.
pub struct ReadlineAbi {
    line_buffer: *mut *mut c_char,
    point: *mut c_int,
    end: *mut c_int,
    bind_keyseq: BindKeyseqFn,
    add_defun: AddDefunFn,
    insert_text: InsertTextFn,
    delete_text: DeleteTextFn,
    redisplay: RedisplayFn,
    history_list: HistoryListFn,
    add_history: Option<AddHistoryFn>,
    ding: Option<DingFn>,
    named_function: Option<NamedFunctionFn>,
    resolved: BTreeMap<String, usize>,
}

// The pointers refer to process-global Readline state, which Readline itself
// only touches from the editor thread that also runs our callback.
unsafe impl Send for ReadlineAbi {}
unsafe impl Sync for ReadlineAbi {}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BindError {
    #[error("rl_add_defun rejected `{0}`")]
    Register(String),
    #[error("rl_bind_keyseq rejected `{0}`")]
    Bind(String),
}

/// Resolves the Readline ABI, or `None` when any required symbol is absent.
pub fn detect_abi(resolver: &dyn SymbolResolver) -> Option<ReadlineAbi> {
    let mut resolved = BTreeMap::new();
    for name in symbols::REQUIRED {
        let addr = resolver.resolve(name);
        if addr.is_null() {
            return None;
        }
        resolved.insert(name.to_string_lossy().into_owned(), addr as usize);
    }
    for name in symbols::OPTIONAL {
        let addr = resolver.resolve(name);
        if !addr.is_null() {
            resolved.insert(name.to_string_lossy().into_owned(), addr as usize);
        }
    }
    let addr = |name: &CStr| resolved.get(name.to_str().unwrap()).copied();
    let required = |name: &CStr| addr(name).expect("required symbol resolved") as *mut c_void;

    // SAFETY: SymbolResolver guarantees each address has the Readline type
    // of its name, and every required address is non-null.
    unsafe {
        Some(ReadlineAbi {
            line_buffer: required(symbols::LINE_BUFFER).cast(),
            point: required(symbols::POINT).cast(),
            end: required(symbols::END).cast(),
            bind_keyseq: std::mem::transmute::<*mut c_void, BindKeyseqFn>(required(
                symbols::BIND_KEYSEQ,
            )),
            add_defun: std::mem::transmute::<*mut c_void, AddDefunFn>(required(symbols::ADD_DEFUN)),
            insert_text: std::mem::transmute::<*mut c_void, InsertTextFn>(required(
                symbols::INSERT_TEXT,
            )),
            delete_text: std::mem::transmute::<*mut c_void, DeleteTextFn>(required(
                symbols::DELETE_TEXT,
            )),
            redisplay: std::mem::transmute::<*mut c_void, RedisplayFn>(required(
                symbols::REDISPLAY,
            )),
            history_list: std::mem::transmute::<*mut c_void, HistoryListFn>(required(
                symbols::HISTORY_LIST,
            )),
            add_history: addr(symbols::ADD_HISTORY)
                .map(|a| std::mem::transmute::<usize, AddHistoryFn>(a)),
            ding: addr(symbols::DING).map(|a| std::mem::transmute::<usize, DingFn>(a)),
            named_function: addr(symbols::NAMED_FUNCTION)
                .map(|a| std::mem::transmute::<usize, NamedFunctionFn>(a)),
            resolved,
        })
    }
}

impl ReadlineAbi {
    /// Symbol name to address, for diagnostics.
    pub fn resolved(&self) -> &BTreeMap<String, usize> {
        &self.resolved
    }

    /// Whether a function is already registered under `name`. Always false
    /// when the editor does not export `rl_named_function`.
    pub fn is_registered(&self, name: &CStr) -> bool {
        match self.named_function {
            Some(f) => unsafe { f(name.as_ptr()).is_some() },
            None => false,
        }
    }

    pub fn register(&self, name: &CStr, function: CommandFn) -> Result<(), BindError> {
        let rc = unsafe { (self.add_defun)(name.as_ptr(), Some(function), -1) };
        if rc == 0 {
            Ok(())
        } else {
            Err(BindError::Register(name.to_string_lossy().into_owned()))
        }
    }

    pub fn bind(&self, seq: &KeySequence, function: CommandFn) -> Result<(), BindError> {
        let notation =
            CString::new(seq.readline_notation()).map_err(|_| BindError::Bind(seq.to_string()))?;
        let rc = unsafe { (self.bind_keyseq)(notation.as_ptr(), Some(function)) };
        if rc == 0 {
            Ok(())
        } else {
            Err(BindError::Bind(seq.to_string()))
        }
    }

    fn read_buffer(&self) -> String {
        unsafe {
            let buf = *self.line_buffer;
            let end = *self.end;
            if buf.is_null() || end <= 0 {
                return String::new();
            }
            let bytes = std::slice::from_raw_parts(buf.cast::<u8>(), end as usize);
            String::from_utf8_lossy(bytes).into_owned()
        }
    }

    fn write_buffer(&self, text: &str) {
        let text = CString::new(text.replace('\0', "")).expect("NULs removed");
        unsafe {
            (self.delete_text)(0, *self.end);
            *self.point = 0;
            (self.insert_text)(text.as_ptr());
            *self.point = *self.end;
            (self.redisplay)();
        }
    }

    fn read_history(&self) -> Vec<String> {
        let mut lines = Vec::new();
        unsafe {
            let list = (self.history_list)();
            if list.is_null() {
                return lines;
            }
            let mut cursor = list;
            while !(*cursor).is_null() {
                let line = (**cursor).line;
                if !line.is_null() {
                    lines.push(CStr::from_ptr(line).to_string_lossy().into_owned());
                }
                cursor = cursor.add(1);
            }
        }
        lines
    }
}

/// [`LineEditor`] over the live Readline state of this process.
pub struct AbiEditor<'a>(pub &'a ReadlineAbi);

impl LineEditor for AbiEditor<'_> {
    fn buffer(&self) -> String {
        self.0.read_buffer()
    }

    fn replace_buffer(&mut self, text: &str) {
        self.0.write_buffer(text);
    }

    fn ring_bell(&mut self) {
        match self.0.ding {
            Some(ding) => unsafe {
                ding();
            },
            None => unsafe {
                libc::write(libc::STDERR_FILENO, b"\x07".as_ptr().cast(), 1);
            },
        }
    }

    fn history(&self) -> Vec<String> {
        self.0.read_history()
    }

    fn push_history(&mut self, line: &str) {
        if let (Some(add), Ok(line)) = (self.0.add_history, CString::new(line)) {
            unsafe { add(line.as_ptr()) };
        }
    }
}

/// A symbol table backed by addresses supplied by the caller.
///
/// Used to drive the ABI against in-process stand-ins.
#[derive(Debug, Default, Clone)]
pub struct TableResolver {
    entries: BTreeMap<String, usize>,
}

impl TableResolver {
    /// # Safety
    ///
    /// `addr` must have the Readline type of `name` and stay valid for as
    /// long as any ABI resolved through this table is used.
    pub unsafe fn insert(&mut self, name: &CStr, addr: *const c_void) {
        self.entries
            .insert(name.to_string_lossy().into_owned(), addr as usize);
    }

    pub fn remove(&mut self, name: &CStr) {
        self.entries.remove(name.to_str().unwrap_or_default());
    }
}

unsafe impl SymbolResolver for TableResolver {
    fn resolve(&self, name: &CStr) -> *mut c_void {
        name.to_str()
            .ok()
            .and_then(|n| self.entries.get(n))
            .map_or(ptr::null_mut(), |&a| a as *mut c_void)
    }
}

#[cfg(test)]
pub(crate) mod fake {
    //! A tiny in-process imitation of Readline's buffer, history and keymap,
    //! exposed through real C-ABI symbols so the unsafe paths above run.

    use super::*;
    use std::ptr::addr_of_mut;
    use std::sync::{Mutex, MutexGuard};

    pub static mut LINE_BUFFER: *mut c_char = ptr::null_mut();
    pub static mut POINT: c_int = 0;
    pub static mut END: c_int = 0;

    #[derive(Default)]
    pub struct State {
        text: Vec<u8>,
        history: Vec<CString>,
        entries: Vec<HistEntry>,
        list: Vec<*mut HistEntry>,
        pub bindings: Vec<(Vec<u8>, usize)>,
        pub defuns: Vec<(String, usize)>,
        pub dings: usize,
        pub redisplays: usize,
        pub fail_register: bool,
        pub fail_bind: bool,
    }

    unsafe impl Send for State {}

    static STATE: Mutex<Option<State>> = Mutex::new(None);
    static SERIAL: Mutex<()> = Mutex::new(());

    /// Exclusive access to the fake for one test; resets it.
    pub fn session() -> MutexGuard<'static, ()> {
        let guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
        *STATE.lock().unwrap() = Some(State {
            text: vec![0],
            ..Default::default()
        });
        sync_buffer(&mut STATE.lock().unwrap());
        guard
    }

    pub fn with<R>(f: impl FnOnce(&mut State) -> R) -> R {
        let mut guard = STATE.lock().unwrap();
        let r = f(guard.as_mut().expect("fake session active"));
        sync_buffer(&mut guard);
        r
    }

    fn sync_buffer(guard: &mut MutexGuard<'_, Option<State>>) {
        if let Some(state) = guard.as_mut() {
            unsafe {
                LINE_BUFFER = state.text.as_mut_ptr().cast();
                END = (state.text.len() - 1) as c_int;
                POINT = POINT.min(END);
            }
        }
    }

    pub fn set_buffer(text: &str) {
        with(|s| {
            s.text = text.as_bytes().to_vec();
            s.text.push(0);
        });
        unsafe { POINT = END };
    }

    pub fn buffer() -> String {
        with(|s| String::from_utf8_lossy(&s.text[..s.text.len() - 1]).into_owned())
    }

    pub fn point() -> c_int {
        unsafe { POINT }
    }

    pub fn push_history(line: &str) {
        with(|s| {
            s.history.push(CString::new(line).unwrap());
            rebuild_history(s);
        });
    }

    fn rebuild_history(s: &mut State) {
        s.entries = s
            .history
            .iter()
            .map(|l| HistEntry {
                line: l.as_ptr() as *mut c_char,
                timestamp: ptr::null_mut(),
                data: ptr::null_mut(),
            })
            .collect();
        s.list = s.entries.iter_mut().map(|e| e as *mut HistEntry).collect();
        s.list.push(ptr::null_mut());
    }

    unsafe extern "C" fn bind_keyseq(seq: *const c_char, f: Option<CommandFn>) -> c_int {
        let seq = CStr::from_ptr(seq).to_bytes().to_vec();
        with(|s| {
            if s.fail_bind {
                return 1;
            }
            s.bindings.push((seq, f.map_or(0, |f| f as usize)));
            0
        })
    }

    unsafe extern "C" fn add_defun(
        name: *const c_char,
        f: Option<CommandFn>,
        _key: c_int,
    ) -> c_int {
        let name = CStr::from_ptr(name).to_string_lossy().into_owned();
        with(|s| {
            if s.fail_register {
                return -1;
            }
            s.defuns.push((name, f.map_or(0, |f| f as usize)));
            0
        })
    }

    unsafe extern "C" fn named_function(name: *const c_char) -> Option<CommandFn> {
        let name = CStr::from_ptr(name).to_string_lossy().into_owned();
        with(|s| {
            s.defuns
                .iter()
                .find(|(n, _)| *n == name)
                .map(|&(_, f)| std::mem::transmute::<usize, CommandFn>(f))
        })
    }

    unsafe extern "C" fn insert_text(text: *const c_char) -> c_int {
        let bytes = CStr::from_ptr(text).to_bytes().to_vec();
        let at = POINT as usize;
        with(|s| {
            s.text.splice(at..at, bytes.iter().copied());
        });
        POINT = at as c_int + bytes.len() as c_int;
        bytes.len() as c_int
    }

    unsafe extern "C" fn delete_text(start: c_int, end: c_int) -> c_int {
        with(|s| {
            s.text.drain(start as usize..end as usize);
        });
        end - start
    }

    unsafe extern "C" fn redisplay() {
        with(|s| s.redisplays += 1);
    }

    unsafe extern "C" fn history_list() -> *mut *mut HistEntry {
        with(|s| {
            if s.history.is_empty() {
                ptr::null_mut()
            } else {
                s.list.as_mut_ptr()
            }
        })
    }

    unsafe extern "C" fn add_history(line: *const c_char) {
        let line = CStr::from_ptr(line).to_owned();
        with(|s| {
            s.history.push(line);
            rebuild_history(s);
        });
    }

    unsafe extern "C" fn ding() -> c_int {
        with(|s| s.dings += 1);
        0
    }

    pub fn resolver() -> TableResolver {
        let mut t = TableResolver::default();
        unsafe {
            t.insert(symbols::LINE_BUFFER, addr_of_mut!(LINE_BUFFER).cast());
            t.insert(symbols::POINT, addr_of_mut!(POINT).cast());
            t.insert(symbols::END, addr_of_mut!(END).cast());
            t.insert(symbols::BIND_KEYSEQ, bind_keyseq as *const c_void);
            t.insert(symbols::ADD_DEFUN, add_defun as *const c_void);
            t.insert(symbols::INSERT_TEXT, insert_text as *const c_void);
            t.insert(symbols::DELETE_TEXT, delete_text as *const c_void);
            t.insert(symbols::REDISPLAY, redisplay as *const c_void);
            t.insert(symbols::HISTORY_LIST, history_list as *const c_void);
            t.insert(symbols::ADD_HISTORY, add_history as *const c_void);
            t.insert(symbols::DING, ding as *const c_void);
            t.insert(symbols::NAMED_FUNCTION, named_function as *const c_void);
        }
        t
    }
}
