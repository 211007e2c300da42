//! Run configuration: defaults, config file, and command-line overrides.
//!
//! The config file is TOML with four optional sections:
//!
//! ```toml
//! [cfi]
//! enable_zicfiss = true
//! enable_zicfilp = true
//! lp_protect_ret = false
//!
//! [run]
//! timing = true
//! limit = 10_000_000
//! cost_table = "costs.toml"   # replaces the [timing] section below
//! trace = "trace.txt"
//!
//! [memory]
//! stack_top = 0x4000_0000
//! stack_size = 0x10_0000
//! shadow_stack_base = 0x5000_0000
//! shadow_stack_size = 0x1_0000
//! heap_base = 0x2000_0000
//! heap_size = 0x10_0000
//!
//! [timing]
//! load = 3
//! dual_commit = true
//! ```
//!
//! Precedence, lowest first: built-in defaults, config file, `CFISIM_*`
//! environment variables, command-line flags.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::memory::PAGE_SIZE;
use crate::timing::{CostOverrides, CostTable, CostTableError};

pub const DEFAULT_LIMIT: u64 = 100_000_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error(transparent)]
    CostTable(#[from] CostTableError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryLayout {
    /// Initial `sp`; the stack occupies `[stack_top - stack_size, stack_top)`.
    pub stack_top: u64,
    pub stack_size: u64,
    pub shadow_stack_base: u64,
    /// `ssp` starts at `shadow_stack_base + shadow_stack_size`.
    pub shadow_stack_size: u64,
    pub heap_base: u64,
    pub heap_size: u64,
}

impl Default for MemoryLayout {
    fn default() -> Self {
        MemoryLayout {
            stack_top: 0x4000_0000,
            stack_size: 0x10_0000,
            shadow_stack_base: 0x5000_0000,
            shadow_stack_size: 0x1_0000,
            heap_base: 0x2000_0000,
            heap_size: 0x10_0000,
        }
    }
}

impl MemoryLayout {
    pub fn stack_range(&self) -> std::ops::Range<u64> {
        self.stack_top - self.stack_size..self.stack_top
    }

    pub fn shadow_stack_range(&self) -> std::ops::Range<u64> {
        self.shadow_stack_base..self.shadow_stack_base + self.shadow_stack_size
    }

    pub fn heap_range(&self) -> std::ops::Range<u64> {
        self.heap_base..self.heap_base + self.heap_size
    }

    pub fn initial_ssp(&self) -> u64 {
        self.shadow_stack_base + self.shadow_stack_size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub enable_zicfiss: bool,
    pub enable_zicfilp: bool,
    pub lp_protect_ret: bool,
    pub timing: bool,
    pub cost_table_path: Option<PathBuf>,
    pub cost_table: CostTable,
    pub memory: MemoryLayout,
    pub limit: u64,
    pub trace_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            enable_zicfiss: false,
            enable_zicfilp: false,
            lp_protect_ret: false,
            timing: false,
            cost_table_path: None,
            cost_table: CostTable::default(),
            memory: MemoryLayout::default(),
            limit: DEFAULT_LIMIT,
            trace_path: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileCfi {
    enable_zicfiss: Option<bool>,
    enable_zicfilp: Option<bool>,
    lp_protect_ret: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRun {
    timing: Option<bool>,
    limit: Option<u64>,
    cost_table: Option<PathBuf>,
    trace: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileMemory {
    stack_top: Option<u64>,
    stack_size: Option<u64>,
    shadow_stack_base: Option<u64>,
    shadow_stack_size: Option<u64>,
    heap_base: Option<u64>,
    heap_size: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    cfi: FileCfi,
    #[serde(default)]
    run: FileRun,
    #[serde(default)]
    memory: FileMemory,
    timing: Option<CostOverrides>,
}

/// Values given on the command line (or through the environment); `None`
/// leaves the lower layer in place.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub enable_zicfiss: Option<bool>,
    pub enable_zicfilp: Option<bool>,
    pub lp_protect_ret: Option<bool>,
    pub timing: Option<bool>,
    pub cost_table_path: Option<PathBuf>,
    pub limit: Option<u64>,
    pub trace_path: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_cost_table(path: &Path) -> Result<CostTable, ConfigError> {
    CostTable::from_toml(&read(path)?).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

impl RunConfig {
    /// Parses config-file text. Relative paths inside it resolve against
    /// `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            msg: e.to_string(),
        })?;
        let mut cfg = RunConfig::default();
        let c = file.cfi;
        cfg.enable_zicfiss = c.enable_zicfiss.unwrap_or(cfg.enable_zicfiss);
        cfg.enable_zicfilp = c.enable_zicfilp.unwrap_or(cfg.enable_zicfilp);
        cfg.lp_protect_ret = c.lp_protect_ret.unwrap_or(cfg.lp_protect_ret);
        let r = file.run;
        cfg.timing = r.timing.unwrap_or(cfg.timing);
        cfg.limit = r.limit.unwrap_or(cfg.limit);
        cfg.trace_path = r.trace.map(|p| base_dir.join(p));
        let m = file.memory;
        let d = cfg.memory;
        cfg.memory = MemoryLayout {
            stack_top: m.stack_top.unwrap_or(d.stack_top),
            stack_size: m.stack_size.unwrap_or(d.stack_size),
            shadow_stack_base: m.shadow_stack_base.unwrap_or(d.shadow_stack_base),
            shadow_stack_size: m.shadow_stack_size.unwrap_or(d.shadow_stack_size),
            heap_base: m.heap_base.unwrap_or(d.heap_base),
            heap_size: m.heap_size.unwrap_or(d.heap_size),
        };
        if let Some(t) = &file.timing {
            cfg.cost_table = CostTable::with_overrides(t)?;
        }
        if let Some(p) = r.cost_table {
            let p = base_dir.join(p);
            cfg.cost_table = load_cost_table(&p)?;
            cfg.cost_table_path = Some(p);
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_toml(&text, dir).map_err(|e| match e {
            ConfigError::Parse { msg, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(v) = o.enable_zicfiss {
            self.enable_zicfiss = v;
        }
        if let Some(v) = o.enable_zicfilp {
            self.enable_zicfilp = v;
        }
        if let Some(v) = o.lp_protect_ret {
            self.lp_protect_ret = v;
        }
        if let Some(v) = o.timing {
            self.timing = v;
        }
        if let Some(v) = o.limit {
            self.limit = v;
        }
        if let Some(p) = &o.trace_path {
            self.trace_path = Some(p.clone());
        }
        if let Some(p) = &o.cost_table_path {
            self.cost_table = load_cost_table(p)?;
            self.cost_table_path = Some(p.clone());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.limit == 0 {
            return bad("instruction limit must be positive".into());
        }
        self.cost_table.validate()?;
        let m = &self.memory;
        let regions = [
            ("stack", m.stack_top.checked_sub(m.stack_size), m.stack_size),
            (
                "shadow stack",
                Some(m.shadow_stack_base),
                m.shadow_stack_size,
            ),
            ("heap", Some(m.heap_base), m.heap_size),
        ];
        let mut spans = Vec::new();
        for (name, base, size) in regions {
            let Some(base) = base else {
                return bad(format!("{name} extends below address 0"));
            };
            if name != "heap" && size == 0 {
                return bad(format!("{name} size must be positive"));
            }
            if base % PAGE_SIZE != 0 || size % PAGE_SIZE != 0 {
                return bad(format!("{name} base and size must be page-aligned"));
            }
            let Some(end) = base.checked_add(size) else {
                return bad(format!("{name} wraps the address space"));
            };
            if size > 0 {
                spans.push((name, base, end));
            }
        }
        for (i, a) in spans.iter().enumerate() {
            for b in &spans[i + 1..] {
                if a.1 < b.2 && b.1 < a.2 {
                    return bad(format!("{} and {} regions overlap", a.0, b.0));
                }
            }
        }
        Ok(())
    }
}
