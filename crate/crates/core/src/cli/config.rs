//! Layered `key = value` configuration: built-in defaults, then an INI-style
//! file, then `FLOWRNN_*` environment variables, then command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::group_flow::{FlowGenerator, FlowKind, FlowSet};

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn k(key: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, default, help }
}

/// Every accepted key, as `section.name`. Keys outside a section belong to
/// `general`.
pub const KEYS: &[KeySpec] = &[
    k("general.seed", "0", "global seed"),
    k("general.out", "out", "output directory"),
    k("general.threads", "1", "worker threads (1 = bit-reproducible reference)"),
    k("data.dir", "data", "dataset directory"),
    k("data.grid", "16", "grid side length"),
    k("data.steps", "12", "frames per sequence"),
    k("data.v_train", "T1", "training flows (T<N>, R<N>, none, or a `;`-separated list)"),
    k("data.v_val", "T1", "validation flows"),
    k("data.v_test", "T1", "test flows"),
    k("data.sprites_per_sequence", "2", "sprites per sequence"),
    k("data.train_count", "256", "training sequences"),
    k("data.val_count", "32", "validation sequences"),
    k("data.test_count", "64", "test sequences"),
    k("data.sprite_count", "32", "procedural sprites in the bank"),
    k("data.sprite_size", "5", "procedural sprite side length"),
    k("data.sprite_kind", "mixed", "gaussian | glyph | mixed"),
    k("data.images", "", "optional FSIG file of grayscale images used instead of procedural sprites"),
    k("model.family", "fernn", "grnn | fernn | fernn-nontrivial"),
    k("model.group", "translation", "translation | p4"),
    k("model.v", "T1", "generator set of a FERNN"),
    k("model.hidden_channels", "8", "hidden channels per group element"),
    k("model.kernel_size", "3", "spatial size of U and W"),
    k("model.decoder_hidden", "32", "decoder hidden widths (comma-separated)"),
    k("model.decoder_kernel_size", "5", "decoder kernel size"),
    k("model.nonlinearity", "relu", "relu | tanh | identity"),
    k("model.full_profile", "false", "learn one recurrent weight per generator difference"),
    k("train.lr", "2e-3", "learning rate"),
    k("train.steps", "1000", "optimizer steps"),
    k("train.batch", "8", "sequences per step"),
    k("train.grad_clip", "1.0", "global gradient-norm bound (0 disables)"),
    k("train.optimizer", "adam", "adam | sgd"),
    k("train.warmup", "6", "context frames before the first prediction"),
    k("train.horizon", "6", "predicted frames"),
    k("train.eval_every", "100", "validation period in steps (0 disables)"),
    k("train.checkpoint", "", "checkpoint path (default <out>/model.fmdl)"),
    k("eval.checkpoint", "", "checkpoint to evaluate (default <out>/model.fmdl)"),
    k("eval.split", "test", "train | val | test"),
    k("eval.horizon", "24", "autoregressive horizon of the length curve"),
    k("rollout.checkpoint", "", "checkpoint (default <out>/model.fmdl)"),
    k("rollout.split", "test", "split to draw the sequence from"),
    k("rollout.index", "0", "sequence index within the split"),
    k("rollout.horizon", "12", "predicted frames"),
    k("rollout.mode", "autoregressive", "autoregressive | teacher-forced"),
    k("check.family", "fernn", "grnn | fernn | fernn-nontrivial"),
    k("check.property", "flow-equivariance", "flow-equivariance | flow-invariance | static | gradient"),
    k("check.kernels", "random", "random | constant | framewise"),
    k("check.group", "translation", "translation | p4"),
    k("check.v", "T1", "generator set"),
    k("check.grid", "8", "grid side length"),
    k("check.steps", "8", "sequence length"),
    k("check.trials", "50", "random trials"),
    k("check.hidden_channels", "2", "hidden channels"),
    k("check.kernel_size", "3", "kernel size (constant kernels always span the grid)"),
    k("check.nonlinearity", "relu", "relu | tanh | identity"),
    k("check.tolerance", "1e-12", "residual tolerance of exact claims"),
    k("check.grad_tolerance", "1e-5", "relative-error tolerance of gradient checks"),
    k("check.grad_taps", "200", "sampled taps per gradient check"),
    k("check.expect_failure", "false", "succeed only if the tolerance is violated"),
    k("counterexample.grid", "9", "grid side length"),
    k("counterexample.steps", "6", "sequence length"),
    k("counterexample.nu", "1,0", "bump velocity"),
];

pub fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| s.key == key)
}

fn sections() -> Vec<&'static str> {
    let mut s: Vec<&str> = KEYS.iter().map(|k| k.key.split_once('.').expect("dotted").0).collect();
    s.dedup();
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, (String, Source)>,
}

fn unknown(key: &str, origin: &str) -> Error {
    Error::InvalidArgument(format!("unknown configuration key `{key}` ({origin})"))
}

/// Parse INI-style text into `(section.key, value)` pairs.
pub fn parse_ini(text: &str) -> Result<Vec<(String, String)>> {
    let mut section = "general".to_string();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Format(format!("line {}: unterminated section header", n + 1)))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key = value", n + 1)))?;
        let v = v.split_once('#').map_or(v, |(v, _)| v);
        out.push((format!("{section}.{}", k.trim()), v.trim().to_string()));
    }
    Ok(out)
}

/// `FLOWRNN_TRAIN_GRAD_CLIP` → `train.grad_clip`; `FLOWRNN_SEED` → `general.seed`.
pub fn env_key(var: &str) -> Option<String> {
    let rest = var.strip_prefix("FLOWRNN_")?.to_ascii_lowercase();
    for s in sections() {
        if let Some(k) = rest.strip_prefix(&format!("{s}_")) {
            let key = format!("{s}.{k}");
            if spec(&key).is_some() {
                return Some(key);
            }
        }
    }
    Some(format!("general.{rest}"))
}

impl Config {
    pub fn defaults() -> Self {
        Config { values: KEYS.iter().map(|s| (s.key.to_string(), (s.default.to_string(), Source::Default))).collect() }
    }

    fn set(&mut self, key: &str, value: &str, source: Source, origin: &str) -> Result<()> {
        let key = if key.contains('.') { key.to_string() } else { format!("general.{key}") };
        match self.values.get_mut(&key) {
            Some(slot) => {
                *slot = (value.to_string(), source);
                Ok(())
            }
            None => Err(unknown(&key, origin)),
        }
    }

    /// Apply a config file, `FLOWRNN_*` variables and `key=value` overrides,
    /// in increasing precedence.
    pub fn load(
        file_text: Option<&str>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut c = Self::defaults();
        if let Some(text) = file_text {
            for (k, v) in parse_ini(text)? {
                c.set(&k, &v, Source::File, "config file")?;
            }
        }
        let mut env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with("FLOWRNN_")).collect();
        env.sort();
        for (var, v) in env {
            let key = env_key(&var).expect("prefixed");
            c.set(&key, &v, Source::Env, &var)?;
        }
        for (k, v) in overrides {
            c.set(k, v, Source::Flag, "command line")?;
        }
        Ok(c)
    }

    pub fn str(&self, key: &str) -> &str {
        &self.values.get(key).unwrap_or_else(|| panic!("undeclared key {key}")).0
    }

    pub fn source(&self, key: &str) -> Source {
        self.values[key].1
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.str(key).parse::<T>().map_err(|e| Error::InvalidArgument(format!("{key} = `{}`: {e}", self.str(key))))
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let s = self.str(key);
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|p| p.trim().parse().map_err(|e| Error::InvalidArgument(format!("{key} = `{s}`: {e}"))))
            .collect()
    }

    pub fn flow_set(&self, key: &str) -> Result<FlowSet> {
        parse_flow_set(self.str(key)).map_err(|e| Error::InvalidArgument(format!("{key}: {e}")))
    }

    pub fn generator(&self, key: &str) -> Result<FlowGenerator> {
        parse_generator(self.str(key)).map_err(|e| Error::InvalidArgument(format!("{key}: {e}")))
    }

    /// Resolved configuration as INI text, one section per block, with the
    /// origin of each non-default value noted.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (key, (value, source)) in &self.values {
            let (section, name) = key.split_once('.').expect("dotted");
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let note = match source {
                Source::Default => "",
                Source::File => "  # file",
                Source::Env => "  # env",
                Source::Flag => "  # flag",
            };
            let _ = writeln!(out, "{name} = {value}{note}");
        }
        out
    }
}

/// `vx,vy` or `wN`.
pub fn parse_generator(s: &str) -> Result<FlowGenerator> {
    let t = s.trim().trim_start_matches('(').trim_end_matches(')');
    if let Some(w) = t.strip_prefix('w') {
        let w = w.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad rotation generator `{s}`")))?;
        return Ok(FlowGenerator::rotation(w));
    }
    let parts: Vec<&str> = t.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(vx), Ok(vy)) => Ok(FlowGenerator::translation(vx, vy)),
            _ => Err(Error::InvalidArgument(format!("bad velocity `{s}`"))),
        },
        _ => Err(Error::InvalidArgument(format!("bad generator `{s}`"))),
    }
}

/// `T<N>`, `R<N>`, `none`, or generators separated by `;`.
pub fn parse_flow_set(s: &str) -> Result<FlowSet> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("none") {
        return Ok(FlowSet::trivial());
    }
    let standard = |rest: &str| rest.parse::<usize>().ok();
    if let Some(n) = t.strip_prefix('T').and_then(standard) {
        return Ok(FlowSet::translation(n));
    }
    if let Some(n) = t.strip_prefix('R').and_then(standard) {
        return Ok(FlowSet::rotation(n));
    }
    let gens = t.split(';').map(parse_generator).collect::<Result<Vec<_>>>()?;
    let kind = if gens.iter().any(|g| g.is_rotation()) { FlowKind::Rotation } else { FlowKind::Translation };
    FlowSet::from_generators(kind, gens)
}

/// Help text listing every key and its default.
pub fn key_help() -> String {
    let mut out = String::from("Configuration keys (file `[section]` + `key = value`, env FLOWRNN_<SECTION>_<KEY>, or --set section.key=value):\n");
    for s in KEYS {
        let shown = if s.default.is_empty() { "\"\"" } else { s.default };
        let _ = writeln!(out, "  {:<32} {:<18} {}", s.key, shown, s.help);
    }
    out
}
