//! Run configuration: one flat struct shared by every subcommand,
//! loadable from a key=value file with flag overrides on top.
//!
//! File format: UTF-8 text, one `key = value` pair per line, `#`
//! starts a comment, blank lines ignored. Keys match the struct field
//! names. Example:
//!
//! ```text
//! # index protocol at the smallest size
//! subcommand = protocol
//! n = 2
//! d = 400
//! epsilon = 0.1
//! trials = 200
//! master_seed = 1
//! format = json
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::protocol::NoiseKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Forward,
    Protocol,
    JlCheck,
    Bench,
}

impl Subcommand {
    pub fn parse(s: &str) -> Result<Subcommand> {
        match s {
            "forward" => Ok(Subcommand::Forward),
            "protocol" => Ok(Subcommand::Protocol),
            "jl-check" => Ok(Subcommand::JlCheck),
            "bench" => Ok(Subcommand::Bench),
            other => Err(Error::Config(format!(
                "unknown subcommand {other:?}; expected forward, protocol, jl-check, or bench"
            ))),
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Subcommand::Forward => "forward",
            Subcommand::Protocol => "protocol",
            Subcommand::JlCheck => "jl-check",
            Subcommand::Bench => "bench",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<OutputFormat> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::Config(format!(
                "unknown format {other:?}; expected json or csv"
            ))),
        }
    }
}

/// Everything a run needs. Fields beyond the core experiment knobs
/// (`noise`, `compressors`, `trial_log`, `dump_dir`) default to off.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    /// Final map side; must be a power of two, at least 2.
    pub n: usize,
    /// Key/value width.
    pub d: usize,
    /// Gram slack, in (0, 0.5).
    pub epsilon: f64,
    /// Relative noise magnitude, in [0, 1); 0 selects exact mode.
    pub eta: f64,
    /// Trials (protocol, bench) or seeds (jl-check); at least 1.
    pub trials: usize,
    pub master_seed: u64,
    /// Report destination; stdout when absent.
    pub output_path: Option<PathBuf>,
    pub format: OutputFormat,
    /// Noise shape for approximate mode; `uniform` when unset.
    pub noise: Option<NoiseKind>,
    /// Bench schemes; empty selects the default sweep.
    pub compressors: Vec<String>,
    /// Per-trial JSON-lines log (protocol subcommand).
    pub trial_log: Option<PathBuf>,
    /// Directory for forward-pass artifacts (token maps, append log).
    pub dump_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Per-subcommand defaults sized for a quick desk run.
    pub fn defaults_for(subcommand: Subcommand) -> RunConfig {
        let (n, d, trials) = match subcommand {
            Subcommand::Forward => (4, 8, 1),
            Subcommand::Protocol => (2, 400, 200),
            Subcommand::JlCheck => (2, 400, 100),
            Subcommand::Bench => (2, 400, 200),
        };
        RunConfig {
            subcommand,
            n,
            d,
            epsilon: 0.1,
            eta: 0.0,
            trials,
            master_seed: 1,
            output_path: None,
            format: OutputFormat::Json,
            noise: None,
            compressors: Vec::new(),
            trial_log: None,
            dump_dir: None,
        }
    }

    /// Loads a key=value file over these defaults.
    pub fn load_file(path: &Path, defaults: RunConfig) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = defaults;
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key = value, got {raw:?}",
                    path.display(),
                    idx + 1
                ))
            })?;
            config
                .apply_kv(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        }
        Ok(config)
    }

    /// Sets one field from its config-file spelling.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "subcommand" => self.subcommand = Subcommand::parse(value)?,
            "n" => self.n = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "eta" => self.eta = num(key, value)?,
            "trials" => self.trials = num(key, value)?,
            "master_seed" => self.master_seed = num(key, value)?,
            "output_path" => self.output_path = Some(PathBuf::from(value)),
            "format" => self.format = OutputFormat::parse(value)?,
            "noise" => self.noise = Some(parse_noise(value)?),
            "compressors" => {
                self.compressors = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect();
            }
            "trial_log" => self.trial_log = Some(PathBuf::from(value)),
            "dump_dir" => self.dump_dir = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Checks the documented invariants; every failure is a config
    /// error (exit code 2).
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || !self.n.is_power_of_two() {
            return Err(Error::Config(format!(
                "n must be a power of two at least 2, got {}",
                self.n
            )));
        }
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 0.5), got {}",
                self.epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::Config(format!(
                "eta must lie in [0, 1), got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

pub fn parse_noise(s: &str) -> Result<NoiseKind> {
    match s {
        "uniform" => Ok(NoiseKind::Uniform),
        "low-extreme" => Ok(NoiseKind::LowExtreme),
        "high-extreme" => Ok(NoiseKind::HighExtreme),
        other => Err(Error::Config(format!(
            "unknown noise kind {other:?}; expected uniform, low-extreme, or high-extreme"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn defaults_validate_for_every_subcommand() {
        for sub in [
            Subcommand::Forward,
            Subcommand::Protocol,
            Subcommand::JlCheck,
            Subcommand::Bench,
        ] {
            RunConfig::defaults_for(sub).validate().unwrap();
        }
    }

    #[test]
    fn file_parsing_handles_comments_blanks_and_overrides() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "# manifest\n\nsubcommand = protocol\nn = 4   # inline comment\nd=32\n\
             epsilon = 0.2\ntrials = 7\nmaster_seed = 99\nformat = csv\n\
             compressors = identity, evict:0\nnoise = uniform"
        )
        .unwrap();
        let cfg =
            RunConfig::load_file(f.path(), RunConfig::defaults_for(Subcommand::Forward)).unwrap();
        assert_eq!(cfg.subcommand, Subcommand::Protocol);
        assert_eq!(cfg.n, 4);
        assert_eq!(cfg.d, 32);
        assert_eq!(cfg.epsilon, 0.2);
        assert_eq!(cfg.trials, 7);
        assert_eq!(cfg.master_seed, 99);
        assert_eq!(cfg.format, OutputFormat::Csv);
        assert_eq!(cfg.compressors, vec!["identity", "evict:0"]);
        assert_eq!(cfg.noise, Some(NoiseKind::Uniform));
        cfg.validate().unwrap();
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "n = 2\nwhat is this").unwrap();
        let err = RunConfig::load_file(f.path(), RunConfig::defaults_for(Subcommand::Forward))
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut cfg = RunConfig::defaults_for(Subcommand::Protocol);
        for (k, v) in [("frobnicate", "1"), ("n", "four"), ("format", "xml"), ("noise", "spiky")] {
            let err = cfg.apply_kv(k, v).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{k}={v}");
        }
    }

    #[test]
    fn every_invariant_violation_exits_two() {
        let base = RunConfig::defaults_for(Subcommand::Protocol);
        let mut cases: Vec<RunConfig> = Vec::new();
        for bad_n in [0usize, 1, 3, 12] {
            let mut c = base.clone();
            c.n = bad_n;
            cases.push(c);
        }
        let mut c = base.clone();
        c.d = 0;
        cases.push(c);
        let mut c = base.clone();
        c.trials = 0;
        cases.push(c);
        for bad_eps in [0.0, 0.5, -0.1, 0.7] {
            let mut c = base.clone();
            c.epsilon = bad_eps;
            cases.push(c);
        }
        for bad_eta in [-0.1, 1.0, 1.5] {
            let mut c = base.clone();
            c.eta = bad_eta;
            cases.push(c);
        }
        for case in cases {
            let err = case.validate().unwrap_err();
            assert_eq!(err.exit_code(), 2, "{case:?}");
        }
    }

    #[test]
    fn subcommand_and_format_round_trip_their_spellings() {
        for (s, sub) in [
            ("forward", Subcommand::Forward),
            ("protocol", Subcommand::Protocol),
            ("jl-check", Subcommand::JlCheck),
            ("bench", Subcommand::Bench),
        ] {
            assert_eq!(Subcommand::parse(s).unwrap(), sub);
            assert_eq!(sub.to_string(), s);
        }
        assert!(Subcommand::parse("FORWARD").is_err());
        assert_eq!(OutputFormat::parse("json").unwrap(), OutputFormat::Json);
        assert_eq!(OutputFormat::parse("csv").unwrap(), OutputFormat::Csv);
    }
}
