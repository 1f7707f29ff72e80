//! Run configuration: one TOML file describing members, decoding and
//! cascade settings. Relative paths resolve against the file's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use gac_core::backends::{fit_ngram, Backend, DelayBackend, RemoteBackend, TableBackend};
use gac_core::calibration::DEFAULT_BINS;
use gac_core::harness::DEFAULT_WARMUP_TOKENS;
use gac_core::vocab::load_vocab_file;
use gac_core::{
    BelowPolicy, CascadeConfig, EnsembleConfig, Error, Member, Result, SamplingPolicy, Scheduling, TokenSurface,
};
use serde::Deserialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberKind {
    Table,
    Ngram,
    Remote,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberConfig {
    pub name: Option<String>,
    pub kind: MemberKind,
    /// Table JSON, corpus text, or `host:port` for remote members.
    pub source: String,
    /// Vocabulary file; required for table and ngram members.
    pub vocab: Option<PathBuf>,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub gate: bool,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default)]
    pub delay_ms: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BelowKind {
    #[default]
    Ensemble,
    Delegate,
}

/// A member given by position or by name.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MemberRef {
    Index(usize),
    Name(String),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub threshold: f64,
    #[serde(default)]
    pub below_policy: BelowKind,
    pub delegate: Option<MemberRef>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub members: Vec<MemberConfig>,
    #[serde(default)]
    pub sampling: SamplingPolicy,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Extra stop strings, matched against whole tokens.
    #[serde(default)]
    pub stop: Vec<String>,
    #[serde(default = "yes")]
    pub stop_on_special: bool,
    pub cascade: Option<CascadeSection>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scheduling: Scheduling,
    #[serde(default = "default_warmup")]
    pub warmup_tokens: usize,
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_order() -> usize {
    3
}

fn default_max_tokens() -> usize {
    EnsembleConfig::default().max_tokens
}

fn default_warmup() -> usize {
    DEFAULT_WARMUP_TOKENS
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::parse(&text, &path.display().to_string())?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: e.span().map_or(1, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Config("config lists no members".into()));
        }
        let gates = self.members.iter().filter(|m| m.gate).count();
        if gates > 1 {
            return Err(Error::Config(format!(
                "{gates} members are marked as gate; at most one allowed"
            )));
        }
        if let Some(c) = self.cascade.as_ref().filter(|c| c.enabled) {
            if gates != 1 {
                return Err(Error::Config(
                    "cascade needs exactly one member with gate = true".into(),
                ));
            }
            if c.below_policy == BelowKind::Delegate && c.delegate.is_none() {
                return Err(Error::Config(
                    "below_policy = \"delegate\" needs a delegate member".into(),
                ));
            }
        }
        for (i, m) in self.members.iter().enumerate() {
            if m.kind != MemberKind::Remote && m.vocab.is_none() {
                return Err(Error::Config(format!(
                    "member {} needs a vocab file",
                    self.member_name(i)
                )));
            }
        }
        Ok(())
    }

    pub fn member_name(&self, index: usize) -> String {
        let m = &self.members[index];
        m.name.clone().unwrap_or_else(|| match m.kind {
            MemberKind::Remote => m.source.clone(),
            _ => Path::new(&m.source)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("member{index}")),
        })
    }

    fn resolve(&self, path: impl AsRef<Path>) -> PathBuf {
        let path = path.as_ref();
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn build_backend(&self, index: usize) -> Result<Arc<dyn Backend>> {
        let m = &self.members[index];
        let name = self.member_name(index);
        let vocab = || -> Result<Arc<gac_core::Vocabulary>> {
            let path = m.vocab.as_ref().expect("checked in validate");
            Ok(Arc::new(load_vocab_file(self.resolve(path))?))
        };
        let backend: Arc<dyn Backend> = match m.kind {
            MemberKind::Table => Arc::new(TableBackend::load(name, vocab()?, self.resolve(&m.source))?),
            MemberKind::Ngram => {
                let corpus = std::fs::read_to_string(self.resolve(&m.source))?;
                Arc::new(fit_ngram(name, &corpus, m.order, m.alpha, vocab()?)?)
            }
            MemberKind::Remote => Arc::new(RemoteBackend::connect(name, &m.source)?),
        };
        Ok(if m.delay_ms > 0 {
            Arc::new(DelayBackend::new(backend, Duration::from_millis(m.delay_ms)))
        } else {
            backend
        })
    }

    pub fn build_members(&self) -> Result<Vec<Member>> {
        (0..self.members.len())
            .map(|i| {
                let m = &self.members[i];
                Ok(Member::new(self.build_backend(i)?).weight(m.weight).gate(m.gate))
            })
            .collect()
    }

    pub fn ensemble_config(&self, seed_override: Option<u64>) -> Result<EnsembleConfig> {
        let extra_stop = self
            .stop
            .iter()
            .map(|s| TokenSurface::try_from(s.as_str()))
            .collect::<Result<Vec<_>>>()?;
        let config = EnsembleConfig {
            sampling: self.sampling,
            max_tokens: self.max_tokens,
            extra_stop,
            stop_on_special: self.stop_on_special,
            seed: seed_override.unwrap_or(self.seed),
            scheduling: self.scheduling,
            ..EnsembleConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    fn index_of(&self, r: &MemberRef) -> Result<usize> {
        match r {
            MemberRef::Index(i) if *i < self.members.len() => Ok(*i),
            MemberRef::Index(i) => Err(Error::Config(format!("member index {i} out of range"))),
            MemberRef::Name(name) => (0..self.members.len())
                .find(|&i| self.member_name(i) == *name)
                .ok_or_else(|| Error::Config(format!("no member named `{name}`"))),
        }
    }

    pub fn cascade_config(&self) -> Result<Option<CascadeConfig>> {
        let Some(c) = self.cascade.as_ref().filter(|c| c.enabled) else {
            return Ok(None);
        };
        let gate = self.members.iter().position(|m| m.gate).expect("checked in validate");
        let below = match c.below_policy {
            BelowKind::Ensemble => BelowPolicy::Ensemble,
            BelowKind::Delegate => BelowPolicy::Delegate(self.index_of(c.delegate.as_ref().expect("checked"))?),
        };
        let cascade = CascadeConfig {
            gate,
            threshold: c.threshold,
            below,
        };
        cascade.validate(self.members.len())?;
        Ok(Some(cascade))
    }

    pub fn member_index(&self, r: &str) -> Result<usize> {
        match r.parse::<usize>() {
            Ok(i) => self.index_of(&MemberRef::Index(i)),
            Err(_) => self.index_of(&MemberRef::Name(r.to_string())),
        }
    }

    /// Every effective setting, defaults included, on one line.
    pub fn describe(&self, seed_override: Option<u64>) -> String {
        let sampling = match self.sampling {
            SamplingPolicy::Greedy => "greedy".to_string(),
            SamplingPolicy::Temperature(t) => format!("temperature({t})"),
            SamplingPolicy::TopP(p) => format!("top_p({p})"),
        };
        let weights: Vec<f64> = self.members.iter().map(|m| m.weight).collect();
        let equal = weights.windows(2).all(|w| w[0] == w[1]);
        let mut out = format!(
            "settings: sampling={sampling} max_tokens={} seed={} scheduling={:?} weights={weights:?}{} \
             stop_on_special={} extra_stop={:?} ece_bins={} warmup_tokens={}",
            self.max_tokens,
            seed_override.unwrap_or(self.seed),
            self.scheduling,
            if equal { " (equal)" } else { "" },
            self.stop_on_special,
            self.stop,
            self.ece_bins,
            self.warmup_tokens,
        );
        match self.cascade.as_ref().filter(|c| c.enabled) {
            Some(c) => {
                let _ = write!(out, " cascade=on threshold={} below={:?}", c.threshold, c.below_policy);
            }
            None => out.push_str(" cascade=off"),
        }
        out.to_lowercase()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[members]]
kind = "table"
source = "a.json"
vocab = "a.vocab"
"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse(MINIMAL, "c.toml").unwrap();
        assert_eq!(c.max_tokens, 256);
        assert_eq!(c.sampling, SamplingPolicy::Greedy);
        assert_eq!(c.members[0].weight, 1.0);
        assert_eq!(c.warmup_tokens, 1024);
        assert_eq!(c.ece_bins, 10);
        assert_eq!(c.member_name(0), "a");
        assert!(c.cascade_config().unwrap().is_none());
        let line = c.describe(Some(9));
        assert!(line.contains("sampling=greedy") && line.contains("seed=9") && line.contains("cascade=off"));
    }

    #[test]
    fn sampling_and_cascade_sections() {
        let text = r#"
sampling = { policy = "top_p", value = 0.9 }
[[members]]
name = "g"
kind = "table"
source = "a.json"
vocab = "a.vocab"
gate = true
[[members]]
name = "t"
kind = "remote"
source = "127.0.0.1:9"
[cascade]
threshold = 0.4
below_policy = "delegate"
delegate = "t"
"#;
        let c = RunConfig::parse(text, "c.toml").unwrap();
        assert_eq!(c.sampling, SamplingPolicy::TopP(0.9));
        let cascade = c.cascade_config().unwrap().unwrap();
        assert_eq!(cascade.gate, 0);
        assert_eq!(cascade.below, BelowPolicy::Delegate(1));
        assert_eq!(c.member_index("1").unwrap(), 1);
    }

    #[test]
    fn greedy_table_form_parses() {
        let text = format!("sampling = {{ policy = \"greedy\" }}\nscheduling = \"sequential\"\n{MINIMAL}");
        let c = RunConfig::parse(&text, "c.toml").unwrap();
        assert_eq!(c.sampling, SamplingPolicy::Greedy);
        assert_eq!(c.scheduling, Scheduling::Sequential);
    }

    #[test]
    fn cascade_without_gate_is_rejected() {
        let text = format!("{MINIMAL}\n[cascade]\nthreshold = 0.5\n");
        assert!(matches!(RunConfig::parse(&text, "c.toml"), Err(Error::Config(_))));
    }

    #[test]
    fn syntax_errors_carry_the_line() {
        let text = "max_tokens = 4\nmembers = [\n  { kind = \"table\", bogus = 1 },\n]\n";
        match RunConfig::parse(text, "c.toml") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_member_needs_vocab() {
        let text = "[[members]]\nkind = \"table\"\nsource = \"a.json\"\n";
        assert!(matches!(RunConfig::parse(text, "c.toml"), Err(Error::Config(_))));
    }
}
