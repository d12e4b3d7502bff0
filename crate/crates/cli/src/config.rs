//! Run configuration: a single JSON document, overridable from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use atroreg::dynamics::RigidCosts;
use atroreg::{
    ALParams, AttachmentSpec, ConstraintMode, ConstraintSpec, InnerParams, KernelFamily, KernelSpec,
};
use serde::{Deserialize, Serialize};

const MAX_TIMESTEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub sigma: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Gaussian,
            sigma: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttachmentConfig {
    pub family: KernelFamily,
    pub sigma_w: f64,
    pub weight: f64,
}

impl Default for AttachmentConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Gaussian,
            sigma_w: 0.5,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintConfig {
    pub mode: ConstraintMode,
    pub epsilon: f64,
}

/// Only rotations and translations are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RigidGroup {
    #[default]
    Rigid,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigidConfig {
    pub enabled: bool,
    pub group: RigidGroup,
    /// Translation cost.
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlConfig {
    pub mu0: f64,
    pub rho: f64,
    pub delta0: Option<f64>,
    pub delta_decay: f64,
    pub max_outer: usize,
    pub violation_tol: Option<f64>,
}

impl Default for AlConfig {
    fn default() -> Self {
        let p = ALParams::default();
        Self {
            mu0: p.mu0,
            rho: p.rho,
            delta0: p.delta0,
            delta_decay: p.delta_decay,
            max_outer: p.max_outer,
            violation_tol: p.violation_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub template_path: PathBuf,
    pub target_path: PathBuf,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub attachment: AttachmentConfig,
    #[serde(default)]
    pub constraint: ConstraintConfig,
    #[serde(default = "default_timesteps")]
    pub timesteps: usize,
    #[serde(default)]
    pub rigid: RigidConfig,
    #[serde(default)]
    pub al: AlConfig,
    #[serde(default)]
    pub inner: InnerParams,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_timesteps() -> usize {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("atroreg-out")
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Template mesh (OFF, OBJ or VTK)
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Target mesh (OFF, OBJ or VTK)
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Deformation kernel family
    #[arg(long, value_parser = parse_family)]
    pub kernel: Option<KernelFamily>,
    /// Deformation kernel width
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Attachment kernel family
    #[arg(long, value_parser = parse_family)]
    pub attachment_kernel: Option<KernelFamily>,
    /// Attachment kernel width
    #[arg(long)]
    pub sigma_w: Option<f64>,
    /// Attachment weight
    #[arg(long)]
    pub weight: Option<f64>,
    /// none, pointwise_atrophy or global_volume
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ConstraintMode>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub timesteps: Option<usize>,
    /// Enable rigid controls
    #[arg(long)]
    pub rigid: bool,
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub violation_tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub g_tol: Option<f64>,
    #[arg(long)]
    pub memory: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_family(s: &str) -> Result<KernelFamily, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown kernel `{s}`"))
}

fn parse_mode(s: &str) -> Result<ConstraintMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown constraint mode `{s}` (none, pointwise_atrophy, global_volume)"))
}

fn absolute(base: &Path, p: &Path) -> Result<PathBuf> {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).with_context(|| format!("cannot resolve {}", joined.display()))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Loads `path` (if any), applies `overrides`, makes paths absolute and validates.
    ///
    /// Paths in the file are relative to the file; paths on the command line are
    /// relative to the working directory.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let cwd = std::env::current_dir()?;
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                let mut config = Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
                let dir = absolute(&cwd, path.parent().unwrap_or(Path::new("")))?;
                config.template_path = absolute(&dir, &config.template_path)?;
                config.target_path = absolute(&dir, &config.target_path)?;
                config.output_dir = absolute(&dir, &config.output_dir)?;
                config
            }
            None => {
                let (Some(template), Some(target)) = (&overrides.template, &overrides.target) else {
                    bail!("either a config file or both --template and --target are required");
                };
                Self {
                    template_path: template.clone(),
                    target_path: target.clone(),
                    kernel: KernelConfig::default(),
                    attachment: AttachmentConfig::default(),
                    constraint: ConstraintConfig::default(),
                    timesteps: default_timesteps(),
                    rigid: RigidConfig::default(),
                    al: AlConfig::default(),
                    inner: InnerParams::default(),
                    output_dir: default_output_dir(),
                    seed: 0,
                }
            }
        };
        config.apply(overrides, &cwd)?;
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, o: &Overrides, cwd: &Path) -> Result<()> {
        if let Some(p) = &o.template {
            self.template_path = p.clone();
        }
        if let Some(p) = &o.target {
            self.target_path = p.clone();
        }
        if let Some(p) = &o.output_dir {
            self.output_dir = p.clone();
        }
        self.template_path = absolute(cwd, &self.template_path)?;
        self.target_path = absolute(cwd, &self.target_path)?;
        self.output_dir = absolute(cwd, &self.output_dir)?;
        macro_rules! set {
            ($($src:ident => $($dst:ident).+;)*) => {
                $(if let Some(v) = o.$src { self.$($dst).+ = v; })*
            };
        }
        set! {
            kernel => kernel.family;
            sigma => kernel.sigma;
            attachment_kernel => attachment.family;
            sigma_w => attachment.sigma_w;
            weight => attachment.weight;
            mode => constraint.mode;
            epsilon => constraint.epsilon;
            timesteps => timesteps;
            mu0 => al.mu0;
            rho => al.rho;
            max_outer => al.max_outer;
            max_iters => inner.max_iters;
            g_tol => inner.g_tol;
            memory => inner.memory;
            seed => seed;
        }
        if o.violation_tol.is_some() {
            self.al.violation_tol = o.violation_tol;
        }
        if o.rigid {
            self.rigid.enabled = true;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel_spec()?;
        self.attachment_spec()?;
        self.constraint_spec()?;
        if !(1..=MAX_TIMESTEPS).contains(&self.timesteps) {
            bail!("timesteps must lie in 1..={MAX_TIMESTEPS}, got {}", self.timesteps);
        }
        self.rigid_costs()?;
        self.al_params()?;
        Ok(())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel.family, self.kernel.sigma).context("kernel")
    }

    pub fn attachment_spec(&self) -> Result<AttachmentSpec> {
        let k = KernelSpec::new(self.attachment.family, self.attachment.sigma_w).context("attachment")?;
        AttachmentSpec::current(k, self.attachment.weight).context("attachment")
    }

    pub fn constraint_spec(&self) -> Result<ConstraintSpec> {
        ConstraintSpec::new(self.constraint.mode, self.constraint.epsilon).context("constraint")
    }

    pub fn rigid_costs(&self) -> Result<Option<RigidCosts>> {
        if !self.rigid.enabled {
            return Ok(None);
        }
        let r = &self.rigid;
        Ok(Some(RigidCosts::new(r.c0, [r.c1, r.c2, r.c3]).context("rigid")?))
    }

    pub fn al_params(&self) -> Result<ALParams> {
        let a = &self.al;
        let p = ALParams {
            mu0: a.mu0,
            rho: a.rho,
            delta0: a.delta0,
            delta_decay: a.delta_decay,
            max_outer: a.max_outer,
            violation_tol: a.violation_tol,
            inner: self.inner,
        };
        p.validate().context("optimizer")?;
        Ok(p)
    }
}
