use std::f64::consts::E;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use flowcz::cubes::{AbelianDyadic, NetConfig, NetCubes};
use flowcz::cylinder::{AdmissibilityParams, FlowSpace};
use flowcz::family::FamilyConfig;
use flowcz::measure::{Density, FlowMeasure};
use flowcz::{GroupSpec, VerticalField};
use serde::{Deserialize, Serialize};

/// Flags shared by all subcommands; they override the config file.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub window_radius: Option<f64>,
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
}

/// Settings for net cubes on ℍ¹.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSettings {
    pub window: f64,
    pub finest: i32,
    pub oversampling: f64,
    pub samples: usize,
}

impl Default for NetSettings {
    fn default() -> Self {
        let d = NetConfig::default();
        NetSettings {
            window: d.window,
            finest: d.finest,
            oversampling: d.oversampling,
            samples: d.samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub group: GroupSpec,
    pub beta: Option<Vec<f64>>,
    pub measure: Density,
    pub delta: f64,
    pub window: Option<f64>,
    pub gamma: f64,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub samples: usize,
    pub out: Option<PathBuf>,
    pub family: FamilyConfig,
    pub net: NetSettings,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            group: GroupSpec::Abelian { m: 1 },
            beta: None,
            measure: Density::Uniform,
            delta: 0.5,
            window: None,
            gamma: 5.0,
            lambda: None,
            seed: 1,
            samples: 2000,
            out: None,
            family: FamilyConfig::default(),
            net: NetSettings::default(),
        }
    }
}

/// The configuration after defaults, the config file and flags are applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub group: GroupSpec,
    pub beta: Vec<f64>,
    pub measure: Density,
    pub delta: f64,
    pub window: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub seed: u64,
    pub samples: usize,
    pub out: Option<PathBuf>,
    pub family: FamilyConfig,
    pub net: NetSettings,
}

impl ExperimentConfig {
    pub fn resolve(o: &Overrides) -> Result<Self, String> {
        let file = match &o.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
                serde_json::from_str::<FileConfig>(&text).map_err(|e| format!("invalid config {}: {e}", p.display()))?
            }
            None => FileConfig::default(),
        };
        let group = file.group;
        let delta = o.delta.unwrap_or(file.delta);
        let beta = file.beta.unwrap_or_else(|| match group {
            GroupSpec::Abelian { m } => vec![0.5; m],
            GroupSpec::Heisenberg => vec![1.0, 0.0],
        });
        let window = o.window_radius.or(file.window).unwrap_or(match group {
            GroupSpec::Abelian { .. } => 64.0,
            GroupSpec::Heisenberg => file.net.window,
        });
        let cfg = ExperimentConfig {
            group,
            beta,
            measure: file.measure,
            delta,
            window,
            gamma: o.gamma.unwrap_or(file.gamma),
            // The default keeps λδ = 1.05·e³ for every δ.
            lambda: o.lambda.or(file.lambda).unwrap_or(1.05 * E.powi(3) / delta),
            seed: o.seed.unwrap_or(file.seed),
            samples: o.samples.unwrap_or(file.samples),
            out: o.out.clone().or(file.out),
            family: file.family,
            net: file.net,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if let GroupSpec::Abelian { m } = self.group {
            if m == 0 {
                return Err("abelian dimension must be positive".into());
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(format!("δ must lie in (0,1), got {}", self.delta));
        }
        if matches!(self.group, GroupSpec::Abelian { .. }) {
            self.grid_base()?;
        }
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err(format!("window radius must be positive, got {}", self.window));
        }
        if self.samples == 0 {
            return Err("samples must be positive".into());
        }
        if !(self.family.r0 > E) {
            return Err(format!("r₀ must exceed e, got {}", self.family.r0));
        }
        self.admissibility().validate(self.delta).map_err(|e| e.to_string())?;
        self.measure().map_err(|e| e.to_string())?;
        Ok(())
    }

    fn grid_base(&self) -> Result<i64, String> {
        let b = (1.0 / self.delta).round();
        if b < 2.0 || (1.0 / self.delta - b).abs() > 1e-9 {
            return Err(format!("grid cubes need δ = 1/b for an integer b ≥ 2, got {}", self.delta));
        }
        Ok(b as i64)
    }

    pub fn admissibility(&self) -> AdmissibilityParams {
        AdmissibilityParams {
            gamma: self.gamma,
            lambda: self.lambda,
        }
    }

    pub fn field(&self) -> flowcz::Result<VerticalField> {
        let z = VerticalField::new(&self.beta);
        self.group.check_field(&z)?;
        Ok(z)
    }

    pub fn measure(&self) -> flowcz::Result<FlowMeasure> {
        FlowMeasure::new(self.group, self.field()?, self.measure)
    }

    fn net_config(&self, window: f64) -> NetConfig {
        NetConfig {
            delta: self.delta,
            window,
            finest: self.net.finest,
            oversampling: self.net.oversampling,
            samples: self.net.samples,
            seed: self.seed,
        }
    }

    pub fn space(&self) -> flowcz::Result<FlowSpace> {
        let mu = self.measure()?;
        let cubes: Arc<dyn flowcz::cubes::CubeSystem> = match self.group {
            GroupSpec::Abelian { .. } => Arc::new(AbelianDyadic::new(
                mu,
                self.grid_base().map_err(flowcz::Error::InvalidParameter)?,
                self.window,
            )?),
            GroupSpec::Heisenberg => Arc::new(NetCubes::build(mu, self.net_config(self.window))?),
        };
        FlowSpace::new(cubes, self.admissibility())
    }

    /// Net cubes on ℍ¹ with `Z = X_α + H_{1,0}`, whatever the configured group.
    pub fn heisenberg_net(&self) -> flowcz::Result<NetCubes> {
        let mu = FlowMeasure::haar(GroupSpec::Heisenberg, VerticalField::new(&[1.0, 0.0]))?;
        let window = match self.group {
            GroupSpec::Heisenberg => self.window,
            GroupSpec::Abelian { .. } => self.net.window,
        };
        NetCubes::build(mu, self.net_config(window))
    }

    /// Empirical `D(µ_N, C*/c)` over the window.
    pub fn doubling(&self, fs: &FlowSpace) -> flowcz::Result<f64> {
        Ok(fs
            .measure()
            .estimate_doubling(fs.c4_ratio(), self.window, 400, self.seed)?
            .constant)
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| Path::new(default).to_path_buf())
    }
}
