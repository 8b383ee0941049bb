//! The full matcher: shared encoder followed by the DSG sub-net, plus the
//! named-tensor view used by the optimizer, the gradient audit and the
//! checkpoint format.
//!
//! Checkpoints are UTF-8 text:
//!
//! ```text
//! PCKPT v1 slope=<alpha>
//! tensor <name> <dim_1> [<dim_2>]
//! <values...>
//! ```
//!
//! Values use the shortest decimal form that parses back to the same bits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::dataset::MediaSet;
use crate::dsg::{predict_indicator, reconstruct, DsgParams, PrototypeAssignment, Reconstruction};
use crate::encoder::{Dense, Encoder, EncoderTrace, Init, DEFAULT_SLOPE};
use crate::error::{Error, Result};
use crate::matching::{prototype_pool, PrototypeSummary};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_in: usize,
    /// Hidden layer widths of the encoder; empty means a single linear layer.
    pub hidden: Vec<usize>,
    pub d: usize,
    pub k: usize,
    pub slope: f64,
    pub encoder_init: Init,
    pub w_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_in: 32,
            hidden: vec![32],
            d: 16,
            k: 8,
            slope: DEFAULT_SLOPE,
            encoder_init: Init::Normal(0.001),
            w_std: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub dsg: DsgParams,
}

/// Everything the forward pass computes for one set; kept for backward.
#[derive(Debug, Clone)]
pub struct SetEmbedding {
    pub trace: EncoderTrace,
    pub assignment: PrototypeAssignment,
    pub reconstruction: Reconstruction,
}

impl SetEmbedding {
    pub fn features(&self) -> &Array2<f64> {
        &self.trace.output
    }

    pub fn prototype_summary(&self, eps_mass: f64) -> Result<PrototypeSummary> {
        prototype_pool(
            &self.reconstruction.f_hat,
            &self.assignment.z_tilde,
            eps_mass,
        )
    }
}

pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl Model {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut dims = vec![cfg.d_in];
        dims.extend(&cfg.hidden);
        dims.push(cfg.d);
        let encoder = Encoder::new(&dims, cfg.slope, cfg.encoder_init, rng)?;
        let dsg = DsgParams::new(cfg.d, cfg.k, cfg.w_std, rng)?;
        Ok(Model { encoder, dsg })
    }

    pub fn from_parts(encoder: Encoder, dsg: DsgParams) -> Result<Self> {
        if encoder.out_dim() != dsg.dim() {
            return Err(Error::Shape(format!(
                "encoder emits {} features but the DSG layer expects {}",
                encoder.out_dim(),
                dsg.dim()
            )));
        }
        Ok(Model { encoder, dsg })
    }

    pub fn in_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn prototypes(&self) -> usize {
        self.dsg.prototypes()
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            encoder: self.encoder.zeros_like(),
            dsg: self.dsg.zeros_like(),
        }
    }

    pub fn embed(&self, x: &Array2<f64>) -> Result<SetEmbedding> {
        if x.nrows() == 0 {
            return Err(Error::Domain("cannot embed an empty set".into()));
        }
        let trace = self.encoder.forward(x)?;
        let assignment = predict_indicator(&self.dsg, &trace.output)?;
        let reconstruction = reconstruct(&self.dsg, &trace.output, &assignment.z_tilde)?;
        Ok(SetEmbedding {
            trace,
            assignment,
            reconstruction,
        })
    }

    pub fn embed_set(&self, set: &MediaSet) -> Result<SetEmbedding> {
        if set.is_empty() {
            return Err(Error::Domain(format!("set {} is empty", set.set_id)));
        }
        self.embed(&set.to_matrix()?)
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.layers.iter().enumerate() {
            out.push(TensorView {
                name: format!("encoder.{i}.weight"),
                shape: l.weight.shape().to_vec(),
                data: l.weight.as_slice().expect("standard layout"),
            });
            out.push(TensorView {
                name: format!("encoder.{i}.bias"),
                shape: l.bias.shape().to_vec(),
                data: l.bias.as_slice().expect("standard layout"),
            });
        }
        for (name, t) in [
            ("dsg.w", &self.dsg.w),
            ("dsg.u", &self.dsg.u),
            ("dsg.g", &self.dsg.g),
        ] {
            out.push(TensorView {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.as_slice().expect("standard layout"),
            });
        }
        out
    }

    /// Mutable slices in the same order as [`Model::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.encoder.layers.iter_mut() {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.dsg.w.as_slice_mut().expect("standard layout"));
        out.push(self.dsg.u.as_slice_mut().expect("standard layout"));
        out.push(self.dsg.g.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "PCKPT v1 slope={}", self.encoder.slope);
        for t in self.tensors() {
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "tensor {} {}", t.name, dims.join(" "));
            let values: Vec<String> = t.data.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", values.join(" "));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_str(&fs::read_to_string(path)?)
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty checkpoint".into(),
        })?;
        let slope = header
            .strip_prefix("PCKPT v1 slope=")
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or(Error::Parse {
                line: 1,
                msg: "expected `PCKPT v1 slope=<alpha>` header".into(),
            })?;

        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        while let Some((line, head)) = lines.next() {
            if head.trim().is_empty() {
                continue;
            }
            let mut tok = head.split_whitespace();
            if tok.next() != Some("tensor") {
                return Err(Error::Parse {
                    line,
                    msg: "expected `tensor <name> <dims>`".into(),
                });
            }
            let name = tok
                .next()
                .ok_or(Error::Parse {
                    line,
                    msg: "missing tensor name".into(),
                })?
                .to_string();
            let shape = tok
                .map(|t| {
                    t.parse::<usize>().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad dimension `{t}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let (vline, body) = lines.next().ok_or(Error::Parse {
                line: line + 1,
                msg: format!("missing values for {name}"),
            })?;
            let data = body
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::Parse {
                        line: vline,
                        msg: format!("bad value `{t}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let expected: usize = shape.iter().product();
            if data.len() != expected {
                return Err(Error::Format {
                    line: vline,
                    msg: format!("{name}: {} values for shape {shape:?}", data.len()),
                });
            }
            tensors.push((name, shape, data));
        }

        let take2 = |name: &str| -> Result<Array2<f64>> {
            let (_, shape, data) =
                tensors
                    .iter()
                    .find(|(n, _, _)| n == name)
                    .ok_or_else(|| Error::Format {
                        line: 0,
                        msg: format!("checkpoint lacks tensor {name}"),
                    })?;
            if shape.len() != 2 {
                return Err(Error::Format {
                    line: 0,
                    msg: format!("{name} must be 2-D"),
                });
            }
            Array2::from_shape_vec((shape[0], shape[1]), data.clone()).map_err(|e| Error::Format {
                line: 0,
                msg: format!("{name}: {e}"),
            })
        };
        let mut layers = Vec::new();
        for i in 0.. {
            let wname = format!("encoder.{i}.weight");
            if !tensors.iter().any(|(n, _, _)| *n == wname) {
                break;
            }
            let weight = take2(&wname)?;
            let bname = format!("encoder.{i}.bias");
            let (_, _, bias) = tensors
                .iter()
                .find(|(n, _, _)| *n == bname)
                .ok_or_else(|| Error::Format {
                    line: 0,
                    msg: format!("checkpoint lacks tensor {bname}"),
                })?;
            if bias.len() != weight.nrows() {
                return Err(Error::Format {
                    line: 0,
                    msg: format!("{bname} does not match {wname}"),
                });
            }
            if let Some(prev) = layers.last().map(|l: &Dense| l.out_dim()) {
                if prev != weight.ncols() {
                    return Err(Error::Format {
                        line: 0,
                        msg: format!("{wname} input width mismatch"),
                    });
                }
            }
            layers.push(Dense {
                weight,
                bias: Array1::from(bias.clone()),
            });
        }
        if layers.is_empty() {
            return Err(Error::Format {
                line: 0,
                msg: "checkpoint has no encoder layers".into(),
            });
        }
        let dsg = DsgParams {
            w: take2("dsg.w")?,
            u: take2("dsg.u")?,
            g: take2("dsg.g")?,
        };
        let d = dsg.w.nrows();
        let k = dsg.w.ncols();
        if dsg.u.dim() != (d, d) || dsg.g.dim() != (k, d) {
            return Err(Error::Format {
                line: 0,
                msg: "inconsistent DSG tensor shapes".into(),
            });
        }
        Model::from_parts(Encoder { layers, slope }, dsg)
    }
}
