//! Problem files: JSON with matrices as nested row arrays.

use std::fmt;
use std::path::Path;

use iqcloc::interconnect::Interconnection;
use iqcloc::lti::StateSpace;
use iqcloc::matrixcore::Mat;
use iqcloc::multiplier::{l2gain_quad, passivity_multiplier, Multiplier, QuadMultiplier};
use serde::de::{self, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

/// A dense matrix. Written as `[[row], ...]`; an empty matrix as `{"zeros": [rows, cols]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix(pub Mat);

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m = &self.0;
        if m.is_empty() {
            #[derive(Serialize)]
            struct Zeros {
                zeros: [usize; 2],
            }
            return Zeros { zeros: [m.nrows(), m.ncols()] }.serialize(s);
        }
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct MatrixVisitor;

        impl<'de> Visitor<'de> for MatrixVisitor {
            type Value = Matrix;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a matrix as an array of equal-length rows, or {\"zeros\": [rows, cols]}")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Matrix, A::Error> {
                let mut rows: Vec<Vec<f64>> = Vec::new();
                while let Some(row) = seq.next_element::<Vec<f64>>()? {
                    if let Some(first) = rows.first() {
                        if row.len() != first.len() {
                            return Err(de::Error::custom(format!(
                                "row {} has {} entries, row 0 has {}",
                                rows.len(),
                                row.len(),
                                first.len()
                            )));
                        }
                    }
                    rows.push(row);
                }
                if rows.is_empty() || rows[0].is_empty() {
                    return Err(de::Error::custom("empty matrix; write {\"zeros\": [rows, cols]} instead"));
                }
                let (r, c) = (rows.len(), rows[0].len());
                Ok(Matrix(Mat::from_row_iterator(r, c, rows.into_iter().flatten())))
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Matrix, A::Error> {
                let mut shape: Option<[usize; 2]> = None;
                while let Some(key) = map.next_key::<String>()? {
                    if key != "zeros" || shape.is_some() {
                        return Err(de::Error::unknown_field(&key, &["zeros"]));
                    }
                    shape = Some(map.next_value()?);
                }
                let [r, c] = shape.ok_or_else(|| de::Error::missing_field("zeros"))?;
                Ok(Matrix(Mat::zeros(r, c)))
            }
        }

        d.deserialize_any(MatrixVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemSpec {
    pub name: String,
    pub a: Matrix,
    pub b1: Matrix,
    pub c1: Matrix,
    pub d11: Matrix,
    /// Control channel; all four present or all absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d12: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d21: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterconnectionSpec {
    pub m11: Matrix,
    pub m12: Matrix,
    pub m21: Matrix,
    pub m22: Matrix,
    pub v_parts: Vec<usize>,
    pub y_parts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplierSpec {
    pub x11: Matrix,
    pub x12: Matrix,
    pub x22: Matrix,
}

impl MultiplierSpec {
    pub fn from_multiplier(x: &Multiplier) -> Self {
        Self { x11: Matrix(x.x11.clone()), x12: Matrix(x.x12.clone()), x22: Matrix(x.x22.clone()) }
    }

    pub fn to_multiplier(&self, what: &str) -> Result<Multiplier, CliError> {
        Multiplier::new(self.x11.0.clone(), self.x12.0.clone(), self.x22.0.clone())
            .map_err(|e| CliError::Dimension(format!("{what}: {e}")))
    }
}

/// `X(γ) = γ² x1 + 2γ x2 + x3`; omitted terms are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1: Option<MultiplierSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x2: Option<MultiplierSpec>,
    pub x3: MultiplierSpec,
}

impl QuadSpec {
    pub fn from_quad(q: &QuadMultiplier) -> Self {
        Self {
            x1: Some(MultiplierSpec::from_multiplier(&q.x1)),
            x2: Some(MultiplierSpec::from_multiplier(&q.x2)),
            x3: MultiplierSpec::from_multiplier(&q.x3),
        }
    }

    pub fn to_quad(&self, what: &str) -> Result<QuadMultiplier, CliError> {
        let x3 = self.x3.to_multiplier(what)?;
        let term = |t: &Option<MultiplierSpec>| match t {
            Some(s) => s.to_multiplier(what),
            None => Ok(Multiplier::zeros(x3.n_in(), x3.n_out())),
        };
        QuadMultiplier::new(term(&self.x1)?, term(&self.x2)?, x3.clone()).map_err(|e| CliError::Dimension(format!("{what}: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    L2gain,
    Passivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObjectiveSpec {
    Preset(Preset),
    Blocks(QuadSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Blockdiag,
    Fullblock,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Number of groups for `group`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    /// Largest group size for `group`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
    /// ADMM penalty weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// ADMM residual bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub res_tol: Option<f64>,
    /// Margin of the passivity preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Optimal global level, when known; enables the localization gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_global: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub subsystems: Vec<SubsystemSpec>,
    /// Identity routing (`v = w`, `z = y`) when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interconnection: Option<InterconnectionSpec>,
    pub global_objective: ObjectiveSpec,
    /// One per subsystem; defaults to the global preset at each subsystem's size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_objectives: Option<Vec<ObjectiveSpec>>,
    #[serde(default)]
    pub options: Options,
}

/// A problem file checked for consistent dimensions.
#[derive(Debug, Clone)]
pub struct Problem {
    pub names: Vec<String>,
    pub plants: Vec<StateSpace>,
    pub m: Interconnection,
    pub global: QuadMultiplier,
    pub locals: Vec<QuadMultiplier>,
}

pub fn parse_str<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| {
        let full = e.to_string();
        let suffix = format!(" at line {} column {}", e.line(), e.column());
        CliError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            column: e.column(),
            message: full.strip_suffix(&suffix).unwrap_or(&full).to_string(),
        }
    })
}

pub fn read_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_str(&text, path)
}

fn preset(p: Preset, n_in: usize, n_out: usize, epsilon: f64, what: &str) -> Result<QuadMultiplier, CliError> {
    match p {
        Preset::L2gain => Ok(l2gain_quad(n_in, n_out)),
        Preset::Passivity => {
            if n_in != n_out {
                return Err(CliError::Dimension(format!("{what}: passivity needs square ports, got {n_in} in and {n_out} out")));
            }
            passivity_multiplier(n_in, epsilon).map(QuadMultiplier::constant).map_err(|e| CliError::Dimension(format!("{what}: {e}")))
        }
    }
}

fn objective(spec: &ObjectiveSpec, n_in: usize, n_out: usize, epsilon: f64, what: &str) -> Result<QuadMultiplier, CliError> {
    let q = match spec {
        ObjectiveSpec::Preset(p) => preset(*p, n_in, n_out, epsilon, what)?,
        ObjectiveSpec::Blocks(b) => b.to_quad(what)?,
    };
    if (q.n_in(), q.n_out()) != (n_in, n_out) {
        return Err(CliError::Dimension(format!(
            "{what} acts on ({}, {}) ports, expected ({n_in}, {n_out})",
            q.n_in(),
            q.n_out()
        )));
    }
    Ok(q)
}

fn plant(s: &SubsystemSpec) -> Result<StateSpace, CliError> {
    let dim = |e: iqcloc::Error| CliError::Dimension(format!("subsystem '{}': {e}", s.name));
    match (&s.b2, &s.d12, &s.c2, &s.d21) {
        (None, None, None, None) => {
            StateSpace::open(s.a.0.clone(), s.b1.0.clone(), s.c1.0.clone(), s.d11.0.clone()).map_err(dim)
        }
        (Some(b2), Some(d12), Some(c2), Some(d21)) => StateSpace::new(
            s.a.0.clone(),
            s.b1.0.clone(),
            b2.0.clone(),
            s.c1.0.clone(),
            s.d11.0.clone(),
            d12.0.clone(),
            c2.0.clone(),
            d21.0.clone(),
        )
        .map_err(dim),
        _ => Err(CliError::Dimension(format!("subsystem '{}': give all of b2, d12, c2, d21 or none", s.name))),
    }
}

impl ProblemFile {
    pub fn build(&self) -> Result<Problem, CliError> {
        if self.subsystems.is_empty() {
            return Err(CliError::Dimension("no subsystems".into()));
        }
        let plants: Vec<StateSpace> = self.subsystems.iter().map(plant).collect::<Result<_, _>>()?;
        let names: Vec<String> = self.subsystems.iter().map(|s| s.name.clone()).collect();
        let m = match &self.interconnection {
            Some(i) => Interconnection::new(
                i.m11.0.clone(),
                i.m12.0.clone(),
                i.m21.0.clone(),
                i.m22.0.clone(),
                i.v_parts.clone(),
                i.y_parts.clone(),
            )
            .map_err(|e| CliError::Dimension(format!("interconnection: {e}")))?,
            None => {
                let vp: Vec<usize> = plants.iter().map(StateSpace::n_v).collect();
                let yp: Vec<usize> = plants.iter().map(StateSpace::n_y).collect();
                let (nv, ny) = (vp.iter().sum(), yp.iter().sum());
                Interconnection::routing(Mat::identity(nv, nv), Mat::identity(ny, ny), vp, yp)
                    .map_err(|e| CliError::Dimension(format!("interconnection: {e}")))?
            }
        };
        if m.n_subsystems() != plants.len() {
            return Err(CliError::Dimension(format!(
                "interconnection has {} port blocks for {} subsystems",
                m.n_subsystems(),
                plants.len()
            )));
        }
        for (k, (p, name)) in plants.iter().zip(&names).enumerate() {
            if p.n_v() != m.v_parts[k] || p.n_y() != m.y_parts[k] {
                return Err(CliError::Dimension(format!(
                    "subsystem '{name}' has {} inputs and {} outputs, interconnection expects v_parts[{k}] = {} and y_parts[{k}] = {}",
                    p.n_v(),
                    p.n_y(),
                    m.v_parts[k],
                    m.y_parts[k]
                )));
            }
        }
        let eps = self.options.epsilon.unwrap_or(0.0);
        let (_, _, n_w, n_z) = m.dims();
        let global = objective(&self.global_objective, n_w, n_z, eps, "global_objective")?;
        let locals = match &self.local_objectives {
            Some(l) if l.len() != plants.len() => {
                return Err(CliError::Dimension(format!("{} local objectives for {} subsystems", l.len(), plants.len())))
            }
            Some(l) => l
                .iter()
                .zip(&plants)
                .zip(&names)
                .map(|((o, p), n)| objective(o, p.n_v(), p.n_y(), eps, &format!("local objective of '{n}'")))
                .collect::<Result<_, _>>()?,
            None => match &self.global_objective {
                ObjectiveSpec::Preset(pr) => plants
                    .iter()
                    .zip(&names)
                    .map(|(p, n)| preset(*pr, p.n_v(), p.n_y(), eps, &format!("local objective of '{n}'")))
                    .collect::<Result<_, _>>()?,
                ObjectiveSpec::Blocks(_) => Vec::new(),
            },
        };
        Ok(Problem { names, plants, m, global, locals })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, CliError> {
        parse_str(text, &PathBuf::from("test.json"))
    }

    #[test]
    fn zeros_shorthand_keeps_empty_shapes() {
        let m: Matrix = parse(r#"{"zeros": [0, 3]}"#).unwrap();
        assert_eq!(m.0.shape(), (0, 3));
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"zeros":[0,3]}"#);
    }

    #[test]
    fn ragged_rows_report_a_location() {
        let err = parse::<Matrix>("[[1, 2],\n [3]]").unwrap_err();
        match err {
            CliError::Parse { line, column, message, .. } => {
                assert_eq!(line, 2);
                assert!(column > 0);
                assert!(message.contains("row 1 has 1 entries"), "{message}");
            }
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"subsystems": [], "global_objective": "l2gain", "extra": 1}"#;
        assert!(matches!(parse::<ProblemFile>(text), Err(CliError::Parse { .. })));
        let sub = r#"{"name": "a", "a": [[1]], "b1": [[1]], "c1": [[1]], "d11": [[0]], "e": [[0]]}"#;
        assert!(matches!(parse::<SubsystemSpec>(sub), Err(CliError::Parse { .. })));
    }

    #[test]
    fn preset_dimensions_follow_the_ports() {
        let text = r#"{
            "subsystems": [
                {"name": "a", "a": [[-1]], "b1": [[1, 0]], "c1": [[1]], "d11": [[0, 0]]},
                {"name": "b", "a": [[-1]], "b1": [[1]], "c1": [[1], [0]], "d11": [[0], [0]]}
            ],
            "global_objective": "l2gain"
        }"#;
        let p = parse::<ProblemFile>(text).unwrap().build().unwrap();
        assert_eq!(p.m.dims(), (3, 3, 3, 3));
        assert_eq!((p.locals[0].n_in(), p.locals[0].n_out()), (2, 1));
        assert_eq!((p.locals[1].n_in(), p.locals[1].n_out()), (1, 2));
    }

    #[test]
    fn mismatched_blocks_name_the_matrix() {
        let text = r#"{
            "subsystems": [{"name": "plant", "a": [[-1]], "b1": [[1], [0]], "c1": [[1]], "d11": [[0]]}],
            "global_objective": "l2gain"
        }"#;
        let err = parse::<ProblemFile>(text).unwrap().build().unwrap_err().to_string();
        assert!(err.contains("plant") && err.contains("B1"), "{err}");
    }

    #[test]
    fn partial_control_channel_is_rejected() {
        let text = r#"{
            "subsystems": [{"name": "p", "a": [[-1]], "b1": [[1]], "c1": [[1]], "d11": [[0]], "b2": [[1]]}],
            "global_objective": "l2gain"
        }"#;
        assert!(matches!(parse::<ProblemFile>(text).unwrap().build(), Err(CliError::Dimension(_))));
    }

    #[test]
    fn passivity_needs_square_ports() {
        let text = r#"{
            "subsystems": [{"name": "p", "a": [[-1]], "b1": [[1, 1]], "c1": [[1]], "d11": [[0, 0]]}],
            "global_objective": "passivity"
        }"#;
        assert!(matches!(parse::<ProblemFile>(text).unwrap().build(), Err(CliError::Dimension(_))));
    }

    proptest! {
        #[test]
        fn matrices_survive_a_json_round_trip(
            r in 1usize..5,
            c in 1usize..5,
            seed in proptest::collection::vec(-1e6f64..1e6, 25),
        ) {
            let m = Matrix(Mat::from_fn(r, c, |i, j| seed[i * 5 + j] / 7.0));
            let back: Matrix = parse(&serde_json::to_string(&m).unwrap()).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn ragged_input_never_parses(r in 2usize..5, c in 1usize..5, short in 0usize..4) {
            let short = short % r;
            let rows: Vec<String> = (0..r)
                .map(|i| {
                    let len = if i == short { c + 1 } else { c };
                    format!("[{}]", vec!["1.5"; len].join(", "))
                })
                .collect();
            let text = format!("[{}]", rows.join(", "));
            prop_assert!(matches!(parse::<Matrix>(&text), Err(CliError::Parse { .. })), "{}", text);
        }
    }
}
