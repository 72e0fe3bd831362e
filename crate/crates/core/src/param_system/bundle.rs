//! On-disk system bundles: a directory of Matrix Market files plus
//! `system.json` with coefficient functions and metadata.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AffineMatrixOperator, AffineTerm, LowRank, ParamBox, ParametricDaeSystem, SystemKind, ThetaExpr};
use crate::error::{Error, Result};
use crate::mtx;

#[derive(Serialize, Deserialize)]
struct TermMeta {
    theta: ThetaExpr,
    file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    low_rank: Option<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct OperatorMeta {
    nrows: usize,
    ncols: usize,
    terms: Vec<TermMeta>,
}

#[derive(Serialize, Deserialize)]
struct SystemMeta {
    kind: SystemKind,
    index: usize,
    param_box: ParamBox,
    operators: BTreeMap<String, OperatorMeta>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    metadata: serde_json::Value,
}

fn ops(sys: &ParametricDaeSystem) -> [(&'static str, &AffineMatrixOperator); 4] {
    [("E", &sys.e), ("A", &sys.a), ("B", &sys.b), ("C", &sys.c)]
}

pub fn save_bundle(sys: &ParametricDaeSystem, dir: impl AsRef<Path>) -> Result<()> {
    save_bundle_with_metadata(sys, dir, serde_json::Value::Null)
}

/// Like [`save_bundle`], with free-form generator metadata in `system.json`.
pub fn save_bundle_with_metadata(sys: &ParametricDaeSystem, dir: impl AsRef<Path>, metadata: serde_json::Value) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut operators = BTreeMap::new();
    for (name, op) in ops(sys) {
        let mut terms = Vec::new();
        for (k, t) in op.terms().iter().enumerate() {
            if !t.theta.is_serializable() {
                return Err(Error::Unsupported(format!("{name} term {k} uses a custom coefficient callback")));
            }
            let file = format!("{name}_{k}.mtx");
            mtx::write_sparse(dir.join(&file), &t.matrix)?;
            let low_rank = match &t.low_rank {
                Some(lr) => {
                    let (fu, fv) = (format!("{name}_{k}_u.mtx"), format!("{name}_{k}_v.mtx"));
                    mtx::write_dense(dir.join(&fu), &lr.u)?;
                    mtx::write_dense(dir.join(&fv), &lr.v)?;
                    Some((fu, fv))
                }
                None => None,
            };
            terms.push(TermMeta { theta: t.theta.clone(), file, low_rank });
        }
        operators.insert(name.to_string(), OperatorMeta { nrows: op.nrows(), ncols: op.ncols(), terms });
    }
    let meta = SystemMeta { kind: sys.kind.clone(), index: sys.index, param_box: sys.param_box.clone(), operators, metadata };
    std::fs::write(dir.join("system.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_bundle_metadata(dir: impl AsRef<Path>) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(dir.as_ref().join("system.json"))?;
    let meta: SystemMeta = serde_json::from_str(&text)?;
    Ok(meta.metadata)
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<ParametricDaeSystem> {
    let dir = dir.as_ref();
    let meta: SystemMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("system.json"))?)?;
    let mut built = BTreeMap::new();
    for name in ["E", "A", "B", "C"] {
        let om = meta.operators.get(name).ok_or_else(|| Error::Parse(format!("system.json lacks operator {name}")))?;
        let mut terms = Vec::new();
        for tm in &om.terms {
            let matrix = mtx::read_sparse(dir.join(&tm.file))?;
            let low_rank = match &tm.low_rank {
                Some((fu, fv)) => Some(LowRank { u: mtx::read_dense(dir.join(fu))?, v: mtx::read_dense(dir.join(fv))? }),
                None => None,
            };
            terms.push(AffineTerm { theta: tm.theta.clone(), matrix, low_rank });
        }
        built.insert(name, AffineMatrixOperator::new(om.nrows, om.ncols, terms)?);
    }
    let mut take = |n: &str| built.remove(n).expect("inserted above");
    ParametricDaeSystem::new(take("E"), take("A"), take("B"), take("C"), meta.param_box, meta.kind, meta.index)
}
