//! Plaintext expression operators. Integers are 8-byte little-endian two's
//! complement, floats 8-byte little-endian IEEE-754; bytes compare
//! lexicographically.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::ProxyError;
use crate::fid::Fid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    CmpLt,
    CmpEq,
    CmpGt,
    SumAgg,
    MinAgg,
    MaxAgg,
    AvgAgg,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Mod,
        OpKind::CmpLt,
        OpKind::CmpEq,
        OpKind::CmpGt,
        OpKind::SumAgg,
        OpKind::MinAgg,
        OpKind::MaxAgg,
        OpKind::AvgAgg,
    ];

    pub fn code(self) -> u8 {
        OpKind::ALL.iter().position(|k| *k == self).unwrap() as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        OpKind::ALL.get(c as usize).copied()
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, OpKind::CmpLt | OpKind::CmpEq | OpKind::CmpGt)
    }

    pub fn is_aggregate(self) -> bool {
        matches!(
            self,
            OpKind::SumAgg | OpKind::MinAgg | OpKind::MaxAgg | OpKind::AvgAgg
        )
    }

    /// SUM of nothing is zero; the other aggregates need an operand.
    fn arity_ok(self, n: usize) -> bool {
        match self {
            OpKind::SumAgg => true,
            k if k.is_aggregate() => n >= 1,
            _ => n == 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueType {
    Int64,
    Float64,
    Bytes,
}

impl ValueType {
    pub fn code(self) -> u8 {
        match self {
            ValueType::Int64 => 0,
            ValueType::Float64 => 1,
            ValueType::Bytes => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ValueType::Int64),
            1 => Some(ValueType::Float64),
            2 => Some(ValueType::Bytes),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorRequest {
    pub op: OpKind,
    pub operands: Vec<Fid>,
    pub value_type: ValueType,
}

impl OperatorRequest {
    pub fn new(op: OpKind, operands: Vec<Fid>, value_type: ValueType) -> Self {
        OperatorRequest {
            op,
            operands,
            value_type,
        }
    }

    pub fn binary(op: OpKind, a: Fid, b: Fid, value_type: ValueType) -> Self {
        Self::new(op, vec![a, b], value_type)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorResponse {
    NewFid(Fid),
    PlainBool(bool),
}

impl OperatorResponse {
    pub fn fid(self) -> Option<Fid> {
        match self {
            OperatorResponse::NewFid(f) => Some(f),
            OperatorResponse::PlainBool(_) => None,
        }
    }

    pub fn boolean(self) -> Option<bool> {
        match self {
            OperatorResponse::PlainBool(b) => Some(b),
            OperatorResponse::NewFid(_) => None,
        }
    }
}

/// What an operator produced, before the proxy stores it.
#[derive(Debug, Clone, PartialEq)]
pub enum Computed {
    Value(Vec<u8>),
    Bool(bool),
}

pub fn int(v: &[u8]) -> Result<i64, ProxyError> {
    Ok(i64::from_le_bytes(
        v.try_into().map_err(|_| ProxyError::TypeMismatch)?,
    ))
}

pub fn float(v: &[u8]) -> Result<f64, ProxyError> {
    Ok(f64::from_le_bytes(
        v.try_into().map_err(|_| ProxyError::TypeMismatch)?,
    ))
}

fn arith_int(op: OpKind, a: i64, b: i64) -> Result<i64, ProxyError> {
    let r = match op {
        OpKind::Add => a.checked_add(b),
        OpKind::Sub => a.checked_sub(b),
        OpKind::Mul => a.checked_mul(b),
        OpKind::Div | OpKind::Mod if b == 0 => return Err(ProxyError::DivideByZero),
        OpKind::Div => a.checked_div(b),
        OpKind::Mod => a.checked_rem(b),
        _ => unreachable!(),
    };
    r.ok_or(ProxyError::Overflow)
}

fn arith_float(op: OpKind, a: f64, b: f64) -> Result<f64, ProxyError> {
    Ok(match op {
        OpKind::Add => a + b,
        OpKind::Sub => a - b,
        OpKind::Mul => a * b,
        OpKind::Div | OpKind::Mod if b == 0.0 => return Err(ProxyError::DivideByZero),
        OpKind::Div => a / b,
        OpKind::Mod => a % b,
        _ => unreachable!(),
    })
}

fn compare(ty: ValueType, a: &[u8], b: &[u8]) -> Result<Option<Ordering>, ProxyError> {
    Ok(match ty {
        ValueType::Int64 => Some(int(a)?.cmp(&int(b)?)),
        ValueType::Float64 => float(a)?.partial_cmp(&float(b)?),
        ValueType::Bytes => Some(a.cmp(b)),
    })
}

/// Evaluates `op` over plaintext operands.
pub fn evaluate(op: OpKind, ty: ValueType, args: &[Vec<u8>]) -> Result<Computed, ProxyError> {
    if !op.arity_ok(args.len()) {
        return Err(ProxyError::Arity {
            op,
            got: args.len(),
        });
    }
    if ty != ValueType::Bytes && args.iter().any(|a| a.len() != 8) {
        return Err(ProxyError::TypeMismatch);
    }
    match op {
        OpKind::CmpLt | OpKind::CmpEq | OpKind::CmpGt => {
            let ord = compare(ty, &args[0], &args[1])?;
            let want = match op {
                OpKind::CmpLt => Ordering::Less,
                OpKind::CmpEq => Ordering::Equal,
                _ => Ordering::Greater,
            };
            Ok(Computed::Bool(ord == Some(want)))
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::Mod => match ty {
            ValueType::Int64 => Ok(Computed::Value(
                arith_int(op, int(&args[0])?, int(&args[1])?)?
                    .to_le_bytes()
                    .to_vec(),
            )),
            ValueType::Float64 => Ok(Computed::Value(
                arith_float(op, float(&args[0])?, float(&args[1])?)?
                    .to_le_bytes()
                    .to_vec(),
            )),
            ValueType::Bytes => Err(ProxyError::TypeMismatch),
        },
        OpKind::SumAgg => match ty {
            ValueType::Int64 => {
                let mut acc = 0i64;
                for a in args {
                    acc = acc.checked_add(int(a)?).ok_or(ProxyError::Overflow)?;
                }
                Ok(Computed::Value(acc.to_le_bytes().to_vec()))
            }
            ValueType::Float64 => {
                let mut acc = 0f64;
                for a in args {
                    acc += float(a)?;
                }
                Ok(Computed::Value(acc.to_le_bytes().to_vec()))
            }
            ValueType::Bytes => Err(ProxyError::TypeMismatch),
        },
        OpKind::MinAgg | OpKind::MaxAgg => {
            let mut best = &args[0];
            for a in &args[1..] {
                let ord = compare(ty, a, best)?;
                let better = match op {
                    OpKind::MinAgg => ord == Some(Ordering::Less),
                    _ => ord == Some(Ordering::Greater),
                };
                if better {
                    best = a;
                }
            }
            Ok(Computed::Value(best.clone()))
        }
        OpKind::AvgAgg => {
            let mean = match ty {
                ValueType::Int64 => {
                    let mut acc = 0i128;
                    for a in args {
                        acc += int(a)? as i128;
                    }
                    acc as f64 / args.len() as f64
                }
                ValueType::Float64 => {
                    let mut acc = 0f64;
                    for a in args {
                        acc += float(a)?;
                    }
                    acc / args.len() as f64
                }
                ValueType::Bytes => return Err(ProxyError::TypeMismatch),
            };
            Ok(Computed::Value(mean.to_le_bytes().to_vec()))
        }
    }
}
