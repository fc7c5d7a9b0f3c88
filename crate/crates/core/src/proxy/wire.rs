//! Cross-zone message encoding.
//!
//! Requests are `{u8 kind, u64 query_id, payload}`; responses are
//! `{u8 kind, payload}`. FIDs travel as 8-byte little-endian values and
//! booleans as one byte. Per-element results carry a status byte so one
//! failure in a batch does not hide the others.

use super::envelope::ClientEnvelope;
use super::ops::{OpKind, OperatorRequest, OperatorResponse, ValueType};
use super::ProxyError;
use crate::codec::{ByteReader, ByteWriter, DecodeError};
use crate::fid::Fid;
use crate::store::{PartitionKind, ValueLayout};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Ingest {
        pad_to: Option<u32>,
        envelopes: Vec<ClientEnvelope>,
    },
    Exec(Vec<OperatorRequest>),
    Promote {
        fids: Vec<Fid>,
        partition: u32,
    },
    Reveal(Vec<Fid>),
    FlushLog,
    Delete(Vec<Fid>),
    EndQuery,
    CreatePartition {
        kind: PartitionKind,
        layout: ValueLayout,
    },
    Prefetch(u32),
    LiveFids(u32),
    /// Ends every open query; sent by a recovering integrity zone.
    DropAllQueries,
}

impl Request {
    /// Operation name as seen by an observer of the channel.
    pub fn kind_code(&self) -> u8 {
        match self {
            Request::Ingest { .. } => 1,
            Request::Exec(_) => 2,
            Request::Promote { .. } => 3,
            Request::Reveal(_) => 4,
            Request::FlushLog => 5,
            Request::Delete(_) => 6,
            Request::EndQuery => 7,
            Request::CreatePartition { .. } => 8,
            Request::Prefetch(_) => 9,
            Request::LiveFids(_) => 10,
            Request::DropAllQueries => 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Fids(Vec<Result<Fid, ProxyError>>),
    Ops(Vec<Result<OperatorResponse, ProxyError>>),
    Envelopes(Vec<Result<ClientEnvelope, ProxyError>>),
    Done(Vec<Result<(), ProxyError>>),
    Lsn(u64),
    Count(u64),
    Partition(u32),
    FidList(Vec<Fid>),
    Failed(ProxyError),
}

fn put_fids(w: &mut ByteWriter, fids: &[Fid]) {
    w.u32(fids.len() as u32);
    for f in fids {
        w.u64(f.raw());
    }
}

fn get_fids(r: &mut ByteReader) -> Result<Vec<Fid>, DecodeError> {
    let n = r.u32()?;
    (0..n).map(|_| Ok(Fid(r.u64()?))).collect()
}

pub fn encode_request(query_id: u64, req: &Request) -> Vec<u8> {
    let mut w = ByteWriter::with_capacity(64);
    w.u8(req.kind_code()).u64(query_id);
    match req {
        Request::Ingest { pad_to, envelopes } => {
            w.u32(pad_to.unwrap_or(0));
            w.u32(envelopes.len() as u32);
            for e in envelopes {
                w.bytes(&e.to_bytes());
            }
        }
        Request::Exec(reqs) => {
            w.u32(reqs.len() as u32);
            for r in reqs {
                w.u8(r.op.code()).u8(r.value_type.code());
                put_fids(&mut w, &r.operands);
            }
        }
        Request::Promote { fids, partition } => {
            w.u32(*partition);
            put_fids(&mut w, fids);
        }
        Request::Reveal(fids) | Request::Delete(fids) => put_fids(&mut w, fids),
        Request::FlushLog | Request::EndQuery | Request::DropAllQueries => {}
        Request::CreatePartition { kind, layout } => {
            w.u8(kind.code())
                .u8(layout.code())
                .u32(layout.width_or_zero());
        }
        Request::Prefetch(p) | Request::LiveFids(p) => {
            w.u32(*p);
        }
    }
    w.into_inner()
}

pub fn decode_request(bytes: &[u8]) -> Result<(u64, Request), DecodeError> {
    let mut r = ByteReader::new(bytes);
    let kind = r.u8()?;
    let query_id = r.u64()?;
    let at = r.position();
    let bad = DecodeError { at };
    let req = match kind {
        1 => {
            let pad = r.u32()?;
            let n = r.u32()?;
            let envelopes = (0..n)
                .map(|_| ClientEnvelope::from_bytes(r.bytes()?))
                .collect::<Result<_, _>>()?;
            Request::Ingest {
                pad_to: (pad != 0).then_some(pad),
                envelopes,
            }
        }
        2 => {
            let n = r.u32()?;
            let reqs = (0..n)
                .map(|_| {
                    let op = OpKind::from_code(r.u8()?).ok_or(bad.clone())?;
                    let value_type = ValueType::from_code(r.u8()?).ok_or(bad.clone())?;
                    Ok(OperatorRequest::new(op, get_fids(&mut r)?, value_type))
                })
                .collect::<Result<_, DecodeError>>()?;
            Request::Exec(reqs)
        }
        3 => {
            let partition = r.u32()?;
            Request::Promote {
                fids: get_fids(&mut r)?,
                partition,
            }
        }
        4 => Request::Reveal(get_fids(&mut r)?),
        5 => Request::FlushLog,
        6 => Request::Delete(get_fids(&mut r)?),
        7 => Request::EndQuery,
        8 => {
            let kind = PartitionKind::from_code(r.u8()?).ok_or(bad.clone())?;
            let code = r.u8()?;
            let layout = ValueLayout::from_code(code, r.u32()?).ok_or(bad)?;
            Request::CreatePartition { kind, layout }
        }
        9 => Request::Prefetch(r.u32()?),
        10 => Request::LiveFids(r.u32()?),
        11 => Request::DropAllQueries,
        _ => return Err(bad),
    };
    r.finish()?;
    Ok((query_id, req))
}

fn put_error(w: &mut ByteWriter, e: &ProxyError) {
    let (code, a, text): (u8, u64, &str) = match e {
        ProxyError::NotLive(f) => (1, f.raw(), ""),
        ProxyError::TypeMismatch => (2, 0, ""),
        ProxyError::DivideByZero => (3, 0, ""),
        ProxyError::Overflow => (4, 0, ""),
        ProxyError::Arity { op, got } => (5, ((op.code() as u64) << 32) | *got as u64, ""),
        ProxyError::AuthFailure => (6, 0, ""),
        ProxyError::UnknownPartition(p) => (7, *p as u64, ""),
        ProxyError::WrongPartitionKind(p) => (8, *p as u64, ""),
        ProxyError::BadValue(s) => (9, 0, s),
        ProxyError::PartitionFull(p) => (10, *p as u64, ""),
        ProxyError::PartitionSpaceExhausted => (11, 0, ""),
        ProxyError::LogClosed => (12, 0, ""),
        ProxyError::Storage(s) => (13, 0, s),
        ProxyError::Malformed => (14, 0, ""),
    };
    w.u8(code).u64(a).bytes(text.as_bytes());
}

fn get_error(r: &mut ByteReader) -> Result<ProxyError, DecodeError> {
    let at = r.position();
    let code = r.u8()?;
    let a = r.u64()?;
    let text = String::from_utf8_lossy(r.bytes()?).into_owned();
    Ok(match code {
        1 => ProxyError::NotLive(Fid(a)),
        2 => ProxyError::TypeMismatch,
        3 => ProxyError::DivideByZero,
        4 => ProxyError::Overflow,
        5 => ProxyError::Arity {
            op: OpKind::from_code((a >> 32) as u8).ok_or(DecodeError { at })?,
            got: (a & 0xffff_ffff) as usize,
        },
        6 => ProxyError::AuthFailure,
        7 => ProxyError::UnknownPartition(a as u32),
        8 => ProxyError::WrongPartitionKind(a as u32),
        9 => ProxyError::BadValue(text),
        10 => ProxyError::PartitionFull(a as u32),
        11 => ProxyError::PartitionSpaceExhausted,
        12 => ProxyError::LogClosed,
        13 => ProxyError::Storage(text),
        14 => ProxyError::Malformed,
        _ => return Err(DecodeError { at }),
    })
}

fn put_results<T>(
    w: &mut ByteWriter,
    items: &[Result<T, ProxyError>],
    mut put: impl FnMut(&mut ByteWriter, &T),
) {
    w.u32(items.len() as u32);
    for it in items {
        match it {
            Ok(v) => {
                w.u8(0);
                put(w, v);
            }
            Err(e) => {
                w.u8(1);
                put_error(w, e);
            }
        }
    }
}

fn get_results<'a, T>(
    r: &mut ByteReader<'a>,
    mut get: impl FnMut(&mut ByteReader<'a>) -> Result<T, DecodeError>,
) -> Result<Vec<Result<T, ProxyError>>, DecodeError> {
    let n = r.u32()?;
    (0..n)
        .map(|_| match r.u8()? {
            0 => Ok(Ok(get(r)?)),
            1 => Ok(Err(get_error(r)?)),
            _ => Err(DecodeError { at: r.position() }),
        })
        .collect()
}

pub fn encode_response(resp: &Response) -> Vec<u8> {
    let mut w = ByteWriter::with_capacity(64);
    match resp {
        Response::Fids(items) => {
            w.u8(1);
            put_results(&mut w, items, |w, f| {
                w.u64(f.raw());
            });
        }
        Response::Ops(items) => {
            w.u8(2);
            put_results(&mut w, items, |w, o| match o {
                OperatorResponse::NewFid(f) => {
                    w.u8(0).u64(f.raw());
                }
                OperatorResponse::PlainBool(b) => {
                    w.u8(1).u8(*b as u8);
                }
            });
        }
        Response::Envelopes(items) => {
            w.u8(3);
            put_results(&mut w, items, |w, e| {
                w.bytes(&e.to_bytes());
            });
        }
        Response::Done(items) => {
            w.u8(4);
            put_results(&mut w, items, |_, _| {});
        }
        Response::Lsn(v) => {
            w.u8(5).u64(*v);
        }
        Response::Count(v) => {
            w.u8(6).u64(*v);
        }
        Response::Partition(p) => {
            w.u8(7).u32(*p);
        }
        Response::FidList(f) => {
            w.u8(8);
            put_fids(&mut w, f);
        }
        Response::Failed(e) => {
            w.u8(9);
            put_error(&mut w, e);
        }
    }
    w.into_inner()
}

pub fn decode_response(bytes: &[u8]) -> Result<Response, DecodeError> {
    let mut r = ByteReader::new(bytes);
    let resp = match r.u8()? {
        1 => Response::Fids(get_results(&mut r, |r| Ok(Fid(r.u64()?)))?),
        2 => Response::Ops(get_results(&mut r, |r| {
            let at = r.position();
            match r.u8()? {
                0 => Ok(OperatorResponse::NewFid(Fid(r.u64()?))),
                1 => Ok(OperatorResponse::PlainBool(r.u8()? != 0)),
                _ => Err(DecodeError { at }),
            }
        })?),
        3 => Response::Envelopes(get_results(&mut r, |r| {
            ClientEnvelope::from_bytes(r.bytes()?)
        })?),
        4 => Response::Done(get_results(&mut r, |_| Ok(()))?),
        5 => Response::Lsn(r.u64()?),
        6 => Response::Count(r.u64()?),
        7 => Response::Partition(r.u32()?),
        8 => Response::FidList(get_fids(&mut r)?),
        9 => Response::Failed(get_error(&mut r)?),
        _ => return Err(DecodeError { at: 0 }),
    };
    r.finish()?;
    Ok(resp)
}
