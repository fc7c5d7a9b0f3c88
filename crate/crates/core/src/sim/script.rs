//! Fixed-shape scripts over one `emp(id, salary, note)` table, for checking
//! that plaintext values do not change the adversary's view.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{AdversaryTrace, SimError, Topology, TopologyConfig};
use crate::dbms::{Cell, Column, ColumnType, RowId, TableId};
use crate::proxy::envelope::unpad;
use crate::proxy::{EnvelopeCipher, OpKind};

/// One auto-committed statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScriptOp {
    Insert { id: i64, salary: i64, note: Vec<u8> },
    SetSalary { row: RowId, salary: i64 },
    Delete { row: RowId },
    Reveal { row: RowId },
    Sum,
    SelectGt { constant: i64 },
    Vacuum,
}

impl ScriptOp {
    /// Everything about the op an observer may legitimately learn.
    fn shape(&self) -> (u8, i64, usize, RowId) {
        match self {
            ScriptOp::Insert { id, note, .. } => (0, *id, note.len(), 0),
            ScriptOp::SetSalary { row, .. } => (1, 0, 0, *row),
            ScriptOp::Delete { row } => (2, 0, 0, *row),
            ScriptOp::Reveal { row } => (3, 0, 0, *row),
            ScriptOp::Sum => (4, 0, 0, 0),
            ScriptOp::SelectGt { .. } => (5, 0, 0, 0),
            ScriptOp::Vacuum => (6, 0, 0, 0),
        }
    }
}

/// Client-side plaintext result of one op.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScriptResult {
    Row(RowId),
    Done,
    Missing,
    Revealed { salary: i64, note: Vec<u8> },
    Sum(i64),
    Rows(Vec<RowId>),
    Failed(String),
}

pub fn check_structure(a: &[ScriptOp], b: &[ScriptOp]) -> Result<(), SimError> {
    if a.len() != b.len() {
        return Err(SimError::StructureMismatch(format!(
            "{} ops vs {}",
            a.len(),
            b.len()
        )));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.shape() != y.shape() {
            return Err(SimError::StructureMismatch(format!(
                "op {i}: {x:?} vs {y:?}"
            )));
        }
    }
    Ok(())
}

/// Runs `ops` on a fresh topology with tracing on.
pub fn run_script(
    cfg: &TopologyConfig,
    ops: &[ScriptOp],
    client_seed: u64,
) -> Result<(Vec<ScriptResult>, AdversaryTrace), SimError> {
    let mut cfg = cfg.clone();
    cfg.trace = true;
    let mut topo = Topology::new(cfg.clone())?;
    let client = EnvelopeCipher::new(&cfg.proxy.client_key);
    let mut rng = ChaCha20Rng::seed_from_u64(client_seed);
    let table = topo.db()?.create_table(
        "emp",
        vec![
            Column::new("id", ColumnType::PlainInt),
            Column::new("salary", ColumnType::SensitiveInt),
            Column::new("note", ColumnType::SensitiveBytes),
        ],
    )?;
    let mut out = Vec::with_capacity(ops.len());
    for op in ops {
        let r = run_op(&mut topo, table, &client, &mut rng, op).unwrap_or_else(|e| {
            let db = topo.db().expect("scripts do not crash zones");
            for t in db.active_txns() {
                db.abort(t);
            }
            ScriptResult::Failed(e.to_string())
        });
        out.push(r);
    }
    Ok((out, topo.take_trace()))
}

fn run_op(
    topo: &mut Topology,
    table: TableId,
    client: &EnvelopeCipher,
    rng: &mut ChaCha20Rng,
    op: &ScriptOp,
) -> Result<ScriptResult, SimError> {
    let db = topo.db()?;
    let txn = db.begin()?;
    let int = |rng: &mut ChaCha20Rng, v: i64| client.seal(&v.to_le_bytes(), rng);
    let result = match op {
        ScriptOp::Insert { id, salary, note } => {
            let s = db.ingest(txn, ColumnType::SensitiveInt, vec![int(rng, *salary)])?;
            let n = db.ingest(
                txn,
                ColumnType::SensitiveBytes,
                vec![client.seal(note, rng)],
            )?;
            let row = db.insert_row(
                txn,
                table,
                vec![Cell::Int(*id), Cell::Fid(s[0]), Cell::Fid(n[0])],
            )?;
            ScriptResult::Row(row)
        }
        ScriptOp::SetSalary { row, salary } => {
            let s = db.ingest(txn, ColumnType::SensitiveInt, vec![int(rng, *salary)])?;
            db.update_row(txn, table, *row, vec![(1, Cell::Fid(s[0]))])?;
            ScriptResult::Done
        }
        ScriptOp::Delete { row } => {
            db.delete_row(txn, table, *row)?;
            ScriptResult::Done
        }
        ScriptOp::Reveal { row } => match db.read_row(txn, table, *row)? {
            None => ScriptResult::Missing,
            Some(cells) => {
                let fids = cells.iter().filter_map(Cell::fid).collect();
                let envs = db.reveal(txn, fids)?;
                let salary = client.open(&envs[0]).expect("own envelope");
                let note = client.open(&envs[1]).expect("own envelope");
                ScriptResult::Revealed {
                    salary: i64::from_le_bytes(salary.try_into().unwrap()),
                    note: match unpad(&note) {
                        Some(u) => u.to_vec(),
                        None => note,
                    },
                }
            }
        },
        ScriptOp::Sum => {
            let f = db.sum(txn, table, 1)?;
            let v = client
                .open(&db.reveal(txn, vec![f])?[0])
                .expect("own envelope");
            ScriptResult::Sum(i64::from_le_bytes(v.try_into().unwrap()))
        }
        ScriptOp::SelectGt { constant } => {
            let c = db.ingest(txn, ColumnType::SensitiveInt, vec![int(rng, *constant)])?;
            ScriptResult::Rows(db.select_where(txn, table, 1, OpKind::CmpGt, c[0])?)
        }
        ScriptOp::Vacuum => {
            db.commit(txn)?;
            db.vacuum(table)?;
            return Ok(ScriptResult::Done);
        }
    };
    db.commit(txn)?;
    Ok(result)
}

/// True iff two structure-identical scripts leave identical traces.
pub fn trace_indistinguishability(
    cfg: &TopologyConfig,
    seq_a: &[ScriptOp],
    seq_b: &[ScriptOp],
) -> Result<bool, SimError> {
    check_structure(seq_a, seq_b)?;
    let (_, ta) = run_script(cfg, seq_a, 7)?;
    let (_, tb) = run_script(cfg, seq_b, 7)?;
    Ok(ta == tb)
}
