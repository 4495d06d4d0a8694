//! Task corpus codecs.
//!
//! **JSONL**: one task per line,
//!
//! ```text
//! {"context":{"x":[[..]],"time":[..],"event":[..],"latent_event":[..],"latent_censor":[..]},
//!  "query":{"x":[[..]],"latent_event":[..],"latent_censor":[..]},
//!  "summary":{"family":"mixture",...}}
//! ```
//!
//! Non-finite summary rates are written as `null`.
//!
//! **Binary** (little-endian): a 16-byte header `b"SPFNTASK"`, `u32`
//! version, `u32` flags (must be 0), then `u64` task count and one record per
//! task:
//!
//! ```text
//! u32 n_ctx, u32 n_query, u32 d
//! u8 family, u8 via_kitchen_sink, u8 censoring, u8 0
//! f64 target_censor_rate, f64 censor_scale, f64 probe_censor_rate, f64 t_max, u64 seed
//! f64[n_ctx*d] context x (row-major), f64[n_ctx] time, u8[n_ctx] event,
//! f64[n_ctx] latent event, f64[n_ctx] latent censor,
//! f64[n_query*d] query x, f64[n_query] latent event, f64[n_query] latent censor
//! ```
//!
//! Both decoders validate every task and reject trailing input.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalData;
use crate::error::{Error, Result};
use crate::prior::{CensoringKind, Latents, PriorFamily, SpecSummary, TaskSample};

pub const TASK_MAGIC: &[u8; 8] = b"SPFNTASK";
pub const TASK_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextRecord {
    x: Vec<Vec<f64>>,
    time: Vec<f64>,
    event: Vec<bool>,
    latent_event: Vec<f64>,
    latent_censor: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRecord {
    x: Vec<Vec<f64>>,
    latent_event: Vec<f64>,
    latent_censor: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SummaryRecord {
    family: PriorFamily,
    via_kitchen_sink: bool,
    censoring: CensoringKind,
    target_censor_rate: Option<f64>,
    censor_scale: f64,
    probe_censor_rate: Option<f64>,
    t_max: f64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskRecord {
    context: ContextRecord,
    query: QueryRecord,
    summary: SummaryRecord,
}

fn rows(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: Vec<Vec<f64>>, d: usize, what: &str) -> Result<Array2<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::format(
            "task JSONL",
            format!("{what} rows must all have {d} values"),
        ));
    }
    Ok(
        Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
            .expect("checked shape"),
    )
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl TaskRecord {
    fn from_task(t: &TaskSample) -> Self {
        let s = &t.summary;
        Self {
            context: ContextRecord {
                x: rows(&t.context.x),
                time: t.context.times.clone(),
                event: t.context.events.clone(),
                latent_event: t.context_latents.event.clone(),
                latent_censor: t.context_latents.censor.clone(),
            },
            query: QueryRecord {
                x: rows(&t.query_x),
                latent_event: t.query_latents.event.clone(),
                latent_censor: t.query_latents.censor.clone(),
            },
            summary: SummaryRecord {
                family: s.family,
                via_kitchen_sink: s.via_kitchen_sink,
                censoring: s.censoring,
                target_censor_rate: finite(s.target_censor_rate),
                censor_scale: s.censor_scale,
                probe_censor_rate: finite(s.probe_censor_rate),
                t_max: s.t_max,
                seed: s.seed,
            },
        }
    }

    fn into_task(self) -> Result<TaskSample> {
        let d = self
            .context
            .x
            .first()
            .or(self.query.x.first())
            .map_or(0, Vec::len);
        let x = matrix(self.context.x, d, "context")?;
        let qx = matrix(self.query.x, d, "query")?;
        let s = self.summary;
        let task = TaskSample {
            context: SurvivalData {
                x,
                times: self.context.time,
                events: self.context.event,
            },
            context_latents: Latents {
                event: self.context.latent_event,
                censor: self.context.latent_censor,
            },
            query_x: qx,
            query_latents: Latents {
                event: self.query.latent_event,
                censor: self.query.latent_censor,
            },
            summary: SpecSummary {
                family: s.family,
                via_kitchen_sink: s.via_kitchen_sink,
                censoring: s.censoring,
                target_censor_rate: s.target_censor_rate.unwrap_or(f64::NAN),
                censor_scale: s.censor_scale,
                probe_censor_rate: s.probe_censor_rate.unwrap_or(f64::NAN),
                t_max: s.t_max,
                seed: s.seed,
            },
        };
        task.validate()?;
        Ok(task)
    }
}

pub fn encode_task_json(task: &TaskSample) -> String {
    serde_json::to_string(&TaskRecord::from_task(task)).expect("task records always serialize")
}

pub fn decode_task_json(line: &str) -> Result<TaskSample> {
    let rec: TaskRecord =
        serde_json::from_str(line).map_err(|e| Error::format("task JSONL", e.to_string()))?;
    rec.into_task()
}

/// One line per task, each terminated by `\n`.
pub fn encode_tasks_jsonl(tasks: &[TaskSample]) -> String {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&encode_task_json(t));
        out.push('\n');
    }
    out
}

/// Blank lines are skipped; errors name the 1-based line.
pub fn decode_tasks_jsonl(text: &str) -> Result<Vec<TaskSample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            decode_task_json(l).map_err(|e| match e {
                Error::Format { what, detail } => {
                    Error::format(what, format!("line {}: {detail}", i + 1))
                }
                other => Error::format("task JSONL", format!("line {}: {other}", i + 1)),
            })
        })
        .collect()
}

fn family_code(f: PriorFamily) -> u8 {
    match f {
        PriorFamily::Naive => 0,
        PriorFamily::SurvivalDistribution => 1,
        PriorFamily::Mixture => 2,
        PriorFamily::KitchenSink => 3,
    }
}

fn censoring_code(c: CensoringKind) -> u8 {
    match c {
        CensoringKind::Uniform => 0,
        CensoringKind::Random => 1,
        CensoringKind::Administrative => 2,
        CensoringKind::ConditionalIndependent => 3,
    }
}

fn put_f64s(out: &mut Vec<u8>, v: impl IntoIterator<Item = f64>) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_tasks_binary(tasks: &[TaskSample]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(TASK_MAGIC);
    out.extend_from_slice(&TASK_VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(tasks.len() as u64).to_le_bytes());
    for t in tasks {
        let dims = [t.n_context(), t.n_query(), t.context.dim()];
        for v in dims {
            let v = u32::try_from(v).map_err(|_| Error::data("task dimension exceeds u32"))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        let s = &t.summary;
        out.extend_from_slice(&[
            family_code(s.family),
            u8::from(s.via_kitchen_sink),
            censoring_code(s.censoring),
            0,
        ]);
        put_f64s(
            &mut out,
            [
                s.target_censor_rate,
                s.censor_scale,
                s.probe_censor_rate,
                s.t_max,
            ],
        );
        out.extend_from_slice(&s.seed.to_le_bytes());
        put_f64s(&mut out, t.context.x.iter().copied());
        put_f64s(&mut out, t.context.times.iter().copied());
        out.extend(t.context.events.iter().map(|&e| u8::from(e)));
        put_f64s(&mut out, t.context_latents.event.iter().copied());
        put_f64s(&mut out, t.context_latents.censor.iter().copied());
        put_f64s(&mut out, t.query_x.iter().copied());
        put_f64s(&mut out, t.query_latents.event.iter().copied());
        put_f64s(&mut out, t.query_latents.censor.iter().copied());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::format("task binary", format!("truncated at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format("task binary", "size overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn decode_record(r: &mut Reader) -> Result<TaskSample> {
    let n_ctx = r.u32()? as usize;
    let n_q = r.u32()? as usize;
    let d = r.u32()? as usize;
    // bytes the record body needs, checked before any allocation
    let need = (n_ctx as u128) * (d as u128 + 3) * 8
        + n_ctx as u128
        + (n_q as u128) * (d as u128 + 2) * 8
        + 4
        + 40;
    if need > r.remaining() as u128 {
        return Err(Error::format(
            "task binary",
            format!("record at byte {} is truncated", r.pos),
        ));
    }
    let family = match r.u8()? {
        0 => PriorFamily::Naive,
        1 => PriorFamily::SurvivalDistribution,
        2 => PriorFamily::Mixture,
        3 => PriorFamily::KitchenSink,
        c => {
            return Err(Error::format(
                "task binary",
                format!("unknown family code {c}"),
            ))
        }
    };
    let via_kitchen_sink = match r.u8()? {
        0 => false,
        1 => true,
        c => {
            return Err(Error::format(
                "task binary",
                format!("invalid flag byte {c}"),
            ))
        }
    };
    let censoring = match r.u8()? {
        0 => CensoringKind::Uniform,
        1 => CensoringKind::Random,
        2 => CensoringKind::Administrative,
        3 => CensoringKind::ConditionalIndependent,
        c => {
            return Err(Error::format(
                "task binary",
                format!("unknown censoring code {c}"),
            ))
        }
    };
    if r.u8()? != 0 {
        return Err(Error::format("task binary", "nonzero padding"));
    }
    let summary = SpecSummary {
        family,
        via_kitchen_sink,
        censoring,
        target_censor_rate: r.f64()?,
        censor_scale: r.f64()?,
        probe_censor_rate: r.f64()?,
        t_max: r.f64()?,
        seed: r.u64()?,
    };
    let x = Array2::from_shape_vec((n_ctx, d), r.f64s(n_ctx * d)?).expect("sized");
    let times = r.f64s(n_ctx)?;
    let events = r
        .take(n_ctx)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::format(
                "task binary",
                format!("event byte {b} is not 0 or 1"),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    let context_latents = Latents {
        event: r.f64s(n_ctx)?,
        censor: r.f64s(n_ctx)?,
    };
    let query_x = Array2::from_shape_vec((n_q, d), r.f64s(n_q * d)?).expect("sized");
    let query_latents = Latents {
        event: r.f64s(n_q)?,
        censor: r.f64s(n_q)?,
    };
    let task = TaskSample {
        context: SurvivalData { x, times, events },
        context_latents,
        query_x,
        query_latents,
        summary,
    };
    task.validate()?;
    Ok(task)
}

pub fn decode_tasks_binary(bytes: &[u8]) -> Result<Vec<TaskSample>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != TASK_MAGIC {
        return Err(Error::format("task binary", "bad magic"));
    }
    let version = r.u32()?;
    if version != TASK_VERSION {
        return Err(Error::format(
            "task binary",
            format!("unsupported version {version}"),
        ));
    }
    let flags = r.u32()?;
    if flags != 0 {
        return Err(Error::format(
            "task binary",
            format!("unknown flags {flags:#x}"),
        ));
    }
    let count = r.u64()?;
    // every record is at least 56 bytes
    if count > (r.remaining() / 56) as u64 {
        return Err(Error::format(
            "task binary",
            format!("{count} tasks cannot fit in {} bytes", r.remaining()),
        ));
    }
    let tasks = (0..count)
        .map(|_| decode_record(&mut r))
        .collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(Error::format(
            "task binary",
            format!("{} trailing bytes", r.remaining()),
        ));
    }
    Ok(tasks)
}
