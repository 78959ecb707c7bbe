//! Append-only journal file shared by any number of processes.
//!
//! Each line is `seq|op|key=value|...|crc` terminated by LF, where `crc` is the
//! 8-hex-digit CRC32 of everything before the final `|`. Values are
//! percent-escaped for `%`, `|`, CR and LF. Every append and every catch-up read
//! happens under an OS advisory lock on the file (exclusive for appends, shared
//! for reads), so replaying the file always reconstructs a consistent state.
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use log::warn;

use super::{now_ms, Applied, Mutation, Storage, StorageState};
use crate::distribution::Distribution;
use crate::error::{Error, Result};
use crate::trial::{FrozenTrial, StudyDirection, StudyId, StudyRecord, TrialId, TrialState};

#[derive(Debug)]
pub struct JournalStorage {
    path: PathBuf,
    replica: RwLock<Replica>,
}

#[derive(Debug)]
struct Replica {
    file: File,
    state: StorageState,
    /// Byte offset just past the last fully applied record.
    offset: u64,
    seq: u64,
}

impl JournalStorage {
    /// Opens (creating if needed) a journal and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut replica = Replica {
            file,
            state: StorageState::default(),
            offset: 0,
            seq: 0,
        };
        replica.file.lock_shared()?;
        let caught_up = replica.catch_up();
        replica.file.unlock()?;
        caught_up?;
        Ok(Self {
            path,
            replica: RwLock::new(replica),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&self, mutation: Mutation) -> Result<Applied> {
        let mut replica = self.replica.write().expect("journal lock poisoned");
        replica.file.lock()?;
        let result = replica.append_locked(&mutation);
        let unlocked = replica.file.unlock();
        let applied = result?;
        unlocked?;
        Ok(applied)
    }

    fn read<T>(&self, f: impl FnOnce(&StorageState) -> Result<T>) -> Result<T> {
        {
            let replica = self.replica.read().expect("journal lock poisoned");
            if replica.file.metadata()?.len() == replica.offset {
                return f(&replica.state);
            }
        }
        let mut replica = self.replica.write().expect("journal lock poisoned");
        replica.file.lock_shared()?;
        let caught_up = replica.catch_up();
        replica.file.unlock()?;
        caught_up?;
        f(&replica.state)
    }
}

impl Replica {
    /// Applies every complete record past `offset`. A trailing partial line is
    /// left unread.
    fn catch_up(&mut self) -> Result<()> {
        let len = self.file.metadata()?.len();
        if len <= self.offset {
            return Ok(());
        }
        self.file.seek(SeekFrom::Start(self.offset))?;
        let mut buf = Vec::with_capacity((len - self.offset) as usize);
        (&self.file).take(len - self.offset).read_to_end(&mut buf)?;

        let mut consumed = 0usize;
        while let Some(nl) = buf[consumed..].iter().position(|&b| b == b'\n') {
            let line = &buf[consumed..consumed + nl];
            let line_no = self.seq as usize + 1;
            let text = std::str::from_utf8(line).map_err(|_| Error::CorruptJournal {
                line: line_no,
                message: "invalid UTF-8".into(),
            })?;
            let (seq, mutation, expected) = decode_line(text).map_err(|message| {
                Error::CorruptJournal {
                    line: line_no,
                    message,
                }
            })?;
            if seq != self.seq + 1 {
                return Err(Error::CorruptJournal {
                    line: line_no,
                    message: format!("sequence {seq} follows {}", self.seq),
                });
            }
            let applied = self.state.apply(&mutation).map_err(|e| Error::CorruptJournal {
                line: line_no,
                message: format!("record does not replay: {e}"),
            })?;
            if expected.is_some_and(|e| e != applied) {
                return Err(Error::CorruptJournal {
                    line: line_no,
                    message: format!("replay assigned {applied:?}, record says {expected:?}"),
                });
            }
            self.seq = seq;
            consumed += nl + 1;
        }
        if consumed < buf.len() {
            warn!(
                "ignoring {} bytes of partial trailing record in journal",
                buf.len() - consumed
            );
        }
        self.offset += consumed as u64;
        Ok(())
    }

    /// Drops the replica so the next catch-up replays the file from the start.
    fn resync(&mut self) {
        self.state = StorageState::default();
        self.offset = 0;
        self.seq = 0;
        if let Err(e) = self.catch_up() {
            warn!("journal resync failed: {e}");
        }
    }

    fn append_locked(&mut self, mutation: &Mutation) -> Result<Applied> {
        self.catch_up()?;
        if self.file.metadata()?.len() > self.offset {
            warn!("truncating partial trailing record at byte {}", self.offset);
            self.file.set_len(self.offset)?;
        }
        // apply() leaves the state untouched when it rejects a mutation
        let applied = self.state.apply(mutation)?;
        let seq = self.seq + 1;
        let line = encode_line(seq, mutation, applied);
        if let Err(e) = self.file.write_all(line.as_bytes()).and_then(|_| self.file.flush()) {
            self.resync();
            return Err(e.into());
        }
        self.seq = seq;
        self.offset += line.len() as u64;
        Ok(applied)
    }
}

impl Storage for JournalStorage {
    fn create_study(&self, name: &str, direction: StudyDirection) -> Result<StudyId> {
        match self.append(Mutation::CreateStudy {
            name: name.to_owned(),
            direction,
        })? {
            Applied::Study(id) => Ok(id),
            other => unreachable!("create_study applied as {other:?}"),
        }
    }

    fn get_study_by_name(&self, name: &str) -> Result<Option<StudyRecord>> {
        self.read(|s| Ok(s.study_by_name(name)))
    }

    fn get_study(&self, study_id: StudyId) -> Result<StudyRecord> {
        self.read(|s| s.study(study_id))
    }

    fn get_all_studies(&self) -> Result<Vec<StudyRecord>> {
        self.read(|s| Ok(s.studies()))
    }

    fn create_trial(&self, study_id: StudyId) -> Result<(TrialId, u64)> {
        match self.append(Mutation::CreateTrial {
            study_id,
            timestamp: now_ms(),
        })? {
            Applied::Trial(id, number) => Ok((id, number)),
            other => unreachable!("create_trial applied as {other:?}"),
        }
    }

    fn set_trial_param(
        &self,
        trial_id: TrialId,
        name: &str,
        distribution: &Distribution,
        internal: f64,
    ) -> Result<()> {
        self.append(Mutation::SetParam {
            trial_id,
            name: name.to_owned(),
            distribution: distribution.clone(),
            internal,
        })
        .map(drop)
    }

    fn set_trial_intermediate(&self, trial_id: TrialId, step: u64, value: f64) -> Result<()> {
        self.append(Mutation::SetIntermediate {
            trial_id,
            step,
            value,
        })
        .map(drop)
    }

    fn set_trial_state(
        &self,
        trial_id: TrialId,
        state: TrialState,
        value: Option<f64>,
    ) -> Result<()> {
        self.append(Mutation::SetState {
            trial_id,
            state,
            value,
            timestamp: now_ms(),
        })
        .map(drop)
    }

    fn get_trial(&self, trial_id: TrialId) -> Result<FrozenTrial> {
        self.read(|s| s.trial(trial_id))
    }

    fn get_all_trials(&self, study_id: StudyId) -> Result<Vec<FrozenTrial>> {
        self.read(|s| s.trials_of(study_id))
    }
}

fn escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '%' => out.push_str("%25"),
            '|' => out.push_str("%7C"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(value: &str) -> Result<String, String> {
    let mut out = String::with_capacity(value.len());
    let mut rest = value;
    while let Some(i) = rest.find('%') {
        out.push_str(&rest[..i]);
        let code = rest.get(i + 1..i + 3).ok_or("truncated escape")?;
        out.push(match code {
            "25" => '%',
            "7C" => '|',
            "0A" => '\n',
            "0D" => '\r',
            _ => return Err(format!("unknown escape %{code}")),
        });
        rest = &rest[i + 3..];
    }
    out.push_str(rest);
    Ok(out)
}

fn encode_line(seq: u64, mutation: &Mutation, applied: Applied) -> String {
    let mut fields: Vec<(&str, String)> = Vec::new();
    let op = match mutation {
        Mutation::CreateStudy { name, direction } => {
            let Applied::Study(id) = applied else {
                unreachable!()
            };
            fields.push(("study", id.to_string()));
            fields.push(("name", name.clone()));
            fields.push(("direction", direction.to_string()));
            "create_study"
        }
        Mutation::CreateTrial {
            study_id,
            timestamp,
        } => {
            let Applied::Trial(id, number) = applied else {
                unreachable!()
            };
            fields.push(("study", study_id.to_string()));
            fields.push(("trial", id.to_string()));
            fields.push(("number", number.to_string()));
            fields.push(("ts", timestamp.to_string()));
            "create_trial"
        }
        Mutation::SetParam {
            trial_id,
            name,
            distribution,
            internal,
        } => {
            fields.push(("trial", trial_id.to_string()));
            fields.push(("name", name.clone()));
            fields.push(("dist", distribution.to_string()));
            fields.push(("internal", format!("{internal:?}")));
            "set_param"
        }
        Mutation::SetIntermediate {
            trial_id,
            step,
            value,
        } => {
            fields.push(("trial", trial_id.to_string()));
            fields.push(("step", step.to_string()));
            fields.push(("value", format!("{value:?}")));
            "set_intermediate"
        }
        Mutation::SetState {
            trial_id,
            state,
            value,
            timestamp,
        } => {
            fields.push(("trial", trial_id.to_string()));
            fields.push(("state", state.to_string()));
            if let Some(v) = value {
                fields.push(("value", format!("{v:?}")));
            }
            fields.push(("ts", timestamp.to_string()));
            "set_state"
        }
    };
    let mut body = format!("{seq}|{op}");
    for (k, v) in fields {
        body.push('|');
        body.push_str(k);
        body.push('=');
        body.push_str(&escape(&v));
    }
    let crc = crc32fast::hash(body.as_bytes());
    format!("{body}|{crc:08x}\n")
}

struct Fields<'a>(Vec<(&'a str, String)>);

impl Fields<'_> {
    fn get(&self, key: &str) -> Result<&str, String> {
        self.0
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| format!("missing field {key:?}"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, String> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| format!("bad value {raw:?} for field {key:?}"))
    }
}

fn decode_line(line: &str) -> Result<(u64, Mutation, Option<Applied>), String> {
    let (body, crc) = line.rsplit_once('|').ok_or("missing checksum")?;
    let expected = u32::from_str_radix(crc, 16).map_err(|_| "bad checksum field")?;
    if crc.len() != 8 || crc32fast::hash(body.as_bytes()) != expected {
        return Err("checksum mismatch".into());
    }
    let mut parts = body.split('|');
    let seq: u64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or("bad sequence number")?;
    let op = parts.next().ok_or("missing op")?;
    let fields = Fields(
        parts
            .map(|p| {
                let (k, v) = p.split_once('=').ok_or_else(|| format!("bad field {p:?}"))?;
                Ok((k, unescape(v)?))
            })
            .collect::<Result<_, String>>()?,
    );
    let (mutation, applied) = match op {
        "create_study" => (
            Mutation::CreateStudy {
                name: fields.get("name")?.to_owned(),
                direction: fields.parse("direction")?,
            },
            Some(Applied::Study(fields.parse("study")?)),
        ),
        "create_trial" => (
            Mutation::CreateTrial {
                study_id: fields.parse("study")?,
                timestamp: fields.parse("ts")?,
            },
            Some(Applied::Trial(fields.parse("trial")?, fields.parse("number")?)),
        ),
        "set_param" => (
            Mutation::SetParam {
                trial_id: fields.parse("trial")?,
                name: fields.get("name")?.to_owned(),
                distribution: fields.parse("dist")?,
                internal: fields.parse("internal")?,
            },
            None,
        ),
        "set_intermediate" => (
            Mutation::SetIntermediate {
                trial_id: fields.parse("trial")?,
                step: fields.parse("step")?,
                value: fields.parse("value")?,
            },
            None,
        ),
        "set_state" => (
            Mutation::SetState {
                trial_id: fields.parse("trial")?,
                state: fields.parse("state")?,
                value: fields.get("value").ok().map(|_| fields.parse("value")).transpose()?,
                timestamp: fields.parse("ts")?,
            },
            None,
        ),
        other => return Err(format!("unknown op {other:?}")),
    };
    Ok((seq, mutation, applied))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn satisfies_storage_contract() {
        let dir = tempfile::tempdir().unwrap();
        crate::storage::tests::contract(&JournalStorage::open(dir.path().join("j")).unwrap());
    }

    #[test]
    fn line_format_is_stable() {
        let m = Mutation::SetParam {
            trial_id: 3,
            name: "a|b".into(),
            distribution: Distribution::categorical(["x", "y"]).unwrap(),
            internal: 1.0,
        };
        let line = encode_line(7, &m, Applied::Unit);
        let body = "7|set_param|trial=3|name=a%7Cb|dist=categorical(x%7Cy)|internal=1.0";
        assert_eq!(line, format!("{body}|{:08x}\n", crc32fast::hash(body.as_bytes())));
        let (seq, back, _) = decode_line(line.trim_end()).unwrap();
        assert_eq!((seq, back), (7, m));
    }

    #[test]
    fn checksum_mismatch_is_rejected() {
        let line = encode_line(
            1,
            &Mutation::CreateStudy {
                name: "s".into(),
                direction: StudyDirection::Minimize,
            },
            Applied::Study(1),
        );
        let tampered = line.trim_end().replace("name=s", "name=t");
        assert!(decode_line(&tampered).unwrap_err().contains("checksum"));
    }

    #[test]
    fn escape_round_trip() {
        for s in ["plain", "a|b", "100%", "x\ny\r", "%7C literal"] {
            assert_eq!(unescape(&escape(s)).unwrap(), s);
        }
    }

    #[test]
    fn reopen_reproduces_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.journal");
        let before = {
            let j = JournalStorage::open(&path).unwrap();
            let s = j.create_study("s", StudyDirection::Minimize).unwrap();
            let (t, _) = j.create_trial(s).unwrap();
            j.set_trial_param(t, "x", &Distribution::uniform(-1.0, 1.0).unwrap(), 0.3)
                .unwrap();
            j.set_trial_intermediate(t, 0, f64::NAN).unwrap();
            j.set_trial_state(t, TrialState::Complete, Some(0.1)).unwrap();
            j.get_all_trials(s).unwrap()
        };
        let after = JournalStorage::open(&path).unwrap().get_all_trials(1).unwrap();
        assert_eq!(before.len(), after.len());
        assert!(before[0].same_content(&after[0]));
        assert_eq!(before[0].created_at, after[0].created_at);
    }

    #[test]
    fn two_handles_see_each_others_writes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shared.journal");
        let a = Arc::new(JournalStorage::open(&path).unwrap());
        let b = Arc::new(JournalStorage::open(&path).unwrap());
        let s = a.create_study("d", StudyDirection::Minimize).unwrap();
        assert!(matches!(
            b.create_study("d", StudyDirection::Minimize),
            Err(Error::DuplicateStudy(_))
        ));
        let handles: Vec<_> = [a.clone(), b.clone()]
            .into_iter()
            .map(|j| std::thread::spawn(move || (0..25).map(|_| j.create_trial(s).unwrap()).collect::<Vec<_>>()))
            .collect();
        let mut all: Vec<_> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        all.sort();
        assert_eq!(all.iter().map(|t| t.1).collect::<Vec<_>>(), (0..50).collect::<Vec<_>>());
        assert_eq!(a.get_all_trials(s).unwrap().len(), 50);
    }

    #[test]
    fn partial_trailing_record_is_discarded_then_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.journal");
        {
            let j = JournalStorage::open(&path).unwrap();
            let s = j.create_study("s", StudyDirection::Minimize).unwrap();
            j.create_trial(s).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"3|create_trial|study=1|tri").unwrap();
        drop(f);

        let j = JournalStorage::open(&path).unwrap();
        assert_eq!(j.get_all_trials(1).unwrap().len(), 1);
        let (_, number) = j.create_trial(1).unwrap();
        assert_eq!(number, 1);
        let reopened = JournalStorage::open(&path).unwrap();
        assert_eq!(reopened.get_all_trials(1).unwrap().len(), 2);
    }

    #[test]
    fn corrupt_middle_record_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.journal");
        {
            let j = JournalStorage::open(&path).unwrap();
            let s = j.create_study("s", StudyDirection::Minimize).unwrap();
            j.create_trial(s).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap().replacen("name=s", "name=z", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            JournalStorage::open(&path),
            Err(Error::CorruptJournal { line: 1, .. })
        ));
    }
}
