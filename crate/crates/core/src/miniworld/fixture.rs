//! Task fixtures: TOML files describing a task, the initial world, and the
//! unit checks that decide the reward.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::TaskSpec;
use crate::env::EnvError;

use super::state::{Email, Playlist, Profile, Song, Transaction, WorldState};

pub const DEFAULT_MAX_TURNS: u32 = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFixture {
    pub id: String,
    pub difficulty: u8,
    pub instruction: String,
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
    #[serde(default)]
    pub seed: u64,
    /// Sessions expire this many `execute` calls after login. Absent: never.
    #[serde(default)]
    pub token_expiry_turns: Option<u64>,
    pub profile: Profile,
    #[serde(default)]
    pub passwords: BTreeMap<String, String>,
    #[serde(default)]
    pub mail: MailFixture,
    #[serde(default)]
    pub bank: BankFixture,
    #[serde(default)]
    pub music: MusicFixture,
    #[serde(default)]
    pub checks: Vec<Check>,
    /// Behaviour of the synthetic scripted model; ignored by the world.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<toml::Value>,
}

fn default_max_turns() -> u32 {
    DEFAULT_MAX_TURNS
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MailFixture {
    #[serde(default)]
    pub inbox: Vec<EmailFixture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmailFixture {
    pub from: String,
    pub subject: String,
    pub body: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankFixture {
    #[serde(default)]
    pub balance: f64,
    #[serde(default)]
    pub transactions: Vec<TransactionFixture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransactionFixture {
    pub counterparty: String,
    pub amount: f64,
    #[serde(default)]
    pub note: String,
    pub date: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MusicFixture {
    #[serde(default)]
    pub songs: Vec<SongFixture>,
    /// Generated catalog entries, appended after `songs`.
    #[serde(default)]
    pub song_batches: Vec<SongBatch>,
    #[serde(default)]
    pub playlists: Vec<PlaylistFixture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SongFixture {
    pub title: String,
    pub artist: String,
    pub genre: String,
    #[serde(default)]
    pub description: String,
}

/// `count` songs titled `"{title_prefix} {n}"` with padded descriptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SongBatch {
    pub title_prefix: String,
    pub artist: String,
    pub genre: String,
    pub count: usize,
    #[serde(default = "default_description_chars")]
    pub description_chars: usize,
}

fn default_description_chars() -> usize {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaylistFixture {
    pub title: String,
    #[serde(default)]
    pub song_ids: Vec<u64>,
}

/// A deterministic predicate over the final world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    EmailSent {
        to: String,
        #[serde(default)]
        subject_contains: Option<String>,
        #[serde(default)]
        body_contains: Vec<String>,
    },
    TransferMade {
        to_account: String,
        amount: f64,
    },
    PlaylistHasSongs {
        title: String,
        song_ids: Vec<u64>,
    },
    TaskCompleted {
        #[serde(default)]
        answer: Option<String>,
    },
    NoEmailSentTo {
        to: String,
    },
}

impl Check {
    pub fn passes(&self, world: &WorldState) -> bool {
        match self {
            Check::EmailSent { to, subject_contains, body_contains } => world.mail.sent.iter().any(|e| {
                e.to.eq_ignore_ascii_case(to)
                    && subject_contains.as_ref().is_none_or(|s| e.subject.contains(s.as_str()))
                    && body_contains.iter().all(|b| e.body.contains(b.as_str()))
            }),
            Check::TransferMade { to_account, amount } => world
                .bank
                .transfers
                .iter()
                .any(|t| &t.to_account == to_account && (t.amount - amount).abs() < 0.005),
            Check::PlaylistHasSongs { title, song_ids } => world
                .music
                .playlists
                .iter()
                .any(|p| &p.title == title && song_ids.iter().all(|id| p.song_ids.contains(id))),
            Check::TaskCompleted { answer } => match (&world.completed, answer) {
                (None, _) => false,
                (Some(_), None) => true,
                (Some(given), Some(expected)) => {
                    let given = match given {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    given.trim().eq_ignore_ascii_case(expected.trim())
                }
            },
            Check::NoEmailSentTo { to } => !world.mail.sent.iter().any(|e| e.to.eq_ignore_ascii_case(to)),
        }
    }
}

impl TaskFixture {
    pub fn from_toml_str(text: &str) -> Result<Self, EnvError> {
        let fixture: TaskFixture = toml::from_str(text).map_err(|e| EnvError::Fixture(e.to_string()))?;
        fixture.validate()?;
        Ok(fixture)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| EnvError::Fixture(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.id.trim().is_empty() {
            return Err(EnvError::Fixture("empty task id".into()));
        }
        if !(1..=3).contains(&self.difficulty) {
            return Err(EnvError::Fixture(format!("{}: difficulty {} not in 1..=3", self.id, self.difficulty)));
        }
        if self.max_turns == 0 {
            return Err(EnvError::Fixture(format!("{}: max_turns must be >= 1", self.id)));
        }
        if self.checks.is_empty() {
            return Err(EnvError::Fixture(format!("{}: at least one check is required", self.id)));
        }
        Ok(())
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            task_id: self.id.clone(),
            instruction: self.instruction.clone(),
            difficulty: self.difficulty,
            max_turns: self.max_turns,
        }
    }

    /// Builds the initial world for this task.
    pub fn initial_state(&self) -> WorldState {
        let mut world = WorldState::new(self.seed, self.token_expiry_turns);
        world.profile = self.profile.clone();
        world.passwords = self.passwords.clone();
        world.mail.inbox = self
            .mail
            .inbox
            .iter()
            .enumerate()
            .map(|(i, e)| Email {
                email_id: i as u64 + 1,
                from: e.from.clone(),
                to: self.profile.email.clone(),
                subject: e.subject.clone(),
                body: e.body.clone(),
            })
            .collect();
        world.bank.balance = self.bank.balance;
        world.bank.transactions = self
            .bank
            .transactions
            .iter()
            .enumerate()
            .map(|(i, t)| Transaction {
                transaction_id: i as u64 + 1,
                counterparty: t.counterparty.clone(),
                amount: t.amount,
                note: t.note.clone(),
                date: t.date.clone(),
            })
            .collect();
        let mut songs: Vec<Song> = self
            .music
            .songs
            .iter()
            .map(|s| Song {
                song_id: 0,
                title: s.title.clone(),
                artist: s.artist.clone(),
                genre: s.genre.clone(),
                description: s.description.clone(),
            })
            .collect();
        for batch in &self.music.song_batches {
            for n in 1..=batch.count {
                songs.push(Song {
                    song_id: 0,
                    title: format!("{} {n}", batch.title_prefix),
                    artist: batch.artist.clone(),
                    genre: batch.genre.clone(),
                    description: filler_description(&batch.title_prefix, n, batch.description_chars),
                });
            }
        }
        for (i, s) in songs.iter_mut().enumerate() {
            s.song_id = i as u64 + 1;
        }
        world.music.songs = songs;
        world.music.playlists = self
            .music
            .playlists
            .iter()
            .enumerate()
            .map(|(i, p)| Playlist { playlist_id: i as u64 + 1, title: p.title.clone(), song_ids: p.song_ids.clone() })
            .collect();
        world
    }
}

const FILLER: &str = "A slow-building arrangement with brushed drums, warm upright bass and a long solo \
that circles back to the opening theme before a quiet coda recorded live in one take. ";

fn filler_description(prefix: &str, n: usize, chars: usize) -> String {
    let mut s = format!("Track {n} of the {prefix} sessions. ");
    while s.len() < chars {
        s.push_str(FILLER);
    }
    s.truncate(chars);
    s.trim_end().to_string()
}
