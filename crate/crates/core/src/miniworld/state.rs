use std::collections::BTreeMap;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub first_name: String,
    pub last_name: String,
    pub email: String,
    #[serde(default)]
    pub phone: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Email {
    pub email_id: u64,
    pub from: String,
    pub to: String,
    pub subject: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transaction {
    pub transaction_id: u64,
    pub counterparty: String,
    pub amount: f64,
    pub note: String,
    pub date: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transfer {
    pub transfer_id: u64,
    pub to_account: String,
    pub amount: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Song {
    pub song_id: u64,
    pub title: String,
    pub artist: String,
    pub genre: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Playlist {
    pub playlist_id: u64,
    pub title: String,
    pub song_ids: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MailDb {
    pub inbox: Vec<Email>,
    pub sent: Vec<Email>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BankDb {
    pub balance: f64,
    pub transactions: Vec<Transaction>,
    pub transfers: Vec<Transfer>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MusicDb {
    pub songs: Vec<Song>,
    pub playlists: Vec<Playlist>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub user: String,
    pub app: String,
    /// Last turn on which the token is still accepted.
    pub expiry_turn: Option<u64>,
}

/// Why a presented token was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenProblem {
    Missing,
    Unknown,
    Expired,
    WrongApp,
}

impl TokenProblem {
    pub fn describe(self) -> &'static str {
        match self {
            TokenProblem::Missing => "no access_token was given",
            TokenProblem::Unknown => "the access_token is not a live session",
            TokenProblem::Expired => "the access_token has expired",
            TokenProblem::WrongApp => "the access_token was issued by another app",
        }
    }
}

/// Everything the world knows. Only the interpreter mutates it.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub profile: Profile,
    /// App name to account password.
    pub passwords: BTreeMap<String, String>,
    pub mail: MailDb,
    pub bank: BankDb,
    pub music: MusicDb,
    pub sessions: BTreeMap<String, Session>,
    pub rng_seed: u64,
    /// Number of `execute` calls so far.
    pub turn_counter: u64,
    pub token_expiry_turns: Option<u64>,
    /// Answer passed to the completion endpoint, once called.
    pub completed: Option<serde_json::Value>,
    rng: ChaCha8Rng,
}

impl PartialEq for WorldState {
    fn eq(&self, other: &Self) -> bool {
        self.profile == other.profile
            && self.passwords == other.passwords
            && self.mail == other.mail
            && self.bank == other.bank
            && self.music == other.music
            && self.sessions == other.sessions
            && self.rng_seed == other.rng_seed
            && self.turn_counter == other.turn_counter
            && self.completed == other.completed
            && self.rng == other.rng
    }
}

impl WorldState {
    pub fn new(rng_seed: u64, token_expiry_turns: Option<u64>) -> Self {
        WorldState {
            profile: Profile::default(),
            passwords: BTreeMap::new(),
            mail: MailDb::default(),
            bank: BankDb::default(),
            music: MusicDb::default(),
            sessions: BTreeMap::new(),
            rng_seed,
            turn_counter: 0,
            token_expiry_turns,
            completed: None,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    /// Mints a fresh `"{app}-{12 hex}"` token, unique within this world.
    pub fn mint_token(&mut self, app: &str, user: &str) -> String {
        loop {
            let mut bytes = [0u8; 6];
            self.rng.fill_bytes(&mut bytes);
            let token = format!("{app}-{}", hex::encode(bytes));
            if !self.sessions.contains_key(&token) {
                let expiry_turn = self.token_expiry_turns.map(|n| self.turn_counter + n);
                self.sessions.insert(token.clone(), Session { user: user.into(), app: app.into(), expiry_turn });
                return token;
            }
        }
    }

    pub fn check_token(&self, app: &str, token: Option<&serde_json::Value>) -> Result<(), TokenProblem> {
        let token = match token {
            None | Some(serde_json::Value::Null) => return Err(TokenProblem::Missing),
            Some(serde_json::Value::String(s)) => s,
            Some(_) => return Err(TokenProblem::Unknown),
        };
        let session = self.sessions.get(token).ok_or(TokenProblem::Unknown)?;
        if session.app != app {
            return Err(TokenProblem::WrongApp);
        }
        if session.expiry_turn.is_some_and(|t| self.turn_counter > t) {
            return Err(TokenProblem::Expired);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_are_deterministic_and_unique() {
        let mut a = WorldState::new(7, None);
        let mut b = WorldState::new(7, None);
        let ta: Vec<_> = (0..20).map(|_| a.mint_token("mail", "u")).collect();
        let tb: Vec<_> = (0..20).map(|_| b.mint_token("mail", "u")).collect();
        assert_eq!(ta, tb);
        let unique: std::collections::BTreeSet<_> = ta.iter().collect();
        assert_eq!(unique.len(), 20);
        assert!(ta[0].starts_with("mail-") && ta[0].len() == "mail-".len() + 12);
    }

    #[test]
    fn token_checks() {
        let mut w = WorldState::new(1, Some(2));
        let t = w.mint_token("bank", "u");
        let v = serde_json::Value::String(t);
        assert_eq!(w.check_token("bank", Some(&v)), Ok(()));
        assert_eq!(w.check_token("mail", Some(&v)), Err(TokenProblem::WrongApp));
        assert_eq!(w.check_token("bank", None), Err(TokenProblem::Missing));
        w.turn_counter = 3;
        assert_eq!(w.check_token("bank", Some(&v)), Err(TokenProblem::Expired));
    }
}
