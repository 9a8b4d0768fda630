//! Bearer-token sessions. Tokens are issued out of band (a tokens file or
//! [`TokenTable::issue`]) and checked against a clock on every request.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use chrono::{DateTime, Duration, Utc};
use mrvs_core::store::{Role, User};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSession {
    pub user_id: String,
    pub team: String,
    pub role: Role,
    pub token: String,
    pub expiry: DateTime<Utc>,
}

impl ApiSession {
    pub fn user(&self) -> User {
        User {
            user_id: self.user_id.clone(),
            team: self.team.clone(),
            role: self.role,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthError {
    Missing,
    Unknown,
    Expired,
}

impl AuthError {
    pub fn message(self) -> &'static str {
        match self {
            AuthError::Missing => "a bearer token is required",
            AuthError::Unknown => "unknown token",
            AuthError::Expired => "token expired",
        }
    }
}

#[derive(Debug, Default)]
pub struct TokenTable {
    sessions: RwLock<HashMap<String, ApiSession>>,
    issued: AtomicU64,
}

impl TokenTable {
    pub fn new(sessions: Vec<ApiSession>) -> TokenTable {
        TokenTable {
            sessions: RwLock::new(sessions.into_iter().map(|s| (s.token.clone(), s)).collect()),
            issued: AtomicU64::new(0),
        }
    }

    pub fn insert(&self, session: ApiSession) {
        self.sessions
            .write()
            .expect("token table lock")
            .insert(session.token.clone(), session);
    }

    /// Mints a token valid for `ttl` from `now`.
    pub fn issue(&self, user: &User, ttl: Duration, now: DateTime<Utc>) -> ApiSession {
        let n = self.issued.fetch_add(1, Ordering::Relaxed) + 1;
        let session = ApiSession {
            user_id: user.user_id.clone(),
            team: user.team.clone(),
            role: user.role,
            token: format!("tok-{}-{n}", user.user_id),
            expiry: now + ttl,
        };
        self.insert(session.clone());
        session
    }

    pub fn check(&self, token: &str, now: DateTime<Utc>) -> Result<ApiSession, AuthError> {
        let table = self.sessions.read().expect("token table lock");
        let s = table.get(token).ok_or(AuthError::Unknown)?;
        if now >= s.expiry {
            return Err(AuthError::Expired);
        }
        Ok(s.clone())
    }

    pub fn sessions(&self) -> Vec<ApiSession> {
        self.sessions.read().expect("token table lock").values().cloned().collect()
    }
}

/// Extracts the token from an `Authorization: Bearer <token>` value.
pub fn bearer(header: &str) -> Option<&str> {
    header
        .strip_prefix("Bearer ")
        .map(str::trim)
        .filter(|t| !t.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn issue_check_expire() {
        let t = TokenTable::default();
        let now = Utc.timestamp_opt(1_000, 0).unwrap();
        let user = User { user_id: "ana".into(), team: "t".into(), role: Role::Investigator };
        let s = t.issue(&user, Duration::seconds(60), now);
        assert_eq!(t.check(&s.token, now).unwrap().user_id, "ana");
        assert_eq!(t.check(&s.token, now + Duration::seconds(60)), Err(AuthError::Expired));
        assert_eq!(t.check("nope", now), Err(AuthError::Unknown));
        assert_eq!(bearer("Bearer abc"), Some("abc"));
        assert_eq!(bearer("Basic abc"), None);
    }
}
