use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use ledgerbench_core::VersionedValue;
use parking_lot::Mutex;
use serde::de::DeserializeOwned;

use super::wire::{
    encode_value, AllDocsResponse, BulkDoc, BulkDocsRequest, BulkDocsResponse, BulkGetRequest, BulkGetResponse, Doc,
    PutBody, PutResponse,
};
use super::{BatchEntry, CommitMode, DbError, DbStats, StateBackend};

/// Client for one database of a [`super::StateServer`].
///
/// Revisions learned from reads and writes are remembered until
/// [`StateBackend::end_block`], so a block that reads a key before writing it
/// does not fetch the revision twice.
pub struct RemoteDb {
    agent: ureq::Agent,
    base: String,
    revisions: Mutex<HashMap<String, Option<u64>>>,
    stats: DbStats,
}

fn transport(e: ureq::Error) -> DbError {
    match e {
        ureq::Error::Status(code, resp) => {
            DbError::Protocol(format!("unexpected status {code}: {}", resp.into_string().unwrap_or_default()))
        }
        ureq::Error::Transport(t) => DbError::BackendUnavailable(t.to_string()),
    }
}

fn parse<T: DeserializeOwned>(resp: ureq::Response) -> Result<T, DbError> {
    resp.into_json().map_err(|e| DbError::Protocol(e.to_string()))
}

fn versioned(doc: &Doc) -> Result<VersionedValue, DbError> {
    doc.to_versioned().map_err(|e| DbError::Protocol(e.to_string()))
}

impl RemoteDb {
    pub fn new(endpoint: &str, db: &str) -> Self {
        let agent = ureq::AgentBuilder::new()
            .max_idle_connections_per_host(64)
            .timeout(Duration::from_secs(30))
            .build();
        RemoteDb {
            agent,
            base: format!("{}/db/{}", endpoint.trim_end_matches('/'), urlencoding::encode(db)),
            revisions: Mutex::new(HashMap::new()),
            stats: DbStats::default(),
        }
    }

    fn doc_url(&self, key: &str) -> String {
        format!("{}/{}", self.base, urlencoding::encode(key))
    }

    fn remember(&self, key: &str, rev: Option<u64>) {
        self.revisions.lock().insert(key.to_string(), rev);
    }

    fn cached_revision(&self, key: &str) -> Option<Option<u64>> {
        self.revisions.lock().get(key).copied()
    }

    fn request(&self, key: &str) -> Result<Option<VersionedValue>, DbError> {
        DbStats::bump(&self.stats.get_requests);
        match self.agent.get(&self.doc_url(key)).call() {
            Ok(resp) => Ok(Some(versioned(&parse::<Doc>(resp)?)?)),
            Err(ureq::Error::Status(404, _)) => Ok(None),
            Err(e) => Err(transport(e)),
        }
    }

    fn fetch(&self, key: &str) -> Result<Option<VersionedValue>, DbError> {
        let value = self.request(key)?;
        self.remember(key, value.as_ref().and_then(|v| v.revision));
        Ok(value)
    }

    fn all_docs(&self, query: &str) -> Result<Vec<(String, VersionedValue)>, DbError> {
        let resp = self.agent.get(&format!("{}/_all_docs{query}", self.base)).call().map_err(transport)?;
        let body: AllDocsResponse = parse(resp)?;
        body.rows.iter().map(|d| Ok((d.id.clone(), versioned(d)?))).collect()
    }

    fn commit_per_key(&self, writes: &[BatchEntry]) -> Result<(), DbError> {
        for (key, value, version) in writes {
            let rev = match self.cached_revision(key) {
                Some(rev) => rev,
                None => self.fetch(key)?.and_then(|v| v.revision),
            };
            DbStats::bump(&self.stats.put_requests);
            let body = PutBody { rev, value: encode_value(value), version: *version };
            match self.agent.put(&self.doc_url(key)).send_json(&body) {
                Ok(resp) => {
                    let r: PutResponse = parse(resp)?;
                    self.remember(key, Some(r.rev));
                }
                Err(ureq::Error::Status(409, _)) => {
                    self.revisions.lock().remove(key);
                    return Err(DbError::RevisionConflict { key: key.clone() });
                }
                Err(e) => return Err(transport(e)),
            }
        }
        Ok(())
    }

    fn commit_bulk(&self, writes: &[BatchEntry]) -> Result<(), DbError> {
        let unknown: Vec<String> =
            writes.iter().filter(|(k, _, _)| self.cached_revision(k).is_none()).map(|(k, _, _)| k.clone()).collect();
        self.bulk_get(&unknown)?;
        let docs = writes
            .iter()
            .map(|(key, value, version)| BulkDoc {
                id: key.clone(),
                rev: self.cached_revision(key).flatten(),
                value: encode_value(value),
                version: *version,
            })
            .collect();
        DbStats::bump(&self.stats.bulk_put_requests);
        match self.agent.post(&format!("{}/_bulk_docs", self.base)).send_json(&BulkDocsRequest { docs }) {
            Ok(resp) => {
                let body: BulkDocsResponse = parse(resp)?;
                let mut revs = self.revisions.lock();
                for r in body.results {
                    revs.insert(r.id, r.rev);
                }
                Ok(())
            }
            Err(ureq::Error::Status(409, resp)) => {
                let body: BulkDocsResponse = parse(resp)?;
                let mut revs = self.revisions.lock();
                for r in &body.results {
                    revs.remove(&r.id);
                }
                let key = body.results.into_iter().next().map(|r| r.id).unwrap_or_default();
                Err(DbError::RevisionConflict { key })
            }
            Err(e) => Err(transport(e)),
        }
    }
}

impl StateBackend for RemoteDb {
    fn get(&self, key: &str) -> Result<Option<VersionedValue>, DbError> {
        self.fetch(key)
    }

    fn simulate_get(&self, key: &str) -> Result<Option<VersionedValue>, DbError> {
        self.request(key)
    }

    fn bulk_get(&self, keys: &[String]) -> Result<HashMap<String, Option<VersionedValue>>, DbError> {
        if keys.is_empty() {
            return Ok(HashMap::new());
        }
        DbStats::bump(&self.stats.bulk_get_requests);
        let resp = self
            .agent
            .post(&format!("{}/_bulk_get", self.base))
            .send_json(&BulkGetRequest { keys: keys.to_vec() })
            .map_err(transport)?;
        let body: BulkGetResponse = parse(resp)?;
        let mut out = HashMap::with_capacity(body.results.len());
        let mut revs = self.revisions.lock();
        for row in body.results {
            let value = row.doc.as_ref().map(versioned).transpose()?;
            revs.insert(row.key.clone(), value.as_ref().and_then(|v| v.revision));
            out.insert(row.key, value);
        }
        Ok(out)
    }

    fn commit_batch(&self, writes: &[BatchEntry], mode: CommitMode) -> Result<(), DbError> {
        if writes.is_empty() {
            return Ok(());
        }
        match mode {
            CommitMode::PerKey => self.commit_per_key(writes),
            CommitMode::Bulk => self.commit_bulk(writes),
        }
    }

    fn range(&self, start: &str, end: &str) -> Result<Vec<(String, VersionedValue)>, DbError> {
        DbStats::bump(&self.stats.range_requests);
        if start >= end {
            return Ok(Vec::new());
        }
        self.all_docs(&format!("?startkey={}&endkey={}", urlencoding::encode(start), urlencoding::encode(end)))
    }

    fn dump(&self) -> Result<BTreeMap<String, VersionedValue>, DbError> {
        Ok(self.all_docs("")?.into_iter().collect())
    }

    fn stats(&self) -> &DbStats {
        &self.stats
    }

    fn end_block(&self) {
        self.revisions.lock().clear();
    }
}
