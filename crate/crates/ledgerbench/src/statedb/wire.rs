//! JSON bodies of the document-store protocol.
//!
//! | request                         | body              | response             |
//! |---------------------------------|-------------------|----------------------|
//! | `GET /db/{db}/{key}`            |                   | [`Doc`] or 404       |
//! | `PUT /db/{db}/{key}`            | [`PutBody`]       | [`PutResponse`], 409 |
//! | `POST /db/{db}/_bulk_get`       | [`BulkGetRequest`]| [`BulkGetResponse`]  |
//! | `POST /db/{db}/_bulk_docs`      | [`BulkDocsRequest`]| [`BulkDocsResponse`], 409 |
//! | `GET /db/{db}/_all_docs?startkey=&endkey=` |        | [`AllDocsResponse`]  |
//!
//! Values travel base64-encoded. `_rev` is a per-key write counter starting
//! at 1; a write must present the current revision (absent for new keys).

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use ledgerbench_core::{Version, VersionedValue};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Doc {
    #[serde(rename = "_id")]
    pub id: String,
    #[serde(rename = "_rev")]
    pub rev: u64,
    pub value: String,
    pub version: Version,
}

impl Doc {
    pub fn to_versioned(&self) -> Result<VersionedValue, base64::DecodeError> {
        Ok(VersionedValue { value: STANDARD.decode(&self.value)?, version: self.version, revision: Some(self.rev) })
    }
}

pub fn encode_value(v: &[u8]) -> String {
    STANDARD.encode(v)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PutBody {
    #[serde(rename = "_rev", default, skip_serializing_if = "Option::is_none")]
    pub rev: Option<u64>,
    pub value: String,
    pub version: Version,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PutResponse {
    pub ok: bool,
    pub rev: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BulkGetRequest {
    pub keys: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BulkGetRow {
    pub key: String,
    pub doc: Option<Doc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BulkGetResponse {
    pub results: Vec<BulkGetRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BulkDoc {
    #[serde(rename = "_id")]
    pub id: String,
    #[serde(rename = "_rev", default, skip_serializing_if = "Option::is_none")]
    pub rev: Option<u64>,
    pub value: String,
    pub version: Version,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BulkDocsRequest {
    pub docs: Vec<BulkDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BulkDocResult {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rev: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BulkDocsResponse {
    pub results: Vec<BulkDocResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllDocsResponse {
    pub rows: Vec<Doc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub reason: String,
}
