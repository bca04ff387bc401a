pub mod cache;
pub mod consensus;
pub mod evaluate;
pub mod generate;
pub mod graphgen;
pub mod transfer;

pub(crate) fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
