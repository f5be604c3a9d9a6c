use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

fn csv_error(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

/// Header line followed by one serialised record per row, even when empty.
pub(crate) fn write_csv<R: Serialize>(rows: &[R], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub(crate) fn read_csv<R: DeserializeOwned>(text: &str) -> Result<Vec<R>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<R>, _>>()
        .map_err(csv_error)
}
