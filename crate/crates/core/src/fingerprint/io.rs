//! On-disk formats: canonical JSONL scans, CSV matrices, radio registry
//! files, a best-effort FIND3 import and the normalized store directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{clamp_rssi, ApId, Band, Dataset, Fingerprint, LocationId, Mac, RadioRegistry};
use crate::error::{Error, Result};

pub const STORE_FINGERPRINTS: &str = "fingerprints.jsonl";
pub const STORE_RADIOS: &str = "radios.csv";
pub const STORE_LOCATIONS: &str = "locations.csv";

/// Location label as found on the wire: a JSON string or a number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label(pub String);

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Num(n) => Label(n.to_string()),
            Raw::Text(s) => Label(s),
        })
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

/// `{"mac": rssi, ...}` kept as a list so duplicate keys survive parsing
/// and can be rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignalList(pub Vec<(String, f64)>);

impl<'de> Deserialize<'de> for SignalList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = SignalList;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping MAC addresses to RSSI values")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<SignalList, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, f64>()? {
                    out.push((k, v));
                }
                Ok(SignalList(out))
            }
        }
        d.deserialize_map(V)
    }
}

impl Serialize for SignalList {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

/// One line of the canonical JSONL format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    #[serde(default)]
    pub device_id: String,
    #[serde(default)]
    pub ts_ms: i64,
    #[serde(default)]
    pub location: Option<Label>,
    pub signals: SignalList,
}

impl ScanRecord {
    pub fn from_fingerprint(fp: &Fingerprint) -> Self {
        ScanRecord {
            device_id: fp.device_id.clone(),
            ts_ms: fp.ts_ms,
            location: fp.location.map(|l| Label(l.to_string())),
            signals: SignalList(
                fp.signals()
                    .iter()
                    .map(|(m, v)| (m.to_string(), *v))
                    .collect(),
            ),
        }
    }

    /// Strict conversion: every MAC must parse and the label, if any,
    /// must be a positive integer.
    pub fn into_fingerprint(self) -> Result<Fingerprint> {
        let location = self.location.map(|l| l.0.parse::<LocationId>()).transpose()?;
        let signals = self
            .signals
            .0
            .into_iter()
            .map(|(m, v)| Ok((Mac::parse(&m)?, v)))
            .collect::<Result<Vec<_>>>()?;
        Fingerprint::new(self.device_id, self.ts_ms, location, signals)
    }
}

/// What an ingestion run kept and discarded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub fingerprints: usize,
    pub per_location: BTreeMap<LocationId, LocationCount>,
    pub unlabeled_scans: usize,
    pub malformed_scans: usize,
    pub empty_scans: usize,
    pub unknown_radio_readings: usize,
    pub invalid_mac_readings: usize,
    pub clamped_readings: usize,
    pub ignored_fields: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationCount {
    pub name: String,
    pub count: usize,
}

pub fn read_jsonl(reader: impl Read) -> Result<Vec<ScanRecord>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScanRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl(ds: &Dataset, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for fp in ds.fingerprints() {
        serde_json::to_writer(&mut w, &ScanRecord::from_fingerprint(fp))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// `location,<mac1>,<mac2>,...` with empty cells for unheard radios.
pub fn read_csv_matrix(reader: impl Read) -> Result<Vec<ScanRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0).map(str::trim) != Some("location") {
        return Err(Error::Parse("CSV header must start with `location`".into()));
    }
    let macs: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let label = rec.get(0).map(str::trim).filter(|s| !s.is_empty());
        let mut signals = Vec::new();
        for (mac, cell) in macs.iter().zip(rec.iter().skip(1)) {
            let cell = cell.trim();
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad RSSI {cell:?}", row + 1)))?;
            signals.push((mac.clone(), v));
        }
        out.push(ScanRecord {
            device_id: "csv".into(),
            ts_ms: row as i64,
            location: label.map(|l| Label(l.to_string())),
            signals: SignalList(signals),
        });
    }
    Ok(out)
}

pub fn write_csv_matrix(ds: &Dataset, writer: impl Write) -> Result<()> {
    let macs: Vec<Mac> = ds.registry().iter().map(|(m, _)| m.clone()).collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["location".to_string()];
    header.extend(macs.iter().map(|m| m.to_string()));
    w.write_record(&header)?;
    for (i, fp) in ds.fingerprints().iter().enumerate() {
        let mut row = vec![ds.label(i).to_string()];
        row.extend(macs.iter().map(|m| fp.rssi(m).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// FIND3 sensor documents: `{"d": device, "t": ms, "l": location,
/// "s": {"wifi": {mac: rssi}, "bluetooth": {...}}}`. Accepts a JSON array,
/// an object wrapping one, or one document per line. Only the `wifi`
/// family is kept; everything else is tallied in `ignored`.
pub fn read_find3(
    reader: impl Read,
    ignored: &mut BTreeMap<String, usize>,
) -> Result<Vec<ScanRecord>> {
    let mut text = String::new();
    BufReader::new(reader).read_to_string(&mut text)?;
    let docs: Vec<serde_json::Value> = match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(serde_json::Value::Array(items)) => items,
        Ok(serde_json::Value::Object(obj)) => {
            match obj.iter().find(|(_, v)| v.is_array()) {
                Some((_, serde_json::Value::Array(items))) if !obj.contains_key("s") => items.clone(),
                _ => vec![serde_json::Value::Object(obj)],
            }
        }
        Ok(_) => return Err(Error::Parse("FIND3 input must hold objects".into())),
        Err(_) => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))
            })
            .collect::<Result<_>>()?,
    };
    docs.iter().map(|doc| find3_doc(doc, ignored)).collect()
}

fn find3_doc(doc: &serde_json::Value, ignored: &mut BTreeMap<String, usize>) -> Result<ScanRecord> {
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Parse("FIND3 document is not an object".into()))?;
    let mut rec = ScanRecord {
        device_id: String::new(),
        ts_ms: 0,
        location: None,
        signals: SignalList::default(),
    };
    for (key, value) in obj {
        match key.as_str() {
            "d" | "device" => rec.device_id = value.as_str().unwrap_or_default().to_string(),
            "t" | "timestamp" => rec.ts_ms = value.as_i64().unwrap_or_default(),
            "l" | "location" => {
                rec.location = match value {
                    serde_json::Value::String(s) if !s.is_empty() => Some(Label(s.clone())),
                    serde_json::Value::Number(n) => Some(Label(n.to_string())),
                    _ => None,
                }
            }
            "s" | "sensors" => {
                let families = value
                    .as_object()
                    .ok_or_else(|| Error::Parse("FIND3 `s` must be an object".into()))?;
                for (family, readings) in families {
                    let Some(readings) = readings.as_object() else {
                        *ignored.entry(format!("s.{family}")).or_default() += 1;
                        continue;
                    };
                    if family != "wifi" {
                        *ignored.entry(format!("s.{family}")).or_default() += readings.len();
                        continue;
                    }
                    for (mac, rssi) in readings {
                        match rssi.as_f64() {
                            Some(v) => rec.signals.0.push((mac.clone(), v)),
                            None => *ignored.entry("s.wifi.non_numeric".into()).or_default() += 1,
                        }
                    }
                }
            }
            other => *ignored.entry(other.to_string()).or_default() += 1,
        }
    }
    Ok(rec)
}

/// `mac,band[,ap]`; without the `ap` column AP grouping is inferred.
pub fn read_registry(reader: impl Read) -> Result<RadioRegistry> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (mac_col, band_col) = match (col("mac"), col("band")) {
        (Some(m), Some(b)) => (m, b),
        _ => return Err(Error::Parse("registry header must contain mac,band".into())),
    };
    let ap_col = col("ap");
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mac = Mac::parse(rec.get(mac_col).unwrap_or_default())?;
        let band: Band = rec.get(band_col).unwrap_or_default().parse()?;
        let ap = ap_col
            .and_then(|c| rec.get(c))
            .filter(|s| !s.is_empty())
            .map(|s| ApId(s.to_string()));
        rows.push((mac, band, ap));
    }
    if rows.iter().all(|r| r.2.is_some()) && !rows.is_empty() {
        let mut reg = RadioRegistry::new();
        for (mac, band, ap) in rows {
            reg.insert(mac, band, ap.expect("checked above"));
        }
        Ok(reg)
    } else {
        Ok(RadioRegistry::with_inferred_aps(rows.into_iter().map(|(m, b, _)| (m, b))))
    }
}

pub fn write_registry(reg: &RadioRegistry, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["mac", "band", "ap"])?;
    for (mac, info) in reg.iter() {
        w.write_record([mac.to_string(), info.band.to_string(), info.ap.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Label → id. All-numeric label sets keep their numbers; otherwise the
/// distinct labels are numbered 1.. in sorted order.
pub fn resolve_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, LocationId> {
    let distinct: BTreeSet<&str> = labels.into_iter().collect();
    let numeric: Option<Vec<LocationId>> = distinct.iter().map(|l| l.parse().ok()).collect();
    match numeric {
        Some(ids) => distinct.iter().map(|l| l.to_string()).zip(ids).collect(),
        None => distinct
            .iter()
            .enumerate()
            .map(|(i, l)| (l.to_string(), LocationId(i as u32 + 1)))
            .collect(),
    }
}

/// Normalizes raw scans against a registry into a labeled dataset.
pub fn assemble(records: Vec<ScanRecord>, registry: RadioRegistry) -> Result<(Dataset, IngestSummary)> {
    let mut summary = IngestSummary::default();
    let ids = resolve_labels(
        records
            .iter()
            .filter_map(|r| r.location.as_ref().map(|l| l.0.trim()))
            .filter(|l| !l.is_empty()),
    );
    let mut fingerprints = Vec::new();
    for rec in records {
        let Some(location) = rec
            .location
            .as_ref()
            .and_then(|l| ids.get(l.0.trim()).copied())
        else {
            summary.unlabeled_scans += 1;
            continue;
        };
        let mut signals = Vec::new();
        for (raw, v) in rec.signals.0 {
            match Mac::parse(&raw) {
                Ok(mac) if registry.contains(&mac) => {
                    if v.is_finite() {
                        summary.clamped_readings += usize::from(clamp_rssi(v).1);
                    }
                    signals.push((mac, v));
                }
                Ok(_) => summary.unknown_radio_readings += 1,
                Err(_) => summary.invalid_mac_readings += 1,
            }
        }
        if signals.is_empty() {
            summary.empty_scans += 1;
            continue;
        }
        match Fingerprint::new(rec.device_id, rec.ts_ms, Some(location), signals) {
            Ok(fp) => fingerprints.push(fp),
            Err(e) => {
                log::warn!("dropping malformed scan: {e}");
                summary.malformed_scans += 1;
            }
        }
    }
    if fingerprints.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let locations: BTreeMap<LocationId, String> =
        ids.into_iter().map(|(name, id)| (id, name)).collect();
    let ds = Dataset::new(fingerprints, locations, registry)?;
    summary.fingerprints = ds.len();
    summary.per_location = ds
        .counts_by_location()
        .into_iter()
        .map(|(id, count)| {
            let name = ds.locations()[&id].clone();
            (id, LocationCount { name, count })
        })
        .collect();
    Ok((ds, summary))
}

pub fn save_store(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_jsonl(ds, File::create(dir.join(STORE_FINGERPRINTS))?)?;
    write_registry(ds.registry(), File::create(dir.join(STORE_RADIOS))?)?;
    let mut w = csv::Writer::from_writer(File::create(dir.join(STORE_LOCATIONS))?);
    w.write_record(["id", "name"])?;
    for (id, name) in ds.locations() {
        w.write_record([id.to_string(), name.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_locations(reader: impl Read) -> Result<BTreeMap<LocationId, String>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id: LocationId = rec.get(0).unwrap_or_default().parse()?;
        out.insert(id, rec.get(1).unwrap_or_default().to_string());
    }
    Ok(out)
}

pub fn load_store(dir: &Path) -> Result<Dataset> {
    let registry = read_registry(File::open(dir.join(STORE_RADIOS))?)?;
    let locations = read_locations(File::open(dir.join(STORE_LOCATIONS))?)?;
    let fingerprints = read_jsonl(File::open(dir.join(STORE_FINGERPRINTS))?)?
        .into_iter()
        .map(ScanRecord::into_fingerprint)
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(fingerprints, locations, registry)
}
