//! On-disk JSON formats.
//!
//! An instance document carries the fields `n`, `m`, `coords` (array of
//! `[x, y]` decimals, shortest round-trip representation), `cluster`,
//! `depot` (optional, defaults to 0), `family`, and `seed`. A dataset is a
//! JSON array of instance documents. A tour document carries
//! `{instance_seed, family, nodes, cost}`.

use super::{Family, GtspInstance, InstanceError, Tour};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Serialized form of a solved tour, keyed by the instance it solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourDoc {
    pub instance_seed: u64,
    pub family: Family,
    pub nodes: Vec<usize>,
    pub cost: f64,
}

impl TourDoc {
    pub fn from_tour(instance: &GtspInstance, tour: &Tour) -> Self {
        TourDoc {
            instance_seed: instance.seed,
            family: instance.family,
            nodes: tour.nodes().to_vec(),
            cost: tour.cost(),
        }
    }
}

fn parse_err(e: serde_json::Error) -> InstanceError {
    InstanceError::Parse(e.to_string())
}

/// Writes one instance as pretty-printed JSON. Deterministic byte output.
pub fn write_instance<W: Write>(instance: &GtspInstance, mut sink: W) -> Result<(), InstanceError> {
    instance.validate()?;
    serde_json::to_writer_pretty(&mut sink, instance).map_err(parse_err)?;
    sink.write_all(b"\n").map_err(|e| InstanceError::Io {
        path: "<sink>".into(),
        source: e,
    })
}

/// Reads and validates one instance; a missing `depot` field defaults to 0.
pub fn read_instance<R: Read>(source: R) -> Result<GtspInstance, InstanceError> {
    let instance: GtspInstance = serde_json::from_reader(source).map_err(parse_err)?;
    instance.validate()?;
    Ok(instance)
}

pub fn write_dataset<W: Write>(
    instances: &[GtspInstance],
    mut sink: W,
) -> Result<(), InstanceError> {
    for instance in instances {
        instance.validate()?;
    }
    serde_json::to_writer_pretty(&mut sink, instances).map_err(parse_err)?;
    sink.write_all(b"\n").map_err(|e| InstanceError::Io {
        path: "<sink>".into(),
        source: e,
    })
}

pub fn read_dataset<R: Read>(source: R) -> Result<Vec<GtspInstance>, InstanceError> {
    let instances: Vec<GtspInstance> = serde_json::from_reader(source).map_err(parse_err)?;
    for (i, instance) in instances.iter().enumerate() {
        instance
            .validate()
            .map_err(|e| InstanceError::Validation(format!("instance {i}: {e}")))?;
    }
    Ok(instances)
}

pub fn write_tour<W: Write>(doc: &TourDoc, mut sink: W) -> Result<(), InstanceError> {
    serde_json::to_writer_pretty(&mut sink, doc).map_err(parse_err)?;
    sink.write_all(b"\n").map_err(|e| InstanceError::Io {
        path: "<sink>".into(),
        source: e,
    })
}

pub fn read_tour<R: Read>(source: R) -> Result<TourDoc, InstanceError> {
    serde_json::from_reader(source).map_err(parse_err)
}

/// Convenience file loader with path context on errors.
pub fn read_dataset_file(path: &Path) -> Result<Vec<GtspInstance>, InstanceError> {
    let file = std::fs::File::open(path).map_err(|e| InstanceError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_dataset(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::super::{generate_instance, GeneratorSpec};
    use super::*;

    #[test]
    fn instance_round_trips_bit_exactly() {
        for (family, n) in [(Family::Random, 30), (Family::Density, 30), (Family::Mixed, 100)] {
            let inst = generate_instance(&GeneratorSpec::new(family, n, 5, 123)).unwrap();
            let mut buf = Vec::new();
            write_instance(&inst, &mut buf).unwrap();
            let back = read_instance(buf.as_slice()).unwrap();
            assert_eq!(inst, back);
        }
    }

    #[test]
    fn dataset_round_trips() {
        let ds =
            super::super::generate_dataset(&GeneratorSpec::new(Family::Random, 10, 3, 7), 3).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn cluster_index_equal_to_m_is_rejected() {
        let doc = r#"{
            "n": 2, "m": 2,
            "coords": [[0.0, 0.0], [1.0, 1.0]],
            "cluster": [0, 2],
            "family": "random",
            "seed": 0
        }"#;
        let err = read_instance(doc.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn missing_depot_defaults_to_zero_and_round_trips() {
        let doc = r#"{
            "n": 2, "m": 2,
            "coords": [[0.0, 0.0], [1.0, 1.0]],
            "cluster": [0, 1],
            "family": "random",
            "seed": 9
        }"#;
        let inst = read_instance(doc.as_bytes()).unwrap();
        assert_eq!(inst.depot, 0);
        let mut buf = Vec::new();
        write_instance(&inst, &mut buf).unwrap();
        assert_eq!(read_instance(buf.as_slice()).unwrap(), inst);
    }

    #[test]
    fn malformed_document_reports_parse_error() {
        let err = read_instance("{ not json".as_bytes()).unwrap_err();
        assert!(matches!(err, InstanceError::Parse(_)));
    }

    #[test]
    fn tour_doc_round_trips() {
        let inst = generate_instance(&GeneratorSpec::new(Family::Random, 8, 3, 4)).unwrap();
        let members = inst.cluster_members();
        let depot_cluster = inst.cluster[inst.depot];
        let mut nodes = vec![inst.depot];
        for (c, nodes_of_c) in members.iter().enumerate() {
            if c != depot_cluster {
                nodes.push(nodes_of_c[0]);
            }
        }
        let tour = Tour::new(&inst, nodes).unwrap();
        let doc = TourDoc::from_tour(&inst, &tour);
        let mut buf = Vec::new();
        write_tour(&doc, &mut buf).unwrap();
        assert_eq!(read_tour(buf.as_slice()).unwrap(), doc);
    }
}
