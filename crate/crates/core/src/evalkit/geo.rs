use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::corpus::Gazetteer;

/// IUGG mean Earth radius.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

pub const RADIUS_50_MILES_KM: f64 = 80.5;
pub const RADIUS_100_MILES_KM: f64 = 161.0;

fn check(p: (f64, f64)) -> Result<()> {
    if (-90.0..=90.0).contains(&p.0) && (-180.0..=180.0).contains(&p.1) {
        Ok(())
    } else {
        Err(EvalError::OutOfRange(p.0, p.1))
    }
}

/// Great-circle distance between two `(lat, lon)` points in degrees.
pub fn haversine_km(p1: (f64, f64), p2: (f64, f64)) -> Result<f64> {
    check(p1)?;
    check(p2)?;
    let (lat1, lon1) = (p1.0.to_radians(), p1.1.to_radians());
    let (lat2, lon2) = (p2.0.to_radians(), p2.1.to_radians());
    let s_lat = ((lat2 - lat1) / 2.0).sin();
    let s_lon = ((lon2 - lon1) / 2.0).sin();
    let a = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    Ok(2.0 * EARTH_RADIUS_KM * a.sqrt().clamp(0.0, 1.0).asin())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoReport {
    pub acc: f64,
    pub acc_at_80_5: f64,
    pub acc_at_161: f64,
    pub mean_km: f64,
    pub median_km: f64,
}

/// Distance-based accuracy between predicted and gold city centres.
/// The median of an even count is the lower middle element.
pub fn geo_metrics<S: AsRef<str>>(pred: &[S], gold: &[S], gazetteer: &Gazetteer) -> Result<GeoReport> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch(gold.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let coords = |c: &str| {
        gazetteer
            .city(c)
            .map(|e| (e.lat, e.lon))
            .ok_or_else(|| EvalError::MissingCoordinates(c.to_string()))
    };
    let mut exact = 0usize;
    let mut distances = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gold) {
        let (p, g) = (p.as_ref(), g.as_ref());
        let d = if p == g {
            coords(g)?;
            exact += 1;
            0.0
        } else {
            haversine_km(coords(p)?, coords(g)?)?
        };
        distances.push(d);
    }
    let n = distances.len() as f64;
    let within = |r: f64| distances.iter().filter(|&&d| d <= r).count() as f64 / n;
    let mean_km = distances.iter().sum::<f64>() / n;
    let mut sorted = distances.clone();
    sorted.sort_by(f64::total_cmp);
    let median_km = sorted[(sorted.len() - 1) / 2];
    Ok(GeoReport {
        acc: exact as f64 / n,
        acc_at_80_5: within(RADIUS_50_MILES_KM),
        acc_at_161: within(RADIUS_100_MILES_KM),
        mean_km,
        median_km,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GazetteerEntry;
    use proptest::prelude::*;

    fn gaz(points: &[(&str, f64, f64)]) -> Gazetteer {
        Gazetteer::new(
            points
                .iter()
                .map(|&(c, lat, lon)| GazetteerEntry {
                    city: c.into(),
                    state: format!("{c}-s"),
                    country: "K".into(),
                    lat,
                    lon,
                    aliases: vec![],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn closed_form_arcs() {
        assert_eq!(haversine_km((10.0, 20.0), (10.0, 20.0)).unwrap(), 0.0);
        let eq = haversine_km((0.0, 0.0), (0.0, 1.0)).unwrap();
        assert!((eq - 111.195).abs() < 0.001, "{eq}");
        let quarter = haversine_km((0.0, 0.0), (90.0, 0.0)).unwrap();
        assert!((quarter - 10007.557).abs() < 0.001, "{quarter}");
        assert!(matches!(haversine_km((91.0, 0.0), (0.0, 0.0)), Err(EvalError::OutOfRange(..))));
        assert!(haversine_km((0.0, 0.0), (0.0, 181.0)).is_err());
    }

    #[test]
    fn all_exact() {
        let g = gaz(&[("a", 0.0, 0.0), ("b", 0.0, 3.0)]);
        let r = geo_metrics(&["a", "b"], &["a", "b"], &g).unwrap();
        assert_eq!(
            r,
            GeoReport {
                acc: 1.0,
                acc_at_80_5: 1.0,
                acc_at_161: 1.0,
                mean_km: 0.0,
                median_km: 0.0
            }
        );
    }

    #[test]
    fn one_error_at_150_km() {
        // 150 km along the equator.
        let deg = 150.0 / (EARTH_RADIUS_KM * std::f64::consts::PI / 180.0);
        let g = gaz(&[("a", 0.0, 0.0), ("b", 0.0, deg)]);
        let r = geo_metrics(&["a", "b", "a", "a"], &["a", "a", "a", "a"], &g).unwrap();
        assert_eq!(r.acc, 0.75);
        assert_eq!(r.acc_at_80_5, 0.75);
        assert_eq!(r.acc_at_161, 1.0);
        assert_eq!(r.median_km, 0.0);
    }

    #[test]
    fn four_city_table() {
        let pts = [("a", 30.0, 31.0), ("b", 30.5, 31.2), ("c", 33.9, 35.5), ("d", 24.7, 46.7)];
        let g = gaz(&pts);
        let pred = ["a", "b", "c", "d", "a", "c"];
        let gold = ["b", "b", "d", "a", "c", "c"];
        let r = geo_metrics(&pred, &gold, &g).unwrap();
        let coord = |c: &str| pts.iter().find(|p| p.0 == c).map(|p| (p.1, p.2)).unwrap();
        let mut ds: Vec<f64> = pred
            .iter()
            .zip(&gold)
            .map(|(p, q)| haversine_km(coord(p), coord(q)).unwrap())
            .collect();
        assert!((r.mean_km - ds.iter().sum::<f64>() / 6.0).abs() < 1e-9);
        ds.sort_by(f64::total_cmp);
        assert_eq!(r.median_km, ds[2]);
        assert!(geo_metrics(&["zz"], &["a"], &g).is_err());
    }

    proptest! {
        #[test]
        fn haversine_is_a_metric(
            a in (-90.0f64..=90.0, -180.0f64..=180.0),
            b in (-90.0f64..=90.0, -180.0f64..=180.0),
            c in (-90.0f64..=90.0, -180.0f64..=180.0),
        ) {
            let ab = haversine_km(a, b).unwrap();
            let ba = haversine_km(b, a).unwrap();
            let bc = haversine_km(b, c).unwrap();
            let ac = haversine_km(a, c).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!(ac <= ab + bc + 1e-6);
            prop_assert!(haversine_km(a, a).unwrap() < 1e-9);
        }
    }
}
